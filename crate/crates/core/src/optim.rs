//! Deterministic unconstrained minimizers: L-BFGS with a strong-Wolfe line
//! search for smooth objectives with analytic gradients, and Nelder–Mead for
//! small derivative-free problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    /// Stop once `‖∇f‖₂` falls below this.
    pub gradient_tolerance: f64,
    /// Stop once `(f_k − f_{k+1}) ≤ tol · max(|f_k|, |f_{k+1}|, 1)`.
    pub relative_tolerance: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Largest trial change of any single coordinate in one line search.
    pub max_step: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            relative_tolerance: 1e-10,
            memory: 10,
            max_step: 5.0,
        }
    }
}

impl LbfgsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0
            || !(self.gradient_tolerance > 0.0)
            || !(self.relative_tolerance >= 0.0)
            || !(self.max_step > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid optimizer settings: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::FunctionTolerance
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Objective<F> {
    f: F,
    evaluations: usize,
}

impl<F> Objective<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    /// Failed or non-finite evaluations come back as `None`.
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        match (self.f)(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => Some((v, g)),
            _ => None,
        }
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient.
pub fn minimize_lbfgs<F>(f: F, x0: &[f64], settings: &LbfgsSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    settings.validate()?;
    let mut obj = Objective { f, evaluations: 0 };
    let (f0, g0) = match (obj.f)(x0) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => (v, g),
        Ok(_) => return Err(Error::Optimizer("non-finite objective at start".into())),
        Err(e) => return Err(e),
    };
    obj.evaluations = 1;
    let mut cur = Point {
        x: x0.to_vec(),
        f: f0,
        g: g0,
    };
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;

    let termination = loop {
        if norm(&cur.g) < settings.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }

        let mut dir = two_loop(&cur.g, &s_hist, &y_hist);
        if dot(&dir, &cur.g) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = cur.g.iter().map(|g| -g).collect();
        }
        let mut next = line_search(&mut obj, &cur, &dir, s_hist.is_empty(), settings.max_step);
        if next.is_none() && !s_hist.is_empty() {
            // Retry along steepest descent with fresh curvature information.
            s_hist.clear();
            y_hist.clear();
            dir = cur.g.iter().map(|g| -g).collect();
            next = line_search(&mut obj, &cur, &dir, true, settings.max_step);
        }
        let Some(next) = next else {
            break Termination::LineSearchFailed;
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == settings.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }

        let decrease = cur.f - next.f;
        let scale = cur.f.abs().max(next.f.abs()).max(1.0);
        cur = next;
        if decrease <= settings.relative_tolerance * scale {
            break Termination::FunctionTolerance;
        }
    };

    Ok(Minimum {
        x: cur.x,
        value: cur.f,
        gradient: cur.g,
        initial_value: f0,
        iterations,
        evaluations: obj.evaluations,
        termination,
    })
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; s_hist.len()];
    for i in (0..s_hist.len()).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alpha[i] = rho * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..s_hist.len() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;

struct Trial {
    alpha: f64,
    f: f64,
    dphi: f64,
    g: Vec<f64>,
}

/// Strong-Wolfe line search (bracketing then zoom).
fn line_search<F>(
    obj: &mut Objective<F>,
    cur: &Point,
    dir: &[f64],
    steepest: bool,
    max_step: f64,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dphi0 = dot(&cur.g, dir);
    let dir_max = dir.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    if !(dphi0 < 0.0) || dir_max == 0.0 {
        return None;
    }
    let alpha_cap = max_step / dir_max;
    let mut alpha = if steepest { (1.0 / norm(dir)).min(1.0) } else { 1.0 };
    alpha = alpha.min(alpha_cap);

    let at = |alpha: f64| -> Vec<f64> {
        cur.x.iter().zip(dir).map(|(x, d)| x + alpha * d).collect()
    };
    let evaluate = |obj: &mut Objective<F>, alpha: f64| -> Option<Trial> {
        obj.eval(&at(alpha)).map(|(f, g)| Trial {
            alpha,
            f,
            dphi: dot(&g, dir),
            g,
        })
    };

    let mut prev = Trial {
        alpha: 0.0,
        f: cur.f,
        dphi: dphi0,
        g: cur.g.clone(),
    };
    let mut best: Option<Trial> = None;
    let mut evals = 0;

    // Bracketing phase.
    let (mut lo, mut hi_alpha, mut hi_f) = loop {
        evals += 1;
        let trial = evaluate(obj, alpha);
        let Some(trial) = trial else {
            // Non-finite objective: the minimizer lies closer.
            if evals >= MAX_LINE_EVALS {
                return best.map(|t| finish(cur, dir, t));
            }
            break (prev, alpha, f64::INFINITY);
        };
        if trial.f < cur.f + C1 * trial.alpha * dphi0 && best.as_ref().is_none_or(|b| trial.f < b.f) {
            best = Some(Trial { g: trial.g.clone(), ..trial });
        }
        if trial.f > cur.f + C1 * trial.alpha * dphi0 || (evals > 1 && trial.f >= prev.f) {
            let (a, f) = (trial.alpha, trial.f);
            break (prev, a, f);
        }
        if trial.dphi.abs() <= -C2 * dphi0 {
            return Some(finish(cur, dir, trial));
        }
        if trial.dphi >= 0.0 {
            let (a, f) = (prev.alpha, prev.f);
            break (trial, a, f);
        }
        if evals >= MAX_LINE_EVALS || alpha >= alpha_cap {
            return Some(finish(cur, dir, trial));
        }
        let next_alpha = (alpha * 2.0).min(alpha_cap);
        prev = trial;
        alpha = next_alpha;
    };

    // Zoom phase between lo (satisfies sufficient decrease) and hi.
    while evals < MAX_LINE_EVALS {
        evals += 1;
        let width = hi_alpha - lo.alpha;
        let mut a = if hi_f.is_finite() {
            // Quadratic interpolation from lo's value and slope and hi's value.
            let denom = 2.0 * (hi_f - lo.f - lo.dphi * width);
            if denom > 0.0 {
                lo.alpha - lo.dphi * width * width / denom
            } else {
                lo.alpha + 0.5 * width
            }
        } else {
            lo.alpha + 0.5 * width
        };
        let (left, right) = if width > 0.0 {
            (lo.alpha + 0.1 * width, hi_alpha - 0.1 * width)
        } else {
            (hi_alpha - 0.1 * width, lo.alpha + 0.1 * width)
        };
        let (minb, maxb) = (left.min(right), left.max(right));
        if !(a > minb && a < maxb) {
            a = lo.alpha + 0.5 * width;
        }
        if (a - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let Some(trial) = evaluate(obj, a) else {
            hi_alpha = a;
            hi_f = f64::INFINITY;
            continue;
        };
        if trial.f > cur.f + C1 * trial.alpha * dphi0 || trial.f >= lo.f {
            hi_alpha = trial.alpha;
            hi_f = trial.f;
        } else {
            if trial.dphi.abs() <= -C2 * dphi0 {
                return Some(finish(cur, dir, trial));
            }
            if trial.dphi * (hi_alpha - lo.alpha) >= 0.0 {
                hi_alpha = lo.alpha;
                hi_f = lo.f;
            }
            lo = trial;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    let candidate = if lo.alpha > 0.0 { Some(lo) } else { best };
    candidate
        .filter(|t| t.alpha > 0.0 && t.f < cur.f)
        .map(|t| finish(cur, dir, t))
}

fn finish(cur: &Point, dir: &[f64], t: Trial) -> Point {
    Point {
        x: cur.x.iter().zip(dir).map(|(x, d)| x + t.alpha * d).collect(),
        f: t.f,
        g: t.g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadSettings {
    pub max_iterations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tolerance: f64,
    /// ... and the simplex diameter (max-norm) falls below this.
    pub x_tolerance: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings {
            max_iterations: 5000,
            f_tolerance: 1e-12,
            x_tolerance: 1e-10,
            initial_step: 0.1,
        }
    }
}

/// Derivative-free minimization. `f` may return `+∞` (or NaN) outside its domain.
pub fn minimize_nelder_mead<F>(mut f: F, x0: &[f64], settings: &NelderMeadSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty starting point".into()));
    }
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(x0);
    if !f0.is_finite() {
        return Err(Error::Optimizer("non-finite objective at start".into()));
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        let mut x = x0.to_vec();
        let step = if x[i].abs() > 1e-8 { settings.initial_step * x[i].abs().max(1.0) } else { settings.initial_step };
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let termination = loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if spread.abs() <= settings.f_tolerance && diameter <= settings.x_tolerance {
            break Termination::FunctionTolerance;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (w - c)).collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(Minimum {
        x,
        value,
        gradient: Vec::new(),
        initial_value: f0,
        iterations,
        evaluations,
        termination,
    })
}
