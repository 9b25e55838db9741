//! Limited-memory BFGS with an Armijo backtracking line search, and a central
//! finite-difference gradient used to verify analytic gradients.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{input, Result};
use crate::linalg::dot;
use crate::rnn::Theta;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOptions {
    /// Number of `(s, y)` pairs kept for the two-loop recursion.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once `‖∇f‖∞` falls below this.
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 200,
            gradient_tolerance: 1e-5,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0 && self.armijo > 0.0 && self.armijo < 1.0) {
            return input("gradient tolerance and Armijo constant must be positive (Armijo < 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return input("backtrack factor must lie in (0, 1)");
        }
        if self.max_iterations == 0 || self.max_backtracks == 0 {
            return input("iteration and backtrack caps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    IterationLimit,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    pub final_objective: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective at the start point followed by every accepted iterate.
    pub trace: Vec<f64>,
    /// `‖∇f‖∞` alongside `trace`.
    pub gradient_trace: Vec<f64>,
    pub termination: Termination,
}

impl OptimReport {
    /// True when the line search failed before any step was accepted.
    pub fn failed_at_start(&self) -> bool {
        self.termination == Termination::LineSearchFailed && self.iterations == 0
    }

    /// CSV trace with columns `iteration,objective,gradient_norm`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,objective,gradient_norm")?;
        for (i, (f, g)) in self.trace.iter().zip(&self.gradient_trace).enumerate() {
            writeln!(out, "{i},{f:.17e},{g:.17e}")?;
        }
        Ok(())
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H·g` by the two-loop recursion, with `H₀ = γI`.
fn two_loop(history: &VecDeque<Pair>, grad: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    q.iter_mut().for_each(|v| *v *= gamma);
    for (p, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f` from `x0` given a combined value-and-gradient evaluator.
///
/// Returns the best iterate seen. A line search that fails with the
/// quasi-Newton direction is retried once along steepest descent with the
/// history cleared before giving up.
pub fn lbfgs_minimize<F>(mut fg: F, x0: &[f64], opts: &OptimOptions) -> Result<(Vec<f64>, OptimReport)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    opts.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return input("start point has non-finite entries");
    }
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = fg(&x);
    if !fx.is_finite() || gx.iter().any(|v| !v.is_finite()) {
        return input("objective or gradient is not finite at the start point");
    }
    if gx.len() != x.len() {
        return input(format!("gradient has {} entries, expected {}", gx.len(), x.len()));
    }

    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut gamma = 1.0;
    let mut report = OptimReport {
        final_objective: fx,
        iterations: 0,
        gradient_norm: inf_norm(&gx),
        trace: vec![fx],
        gradient_trace: vec![inf_norm(&gx)],
        termination: Termination::IterationLimit,
    };

    let mut iteration = 0;
    while iteration < opts.max_iterations {
        if inf_norm(&gx) < opts.gradient_tolerance {
            report.termination = Termination::GradientTolerance;
            break;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let steepest = attempt == 1 || iteration == 0 || history.is_empty() && gamma == 1.0;
            let mut dir = if steepest {
                history.clear();
                // unit first step along -g, scaled to a bounded length
                let scale = 1.0 / dot(&gx, &gx).sqrt().max(1.0);
                gx.iter().map(|g| -g * scale).collect()
            } else {
                two_loop(&history, &gx, gamma)
            };
            let mut slope = dot(&gx, &dir);
            if !(slope < 0.0) {
                dir = gx.iter().map(|g| -g).collect();
                slope = -dot(&gx, &gx);
            }
            if let Some(found) = armijo_search(&mut fg, &x, fx, &dir, slope, opts) {
                accepted = Some(found);
                break;
            }
            if steepest {
                break;
            }
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            report.termination = Termination::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            gamma = sy / dot(&y, &y);
            if opts.memory > 0 {
                if history.len() == opts.memory {
                    history.pop_front();
                }
                history.push_back(Pair { s, y, rho: 1.0 / sy });
            }
        }

        x = x_new;
        fx = f_new;
        gx = g_new;
        iteration += 1;
        report.trace.push(fx);
        report.gradient_trace.push(inf_norm(&gx));
    }
    if iteration == opts.max_iterations && inf_norm(&gx) < opts.gradient_tolerance {
        report.termination = Termination::GradientTolerance;
    }

    report.final_objective = fx;
    report.iterations = iteration;
    report.gradient_norm = inf_norm(&gx);
    Ok((x, report))
}

type Step = (Vec<f64>, f64, Vec<f64>);

fn armijo_search<F>(fg: &mut F, x: &[f64], fx: f64, dir: &[f64], slope: f64, opts: &OptimOptions) -> Option<Step>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut step = 1.0;
    for _ in 0..=opts.max_backtracks {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + step * di).collect();
        let (ft, gt) = fg(&trial);
        let sufficient = ft <= fx + opts.armijo * step * slope && ft < fx;
        if ft.is_finite() && sufficient && gt.iter().all(|v| v.is_finite()) {
            return Some((trial, ft, gt));
        }
        step *= opts.backtrack;
    }
    None
}

/// Convenience wrapper taking separate value and gradient closures.
pub fn lbfgs_minimize_split<F, G>(mut f: F, mut g: G, x0: &[f64], opts: &OptimOptions) -> Result<(Vec<f64>, OptimReport)>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    lbfgs_minimize(|x| (f(x), g(x)), x0, opts)
}

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every component.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return input(format!("finite-difference step must be positive, got {step}"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

pub fn flatten_theta(theta: &Theta) -> Vec<f64> {
    theta.flatten()
}

pub fn unflatten_theta(n: usize, flat: &[f64]) -> Result<Theta> {
    Theta::unflatten(n, flat)
}
