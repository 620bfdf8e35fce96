//! Trust-region quasi-Newton solver for smooth objectives on `{Σx = S}`,
//! optionally with `x ≥ 0` and one inequality `h(x) ≤ 0`.
//!
//! Steps live in the tangent space of the sum constraint, so every iterate
//! keeps `Σx = S` up to rounding. Bounds use an active set plus step
//! truncation. The inequality goes through a PHR augmented Lagrangian
//! whose inner problems are solved by damped BFGS and Steihaug CG.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::OptimizeError;
use crate::trace::{GradRecord, OptTrace, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustConstrConfig {
    pub initial_radius: f64,
    /// Stop when the projected gradient of the Lagrangian is this small.
    pub grad_tol: f64,
    pub constraint_tol: f64,
    /// Cap on trial steps, accepted or not.
    pub max_iter: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// A trust radius below this ends the run.
    pub min_radius: f64,
}

impl Default for TrustConstrConfig {
    fn default() -> Self {
        TrustConstrConfig {
            initial_radius: 1.0,
            grad_tol: 1e-8,
            constraint_tol: 1e-8,
            max_iter: 1000,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            min_radius: 1e-10,
        }
    }
}

impl TrustConstrConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let positive = [
            ("initial_radius", self.initial_radius),
            ("grad_tol", self.grad_tol),
            ("constraint_tol", self.constraint_tol),
            ("initial_penalty", self.initial_penalty),
            ("min_radius", self.min_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimizeError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0) || !(self.max_penalty >= self.initial_penalty) {
            return Err(OptimizeError::Config("penalty must be allowed to grow".into()));
        }
        if self.max_iter == 0 {
            return Err(OptimizeError::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Value-and-gradient callback: returns `f(x)` and writes `∇f(x)`.
/// A non-finite return marks the point as unusable.
pub type ValueGrad<'a> = Box<dyn FnMut(&[f64], &mut [f64]) -> f64 + 'a>;

pub struct ConstrainedProblem<'a> {
    pub objective: ValueGrad<'a>,
    /// `h(x) ≤ 0` is feasible.
    pub inequality: Option<ValueGrad<'a>>,
    pub sum_target: f64,
    pub nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustConstrResult {
    /// Recorded iterate with the least objective among those satisfying the
    /// inequality; the final iterate if none does.
    pub x: Vec<f64>,
    pub objective: f64,
    pub g1_abs: f64,
    /// `h(x)`, or 0 without an inequality.
    pub inequality: f64,
    pub multiplier: f64,
    pub iterations: usize,
    pub n_evals: usize,
    pub termination: Termination,
    pub trace: OptTrace,
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    f: f64,
    gf: Vec<f64>,
    h: f64,
    gh: Vec<f64>,
}

struct Evaluator<'p, 'a> {
    problem: &'p mut ConstrainedProblem<'a>,
    n_evals: usize,
}

impl Evaluator<'_, '_> {
    fn eval(&mut self, x: &[f64]) -> Option<Point> {
        self.n_evals += 1;
        let n = x.len();
        let mut gf = vec![0.0; n];
        let f = (self.problem.objective)(x, &mut gf);
        let mut gh = vec![0.0; n];
        let h = match self.problem.inequality.as_mut() {
            Some(c) => c(x, &mut gh),
            None => 0.0,
        };
        let finite = f.is_finite() && h.is_finite() && gf.iter().chain(&gh).all(|v| v.is_finite());
        finite.then(|| Point {
            x: x.to_vec(),
            f,
            gf,
            h,
            gh,
        })
    }
}

/// PHR augmented Lagrangian for `h ≤ 0` and its gradient.
fn merit(p: &Point, nu: f64, mu: f64) -> (f64, Vec<f64>) {
    let shifted = (nu + mu * p.h).max(0.0);
    let value = p.f + (shifted * shifted - nu * nu) / (2.0 * mu);
    let grad = p.gf.iter().zip(&p.gh).map(|(a, b)| a + shifted * b).collect();
    (value, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonal projection onto `{d : Σd = 0, d_i = 0 for fixed i}`.
fn project(v: &[f64], free: &[bool]) -> Vec<f64> {
    let k = free.iter().filter(|&&f| f).count();
    if k <= 1 {
        return vec![0.0; v.len()];
    }
    let mean = v.iter().zip(free).filter(|(_, &f)| f).map(|(a, _)| a).sum::<f64>() / k as f64;
    v.iter()
        .zip(free)
        .map(|(a, &f)| if f { a - mean } else { 0.0 })
        .collect()
}

/// Variables allowed to move: interior ones, plus bound ones whose
/// gradient, relative to the free mean, points into the interior.
fn free_set(x: &[f64], g: &[f64], nonnegative: bool) -> Vec<bool> {
    let mut free: Vec<bool> = x.iter().map(|&v| !nonnegative || v > 0.0).collect();
    if !nonnegative {
        return free;
    }
    loop {
        let k = free.iter().filter(|&&f| f).count();
        if k == 0 {
            break;
        }
        let mean = g.iter().zip(&free).filter(|(_, &f)| f).map(|(a, _)| a).sum::<f64>() / k as f64;
        let release = (0..x.len())
            .filter(|&i| !free[i] && g[i] - mean < 0.0)
            .min_by(|&i, &j| g[i].total_cmp(&g[j]));
        match release {
            Some(i) => free[i] = true,
            None => break,
        }
    }
    free
}

fn mat_vec(b: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&b[i * n..(i + 1) * n], v)).collect()
}

/// Steihaug CG on `min g·d + ½ dᵀBd, ‖d‖ ≤ radius` over the projected space.
/// Returns the step and whether it reached the boundary.
pub(crate) fn steihaug(b: &[f64], g: &[f64], free: &[bool], radius: f64) -> (Vec<f64>, bool) {
    let n = g.len();
    let mut d = vec![0.0; n];
    let mut r = project(g, free);
    let r0 = norm(&r);
    if r0 == 0.0 {
        return (d, false);
    }
    let tol = 1e-12 * r0;
    let mut p: Vec<f64> = r.iter().map(|v| -v).collect();
    for _ in 0..2 * n + 2 {
        let bp = project(&mat_vec(b, &p), free);
        let kappa = dot(&p, &bp);
        let rr = dot(&r, &r);
        if kappa <= 0.0 {
            return (to_boundary(&d, &p, radius), true);
        }
        let alpha = rr / kappa;
        let trial: Vec<f64> = d.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
        if norm(&trial) >= radius {
            return (to_boundary(&d, &p, radius), true);
        }
        d = trial;
        for (ri, bi) in r.iter_mut().zip(&bp) {
            *ri += alpha * bi;
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol {
            break;
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = -ri + beta * *pi;
        }
    }
    (d, false)
}

/// `d + t p` with the positive `t` that puts it on the sphere of `radius`.
fn to_boundary(d: &[f64], p: &[f64], radius: f64) -> Vec<f64> {
    let pp = dot(p, p);
    let dp = dot(d, p);
    let dd = dot(d, d);
    let t = (-dp + (dp * dp + pp * (radius * radius - dd)).max(0.0).sqrt()) / pp;
    d.iter().zip(p).map(|(a, b)| a + t * b).collect()
}

/// Damped BFGS update of the dense Hessian approximation.
fn bfgs_update(b: &mut [f64], s: &[f64], y: &[f64], scaled: &mut bool) {
    let n = s.len();
    let ss = dot(s, s);
    if ss == 0.0 {
        return;
    }
    let sy = dot(s, y);
    if !*scaled && sy > 0.0 {
        // Rescale the initial identity to the observed curvature.
        let gamma = dot(y, y) / sy;
        for v in b.iter_mut() {
            *v *= gamma;
        }
        *scaled = true;
    }
    let bs = mat_vec(b, s);
    let sbs = dot(s, &bs);
    if !(sbs > 0.0) {
        return;
    }
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r: Vec<f64> = y
        .iter()
        .zip(&bs)
        .map(|(yi, bi)| theta * yi + (1.0 - theta) * bi)
        .collect();
    let sr = dot(s, &r);
    if !(sr > 0.0) {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}

/// Moves `x` by `d`, truncated so that no component goes negative; components
/// that hit the bound are set to exactly zero and the sum is restored.
fn bounded_move(x: &[f64], d: &[f64], nonnegative: bool, total: f64) -> (Vec<f64>, f64) {
    let mut alpha = 1.0f64;
    if nonnegative {
        for (xi, di) in x.iter().zip(d) {
            if *di < 0.0 && xi + di < 0.0 {
                alpha = alpha.min(xi / -di);
            }
        }
    }
    let mut out: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
    if nonnegative {
        for (o, (xi, di)) in out.iter_mut().zip(x.iter().zip(d)) {
            if *di < 0.0 && (*o <= 0.0 || xi / -di <= alpha) {
                *o = 0.0;
            }
        }
    }
    restore_sum(&mut out, total);
    (out, alpha)
}

/// Puts the rounding residual of `Σx = total` on the largest entry.
fn restore_sum(x: &mut [f64], total: f64) {
    let r = total - x.iter().sum::<f64>();
    if let Some(i) = (0..x.len()).max_by(|&i, &j| x[i].total_cmp(&x[j])) {
        if x[i] + r >= 0.0 {
            x[i] += r;
        }
    }
}

struct Run {
    records: Vec<GradRecord>,
    start: Instant,
    total: f64,
}

impl Run {
    fn record(&mut self, p: &Point, merit_value: f64, radius: f64, grad_norm: f64) {
        self.records.push(GradRecord {
            iter: self.records.len(),
            x: p.x.clone(),
            merit: merit_value,
            objective: p.f,
            g1_abs: (p.x.iter().sum::<f64>() - self.total).abs(),
            g2: p.h,
            trust_radius: radius,
            grad_norm,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
    }
}

pub fn minimize_trust_constr(
    mut problem: ConstrainedProblem<'_>,
    x0: &[f64],
    cfg: &TrustConstrConfig,
) -> Result<TrustConstrResult, OptimizeError> {
    cfg.validate()?;
    let n = x0.len();
    if n == 0 || x0.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::Config(
            "starting point must be non-empty and finite".into(),
        ));
    }
    let total = problem.sum_target;
    let violation = (x0.iter().sum::<f64>() - total).abs();
    if !(violation <= cfg.constraint_tol) {
        return Err(OptimizeError::InfeasibleStart {
            target: total,
            violation,
        });
    }
    let nonnegative = problem.nonnegative;
    if nonnegative && x0.iter().any(|&v| v < 0.0) {
        return Err(OptimizeError::Config("starting point has negative components".into()));
    }
    let has_inequality = problem.inequality.is_some();
    let mut ev = Evaluator {
        problem: &mut problem,
        n_evals: 0,
    };
    let mut point = ev.eval(x0).ok_or(OptimizeError::NonFinite(1))?;
    let mut run = Run {
        records: Vec::new(),
        start: Instant::now(),
        total,
    };

    let mut nu = 0.0f64;
    let mut mu = cfg.initial_penalty;
    let mut radius = cfg.initial_radius;
    let mut hess = vec![0.0; n * n];
    for i in 0..n {
        hess[i * n + i] = 1.0;
    }
    let mut scaled = false;
    let mut iterations = 0usize;
    // Inner tolerance, tightened towards grad_tol as the multiplier settles.
    let mut omega = if has_inequality {
        cfg.grad_tol.max(1e-3)
    } else {
        cfg.grad_tol
    };
    let mut prev_violation = f64::INFINITY;
    let mut termination = Termination::Stalled;

    let (m0, g0) = merit(&point, nu, mu);
    let pg0 = norm(&project(&g0, &free_set(&point.x, &g0, nonnegative)));
    run.record(&point, m0, radius, pg0);

    'outer: for _ in 0..100 {
        let mut inner_converged = false;
        loop {
            let (m_cur, g_cur) = merit(&point, nu, mu);
            let mut free = free_set(&point.x, &g_cur, nonnegative);
            let gnorm = norm(&project(&g_cur, &free));
            if gnorm <= omega {
                inner_converged = true;
                break;
            }
            if iterations >= cfg.max_iter {
                termination = Termination::BudgetExhausted;
                break 'outer;
            }
            if radius < cfg.min_radius {
                break;
            }
            iterations += 1;

            // Fix bound variables the step would push out, then solve again.
            let mut d;
            loop {
                d = steihaug(&hess, &g_cur, &free, radius).0;
                let mut blocked = false;
                if nonnegative {
                    for i in 0..n {
                        if free[i] && point.x[i] <= 0.0 && d[i] < 0.0 {
                            free[i] = false;
                            blocked = true;
                        }
                    }
                }
                if !blocked {
                    break;
                }
            }
            let (x_new, _) = bounded_move(&point.x, &d, nonnegative, total);
            let s: Vec<f64> = x_new.iter().zip(&point.x).map(|(a, b)| a - b).collect();
            let snorm = norm(&s);
            if snorm == 0.0 {
                radius *= 0.25;
                continue;
            }
            let bs = mat_vec(&hess, &s);
            let predicted = -(dot(&g_cur, &s) + 0.5 * dot(&s, &bs));
            let Some(trial) = ev.eval(&x_new) else {
                radius = 0.25 * snorm.min(radius);
                continue;
            };
            let (m_new, g_new) = merit(&trial, nu, mu);
            let actual = m_cur - m_new;
            let ratio = if predicted > 0.0 { actual / predicted } else { -1.0 };

            if ratio < 0.25 {
                radius = 0.25 * snorm.min(radius);
            } else if ratio > 0.75 && snorm >= 0.9 * radius {
                radius = (2.0 * radius).min(1e3 * cfg.initial_radius);
            }
            if actual > 0.0 && ratio >= 0.05 {
                let y: Vec<f64> = g_new.iter().zip(&g_cur).map(|(a, b)| a - b).collect();
                bfgs_update(&mut hess, &s, &y, &mut scaled);
                point = trial;
                let free_new = free_set(&point.x, &g_new, nonnegative);
                let gn = norm(&project(&g_new, &free_new));
                run.record(&point, m_new, radius, gn);
            }
        }

        if !has_inequality {
            termination = if inner_converged {
                Termination::Converged
            } else {
                Termination::Stalled
            };
            break;
        }
        let h = point.h;
        let nu_new = (nu + mu * h).max(0.0);
        let settled = (nu_new - nu).abs() <= 1e-8 * nu.max(1.0);
        nu = nu_new;
        if h <= cfg.constraint_tol && settled && omega <= cfg.grad_tol {
            termination = if inner_converged {
                Termination::Converged
            } else {
                Termination::Stalled
            };
            break;
        }
        if h > cfg.constraint_tol && h > 0.25 * prev_violation {
            mu = (mu * cfg.penalty_growth).min(cfg.max_penalty);
        }
        prev_violation = h.max(0.0);
        omega = (0.1 * omega).max(cfg.grad_tol);
        radius = radius.max(1e-3 * cfg.initial_radius);
    }

    // Restoration: Gauss-Newton steps on h along the tangent space.
    if has_inequality && point.h > cfg.constraint_tol {
        for _ in 0..20 {
            if point.h <= cfg.constraint_tol {
                break;
            }
            let free = free_set(&point.x, &point.gh, nonnegative);
            let pg = project(&point.gh, &free);
            let pp = dot(&pg, &pg);
            if pp == 0.0 {
                break;
            }
            let d: Vec<f64> = pg.iter().map(|v| -1.01 * point.h * v / pp).collect();
            let (x_new, _) = bounded_move(&point.x, &d, nonnegative, total);
            let Some(trial) = ev.eval(&x_new) else { break };
            if !(trial.h < point.h) {
                break;
            }
            point = trial;
            let (m, g) = merit(&point, nu, mu);
            let gn = norm(&project(&g, &free_set(&point.x, &g, nonnegative)));
            run.record(&point, m, radius, gn);
        }
        if point.h > cfg.constraint_tol && termination == Termination::Converged {
            termination = Termination::Stalled;
        }
    }

    // Best feasible recorded iterate; the last one when none is feasible.
    let best = run
        .records
        .iter()
        .filter(|r| r.g2 <= cfg.constraint_tol)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .unwrap_or_else(|| run.records.last().expect("start is recorded"));
    let (x, objective, inequality, g1_abs) = (best.x.clone(), best.objective, best.g2, best.g1_abs);
    let n_evals = ev.n_evals;
    Ok(TrustConstrResult {
        objective,
        inequality,
        g1_abs,
        x,
        multiplier: nu,
        iterations,
        n_evals,
        termination,
        trace: OptTrace::Grad {
            records: run.records,
            termination,
        },
    })
}
