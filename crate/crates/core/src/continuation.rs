//! Pseudo-arc-length predictor-corrector path following.
//!
//! A [`PathProblem`] supplies `n - 1` equations in `n` unknowns together
//! with their Jacobian. The engine follows the one-dimensional solution
//! curve from a converged start point using tangent predictors and
//! arc-length-constrained Newton correctors, with adaptive step control.
//! Problems may override the corrector, e.g. to use a cheaper condensed
//! formulation when it is valid.

use serde::{Deserialize, Serialize};

use crate::linalg::inf_norm;
use crate::{Error, RMat, RVec, Result};

/// Step-size and convergence controls of the path follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub ds_initial: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_points: usize,
    /// Residual infinity-norm tolerance (residuals are scaled by the problem).
    pub tol: f64,
    pub max_iterations: usize,
    /// Growth factor applied after fast convergence.
    pub growth: f64,
    /// Iteration count regarded as fast convergence.
    pub fast_iterations: usize,
    /// Minimum cosine between consecutive tangents.
    pub min_tangent_cos: f64,
    /// Accepted corrector distance from the previous point, as a multiple
    /// of the step; larger moves are treated as branch jumps.
    pub max_step_ratio: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            ds_initial: 0.05,
            ds_min: 1e-6,
            ds_max: 0.5,
            max_points: 2000,
            tol: 1e-9,
            max_iterations: 12,
            growth: 1.5,
            fast_iterations: 3,
            min_tangent_cos: 0.8,
            max_step_ratio: 10.0,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.ds_min > 0.0
            && self.ds_min <= self.ds_initial
            && self.ds_initial <= self.ds_max
            && self.max_iterations > 0
            && self.max_points > 0
            && self.growth >= 1.0
            && self.min_tangent_cos > -1.0
            && self.min_tangent_cos < 1.0
            && self.max_step_ratio > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("inconsistent step control: {self:?}")))
        }
    }
}

/// Underdetermined nonlinear system followed by the engine.
pub trait PathProblem {
    /// Number of unknowns `n` (equations: `n - 1`).
    fn dim(&self) -> usize;

    /// Residual and `(n-1) x n` Jacobian.
    fn eval(&mut self, y: &RVec) -> Result<(RVec, RMat)>;

    /// Index of the continuation parameter used for range checks and fold
    /// bookkeeping.
    fn param_index(&self) -> usize;

    /// Optional problem-specific corrector. Returns `None` to use the
    /// standard arc-length corrector.
    fn correct(&mut self, _predicted: &RVec, _tangent: &RVec, _ds: f64) -> Option<Result<(RVec, usize)>> {
        None
    }
}

/// Why a path ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Termination {
    /// Parameter left the requested range.
    Completed,
    /// Step size underflowed.
    Stalled { step: f64 },
    /// Point budget exhausted.
    MaxPoints,
}

/// Ordered solution points of a traced path.
#[derive(Debug, Clone)]
pub struct Path {
    pub points: Vec<RVec>,
    pub tangents: Vec<RVec>,
    /// Indices `i` where the parameter direction reverses between points
    /// `i - 1` and `i + 1`.
    pub folds: Vec<usize>,
    pub termination: Termination,
}

/// Newton iteration on `[r(y); t . (y - y_pred)] = 0`.
pub fn arclength_newton<P: PathProblem + ?Sized>(
    problem: &mut P,
    predicted: &RVec,
    tangent: &RVec,
    ctl: &StepControl,
) -> Result<(RVec, usize)> {
    let n = problem.dim();
    let mut y = predicted.clone();
    let mut last = f64::INFINITY;
    for it in 1..=ctl.max_iterations {
        let (r, j) = problem.eval(&y)?;
        let rn = inf_norm(&r);
        if !rn.is_finite() {
            return Err(Error::NonFinite("continuation residual"));
        }
        let mut a = RMat::zeros(n, n);
        a.rows_mut(0, n - 1).copy_from(&j);
        a.row_mut(n - 1).copy_from(&tangent.transpose());
        let mut rhs = RVec::zeros(n);
        rhs.rows_mut(0, n - 1).copy_from(&(-&r));
        rhs[n - 1] = -tangent.dot(&(&y - predicted));
        let dy = a.lu().solve(&rhs).ok_or(Error::Singular("arc-length corrector"))?;
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("arc-length corrector"));
        }
        y += &dy;
        let step = inf_norm(&dy);
        if rn <= ctl.tol && step <= 1e3 * ctl.tol.max(1e-12) {
            return Ok((y, it));
        }
        // stop early on clear divergence
        if it > 3 && rn > 10.0 * last && rn > 1.0 {
            break;
        }
        last = rn;
    }
    let (r, _) = problem.eval(&y)?;
    let rn = inf_norm(&r);
    if rn <= ctl.tol {
        return Ok((y, ctl.max_iterations));
    }
    Err(Error::NoConvergence {
        iterations: ctl.max_iterations,
        residual: rn,
    })
}

/// Unit tangent from `[J; t_ref^T] t = e_n`, oriented along `t_ref`.
pub fn tangent<P: PathProblem + ?Sized>(problem: &mut P, y: &RVec, t_ref: &RVec) -> Result<RVec> {
    let n = problem.dim();
    let (_, j) = problem.eval(y)?;
    tangent_from_jacobian(&j, t_ref, n)
}

pub fn tangent_from_jacobian(j: &RMat, t_ref: &RVec, n: usize) -> Result<RVec> {
    let mut a = RMat::zeros(n, n);
    a.rows_mut(0, n - 1).copy_from(j);
    a.row_mut(n - 1).copy_from(&t_ref.transpose());
    let mut e = RVec::zeros(n);
    e[n - 1] = 1.0;
    let mut t = a.lu().solve(&e).ok_or(Error::Singular("tangent system"))?;
    let norm = t.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Singular("tangent system"));
    }
    t /= norm;
    if t.dot(t_ref) < 0.0 {
        t.neg_mut();
    }
    Ok(t)
}

/// Follows the path from the converged point `y0` while the parameter stays
/// in `[p_lo, p_hi]`. The initial direction has a positive parameter
/// component when `forward` is true.
pub fn trace<P: PathProblem + ?Sized>(
    problem: &mut P,
    y0: RVec,
    p_lo: f64,
    p_hi: f64,
    forward: bool,
    ctl: &StepControl,
) -> Result<Path> {
    ctl.validate()?;
    let n = problem.dim();
    let pi = problem.param_index();
    let mut e_p = RVec::zeros(n);
    e_p[pi] = if forward { 1.0 } else { -1.0 };
    let mut t = tangent(problem, &y0, &e_p)?;
    if (t[pi] > 0.0) != forward {
        t.neg_mut();
    }
    let mut points = vec![y0];
    let mut tangents = vec![t];
    let mut folds = Vec::new();
    let mut ds = ctl.ds_initial;
    let termination = loop {
        if points.len() >= ctl.max_points {
            break Termination::MaxPoints;
        }
        let y = points.last().unwrap().clone();
        let t = tangents.last().unwrap().clone();
        if y[pi] > p_hi || y[pi] < p_lo {
            break Termination::Completed;
        }
        if ds < ctl.ds_min {
            break Termination::Stalled { step: ds };
        }
        let pred = &y + &t * ds;
        let corrected = match problem.correct(&pred, &t, ds) {
            Some(r) => r,
            None => arclength_newton(problem, &pred, &t, ctl),
        };
        let (y_new, iters) = match corrected {
            Ok(v) => v,
            Err(_) => {
                ds *= 0.5;
                continue;
            }
        };
        let dist = (&y_new - &y).norm();
        if !(dist >= 0.1 * ds && dist <= ctl.max_step_ratio * ds) {
            ds *= 0.5;
            continue;
        }
        let t_new = match tangent(problem, &y_new, &t) {
            Ok(v) => v,
            Err(_) => {
                ds *= 0.5;
                continue;
            }
        };
        if t_new.dot(&t) < ctl.min_tangent_cos && ds > 4.0 * ctl.ds_min {
            ds *= 0.5;
            continue;
        }
        if (t_new[pi] > 0.0) != (t[pi] > 0.0) && t[pi] != 0.0 {
            folds.push(points.len());
        }
        points.push(y_new);
        tangents.push(t_new);
        if iters <= ctl.fast_iterations {
            ds = (ds * ctl.growth).min(ctl.ds_max);
        } else if iters > ctl.max_iterations / 2 {
            ds = (ds * 0.7).max(ctl.ds_min);
        }
    };
    Ok(Path {
        points,
        tangents,
        folds,
        termination,
    })
}
