//! Reference solvers: forced multi-harmonic balance and explicit time
//! integration.
//!
//! Both share the element laws of [`crate::model`] with the eigenproblem
//! solver but nothing else, so they serve as oracles for the reduced-order
//! model.

use serde::{Deserialize, Serialize};

use crate::aft::{im_block, n_blocks, re_block, Aft, HarmonicSignal};
use crate::continuation::{self, PathProblem, StepControl, Termination};
use crate::linalg::inf_norm;
use crate::model::{NonlinearElement, SecondOrderModel};
use crate::synthesis::{peak_amplitude, resolve_damping, DampingSpec, ResponseCurve, ResponseRow};
use crate::{CMat, CVec, Complex64, Error, RMat, RVec, Result};

/// Settings of the forced harmonic balance solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbmSettings {
    pub nh: usize,
    pub nt: usize,
    /// DOF whose zero-mean amplitude is reported.
    pub probe: usize,
    pub amplitude_ref: f64,
    /// Samples used to extract amplitudes.
    pub nt_amplitude: usize,
    /// Eliminate the linear DOFs exactly and iterate on the nonlinear ones.
    pub condensed: bool,
    /// Arc length is measured in scaled harmonics and normalized frequency.
    pub step: StepControl,
}

impl Default for HbmSettings {
    fn default() -> Self {
        Self {
            nh: 7,
            nt: 512,
            probe: 0,
            amplitude_ref: 1.0,
            nt_amplitude: 512,
            condensed: true,
            step: StepControl {
                ds_initial: 0.005,
                ds_min: 1e-7,
                ds_max: 0.01,
                max_points: 6000,
                tol: 1e-10,
                max_iterations: 12,
                growth: 1.5,
                fast_iterations: 3,
                min_tangent_cos: 0.9,
                max_step_ratio: 5.0,
            },
        }
    }
}

/// Forced response from harmonic balance with the full solutions.
#[derive(Debug, Clone)]
pub struct HbmCurve {
    /// `q` holds `U_1` of the probe DOF; no linear-mode columns.
    pub curve: ResponseCurve,
    pub solutions: Vec<HarmonicSignal>,
    pub folds: Vec<usize>,
}

/// Forced harmonic balance system in scaled unknowns
/// `y = [U / (a_s sigma), (Omega - Omega_lo) / width]`.
pub struct ForcedHbm {
    n: usize,
    nh: usize,
    mass: RMat,
    stiffness: RMat,
    viscous: RMat,
    hysteretic: RMat,
    aft: Option<Aft>,
    nl_dofs: Vec<usize>,
    force: CVec,
    /// Per-DOF scale `1 / sqrt(K_ii)`.
    sigma: RVec,
    amp_scale: f64,
    omega_lo: f64,
    width: f64,
    /// Solve on the nonlinear DOFs with the linear ones eliminated exactly.
    condensed: bool,
}

/// Per-harmonic compliance data at one frequency.
struct HarmonicBlock {
    /// Full compliance `H_n = S_n^-1`.
    h: CMat,
    /// Condensed stiffness `(H_n^NN)^-1`.
    s_red: CMat,
    /// `d s_red / d Omega`.
    ds_red: CMat,
    /// Condensed excitation and its frequency derivative (first harmonic).
    f_red: CVec,
    df_red: CVec,
}

impl ForcedHbm {
    pub fn new(
        model: &SecondOrderModel,
        f1: &CVec,
        omega_lo: f64,
        omega_hi: f64,
        damping: &[DampingSpec],
        nh: usize,
        nt: usize,
    ) -> Result<Self> {
        let n = model.n_dof();
        if f1.len() != n {
            return Err(Error::InvalidInput("force vector length mismatch".into()));
        }
        if !(omega_hi > omega_lo && omega_lo > 0.0) {
            return Err(Error::InvalidInput("invalid frequency range".into()));
        }
        if nh == 0 {
            return Err(Error::InvalidInput("forced harmonic balance needs NH >= 1".into()));
        }
        let extra = resolve_damping(damping, model)?;
        let aft = if model.elements.is_empty() {
            None
        } else {
            Some(Aft::new(&model.elements, model.nonlinear_dofs(), nh, nt)?)
        };
        let kmax = (0..n).map(|i| model.stiffness[(i, i)]).fold(0.0, f64::max);
        let sigma = RVec::from_fn(n, |i, _| 1.0 / model.stiffness[(i, i)].max(1e-12 * kmax).sqrt());
        let mut hbm = Self {
            n,
            nh,
            mass: model.mass.clone(),
            stiffness: model.stiffness.clone(),
            viscous: &model.damping + &extra.viscous,
            hysteretic: extra.hysteretic,
            aft,
            nl_dofs: model.nonlinear_dofs().to_vec(),
            force: f1.clone(),
            sigma,
            amp_scale: 1.0,
            omega_lo,
            width: omega_hi - omega_lo,
            condensed: false,
        };
        hbm.condensed = hbm.aft.is_some();
        hbm.amp_scale = hbm.linear_scale()?;
        Ok(hbm)
    }

    /// Largest scaled linear response over the frequency range, used as the
    /// displacement scale.
    fn linear_scale(&self) -> Result<f64> {
        let mut best: f64 = 0.0;
        for k in 0..=40 {
            let om = self.omega_lo + self.width * k as f64 / 40.0;
            let u = self.linear_response(om)?;
            for i in 0..self.n {
                best = best.max(u[i].norm() / self.sigma[i]);
            }
        }
        if best > 0.0 && best.is_finite() {
            Ok(best)
        } else {
            Ok(1.0)
        }
    }

    /// Solution of the linearized problem at `omega` (first harmonic).
    pub fn linear_response(&self, omega: f64) -> Result<CVec> {
        let s = self.dyn_stiffness(1, omega);
        s.lu()
            .solve(&self.force)
            .ok_or(Error::Singular("linear forced response"))
    }

    fn dyn_stiffness(&self, n: usize, omega: f64) -> nalgebra::DMatrix<Complex64> {
        let w = n as f64 * omega;
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| {
            let hyst = if n >= 1 { self.hysteretic[(i, j)] } else { 0.0 };
            Complex64::new(
                self.stiffness[(i, j)] - w * w * self.mass[(i, j)],
                w * self.viscous[(i, j)] + hyst,
            )
        })
    }

    pub fn dim(&self) -> usize {
        let d = if self.condensed { self.nl_dofs.len() } else { self.n };
        d * n_blocks(self.nh) + 1
    }

    pub fn omega(&self, y: &RVec) -> f64 {
        self.omega_lo + y[self.dim() - 1] * self.width
    }

    /// Physical harmonics of an unknown vector of the active formulation.
    pub fn unscale(&self, y: &RVec) -> Result<HarmonicSignal> {
        if self.condensed {
            return self.recover(y);
        }
        let n = self.n;
        let nb = n_blocks(self.nh);
        let u = RVec::from_fn(n * nb, |k, _| y[k] * self.amp_scale * self.sigma[k % n]);
        HarmonicSignal::from_real(&u, n, self.omega(y))
    }

    /// Unknown vector of the active formulation for harmonics `u`.
    pub fn scale(&self, u: &HarmonicSignal, omega: f64) -> RVec {
        let (dofs, packed) = if self.condensed {
            (self.nl_dofs.clone(), u.select_dofs(&self.nl_dofs).to_real())
        } else {
            ((0..self.n).collect::<Vec<_>>(), u.to_real())
        };
        let n = dofs.len();
        let mut y = RVec::zeros(self.dim());
        for k in 0..packed.len() {
            y[k] = packed[k] / (self.amp_scale * self.sigma[dofs[k % n]]);
        }
        y[self.dim() - 1] = (omega - self.omega_lo) / self.width;
        y
    }

    /// Scaled residual and Jacobian of the active formulation.
    pub fn eval(&self, y: &RVec, with_jacobian: bool) -> Result<(RVec, Option<RMat>)> {
        if self.condensed {
            self.eval_condensed(y, with_jacobian)
        } else {
            self.eval_full(y, with_jacobian)
        }
    }

    /// Scaled residual and Jacobian on all DOFs.
    pub fn eval_full(&self, y: &RVec, with_jacobian: bool) -> Result<(RVec, Option<RMat>)> {
        let n = self.n;
        let nh = self.nh;
        let nb = n_blocks(nh);
        let m = n * nb;
        if y.len() != m + 1 {
            return Err(Error::InvalidInput("unknown vector length mismatch".into()));
        }
        let omega = self.omega_lo + y[m] * self.width;
        let s = self.amp_scale;
        let u = RVec::from_fn(m, |k, _| y[k] * s * self.sigma[k % n]);
        let mut r = RVec::zeros(m);
        // du/dy is diag(s sigma); residual rows are scaled by sigma / s
        let mut j = if with_jacobian {
            Some(RMat::zeros(m, m + 1))
        } else {
            None
        };
        // linear part
        for h in 0..=nh {
            let w = h as f64 * omega;
            let a = &self.stiffness - &self.mass * (w * w);
            if h == 0 {
                let ua = u.rows(0, n);
                r.rows_mut(0, n).copy_from(&(&a * ua));
                if let Some(j) = j.as_mut() {
                    j.view_mut((0, 0), (n, n)).copy_from(&a);
                }
                continue;
            }
            let b = &self.viscous * w + &self.hysteretic;
            let (rb, ib) = (re_block(h) * n, im_block(h) * n);
            let ua = u.rows(rb, n).into_owned();
            let ub = u.rows(ib, n).into_owned();
            let rr = &a * &ua - &b * &ub;
            let ri = &b * &ua + &a * &ub;
            r.rows_mut(rb, n).copy_from(&rr);
            r.rows_mut(ib, n).copy_from(&ri);
            if let Some(j) = j.as_mut() {
                j.view_mut((rb, rb), (n, n)).copy_from(&a);
                j.view_mut((rb, ib), (n, n)).copy_from(&(-&b));
                j.view_mut((ib, rb), (n, n)).copy_from(&b);
                j.view_mut((ib, ib), (n, n)).copy_from(&a);
                // d/dOmega: dA = -2 h^2 Omega M, dB = h C
                let da = &self.mass * (-2.0 * (h * h) as f64 * omega);
                let db = &self.viscous * h as f64;
                let dr = &da * &ua - &db * &ub;
                let di = &db * &ua + &da * &ub;
                for i in 0..n {
                    j[(rb + i, m)] = dr[i];
                    j[(ib + i, m)] = di[i];
                }
            }
        }
        // excitation on the first harmonic
        for i in 0..n {
            r[re_block(1) * n + i] -= self.force[i].re;
            r[im_block(1) * n + i] -= self.force[i].im;
        }
        // nonlinear forces
        if let Some(aft) = &self.aft {
            let nl = self.nl_dofs.len();
            let unl = RVec::from_fn(nl * nb, |k, _| u[(k / nl) * n + self.nl_dofs[k % nl]]);
            let (g, jg) = aft.eval_real(&unl, with_jacobian)?;
            for k in 0..nl * nb {
                r[(k / nl) * n + self.nl_dofs[k % nl]] += g[k];
            }
            if let (Some(j), Some(jg)) = (j.as_mut(), jg) {
                for a in 0..nl * nb {
                    let ra = (a / nl) * n + self.nl_dofs[a % nl];
                    for c in 0..nl * nb {
                        let v = jg[(a, c)];
                        if v != 0.0 {
                            j[(ra, (c / nl) * n + self.nl_dofs[c % nl])] += v;
                        }
                    }
                }
            }
        }
        // scaling
        for k in 0..m {
            r[k] *= self.sigma[k % n] / s;
        }
        if let Some(j) = j.as_mut() {
            for a in 0..m {
                let ra = self.sigma[a % n] / s;
                for c in 0..m {
                    j[(a, c)] *= ra * s * self.sigma[c % n];
                }
                j[(a, m)] *= ra * self.width;
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("harmonic balance residual"));
        }
        Ok((r, j))
    }

    /// Newton solve at fixed frequency.
    pub fn solve_at(&self, y0: &RVec, tol: f64, max_iterations: usize) -> Result<(RVec, usize)> {
        let m = self.dim() - 1;
        let mut y = y0.clone();
        let mut rn = f64::INFINITY;
        for it in 1..=max_iterations {
            let (r, j) = self.eval(&y, true)?;
            rn = inf_norm(&r);
            let j = j.expect("requested");
            let jm = j.columns(0, m).into_owned();
            let dy = jm
                .lu()
                .solve(&(-&r))
                .ok_or(Error::Singular("harmonic balance Newton"))?;
            // damp large steps
            let step = inf_norm(&dy);
            let damp = if step > 10.0 { 10.0 / step } else { 1.0 };
            for k in 0..m {
                y[k] += damp * dy[k];
            }
            if rn <= tol && step <= 1e3 * tol {
                return Ok((y, it));
            }
        }
        let (r, _) = self.eval(&y, false)?;
        let last = inf_norm(&r);
        if last <= tol {
            return Ok((y, max_iterations));
        }
        Err(Error::NoConvergence {
            iterations: max_iterations,
            residual: rn.min(last),
        })
    }

    /// Start point at the lower frequency bound, from the linear solution
    /// and a load ramp if needed.
    pub fn start(&self, tol: f64) -> Result<RVec> {
        let u1 = self.linear_response(self.omega_lo)?;
        let mut c = CMat::zeros(self.n, self.nh + 1);
        c.set_column(1, &u1);
        let sig = HarmonicSignal::new(c, self.omega_lo)?;
        let y0 = self.scale(&sig, self.omega_lo);
        match self.solve_at(&y0, tol, 40) {
            Ok((y, _)) => Ok(y),
            Err(e) => {
                // load ramp from a tenth of the force
                let mut y = y0.scale(0.1);
                for k in 1..=10 {
                    let ramp = self.clone_with_force_scale(k as f64 / 10.0);
                    y = match ramp.solve_at(&y, tol, 40) {
                        Ok((y, _)) => y,
                        Err(_) if k == 1 => return Err(e),
                        Err(err) => return Err(err),
                    };
                }
                Ok(y)
            }
        }
    }

    fn clone_with_force_scale(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            nh: self.nh,
            mass: self.mass.clone(),
            stiffness: self.stiffness.clone(),
            viscous: self.viscous.clone(),
            hysteretic: self.hysteretic.clone(),
            aft: self.aft.clone(),
            nl_dofs: self.nl_dofs.clone(),
            force: &self.force * Complex64::new(factor, 0.0),
            sigma: self.sigma.clone(),
            amp_scale: self.amp_scale,
            omega_lo: self.omega_lo,
            width: self.width,
            condensed: self.condensed,
        }
    }

    /// Selects the condensed or the full formulation (the condensed one
    /// needs nonlinear elements).
    pub fn set_condensed(&mut self, condensed: bool) {
        self.condensed = condensed && self.aft.is_some();
    }

    pub fn is_condensed(&self) -> bool {
        self.condensed
    }

    fn harmonic_block(&self, h: usize, omega: f64, derivative: bool) -> Result<HarmonicBlock> {
        let sn = self.dyn_stiffness(h, omega);
        let hn = sn.try_inverse().ok_or(Error::Singular("dynamic stiffness"))?;
        let nl = &self.nl_dofs;
        let hnn = hn.select_rows(nl.iter()).select_columns(nl.iter());
        let s_red = hnn.try_inverse().ok_or(Error::Singular("condensed compliance"))?;
        let k = nl.len();
        let (mut ds_red, mut f_red, mut df_red) = (CMat::zeros(k, k), CVec::zeros(k), CVec::zeros(k));
        let dsn = if derivative {
            let w = h as f64;
            Some(CMat::from_fn(self.n, self.n, |i, j| {
                Complex64::new(-2.0 * w * w * omega * self.mass[(i, j)], w * self.viscous[(i, j)])
            }))
        } else {
            None
        };
        let dh = dsn.as_ref().map(|d| -(&hn * d * &hn));
        if let Some(dh) = &dh {
            let dhnn = dh.select_rows(nl.iter()).select_columns(nl.iter());
            ds_red = -(&s_red * dhnn * &s_red);
        }
        if h == 1 {
            let p = (&hn * &self.force).select_rows(nl.iter());
            f_red = &s_red * &p;
            if let Some(dh) = &dh {
                let dp = (dh * &self.force).select_rows(nl.iter());
                df_red = &ds_red * &p + &s_red * dp;
            }
        }
        Ok(HarmonicBlock {
            h: hn,
            s_red,
            ds_red,
            f_red,
            df_red,
        })
    }

    /// Scaled residual `S_red U^N + G^N - F_red` on the nonlinear DOFs.
    pub fn eval_condensed(&self, y: &RVec, with_jacobian: bool) -> Result<(RVec, Option<RMat>)> {
        let aft = self
            .aft
            .as_ref()
            .ok_or(Error::InvalidInput("no nonlinear DOFs".into()))?;
        let nl = self.nl_dofs.len();
        let nh = self.nh;
        let nb = n_blocks(nh);
        let m = nl * nb;
        if y.len() != m + 1 {
            return Err(Error::InvalidInput("unknown vector length mismatch".into()));
        }
        let omega = self.omega_lo + y[m] * self.width;
        let s = self.amp_scale;
        let sig: Vec<f64> = self.nl_dofs.iter().map(|&d| self.sigma[d]).collect();
        let u = RVec::from_fn(m, |k, _| y[k] * s * sig[k % nl]);
        let (g, jg) = aft.eval_real(&u, with_jacobian)?;
        let mut r = g;
        let mut j = jg.map(|jg| {
            let mut j = RMat::zeros(m, m + 1);
            j.view_mut((0, 0), (m, m)).copy_from(&jg);
            j
        });
        for h in 0..=nh {
            let blk = self.harmonic_block(h, omega, with_jacobian)?;
            let rb = re_block(h) * nl;
            let ua = u.rows(rb, nl).into_owned();
            if h == 0 {
                let a = blk.s_red.map(|c| c.re);
                let ra = &a * &ua;
                for i in 0..nl {
                    r[rb + i] += ra[i];
                }
                if let Some(j) = j.as_mut() {
                    let da = blk.ds_red.map(|c| c.re) * &ua;
                    for i in 0..nl {
                        for c in 0..nl {
                            j[(rb + i, rb + c)] += a[(i, c)];
                        }
                        j[(rb + i, m)] += da[i];
                    }
                }
                continue;
            }
            let ib = im_block(h) * nl;
            let uc = CVec::from_fn(nl, |i, _| Complex64::new(u[rb + i], u[ib + i]));
            let rc = &blk.s_red * &uc - &blk.f_red;
            for i in 0..nl {
                r[rb + i] += rc[i].re;
                r[ib + i] += rc[i].im;
            }
            if let Some(j) = j.as_mut() {
                let drc = &blk.ds_red * &uc - &blk.df_red;
                for i in 0..nl {
                    for c in 0..nl {
                        let v = blk.s_red[(i, c)];
                        j[(rb + i, rb + c)] += v.re;
                        j[(rb + i, ib + c)] -= v.im;
                        j[(ib + i, rb + c)] += v.im;
                        j[(ib + i, ib + c)] += v.re;
                    }
                    j[(rb + i, m)] += drc[i].re;
                    j[(ib + i, m)] += drc[i].im;
                }
            }
        }
        for k in 0..m {
            r[k] *= sig[k % nl] / s;
        }
        if let Some(j) = j.as_mut() {
            for a in 0..m {
                let ra = sig[a % nl] / s;
                for c in 0..m {
                    j[(a, c)] *= ra * s * sig[c % nl];
                }
                j[(a, m)] *= ra * self.width;
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("harmonic balance residual"));
        }
        Ok((r, j))
    }

    /// Full harmonics `U_n = H_n (F_n - G_n)` from a condensed solution.
    fn recover(&self, y: &RVec) -> Result<HarmonicSignal> {
        let aft = self
            .aft
            .as_ref()
            .ok_or(Error::InvalidInput("no nonlinear DOFs".into()))?;
        let nl = self.nl_dofs.len();
        let nb = n_blocks(self.nh);
        let m = nl * nb;
        let omega = self.omega_lo + y[m] * self.width;
        let s = self.amp_scale;
        let u = RVec::from_fn(m, |k, _| y[k] * s * self.sigma[self.nl_dofs[k % nl]]);
        let (g, _) = aft.eval_real(&u, false)?;
        let g = HarmonicSignal::from_real(&g, nl, omega)?;
        let mut c = CMat::zeros(self.n, self.nh + 1);
        for h in 0..=self.nh {
            let blk = self.harmonic_block(h, omega, false)?;
            let mut rhs = if h == 1 {
                self.force.clone()
            } else {
                CVec::zeros(self.n)
            };
            for (i, &d) in self.nl_dofs.iter().enumerate() {
                rhs[d] -= g.coeffs[(i, h)];
            }
            c.set_column(h, &(&blk.h * rhs));
        }
        HarmonicSignal::new(c, omega)
    }
}

impl PathProblem for ForcedHbm {
    fn dim(&self) -> usize {
        ForcedHbm::dim(self)
    }

    fn eval(&mut self, y: &RVec) -> Result<(RVec, RMat)> {
        let (r, j) = ForcedHbm::eval(self, y, true)?;
        Ok((r, j.expect("requested")))
    }

    fn param_index(&self) -> usize {
        ForcedHbm::dim(self) - 1
    }
}

/// Forced response by harmonic balance over `[omega_lo, omega_hi]`.
///
/// Stability is labelled with the usual turning-point heuristic: points
/// where the path runs backwards in frequency are unstable.
pub fn hbm_frf(
    model: &SecondOrderModel,
    f1: &CVec,
    omega_lo: f64,
    omega_hi: f64,
    damping: &[DampingSpec],
    settings: &HbmSettings,
) -> Result<HbmCurve> {
    if settings.probe >= model.n_dof() {
        return Err(Error::InvalidInput(format!(
            "probe DOF {} out of range",
            settings.probe
        )));
    }
    let mut hbm = ForcedHbm::new(model, f1, omega_lo, omega_hi, damping, settings.nh, settings.nt)?;
    hbm.set_condensed(settings.condensed);
    let y0 = hbm.start(settings.step.tol)?;
    let path = continuation::trace(&mut hbm, y0, -0.05, 1.0, true, &settings.step)?;
    if let Termination::Stalled { step } = path.termination {
        return Err(Error::Stall {
            step,
            points: path.points.len(),
        });
    }
    let pi = hbm.dim() - 1;
    let mut rows = Vec::with_capacity(path.points.len());
    let mut solutions = Vec::with_capacity(path.points.len());
    for (y, t) in path.points.iter().zip(&path.tangents) {
        let u = hbm.unscale(y)?;
        let omega = u.omega;
        let amplitude = peak_amplitude(&u, settings.probe, settings.nt_amplitude)?;
        rows.push(ResponseRow {
            param: omega,
            omega,
            q: u.coeffs[(settings.probe, 1)],
            q_linear: Vec::new(),
            amplitude,
            amplitude_norm: amplitude / settings.amplitude_ref,
            stable: Some(t[pi] > 0.0),
        });
        solutions.push(u);
    }
    Ok(HbmCurve {
        curve: ResponseCurve {
            rows,
            probe: settings.probe,
            amplitude_ref: settings.amplitude_ref,
        },
        solutions,
        folds: path.folds,
    })
}

/// Relative residual of a forced solution in physical units.
pub fn forced_residual(
    model: &SecondOrderModel,
    f1: &CVec,
    damping: &[DampingSpec],
    u: &HarmonicSignal,
    nt: usize,
) -> Result<f64> {
    let mut hbm = ForcedHbm::new(model, f1, u.omega * 0.5, u.omega * 1.5, damping, u.nh(), nt)?;
    hbm.set_condensed(false);
    let y = hbm.scale(u, u.omega);
    let (r, _) = hbm.eval_full(&y, false)?;
    Ok(inf_norm(&r))
}

/// Settings of the explicit time integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeIntegrationSettings {
    /// Steps per reference period (at least 50); the step is further
    /// limited by the highest linear eigenfrequency.
    pub steps_per_period: usize,
    /// Maximum number of reference periods.
    pub periods: f64,
    /// Fraction of the run discarded as transient before extraction.
    pub discard_fraction: f64,
    /// Relative amplitude change regarded as steady.
    pub steady_tol: f64,
    /// Window (in periods) of the steady-state test.
    pub steady_periods: usize,
    /// Stop as soon as the steady-state test passes.
    pub stop_when_steady: bool,
    /// Displacement norm regarded as divergence.
    pub divergence_norm: f64,
    /// DOFs recorded in the trajectory.
    pub record_dofs: Vec<usize>,
    /// Record every n-th step.
    pub record_stride: usize,
}

impl Default for TimeIntegrationSettings {
    fn default() -> Self {
        Self {
            steps_per_period: 200,
            periods: 500.0,
            discard_fraction: 0.5,
            steady_tol: 1e-3,
            steady_periods: 10,
            stop_when_steady: true,
            divergence_norm: 1e3,
            record_dofs: vec![0],
            record_stride: 1,
        }
    }
}

impl TimeIntegrationSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steps_per_period >= 50
            && self.periods > 0.0
            && (0.0..1.0).contains(&self.discard_fraction)
            && self.steady_tol > 0.0
            && self.steady_periods > 0
            && self.divergence_norm > 0.0
            && self.record_stride > 0
            && !self.record_dofs.is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid time integration settings: {self:?}"
            )))
        }
    }
}

/// Harmonic excitation `Re{f1 exp(i Omega t)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    pub f1: CVec,
    pub omega: f64,
}

/// Recorded time history and steady-state summary.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dofs: Vec<usize>,
    pub t: Vec<f64>,
    /// `u[k][i]` is DOF `dofs[i]` at `t[k]`.
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub dt: f64,
    /// Reference period and steps per period.
    pub period: f64,
    pub steps_per_period: usize,
    /// Zero-mean amplitude of `dofs[0]` in each completed period.
    pub period_amplitudes: Vec<f64>,
    pub steady: bool,
    /// Final displacement and velocity of all DOFs.
    pub final_u: RVec,
    pub final_v: RVec,
}

/// Steady-state quantities of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub amplitude: f64,
    pub mean: f64,
    /// Oscillation frequency from zero crossings [rad/s].
    pub frequency: f64,
    pub cycles: usize,
}

impl Trajectory {
    /// Samples of recorded DOF slot `i` over the last reference period
    /// (aligned with multiples of the period when the stride is 1).
    pub fn last_period(&self, i: usize) -> Vec<f64> {
        let n = (self.steps_per_period / self.record_stride_guess()).max(1);
        let k0 = self.u.len().saturating_sub(n + 1);
        self.u[k0..self.u.len() - 1].iter().map(|r| r[i]).collect()
    }

    fn record_stride_guess(&self) -> usize {
        if self.t.len() < 2 {
            return 1;
        }
        ((self.t[1] - self.t[0]) / self.dt).round().max(1.0) as usize
    }

    /// Steady amplitude, mean and frequency of recorded slot `i` over the
    /// part after `discard_fraction`, using complete zero-crossing cycles.
    pub fn steady_state(&self, i: usize, discard_fraction: f64) -> Result<SteadyState> {
        let k0 = ((self.t.len() as f64) * discard_fraction) as usize;
        let x: Vec<f64> = self.u[k0..].iter().map(|r| r[i]).collect();
        let t = &self.t[k0..];
        if x.len() < 4 {
            return Err(Error::InvalidInput("trajectory too short".into()));
        }
        let rough = x.iter().sum::<f64>() / x.len() as f64;
        let mut ups = Vec::new();
        for k in 1..x.len() {
            if x[k - 1] - rough < 0.0 && x[k] - rough >= 0.0 {
                let f = (rough - x[k - 1]) / (x[k] - x[k - 1]);
                ups.push((k, t[k - 1] + f * (t[k] - t[k - 1])));
            }
        }
        if ups.len() < 2 {
            let mean = rough;
            let amplitude = x.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
            return Ok(SteadyState {
                amplitude,
                mean,
                frequency: 0.0,
                cycles: 0,
            });
        }
        // last cycles spanning at most 20 crossings
        let first = ups.len().saturating_sub(21);
        let (ka, ta) = ups[first];
        let (kb, tb) = *ups.last().unwrap();
        let cycles = ups.len() - 1 - first;
        let seg = &x[ka..kb];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        let amplitude = seg.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
        Ok(SteadyState {
            amplitude,
            mean,
            frequency: 2.0 * std::f64::consts::PI * cycles as f64 / (tb - ta),
            cycles,
        })
    }
}

/// Time-domain force state of the element set.
#[derive(Debug, Clone)]
struct ElementForces {
    elements: Vec<NonlinearElement>,
    dirs: Vec<Vec<(usize, f64)>>,
    /// Jenkins slider force and local displacement at the step start.
    sliders: Vec<(f64, f64)>,
}

impl ElementForces {
    fn new(model: &SecondOrderModel, u0: &RVec) -> Self {
        let elements = model.elements.clone();
        let dirs: Vec<Vec<(usize, f64)>> = elements
            .iter()
            .map(|e| e.footprint().into_iter().zip(e.direction()).collect())
            .collect();
        let sliders = elements
            .iter()
            .zip(&dirs)
            .map(|(e, d)| {
                let x = local(d, u0);
                let s = match *e {
                    NonlinearElement::ElasticCoulomb {
                        stiffness, slip_force, ..
                    } => (stiffness * x).clamp(-slip_force, slip_force),
                    _ => 0.0,
                };
                (s, x)
            })
            .collect();
        Self {
            elements,
            dirs,
            sliders,
        }
    }

    /// Adds residual element forces at `u` to `out` with the slider frozen.
    fn add(&self, u: &RVec, out: &mut RVec) {
        for ((e, d), &(s, xr)) in self.elements.iter().zip(&self.dirs).zip(&self.sliders) {
            let x = local(d, u);
            let mut slider = s;
            let g = e.step_residual(x, xr, &mut slider);
            for &(dof, dir) in d {
                out[dof] += dir * g;
            }
        }
    }

    fn commit(&mut self, u: &RVec) {
        for ((e, d), st) in self.elements.iter().zip(&self.dirs).zip(self.sliders.iter_mut()) {
            let x = local(d, u);
            let mut slider = st.0;
            e.step_force(x, st.1, &mut slider);
            *st = (slider, x);
        }
    }
}

fn local(dirs: &[(usize, f64)], u: &RVec) -> f64 {
    dirs.iter().map(|&(d, s)| s * u[d]).sum()
}

/// Integrates `M u'' + C u' + K u + g(u) = f(t)` with fixed-step RK4.
///
/// Jenkins sliders are frozen during the stages of a step and updated at
/// its end. Hysteretic damping is applied as the equivalent viscous
/// `D / omega` at the excitation (or reference) frequency.
pub fn integrate(
    model: &SecondOrderModel,
    damping: &[DampingSpec],
    u0: &RVec,
    v0: &RVec,
    excitation: Option<&Excitation>,
    reference_period: f64,
    settings: &TimeIntegrationSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    let n = model.n_dof();
    if u0.len() != n || v0.len() != n {
        return Err(Error::InvalidInput("initial state length mismatch".into()));
    }
    if u0.iter().chain(v0.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    if settings.record_dofs.iter().any(|&d| d >= n) {
        return Err(Error::InvalidInput("recorded DOF out of range".into()));
    }
    if let Some(ex) = excitation {
        if ex.f1.len() != n || !(ex.omega > 0.0) {
            return Err(Error::InvalidInput("invalid excitation".into()));
        }
    }
    let period = match excitation {
        Some(ex) => 2.0 * std::f64::consts::PI / ex.omega,
        None => reference_period,
    };
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidInput("reference period must be positive".into()));
    }
    let extra = resolve_damping(damping, model)?;
    let mut c = &model.damping + &extra.viscous;
    if extra.has_hysteretic() {
        let w = 2.0 * std::f64::consts::PI / period;
        c += &extra.hysteretic / w;
    }
    let minv = model
        .mass
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let mk = &minv * &model.stiffness;
    let mc = &minv * &c;
    // RK4 stability: keep omega_max dt below 2
    let w_max = crate::linmodal::real_modes(&model.mass, &model.stiffness)?
        .omegas
        .last()
        .copied()
        .unwrap_or(0.0);
    let mut dt = period / settings.steps_per_period as f64;
    if w_max > 0.0 {
        dt = dt.min(2.0 / w_max);
    }
    let steps_per_period = (period / dt).ceil() as usize;
    let dt = period / steps_per_period as f64;
    let total = (settings.periods * steps_per_period as f64).round() as usize;

    let (fr, fi, om) = match excitation {
        Some(ex) => (
            minv.clone() * RVec::from_iterator(n, ex.f1.iter().map(|c| c.re)),
            minv.clone() * RVec::from_iterator(n, ex.f1.iter().map(|c| c.im)),
            ex.omega,
        ),
        None => (RVec::zeros(n), RVec::zeros(n), 0.0),
    };
    let has_force = excitation.is_some();
    let mut elems = ElementForces::new(model, u0);
    let accel = |t: f64, u: &RVec, v: &RVec, elems: &ElementForces| -> RVec {
        let mut g = RVec::zeros(n);
        elems.add(u, &mut g);
        let mut a = -(&mk * u) - &mc * v - &minv * g;
        if has_force {
            let (c, s) = ((om * t).cos(), (om * t).sin());
            a += &fr * c - &fi * s;
        }
        a
    };

    let mut u = u0.clone();
    let mut v = v0.clone();
    let mut traj = Trajectory {
        dofs: settings.record_dofs.clone(),
        t: Vec::new(),
        u: Vec::new(),
        v: Vec::new(),
        dt,
        period,
        steps_per_period,
        period_amplitudes: Vec::new(),
        steady: false,
        final_u: u.clone(),
        final_v: v.clone(),
    };
    let record = |traj: &mut Trajectory, t: f64, u: &RVec, v: &RVec| {
        traj.t.push(t);
        traj.u.push(traj.dofs.iter().map(|&d| u[d]).collect());
        traj.v.push(traj.dofs.iter().map(|&d| v[d]).collect());
    };
    record(&mut traj, 0.0, &u, &v);
    let probe = settings.record_dofs[0];
    let mut window: Vec<f64> = Vec::with_capacity(steps_per_period);
    for step in 0..total {
        let t = step as f64 * dt;
        let k1v = accel(t, &u, &v, &elems);
        let k1u = v.clone();
        let u2 = &u + &k1u * (0.5 * dt);
        let v2 = &v + &k1v * (0.5 * dt);
        let k2v = accel(t + 0.5 * dt, &u2, &v2, &elems);
        let u3 = &u + &v2 * (0.5 * dt);
        let v3 = &v + &k2v * (0.5 * dt);
        let k3v = accel(t + 0.5 * dt, &u3, &v3, &elems);
        let u4 = &u + &v3 * dt;
        let v4 = &v + &k3v * dt;
        let k4v = accel(t + dt, &u4, &v4, &elems);
        u += (&k1u + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
        v += (&k1v + &k2v * 2.0 + &k3v * 2.0 + &k4v) * (dt / 6.0);
        elems.commit(&u);
        let norm = u.amax();
        if !norm.is_finite() || norm > settings.divergence_norm {
            return Err(Error::Diverged { time: t + dt, norm });
        }
        if (step + 1) % settings.record_stride == 0 {
            record(&mut traj, t + dt, &u, &v);
        }
        window.push(u[probe]);
        if window.len() == steps_per_period {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            let amp = window.iter().fold(0.0f64, |m, x| m.max((x - mean).abs()));
            traj.period_amplitudes.push(amp);
            window.clear();
            let p = traj.period_amplitudes.len();
            let w = settings.steady_periods;
            if p > w && (step + 1) as f64 >= settings.discard_fraction * total as f64 {
                let a = traj.period_amplitudes[p - 1];
                let b = traj.period_amplitudes[p - 1 - w];
                let steady = (a - b).abs() <= settings.steady_tol * a.max(f64::MIN_POSITIVE);
                traj.steady = steady;
                if steady && settings.stop_when_steady {
                    break;
                }
            }
        }
    }
    traj.final_u = u;
    traj.final_v = v;
    Ok(traj)
}

/// Mechanical energy of a memoryless model: kinetic plus linear and
/// residual element potentials (Jenkins elements are not supported).
pub fn mechanical_energy(model: &SecondOrderModel, u: &RVec, v: &RVec) -> Result<f64> {
    let mut e = 0.5 * v.dot(&(&model.mass * v)) + 0.5 * u.dot(&(&model.stiffness * u));
    for el in &model.elements {
        let x: f64 = el
            .footprint()
            .into_iter()
            .zip(el.direction())
            .map(|(d, s)| s * u[d])
            .sum();
        e += match *el {
            NonlinearElement::CubicSpring { coefficient, .. }
            | NonlinearElement::CouplingCubicSpring { coefficient, .. } => 0.25 * coefficient * x.powi(4),
            NonlinearElement::UnilateralSpring { stiffness, preload, .. } => {
                let pen = (-(x + preload)).max(0.0);
                -0.5 * stiffness * pen * pen
            }
            NonlinearElement::ElasticCoulomb { .. } => {
                return Err(Error::InvalidInput("energy undefined for hysteretic elements".into()))
            }
        };
    }
    Ok(e)
}
