//! Complex nonlinear modal analysis.
//!
//! A nonlinear mode is sought in the form `u(t) = Re sum_n U_n exp(n lambda t)`
//! with `lambda = -D omega0 + i omega0 sqrt(1 - D^2)`. The harmonics satisfy
//! `S_n(lambda) U_n + G_n(U) = 0`, where the force harmonics `G_n` are
//! evaluated by AFT treating the motion as periodic with `omega0`. The
//! problem is closed by an amplitude normalization (kinetic energy or master
//! amplitude) and a phase condition `Im U_1^(m) = 0`.
//!
//! Scaled unknowns. The shape is split as `U = s V` with `s = 10^(kappa p)`
//! (or `(p q_ref)^kappa` without log stepping), where `p` is the
//! continuation parameter and `kappa` is 1/2 for an energy target and 1 for
//! an amplitude target. `V` is normalized to unit energy or unit master
//! amplitude, so its size stays of order one along the branch; `p` only
//! enters through `G(s V) / s`.
//!
//! Two equivalent formulations are used:
//!
//! - the full form in linear modal coordinates of `V` (all DOFs, always
//!   well-posed, used for tangents and near the linear regime);
//! - the condensed form on the nonlinear DOFs only,
//!   `V_n^N + H_n^NN(lambda) G_n / s = 0`, with the remaining DOFs recovered
//!   from `V_n = -H_n(lambda) G_n / s`. It is only valid when no compliance
//!   denominator is near-resonant.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::aft::{im_block, n_blocks, re_block, Aft, HarmonicSignal, DEFAULT_NT};
use crate::continuation::{self, arclength_newton, PathProblem, StepControl, Termination};
use crate::linalg::inf_norm;
use crate::linmodal::{compliance_for, dyn_stiffness, ComplianceProvider, LinearModalBasis};
use crate::model::SecondOrderModel;
use crate::{CMat, CVec, Complex64, Error, RMat, RVec, Result};

/// Quantity prescribed by the amplitude normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationTarget {
    /// Mean kinetic energy over the pseudo-period.
    KineticEnergy,
    /// `|U_1|` at the master DOF.
    MasterAmplitude,
}

/// Settings of the modal solver and branch continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSettings {
    pub target: NormalizationTarget,
    /// Continue in `log10` of the target.
    pub log_stepping: bool,
    pub nh: usize,
    pub nt: usize,
    pub step: StepControl,
    /// Relative guard for near-resonant compliance denominators.
    pub guard: f64,
    /// Use the condensed corrector where the guard allows it.
    pub condensation: bool,
    /// Master DOF; defaults to the largest linear DOF of the mode.
    pub master_dof: Option<usize>,
    /// Reference for the frequency unknown; defaults to the linear `omega_j`.
    pub frequency_scale: Option<f64>,
    /// Reference for the damping-ratio unknown.
    pub damping_scale: f64,
    /// Minimum `|dp/ds|` of the predictor for using the condensed corrector.
    pub condensed_min_slope: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            target: NormalizationTarget::KineticEnergy,
            log_stepping: true,
            nh: 7,
            nt: DEFAULT_NT,
            step: StepControl::default(),
            guard: crate::linmodal::DEFAULT_GUARD,
            condensation: true,
            master_dof: None,
            frequency_scale: None,
            damping_scale: 0.01,
            condensed_min_slope: 0.5,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        if self.nh == 0 {
            return Err(Error::InvalidInput("NH must be at least 1".into()));
        }
        if self.nt < 4 * self.nh + 1 {
            return Err(Error::InvalidInput(format!(
                "N_t = {} too small for NH = {}",
                self.nt, self.nh
            )));
        }
        if !(self.guard > 0.0 && self.damping_scale > 0.0) {
            return Err(Error::InvalidInput("guard and damping scale must be positive".into()));
        }
        if let Some(f) = self.frequency_scale {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidInput("frequency scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One converged nonlinear-mode solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalPoint {
    pub lambda: Complex64,
    pub omega0: f64,
    pub damping: f64,
    /// Harmonics over all DOFs at `omega0`.
    pub harmonics: HarmonicSignal,
    pub kinetic_energy: f64,
    pub master_dof: usize,
    pub master_amp: f64,
}

impl ModalPoint {
    /// `u(0)` and `u'(0)` of the periodic motion.
    pub fn initial_state(&self) -> (RVec, RVec) {
        (self.harmonics.eval(0.0), self.harmonics.eval_velocity(0.0))
    }
}

/// `lambda` from eigenfrequency and damping ratio.
pub fn eigenvalue(omega0: f64, damping: f64) -> Result<Complex64> {
    if !(damping.abs() < 1.0 && omega0 > 0.0 && omega0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid eigenfrequency/damping pair ({omega0}, {damping})"
        )));
    }
    Ok(Complex64::new(
        -damping * omega0,
        omega0 * (1.0 - damping * damping).sqrt(),
    ))
}

/// Mean kinetic energy `1/4 sum (n omega)^2 U_n^H M U_n`.
pub fn kinetic_energy(u: &HarmonicSignal, mass: &RMat) -> f64 {
    let mut e = 0.0;
    for n in 1..=u.nh() {
        let un = u.harmonic(n);
        let mu = mass.map(|v| Complex64::new(v, 0.0)) * &un;
        e += 0.25 * (n as f64 * u.omega).powi(2) * un.dotc(&mu).re;
    }
    e
}

/// Setup of the scaled eigenproblem for one mode.
pub struct CnmaSystem {
    model: SecondOrderModel,
    settings: ContinuationSettings,
    basis: LinearModalBasis,
    compliance: Box<dyn ComplianceProvider + Send + Sync>,
    aft: Aft,
    mode: usize,
    master: usize,
    /// Nonlinear DOFs.
    nl: Vec<usize>,
    /// Rows of `Phi` at the nonlinear DOFs.
    phi_nl: RMat,
    /// `Phi^T C Phi`.
    c_modal: RMat,
    c_ref: f64,
    c_master: f64,
    kappa: f64,
    omega_ref: f64,
    q_ref: f64,
    all: Vec<usize>,
}

struct Unpacked {
    eta: Vec<CVec>,
    omega: f64,
    damping: f64,
    lambda: Complex64,
    dl_dw: Complex64,
    dl_dd: Complex64,
    s: f64,
    /// `(ds/dp) / s`.
    dlns_dp: f64,
}

impl CnmaSystem {
    pub fn new(model: &SecondOrderModel, mode: usize, settings: &ContinuationSettings) -> Result<Self> {
        settings.validate()?;
        let basis = LinearModalBasis::from_model(model)?;
        if mode >= basis.n_modes() {
            return Err(Error::InvalidInput(format!(
                "mode {mode} out of range ({} modes)",
                basis.n_modes()
            )));
        }
        if basis.omegas[mode] <= 0.0 {
            return Err(Error::InvalidInput("mode has zero linear frequency".into()));
        }
        if model.elements.is_empty() {
            return Err(Error::InvalidInput("model has no nonlinear elements".into()));
        }
        let nl = model.nonlinear_dofs().to_vec();
        let master = match settings.master_dof {
            Some(m) if m < model.n_dof() => m,
            Some(m) => return Err(Error::InvalidInput(format!("master DOF {m} out of range"))),
            None => basis.master_dof(mode, &nl),
        };
        let phi_mj = basis.phis[(master, mode)];
        if phi_mj.abs() < 1e-12 * basis.phi(mode).amax() {
            return Err(Error::InvalidInput(format!(
                "master DOF {master} is a node of mode {mode}"
            )));
        }
        let compliance = compliance_for(model, settings.guard)?;
        let aft = Aft::new(&model.elements, &nl, settings.nh, settings.nt)?;
        let phi_nl = basis.phis.select_rows(nl.iter());
        let c_modal = basis.project(&model.damping);
        let omega_j = basis.omegas[mode];
        let (kappa, c_ref) = match settings.target {
            NormalizationTarget::KineticEnergy => (0.5, 2.0 / omega_j),
            NormalizationTarget::MasterAmplitude => (1.0, 1.0 / phi_mj),
        };
        let c_master = (c_ref * phi_mj).abs();
        Ok(Self {
            model: model.clone(),
            settings: settings.clone(),
            omega_ref: settings.frequency_scale.unwrap_or(omega_j),
            basis,
            compliance,
            aft,
            mode,
            master,
            nl,
            phi_nl,
            c_modal,
            c_ref,
            c_master,
            kappa,
            q_ref: 1.0,
            all: (0..model.n_dof()).collect(),
        })
    }

    pub fn basis(&self) -> &LinearModalBasis {
        &self.basis
    }

    pub fn master_dof(&self) -> usize {
        self.master
    }

    pub fn settings(&self) -> &ContinuationSettings {
        &self.settings
    }

    fn n(&self) -> usize {
        self.model.n_dof()
    }

    fn nb(&self) -> usize {
        n_blocks(self.settings.nh)
    }

    /// Number of full-form unknowns (`xi`, `w`, `d`, `p`).
    pub fn dim(&self) -> usize {
        self.n() * self.nb() + 3
    }

    /// Parameter value for a target quantity.
    pub fn param_for(&self, target: f64) -> f64 {
        if self.settings.log_stepping {
            target.log10()
        } else {
            target / self.q_ref
        }
    }

    /// Target quantity for a parameter value.
    pub fn target_for(&self, p: f64) -> f64 {
        if self.settings.log_stepping {
            10f64.powf(p)
        } else {
            p * self.q_ref
        }
    }

    fn scale_factor(&self, p: f64) -> Result<(f64, f64)> {
        if self.settings.log_stepping {
            Ok((10f64.powf(self.kappa * p), self.kappa * LN_10))
        } else {
            if p <= 0.0 {
                return Err(Error::InvalidInput("linear stepping needs a positive target".into()));
            }
            Ok(((p * self.q_ref).powf(self.kappa), self.kappa / p))
        }
    }

    fn unpack(&self, y: &RVec) -> Result<Unpacked> {
        let n = self.n();
        let nb = self.nb();
        let nh = self.settings.nh;
        let mut eta = Vec::with_capacity(nh + 1);
        for h in 0..=nh {
            let mut v = CVec::zeros(n);
            for k in 0..n {
                let re = y[re_block(h) * n + k];
                let im = if h == 0 { 0.0 } else { y[im_block(h) * n + k] };
                v[k] = Complex64::new(re, im) * self.c_ref;
            }
            eta.push(v);
        }
        let omega = y[n * nb] * self.omega_ref;
        let damping = y[n * nb + 1] * self.settings.damping_scale;
        let lambda = eigenvalue(omega, damping)?;
        let root = (1.0 - damping * damping).sqrt();
        let dl_domega = lambda / omega;
        let dl_dd_phys = Complex64::new(-omega, -omega * damping / root);
        let (s, dlns_dp) = self.scale_factor(y[n * nb + 2])?;
        Ok(Unpacked {
            eta,
            omega,
            damping,
            lambda,
            dl_dw: dl_domega * self.omega_ref,
            dl_dd: dl_dd_phys * self.settings.damping_scale,
            s,
            dlns_dp,
        })
    }

    /// Scaled nonlinear forces `G(s V^N) / s` and `dG/dU` at `s V^N`.
    fn scaled_forces(&self, v_nl: &RVec, s: f64, jac: bool) -> Result<(RVec, Option<RMat>)> {
        let (g, j) = self.aft.eval_real(&(v_nl * s), jac)?;
        Ok((g / s, j))
    }

    fn row_scale(&self, h: usize, k: usize) -> f64 {
        let w = self.basis.omegas[k];
        let nw = (h.max(1) as f64) * self.omega_ref;
        self.c_ref * (w * w).max(nw * nw)
    }

    /// Packs complex per-harmonic values for nonlinear DOFs into real layout.
    fn nl_real(&self, eta: &[CVec]) -> RVec {
        let m = self.nl.len();
        let mut v = RVec::zeros(m * self.nb());
        for (h, e) in eta.iter().enumerate() {
            let vn = self.phi_nl.map(|x| Complex64::new(x, 0.0)) * e;
            for d in 0..m {
                v[re_block(h) * m + d] = vn[d].re;
                if h > 0 {
                    v[im_block(h) * m + d] = vn[d].im;
                }
            }
        }
        v
    }

    fn harmonic_of(&self, v: &RVec, h: usize, m: usize, row: usize) -> Complex64 {
        let re = v[re_block(h) * m + row];
        let im = if h == 0 { 0.0 } else { v[im_block(h) * m + row] };
        Complex64::new(re, im)
    }

    /// Full-form residual and Jacobian in scaled unknowns.
    pub fn eval_full(&self, y: &RVec, with_jacobian: bool) -> Result<(RVec, Option<RMat>)> {
        if y.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "unknown vector has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        let n = self.n();
        let nb = self.nb();
        let nh = self.settings.nh;
        let m = self.nl.len();
        let u = self.unpack(y)?;
        let v_nl = self.nl_real(&u.eta);
        let (g, jg) = self.scaled_forces(&v_nl, u.s, with_jacobian)?;
        let neq = n * nb + 2;
        let mut r = RVec::zeros(neq);

        // harmonic balance rows
        let mut dr_dlambda: Vec<CVec> = Vec::with_capacity(nh + 1);
        for h in 0..=nh {
            let hl = u.lambda * h as f64;
            let ceta = self.c_modal.map(|x| Complex64::new(x, 0.0)) * &u.eta[h];
            let gh: CVec = CVec::from_iterator(m, (0..m).map(|d| self.harmonic_of(&g, h, m, d)));
            let mut dl = CVec::zeros(n);
            for k in 0..n {
                let w2 = self.basis.omegas[k].powi(2);
                let mut val = (Complex64::new(w2, 0.0) + hl * hl) * u.eta[h][k] + hl * ceta[k];
                for d in 0..m {
                    val += gh[d] * self.phi_nl[(d, k)];
                }
                let sc = self.row_scale(h, k);
                r[re_block(h) * n + k] = val.re / sc;
                if h > 0 {
                    r[im_block(h) * n + k] = val.im / sc;
                }
                let hf = h as f64;
                dl[k] = (2.0 * hf * hf * u.lambda * u.eta[h][k] + hf * ceta[k]) / sc;
            }
            dr_dlambda.push(dl);
        }

        // normalization and phase
        let v1m = self.master_value(&u.eta[1]);
        let energy = self.modal_energy(&u.eta, u.omega);
        r[n * nb] = match self.settings.target {
            NormalizationTarget::KineticEnergy => energy - 1.0,
            NormalizationTarget::MasterAmplitude => v1m.re - 1.0,
        };
        r[n * nb + 1] = v1m.im / self.c_master;

        if !with_jacobian {
            return Ok((r, None));
        }
        let jg = jg.expect("requested");
        let dim = self.dim();
        let mut jac = RMat::zeros(neq, dim);
        let (iw, id, ip) = (n * nb, n * nb + 1, n * nb + 2);

        // linear part, block diagonal per harmonic
        for h in 0..=nh {
            let hl = u.lambda * h as f64;
            for k in 0..n {
                let sc = self.row_scale(h, k);
                for l in 0..n {
                    let mut a = hl * self.c_modal[(k, l)];
                    if k == l {
                        a += Complex64::new(self.basis.omegas[k].powi(2), 0.0) + hl * hl;
                    }
                    if a == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let a = a * (self.c_ref / sc);
                    jac[(re_block(h) * n + k, re_block(h) * n + l)] += a.re;
                    if h > 0 {
                        jac[(im_block(h) * n + k, re_block(h) * n + l)] += a.im;
                        jac[(re_block(h) * n + k, im_block(h) * n + l)] -= a.im;
                        jac[(im_block(h) * n + k, im_block(h) * n + l)] += a.re;
                    }
                }
                let dl = dr_dlambda[h][k];
                for (col, dlam) in [(iw, u.dl_dw), (id, u.dl_dd)] {
                    let v = dl * dlam;
                    jac[(re_block(h) * n + k, col)] += v.re;
                    if h > 0 {
                        jac[(im_block(h) * n + k, col)] += v.im;
                    }
                }
            }
        }

        // nonlinear part: Phi_N^T J_G Phi_N c_ref, block structure over harmonics
        let mut jgp = RMat::zeros(m * nb, n * nb);
        for b in 0..nb {
            for l in 0..n {
                for e in 0..m {
                    let f = self.phi_nl[(e, l)] * self.c_ref;
                    if f == 0.0 {
                        continue;
                    }
                    for row in 0..m * nb {
                        jgp[(row, b * n + l)] += jg[(row, b * m + e)] * f;
                    }
                }
            }
        }
        let dg_dp = (&jg * &v_nl - &g) * u.dlns_dp;
        for b in 0..nb {
            let h = b.div_ceil(2);
            for k in 0..n {
                let sc = self.row_scale(h, k);
                let row = b * n + k;
                for d in 0..m {
                    let f = self.phi_nl[(d, k)] / sc;
                    if f == 0.0 {
                        continue;
                    }
                    for col in 0..n * nb {
                        jac[(row, col)] += f * jgp[(b * m + d, col)];
                    }
                    jac[(row, ip)] += f * dg_dp[b * m + d];
                }
            }
        }

        // normalization row
        match self.settings.target {
            NormalizationTarget::KineticEnergy => {
                for h in 1..=nh {
                    let f = 0.5 * (h as f64 * u.omega).powi(2) * self.c_ref;
                    for k in 0..n {
                        jac[(iw, re_block(h) * n + k)] = f * u.eta[h][k].re;
                        jac[(iw, im_block(h) * n + k)] = f * u.eta[h][k].im;
                    }
                }
                jac[(iw, iw)] = 2.0 * energy / u.omega * self.omega_ref;
            }
            NormalizationTarget::MasterAmplitude => {
                for k in 0..n {
                    jac[(iw, re_block(1) * n + k)] = self.basis.phis[(self.master, k)] * self.c_ref;
                }
            }
        }
        // phase row
        for k in 0..n {
            jac[(id, im_block(1) * n + k)] = self.basis.phis[(self.master, k)] * self.c_ref / self.c_master;
        }
        Ok((r, Some(jac)))
    }

    fn master_value(&self, eta1: &CVec) -> Complex64 {
        (0..self.n()).map(|k| eta1[k] * self.basis.phis[(self.master, k)]).sum()
    }

    fn modal_energy(&self, eta: &[CVec], omega: f64) -> f64 {
        eta.iter()
            .enumerate()
            .skip(1)
            .map(|(h, e)| 0.25 * (h as f64 * omega).powi(2) * e.norm_squared())
            .sum()
    }

    /// Linearized mode at parameter `p` as full-form unknowns.
    pub fn linear_guess(&self, p: f64) -> RVec {
        let n = self.n();
        let nb = self.nb();
        let mut y = RVec::zeros(self.dim());
        let sign = self.basis.phis[(self.master, self.mode)].signum();
        let xi = match self.settings.target {
            NormalizationTarget::KineticEnergy => sign,
            NormalizationTarget::MasterAmplitude => 1.0,
        };
        y[re_block(1) * n + self.mode] = xi;
        y[n * nb] = self.basis.omegas[self.mode] / self.omega_ref;
        y[n * nb + 1] = 0.0;
        y[n * nb + 2] = p;
        y
    }

    /// Newton on the full form with `p` held fixed.
    pub fn newton_fixed_param(&self, y0: &RVec) -> Result<(RVec, usize)> {
        let dim = self.dim();
        let mut y = y0.clone();
        let ctl = &self.settings.step;
        let mut rn = f64::INFINITY;
        for it in 1..=ctl.max_iterations {
            let (r, j) = self.eval_full(&y, true)?;
            rn = inf_norm(&r);
            if !rn.is_finite() {
                return Err(Error::NonFinite("modal residual"));
            }
            let j = j.expect("requested");
            let a = j.columns(0, dim - 1).into_owned();
            let dy = a.lu().solve(&(-&r)).ok_or(Error::Singular("modal Newton"))?;
            if dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular("modal Newton"));
            }
            for i in 0..dim - 1 {
                y[i] += dy[i];
            }
            if rn <= ctl.tol && inf_norm(&dy) <= 1e3 * ctl.tol.max(1e-12) {
                return Ok((y, it));
            }
        }
        let (r, _) = self.eval_full(&y, false)?;
        let rn_final = inf_norm(&r);
        if rn_final <= ctl.tol {
            return Ok((y, ctl.max_iterations));
        }
        Err(Error::NoConvergence {
            iterations: ctl.max_iterations,
            residual: rn.min(rn_final),
        })
    }

    /// Whether the condensed form is admissible at `lambda`.
    pub fn condensation_admissible(&self, lambda: Complex64) -> bool {
        (1..=self.settings.nh).all(|h| self.compliance.check_guard(h, lambda, self.settings.guard).is_ok())
    }

    /// Condensed unknowns `[V^N / c_N, w, d]` from full-form unknowns.
    pub fn condense(&self, y: &RVec) -> Result<(RVec, f64)> {
        let u = self.unpack(y)?;
        let v_nl = self.nl_real(&u.eta);
        let c_n = inf_norm(&v_nl).max(f64::MIN_POSITIVE);
        let m = self.nl.len();
        let nb = self.nb();
        let mut x = RVec::zeros(m * nb + 2);
        x.rows_mut(0, m * nb).copy_from(&(v_nl / c_n));
        x[m * nb] = u.omega / self.omega_ref;
        x[m * nb + 1] = u.damping / self.settings.damping_scale;
        Ok((x, c_n))
    }

    /// Condensed residual and Jacobian at fixed parameter `p`.
    ///
    /// Returns the recovered full harmonics `V_n` as well.
    pub fn eval_condensed(
        &self,
        x: &RVec,
        c_n: f64,
        p: f64,
        with_jacobian: bool,
    ) -> Result<(RVec, Option<RMat>, Vec<CVec>)> {
        let m = self.nl.len();
        let nb = self.nb();
        let nh = self.settings.nh;
        if x.len() != m * nb + 2 {
            return Err(Error::InvalidInput("condensed unknown length mismatch".into()));
        }
        let omega = x[m * nb] * self.omega_ref;
        let damping = x[m * nb + 1] * self.settings.damping_scale;
        let lambda = eigenvalue(omega, damping)?;
        let root = (1.0 - damping * damping).sqrt();
        let dl_dw = lambda / omega * self.omega_ref;
        let dl_dd = Complex64::new(-omega, -omega * damping / root) * self.settings.damping_scale;
        let (s, _) = self.scale_factor(p)?;
        let v_nl = x.rows(0, m * nb).into_owned() * c_n;
        let (g, jg) = self.scaled_forces(&v_nl, s, with_jacobian)?;

        let mut hs = Vec::with_capacity(nh + 1);
        let mut dhs = Vec::with_capacity(nh + 1);
        for h in 0..=nh {
            hs.push(self.compliance.block(h, lambda, &self.all, &self.nl)?);
            if with_jacobian {
                dhs.push(self.compliance.d_block(h, lambda, &self.all, &self.nl)?);
            }
        }
        let gh: Vec<CVec> = (0..=nh)
            .map(|h| CVec::from_iterator(m, (0..m).map(|d| self.harmonic_of(&g, h, m, d))))
            .collect();
        let vs: Vec<CVec> = (0..=nh).map(|h| -(&hs[h] * &gh[h])).collect();

        let mass_c = self.model.mass.map(|v| Complex64::new(v, 0.0));
        let neq = m * nb + 2;
        let mut r = RVec::zeros(neq);
        for h in 0..=nh {
            for (d, &dof) in self.nl.iter().enumerate() {
                let val = Complex64::new(
                    v_nl[re_block(h) * m + d],
                    if h == 0 { 0.0 } else { v_nl[im_block(h) * m + d] },
                ) - vs[h][dof];
                r[re_block(h) * m + d] = val.re / c_n;
                if h > 0 {
                    r[im_block(h) * m + d] = val.im / c_n;
                }
            }
        }
        let energy: f64 = (1..=nh)
            .map(|h| 0.25 * (h as f64 * omega).powi(2) * vs[h].dotc(&(&mass_c * &vs[h])).re)
            .sum();
        let v1m = vs[1][self.master];
        r[m * nb] = match self.settings.target {
            NormalizationTarget::KineticEnergy => energy - 1.0,
            NormalizationTarget::MasterAmplitude => v1m.re - 1.0,
        };
        r[m * nb + 1] = v1m.im / self.c_master;
        if !with_jacobian {
            return Ok((r, None, vs));
        }
        let jg = jg.expect("requested");
        let mut jac = RMat::zeros(neq, neq);
        let (iw, id) = (m * nb, m * nb + 1);
        let mv: Vec<CVec> = vs.iter().map(|v| &mass_c * v).collect();

        // derivative of the recovered V_n w.r.t. each unknown
        for col in 0..neq {
            // dV_n for all harmonics
            let mut dv: Vec<CVec> = Vec::with_capacity(nh + 1);
            for h in 0..=nh {
                let d = if col < m * nb {
                    let dg = CVec::from_iterator(
                        m,
                        (0..m).map(|d| {
                            let re = jg[(re_block(h) * m + d, col)];
                            let im = if h == 0 { 0.0 } else { jg[(im_block(h) * m + d, col)] };
                            Complex64::new(re, im) * c_n
                        }),
                    );
                    -(&hs[h] * dg)
                } else {
                    let dl = if col == iw { dl_dw } else { dl_dd };
                    -(&dhs[h] * &gh[h]) * dl
                };
                dv.push(d);
            }
            for h in 0..=nh {
                for (d, &dof) in self.nl.iter().enumerate() {
                    let mut val = -dv[h][dof];
                    if col == re_block(h) * m + d {
                        val += Complex64::new(c_n, 0.0);
                    }
                    if h > 0 && col == im_block(h) * m + d {
                        val += Complex64::new(0.0, c_n);
                    }
                    jac[(re_block(h) * m + d, col)] = val.re / c_n;
                    if h > 0 {
                        jac[(im_block(h) * m + d, col)] = val.im / c_n;
                    }
                }
            }
            jac[(iw, col)] = match self.settings.target {
                NormalizationTarget::KineticEnergy => {
                    let mut de: f64 = (1..=nh)
                        .map(|h| 0.5 * (h as f64 * omega).powi(2) * mv[h].dotc(&dv[h]).re)
                        .sum();
                    if col == iw {
                        de += 2.0 * energy / omega * self.omega_ref;
                    }
                    de
                }
                NormalizationTarget::MasterAmplitude => dv[1][self.master].re,
            };
            jac[(id, col)] = dv[1][self.master].im / self.c_master;
        }
        Ok((r, Some(jac), vs))
    }

    /// Newton on the condensed form at fixed `p`; returns full-form unknowns.
    pub fn solve_condensed(&self, y0: &RVec) -> Result<(RVec, usize)> {
        let n = self.n();
        let nb = self.nb();
        let p = y0[n * nb + 2];
        let (mut x, c_n) = self.condense(y0)?;
        let ctl = &self.settings.step;
        for it in 1..=ctl.max_iterations {
            let (r, j, vs) = self.eval_condensed(&x, c_n, p, true)?;
            let rn = inf_norm(&r);
            if !rn.is_finite() {
                return Err(Error::NonFinite("condensed residual"));
            }
            if rn <= ctl.tol {
                return Ok((self.expand(&x, &vs, p), it));
            }
            let dx = j
                .expect("requested")
                .lu()
                .solve(&(-&r))
                .ok_or(Error::Singular("condensed Newton"))?;
            if dx.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular("condensed Newton"));
            }
            x += dx;
        }
        let (r, _, vs) = self.eval_condensed(&x, c_n, p, false)?;
        let rn = inf_norm(&r);
        if rn <= ctl.tol {
            return Ok((self.expand(&x, &vs, p), ctl.max_iterations));
        }
        Err(Error::NoConvergence {
            iterations: ctl.max_iterations,
            residual: rn,
        })
    }

    /// Full-form unknowns from recovered physical harmonics.
    fn expand(&self, x: &RVec, vs: &[CVec], p: f64) -> RVec {
        let n = self.n();
        let nb = self.nb();
        let m = self.nl.len();
        let mut y = RVec::zeros(self.dim());
        let pm = (self.basis.phis.transpose() * &self.model.mass).map(|v| Complex64::new(v, 0.0));
        for (h, v) in vs.iter().enumerate() {
            let eta = &pm * v;
            for k in 0..n {
                y[re_block(h) * n + k] = eta[k].re / self.c_ref;
                if h > 0 {
                    y[im_block(h) * n + k] = eta[k].im / self.c_ref;
                }
            }
        }
        y[n * nb] = x[m * nb];
        y[n * nb + 1] = x[m * nb + 1];
        y[n * nb + 2] = p;
        y
    }

    /// Physical modal point from full-form unknowns.
    pub fn to_point(&self, y: &RVec) -> Result<ModalPoint> {
        let n = self.n();
        let nh = self.settings.nh;
        let u = self.unpack(y)?;
        let mut coeffs = CMat::zeros(n, nh + 1);
        let phis_c = self.basis.phis.map(|v| Complex64::new(v, 0.0));
        for h in 0..=nh {
            let v = &phis_c * &u.eta[h] * Complex64::new(u.s, 0.0);
            coeffs.set_column(h, &v);
        }
        let mut harmonics = HarmonicSignal::new(coeffs, u.omega)?;
        if harmonics.coeffs[(self.master, 1)].re < 0.0 {
            harmonics = harmonics.rotated(std::f64::consts::PI);
        }
        let kinetic_energy = kinetic_energy(&harmonics, &self.model.mass);
        let master_amp = harmonics.coeffs[(self.master, 1)].norm();
        Ok(ModalPoint {
            lambda: u.lambda,
            omega0: u.omega,
            damping: u.damping,
            harmonics,
            kinetic_energy,
            master_dof: self.master,
            master_amp,
        })
    }

    /// Full-form unknowns from a physical modal point at parameter `p`.
    pub fn from_point(&self, point: &ModalPoint, p: f64) -> Result<RVec> {
        let n = self.n();
        let nb = self.nb();
        let nh = self.settings.nh;
        let (s, _) = self.scale_factor(p)?;
        let u = point.harmonics.with_order(nh);
        if u.n_dof() != n {
            return Err(Error::InvalidInput("modal point DOF count mismatch".into()));
        }
        let pm = (self.basis.phis.transpose() * &self.model.mass).map(|v| Complex64::new(v, 0.0));
        let mut y = RVec::zeros(self.dim());
        for h in 0..=nh {
            let eta = &pm * u.harmonic(h) / Complex64::new(s * self.c_ref, 0.0);
            for k in 0..n {
                y[re_block(h) * n + k] = eta[k].re;
                if h > 0 {
                    y[im_block(h) * n + k] = eta[k].im;
                }
            }
        }
        y[n * nb] = point.omega0 / self.omega_ref;
        y[n * nb + 1] = point.damping / self.settings.damping_scale;
        y[n * nb + 2] = p;
        Ok(y)
    }

    /// Scaled full-form residual norm of a physical point.
    pub fn residual_norm(&self, point: &ModalPoint) -> Result<f64> {
        let p = match self.settings.target {
            NormalizationTarget::KineticEnergy => self.param_for(point.kinetic_energy),
            NormalizationTarget::MasterAmplitude => self.param_for(point.master_amp),
        };
        let y = self.from_point(point, p)?;
        let (r, _) = self.eval_full(&y, false)?;
        Ok(inf_norm(&r))
    }

    /// Converges a modal point at the given target value from a guess.
    pub fn solve_point(&self, guess: &ModalPoint, target: f64) -> Result<ModalPoint> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid normalization target {target}")));
        }
        let p = self.param_for(target);
        let y0 = self.from_point(guess, p)?;
        let y = self.solve_from(&y0)?;
        self.to_point(&y)
    }

    /// Modal point at a target value starting from the linearized mode.
    pub fn solve_linear_start(&self, target: f64) -> Result<ModalPoint> {
        let p = self.param_for(target);
        let y = self.solve_from(&self.linear_guess(p))?;
        self.to_point(&y)
    }

    fn solve_from(&self, y0: &RVec) -> Result<RVec> {
        let u = self.unpack(y0)?;
        if self.settings.condensation && self.condensation_admissible(u.lambda) {
            if let Ok((y, _)) = self.solve_condensed(y0) {
                if self.full_residual_ok(&y) {
                    return Ok(y);
                }
            }
        }
        Ok(self.newton_fixed_param(y0)?.0)
    }

    fn full_residual_ok(&self, y: &RVec) -> bool {
        match self.eval_full(y, false) {
            Ok((r, _)) => inf_norm(&r) <= 10.0 * self.settings.step.tol,
            Err(_) => false,
        }
    }
}

struct BranchProblem<'a> {
    sys: &'a CnmaSystem,
    condensed_steps: usize,
    full_steps: usize,
}

impl PathProblem for BranchProblem<'_> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn eval(&mut self, y: &RVec) -> Result<(RVec, RMat)> {
        let (r, j) = self.sys.eval_full(y, true)?;
        Ok((r, j.expect("requested")))
    }

    fn param_index(&self) -> usize {
        self.sys.dim() - 1
    }

    fn correct(&mut self, predicted: &RVec, tangent: &RVec, _ds: f64) -> Option<Result<(RVec, usize)>> {
        let sys = self.sys;
        let pi = sys.dim() - 1;
        let usable = sys.settings.condensation
            && tangent[pi].abs() >= sys.settings.condensed_min_slope
            && sys
                .unpack(predicted)
                .map(|u| sys.condensation_admissible(u.lambda))
                .unwrap_or(false);
        if usable {
            if let Ok((y, it)) = sys.solve_condensed(predicted) {
                if sys.full_residual_ok(&y) {
                    self.condensed_steps += 1;
                    return Some(Ok((y, it)));
                }
            }
        }
        self.full_steps += 1;
        Some(arclength_newton(self, predicted, tangent, &sys.settings.step))
    }
}

/// Continued nonlinear mode.
#[derive(Debug, Clone)]
pub struct ModeBranch {
    pub mode: usize,
    pub master_dof: usize,
    pub target: NormalizationTarget,
    pub points: Vec<ModalPoint>,
    /// Continuation parameter per point.
    pub params: Vec<f64>,
    /// Indices of points at which the target quantity reverses direction.
    pub turning_points: Vec<usize>,
    pub termination: Termination,
    /// Points corrected with the condensed and the full formulation.
    pub condensed_steps: usize,
    pub full_steps: usize,
}

impl ModeBranch {
    pub fn energies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.kinetic_energy).collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega0).collect()
    }

    pub fn dampings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.damping).collect()
    }

    /// Errors with [`Error::Stall`] unless the branch covered its range.
    pub fn require_complete(self) -> Result<Self> {
        match self.termination {
            Termination::Completed => Ok(self),
            Termination::Stalled { step } => Err(Error::Stall {
                step,
                points: self.points.len(),
            }),
            Termination::MaxPoints => Err(Error::Stall {
                step: f64::NAN,
                points: self.points.len(),
            }),
        }
    }
}

/// Follows mode `mode` over `[target_min, target_max]` of the normalization
/// quantity, starting from the linearized mode.
pub fn continue_branch(
    model: &SecondOrderModel,
    mode: usize,
    target_min: f64,
    target_max: f64,
    settings: &ContinuationSettings,
) -> Result<ModeBranch> {
    if !(target_min > 0.0 && target_max > target_min && target_max.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid target range [{target_min}, {target_max}]"
        )));
    }
    let mut sys = CnmaSystem::new(model, mode, settings)?;
    if !settings.log_stepping {
        sys.q_ref = target_max;
    }
    let p0 = sys.param_for(target_min);
    let p1 = sys.param_for(target_max);
    let (y0, _) = sys.newton_fixed_param(&sys.linear_guess(p0))?;
    let span = p1 - p0;
    let mut problem = BranchProblem {
        sys: &sys,
        condensed_steps: 0,
        full_steps: 0,
    };
    let path = continuation::trace(&mut problem, y0, p0 - 0.5 * span, p1, true, &settings.step)?;
    let (condensed_steps, full_steps) = (problem.condensed_steps, problem.full_steps);
    let mut points = Vec::with_capacity(path.points.len());
    let mut params = Vec::with_capacity(path.points.len());
    let pi = sys.dim() - 1;
    for y in &path.points {
        points.push(sys.to_point(y)?);
        params.push(y[pi]);
    }
    Ok(ModeBranch {
        mode,
        master_dof: sys.master,
        target: settings.target,
        points,
        params,
        turning_points: path.folds,
        termination: path.termination,
        condensed_steps,
        full_steps,
    })
}

/// Point of branch `a` whose frequency is commensurable with branch `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TongueHit {
    pub index: usize,
    pub energy: f64,
    pub omega_a: f64,
    pub omega_b: f64,
    pub rel_error: f64,
}

/// Frequency of `b` at kinetic energy `e`, interpolated in `log e`, on the
/// segment closest to `target`.
pub fn frequency_at_energy(b: &ModeBranch, e: f64, target: f64) -> Option<f64> {
    let le = e.ln();
    let mut best: Option<f64> = None;
    for w in b.points.windows(2) {
        let (e0, e1) = (w[0].kinetic_energy.ln(), w[1].kinetic_energy.ln());
        let (lo, hi) = if e0 <= e1 { (e0, e1) } else { (e1, e0) };
        if le < lo || le > hi {
            continue;
        }
        let t = if hi > lo { (le - e0) / (e1 - e0) } else { 0.0 };
        let om = w[0].omega0 + t * (w[1].omega0 - w[0].omega0);
        if best.is_none_or(|bv| (om - target).abs() < (bv - target).abs()) {
            best = Some(om);
        }
    }
    best
}

/// Commensurability of two branches at equal kinetic energy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TongueReport {
    /// Points of `a` with `|N omega_a - omega_b| / omega_b < tol`.
    pub commensurable: Vec<TongueHit>,
    /// Energy turning points of `a` (tongue tips and roots) that are
    /// commensurable; an actual internal resonance shows up here.
    pub tongue_tips: Vec<TongueHit>,
}

impl TongueReport {
    pub fn detected(&self) -> bool {
        !self.tongue_tips.is_empty()
    }
}

fn tongue_hit(a: &ModeBranch, b: &ModeBranch, i: usize, r: f64) -> Option<TongueHit> {
    let p = &a.points[i];
    let wb = frequency_at_energy(b, p.kinetic_energy, r * p.omega0)?;
    Some(TongueHit {
        index: i,
        energy: p.kinetic_energy,
        omega_a: p.omega0,
        omega_b: wb,
        rel_error: (r * p.omega0 - wb).abs() / wb,
    })
}

/// Checks branch `a` against `N`-fold the frequency of branch `b`.
pub fn mode_at_tongue_check(a: &ModeBranch, b: &ModeBranch, ratio: usize, tol: f64) -> TongueReport {
    let r = ratio as f64;
    let commensurable = (0..a.points.len())
        .filter_map(|i| tongue_hit(a, b, i, r))
        .filter(|h| h.rel_error < tol)
        .collect();
    let tongue_tips = a
        .turning_points
        .iter()
        .filter_map(|&i| tongue_hit(a, b, i, r))
        .filter(|h| h.rel_error < tol)
        .collect();
    TongueReport {
        commensurable,
        tongue_tips,
    }
}

/// Turning points grouped into tongues: consecutive fold pairs of the
/// energy parameter. Returns `(start, end)` point indices.
pub fn tongues(branch: &ModeBranch) -> Vec<(usize, usize)> {
    branch
        .turning_points
        .chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| (c[0], c[1]))
        .collect()
}

/// Physical residual `max_n |S_n U_n + G_n|_inf / max_n |K U_n|_inf` of a
/// point evaluated directly on the unreduced equations.
pub fn physical_residual(model: &SecondOrderModel, point: &ModalPoint, nt: usize) -> Result<f64> {
    let nh = point.harmonics.nh();
    let nl = model.nonlinear_dofs().to_vec();
    let aft = Aft::new(&model.elements, &nl, nh, nt)?;
    let (g, _) = aft.nl_harmonics(&point.harmonics.select_dofs(&nl))?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let kc = model.stiffness.map(|v| Complex64::new(v, 0.0));
    for h in 0..=nh {
        let s = dyn_stiffness(h, point.lambda, model);
        let mut r = &s * point.harmonics.harmonic(h);
        for (d, &dof) in nl.iter().enumerate() {
            r[dof] += g.coeffs[(d, h)];
        }
        worst = worst.max(r.iter().fold(0.0f64, |m, v| m.max(v.norm())));
        let ku = &kc * point.harmonics.harmonic(h);
        scale = scale.max(ku.iter().fold(0.0f64, |m, v| m.max(v.norm())));
    }
    Ok(worst / scale.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_2dof_cubic;

    fn settings(nh: usize) -> ContinuationSettings {
        ContinuationSettings {
            nh,
            nt: 64,
            ..Default::default()
        }
    }

    #[test]
    fn linear_mode_is_a_root_of_the_full_form() {
        let m = build_2dof_cubic();
        let sys = CnmaSystem::new(&m, 0, &settings(3)).unwrap();
        let y = sys.linear_guess(-30.0);
        let (r, _) = sys.eval_full(&y, false).unwrap();
        assert!(inf_norm(&r) < 1e-14);
    }

    #[test]
    fn eigenvalue_rejects_overdamped_pairs() {
        assert!(eigenvalue(1.0, 1.0).is_err());
        assert!(eigenvalue(-1.0, 0.0).is_err());
        let l = eigenvalue(2.0, 0.1).unwrap();
        assert!((l.norm() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn moderate_energy_stiffens_and_stays_undamped() {
        let m = build_2dof_cubic();
        let sys = CnmaSystem::new(&m, 0, &settings(5)).unwrap();
        let p = sys.solve_linear_start(0.05).unwrap();
        assert!(p.omega0 > 1.0);
        assert!(p.damping.abs() < 1e-10);
        assert!((p.kinetic_energy - 0.05).abs() < 1e-9);
        assert!(p.harmonics.coeffs[(p.master_dof, 1)].im.abs() < 1e-12);
        assert!(physical_residual(&m, &p, 64).unwrap() < 1e-8);
    }

    #[test]
    fn condensed_and_full_forms_agree() {
        let m = build_2dof_cubic();
        let mut s = settings(5);
        s.condensation = false;
        let full = CnmaSystem::new(&m, 0, &s).unwrap();
        let p = full.param_for(0.2);
        let (y_full, _) = full.newton_fixed_param(&full.linear_guess(p)).unwrap();
        let (y_cond, _) = full.solve_condensed(&y_full).unwrap();
        let pf = full.to_point(&y_full).unwrap();
        let pc = full.to_point(&y_cond).unwrap();
        assert!((pf.omega0 - pc.omega0).abs() < 1e-9);
        // perturbed start still lands on the same solution
        let mut y_pert = y_full.clone();
        let dim = full.dim();
        y_pert[dim - 3] *= 1.01;
        let (y_c2, _) = full.solve_condensed(&y_pert).unwrap();
        assert!((full.to_point(&y_c2).unwrap().omega0 - pf.omega0).abs() < 1e-8);
    }
}
