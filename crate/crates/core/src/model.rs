//! Mechanical models: matrices plus local nonlinear force elements.
//!
//! Every model is linearized about the equilibrium `u = 0`: the stiffness
//! matrix already contains the tangent stiffness of each attached element
//! (the contact stiffness of a preloaded unilateral spring, the stuck
//! stiffness of an elastic Coulomb element). Elements therefore expose two
//! force laws. [`nl_force_time`] returns the physical element force; the
//! residual law used by the frequency-domain solvers subtracts the static
//! preload force and the linearized part, so it vanishes identically in the
//! linear regime.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{asymmetry, check_symmetric};
use crate::{Error, RMat, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Maximum number of periods cycled when converging hysteresis loops.
const MAX_HYSTERESIS_PERIODS: usize = 10;
const HYSTERESIS_REPEAT_TOL: f64 = 1e-10;

/// Local nonlinear force element attached to one or two DOFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NonlinearElement {
    /// Force `coefficient * x^3`.
    CubicSpring { dof: usize, coefficient: f64 },
    /// Force `stiffness * (x + preload)_+`, compressed by `preload` at rest.
    UnilateralSpring { dof: usize, stiffness: f64, preload: f64 },
    /// Jenkins element: spring `stiffness` in series with a Coulomb slider
    /// of limit force `slip_force`.
    ElasticCoulomb {
        dof: usize,
        stiffness: f64,
        slip_force: f64,
    },
    /// Cubic spring acting on the relative displacement `u_a - u_b`.
    CouplingCubicSpring {
        dof_a: usize,
        dof_b: usize,
        coefficient: f64,
    },
}

/// Per-sample sensitivity of element forces to local displacement samples.
#[derive(Debug, Clone)]
pub enum SampleJacobian {
    /// Memoryless law: `d g_k / d x_k`.
    Diagonal(Vec<f64>),
    /// Hysteretic law: `d g_k / d x_j` over the converged period.
    Dense(RMat),
}

/// Converged internal state of an element after one steady period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementState {
    /// Slider force at the end of the period (zero for memoryless elements).
    pub slider_force: f64,
    /// Number of periods cycled until the state repeated.
    pub periods: usize,
}

impl NonlinearElement {
    /// DOFs touched by the element, in the order used for local displacement.
    pub fn footprint(&self) -> Vec<usize> {
        match *self {
            Self::CubicSpring { dof, .. } | Self::UnilateralSpring { dof, .. } | Self::ElasticCoulomb { dof, .. } => {
                vec![dof]
            }
            Self::CouplingCubicSpring { dof_a, dof_b, .. } => vec![dof_a, dof_b],
        }
    }

    /// Gradient of the local coordinate with respect to footprint DOFs.
    pub fn direction(&self) -> Vec<f64> {
        match self {
            Self::CouplingCubicSpring { .. } => vec![1.0, -1.0],
            _ => vec![1.0],
        }
    }

    /// Tangent stiffness about the equilibrium, absorbed into `K`.
    pub fn linear_stiffness(&self) -> f64 {
        match *self {
            Self::UnilateralSpring { stiffness, .. } => stiffness,
            Self::ElasticCoulomb { stiffness, .. } => stiffness,
            Self::CubicSpring { .. } | Self::CouplingCubicSpring { .. } => 0.0,
        }
    }

    /// True for the preloaded piecewise-linear contact laws.
    pub fn is_piecewise_linear_contact(&self) -> bool {
        matches!(self, Self::UnilateralSpring { .. } | Self::ElasticCoulomb { .. })
    }

    /// Preload force of the contact (`k_n a0` or `mu N`), if any.
    pub fn preload_force(&self) -> Option<f64> {
        match *self {
            Self::UnilateralSpring { stiffness, preload, .. } => Some(stiffness * preload),
            Self::ElasticCoulomb { slip_force, .. } => Some(slip_force),
            _ => None,
        }
    }

    /// Same element with its preload force multiplied by `factor`.
    pub fn with_preload_scaled(&self, factor: f64) -> Self {
        let mut e = self.clone();
        match &mut e {
            Self::UnilateralSpring { preload, .. } => *preload *= factor,
            Self::ElasticCoulomb { slip_force, .. } => *slip_force *= factor,
            _ => {}
        }
        e
    }

    /// Same element moved to other DOFs (coupling springs take two).
    pub fn retargeted(&self, dofs: &[usize]) -> Self {
        let mut e = self.clone();
        match &mut e {
            Self::CubicSpring { dof, .. } | Self::UnilateralSpring { dof, .. } | Self::ElasticCoulomb { dof, .. } => {
                *dof = dofs[0]
            }
            Self::CouplingCubicSpring { dof_a, dof_b, .. } => {
                *dof_a = dofs[0];
                *dof_b = dofs[1];
            }
        }
        e
    }

    pub fn validate(&self, n_dof: usize) -> Result<()> {
        for d in self.footprint() {
            if d >= n_dof {
                return Err(Error::InvalidInput(format!(
                    "element DOF {d} out of range for {n_dof} DOFs"
                )));
            }
        }
        let ok = match *self {
            Self::CubicSpring { coefficient, .. } => coefficient > 0.0,
            Self::CouplingCubicSpring {
                dof_a,
                dof_b,
                coefficient,
            } => coefficient > 0.0 && dof_a != dof_b,
            Self::UnilateralSpring { stiffness, preload, .. } => stiffness > 0.0 && preload > 0.0,
            Self::ElasticCoulomb {
                stiffness, slip_force, ..
            } => stiffness > 0.0 && slip_force >= 0.0,
        };
        if ok && self.parameters_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid element parameters: {self:?}")))
        }
    }

    fn parameters_finite(&self) -> bool {
        match *self {
            Self::CubicSpring { coefficient, .. } | Self::CouplingCubicSpring { coefficient, .. } => {
                coefficient.is_finite()
            }
            Self::UnilateralSpring { stiffness, preload, .. } => stiffness.is_finite() && preload.is_finite(),
            Self::ElasticCoulomb {
                stiffness, slip_force, ..
            } => stiffness.is_finite() && slip_force.is_finite(),
        }
    }

    /// Residual force law over one period of local displacement samples:
    /// physical force minus static preload force minus linearized part.
    pub fn residual_force(&self, x: &[f64]) -> Result<(Vec<f64>, SampleJacobian)> {
        if x.is_empty() {
            return Err(Error::InvalidInput("empty displacement samples".into()));
        }
        match *self {
            Self::CubicSpring { coefficient, .. } | Self::CouplingCubicSpring { coefficient, .. } => {
                let f = x.iter().map(|v| coefficient * v * v * v).collect();
                let d = x.iter().map(|v| 3.0 * coefficient * v * v).collect();
                Ok((f, SampleJacobian::Diagonal(d)))
            }
            Self::UnilateralSpring { stiffness, preload, .. } => {
                let mut f = Vec::with_capacity(x.len());
                let mut d = Vec::with_capacity(x.len());
                for &v in x {
                    // k (x + a0)_+ - k a0 - k x = k (-(x + a0))_+
                    let gap = v + preload;
                    if gap > 0.0 {
                        f.push(0.0);
                        d.push(0.0);
                    } else {
                        f.push(-stiffness * gap);
                        d.push(-stiffness);
                    }
                }
                Ok((f, SampleJacobian::Diagonal(d)))
            }
            Self::ElasticCoulomb {
                stiffness, slip_force, ..
            } => {
                let (g, jac, _) = jenkins_steady_state(stiffness, slip_force, x, None, true);
                let f = g.iter().zip(x).map(|(g, x)| g - stiffness * x).collect();
                let mut jac = jac.expect("jacobian requested");
                for k in 0..x.len() {
                    jac[(k, k)] -= stiffness;
                }
                Ok((f, SampleJacobian::Dense(jac)))
            }
        }
    }

    /// Physical force at a single instant for memoryless elements; for the
    /// Jenkins element `slider` carries the slider force and is updated.
    pub fn step_force(&self, x: f64, x_prev: f64, slider: &mut f64) -> f64 {
        match *self {
            Self::CubicSpring { coefficient, .. } | Self::CouplingCubicSpring { coefficient, .. } => {
                coefficient * x * x * x
            }
            Self::UnilateralSpring { stiffness, preload, .. } => stiffness * (x + preload).max(0.0),
            Self::ElasticCoulomb {
                stiffness, slip_force, ..
            } => {
                let trial = *slider + stiffness * (x - x_prev);
                *slider = trial.clamp(-slip_force, slip_force);
                *slider
            }
        }
    }

    /// Residual counterpart of [`Self::step_force`].
    pub fn step_residual(&self, x: f64, x_prev: f64, slider: &mut f64) -> f64 {
        let static_force = match *self {
            Self::UnilateralSpring { stiffness, preload, .. } => stiffness * preload,
            _ => 0.0,
        };
        self.step_force(x, x_prev, slider) - static_force - self.linear_stiffness() * x
    }
}

/// Steady-state physical force of a Jenkins element over one period.
///
/// The slider force is advanced sample by sample with a stick trial clipped
/// to `[-slip_force, slip_force]`; periods are cycled until the end-of-period
/// state repeats. Without an initial state the element starts from its
/// elastic equilibrium `g = k_t x_0` (clipped).
fn jenkins_steady_state(
    stiffness: f64,
    slip_force: f64,
    x: &[f64],
    initial: Option<f64>,
    with_jacobian: bool,
) -> (Vec<f64>, Option<RMat>, ElementState) {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut rows = if with_jacobian {
        Some(DMatrix::<f64>::zeros(n, n))
    } else {
        None
    };
    let mut row = vec![0.0; n];

    let (mut slider, mut prev_x) = match initial {
        Some(s) => (s, None),
        None => {
            let trial = stiffness * x[0];
            let clipped = trial.clamp(-slip_force, slip_force);
            if with_jacobian && clipped == trial {
                row[0] = stiffness;
            }
            (clipped, None)
        }
    };
    let mut end_state = slider;
    let mut periods = 0;

    for period in 0..MAX_HYSTERESIS_PERIODS {
        periods = period + 1;
        for k in 0..n {
            let skip_first = period == 0 && k == 0 && initial.is_none();
            if !skip_first {
                let (xp, jp) = match prev_x {
                    Some(j) => (x[j], j),
                    // an explicit initial state is taken to belong to x[n-1]
                    None => (x[n - 1], n - 1),
                };
                let trial = slider + stiffness * (x[k] - xp);
                if trial.abs() > slip_force {
                    slider = slip_force.copysign(trial);
                    if with_jacobian {
                        row.iter_mut().for_each(|r| *r = 0.0);
                    }
                } else {
                    slider = trial;
                    if with_jacobian {
                        row[k] += stiffness;
                        row[jp] -= stiffness;
                    }
                }
            }
            prev_x = Some(k);
            g[k] = slider;
            if let Some(r) = rows.as_mut() {
                for (j, v) in row.iter().enumerate() {
                    r[(k, j)] = *v;
                }
            }
        }
        let scale = slip_force.max(slider.abs()).max(f64::MIN_POSITIVE);
        let repeated = (slider - end_state).abs() <= HYSTERESIS_REPEAT_TOL * scale;
        end_state = slider;
        if period >= 1 && repeated {
            break;
        }
    }
    (
        g,
        rows,
        ElementState {
            slider_force: end_state,
            periods,
        },
    )
}

/// Physical force samples of an element over one period of local
/// displacement, with the converged internal state.
///
/// For the Jenkins element `state` seeds the slider force (taken to hold at
/// the sample preceding `x[0]`); `None` starts from elastic equilibrium.
pub fn nl_force_time(element: &NonlinearElement, x: &[f64], state: Option<f64>) -> Result<(Vec<f64>, ElementState)> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty displacement samples".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("element displacement samples"));
    }
    match *element {
        NonlinearElement::ElasticCoulomb {
            stiffness, slip_force, ..
        } => {
            let (g, _, st) = jenkins_steady_state(stiffness, slip_force, x, state, false);
            Ok((g, st))
        }
        _ => {
            let mut dummy = 0.0;
            let f = x.iter().map(|&v| element.step_force(v, v, &mut dummy)).collect();
            Ok((
                f,
                ElementState {
                    slider_force: 0.0,
                    periods: 1,
                },
            ))
        }
    }
}

/// Energy dissipated over one closed loop, `∮ g dx` (trapezoidal).
pub fn loop_dissipation(x: &[f64], g: &[f64]) -> f64 {
    let n = x.len();
    (0..n)
        .map(|k| {
            let k1 = (k + 1) % n;
            0.5 * (g[k] + g[k1]) * (x[k1] - x[k])
        })
        .sum()
}

/// Second-order system `M u'' + C u' + K u + g(u) = f(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderModel {
    pub mass: RMat,
    pub damping: RMat,
    pub stiffness: RMat,
    pub elements: Vec<NonlinearElement>,
    nonlinear_dofs: Vec<usize>,
}

impl SecondOrderModel {
    /// Assembles a model; `stiffness` must already contain the element
    /// linearizations (see [`Self::with_linearized_elements`]).
    pub fn new(mass: RMat, damping: RMat, stiffness: RMat, elements: Vec<NonlinearElement>) -> Result<Self> {
        let n = mass.nrows();
        for (name, m) in [("mass", &mass), ("damping", &damping), ("stiffness", &stiffness)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidInput(format!(
                    "{name} matrix is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model matrices"));
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput("model has no DOFs".into()));
        }
        check_symmetric(&mass, SYMMETRY_TOL)?;
        check_symmetric(&stiffness, SYMMETRY_TOL)?;
        check_symmetric(&damping, SYMMETRY_TOL)?;
        if mass.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        for e in &elements {
            e.validate(n)?;
        }
        let mut nonlinear_dofs: Vec<usize> = elements.iter().flat_map(|e| e.footprint()).collect();
        nonlinear_dofs.sort_unstable();
        nonlinear_dofs.dedup();
        Ok(Self {
            mass,
            damping,
            stiffness,
            elements,
            nonlinear_dofs,
        })
    }

    /// Builds a model from the bare structural stiffness, adding each
    /// element's tangent stiffness to `K`.
    pub fn with_linearized_elements(
        mass: RMat,
        damping: RMat,
        structural_stiffness: RMat,
        elements: Vec<NonlinearElement>,
    ) -> Result<Self> {
        let mut k = structural_stiffness;
        let n = k.nrows();
        for e in &elements {
            e.validate(n)?;
            let kl = e.linear_stiffness();
            let fp = e.footprint();
            let dir = e.direction();
            for (a, &i) in fp.iter().enumerate() {
                for (b, &j) in fp.iter().enumerate() {
                    k[(i, j)] += kl * dir[a] * dir[b];
                }
            }
        }
        Self::new(mass, damping, k, elements)
    }

    pub fn n_dof(&self) -> usize {
        self.mass.nrows()
    }

    /// Sorted DOFs touched by any element.
    pub fn nonlinear_dofs(&self) -> &[usize] {
        &self.nonlinear_dofs
    }

    /// DOFs not touched by any element.
    pub fn linear_dofs(&self) -> Vec<usize> {
        (0..self.n_dof())
            .filter(|d| self.nonlinear_dofs.binary_search(d).is_err())
            .collect()
    }

    pub fn has_damping(&self) -> bool {
        self.damping.iter().any(|v| *v != 0.0)
    }

    /// True when every element is dissipation-free.
    pub fn is_conservative(&self) -> bool {
        !self.has_damping()
            && self
                .elements
                .iter()
                .all(|e| !matches!(e, NonlinearElement::ElasticCoulomb { .. }))
    }

    /// Same model with `C` replaced.
    pub fn with_damping(&self, damping: RMat) -> Result<Self> {
        Self::new(
            self.mass.clone(),
            damping,
            self.stiffness.clone(),
            self.elements.clone(),
        )
    }

    /// Stiffness without the element linearizations.
    pub fn structural_stiffness(&self) -> RMat {
        let mut k = self.stiffness.clone();
        for e in &self.elements {
            let kl = e.linear_stiffness();
            let fp = e.footprint();
            let dir = e.direction();
            for (a, &i) in fp.iter().enumerate() {
                for (b, &j) in fp.iter().enumerate() {
                    k[(i, j)] -= kl * dir[a] * dir[b];
                }
            }
        }
        k
    }

    /// Same model with every contact preload multiplied by `factor`.
    pub fn with_preload_scaled(&self, factor: f64) -> Result<Self> {
        let elements = self.elements.iter().map(|e| e.with_preload_scaled(factor)).collect();
        Self::new(
            self.mass.clone(),
            self.damping.clone(),
            self.stiffness.clone(),
            elements,
        )
    }

    pub fn max_asymmetry(&self) -> f64 {
        asymmetry(&self.mass).max(asymmetry(&self.stiffness))
    }
}

/// The 2-DOF system `x1'' + 2x1 - x2 + 0.5 x1^3 = 0`, `x2'' - x1 + 2x2 = 0`.
pub fn build_2dof_cubic() -> SecondOrderModel {
    let m = DMatrix::identity(2, 2);
    let k = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
    let c = DMatrix::zeros(2, 2);
    let cubic = NonlinearElement::CubicSpring {
        dof: 0,
        coefficient: 0.5,
    };
    SecondOrderModel::new(m, c, k, vec![cubic]).expect("fixture is valid")
}

/// Geometry and material of a cantilever discretized by Euler-Bernoulli
/// elements (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamParams {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub youngs_modulus: f64,
    pub density: f64,
    pub n_elements: usize,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self {
            length: 0.2,
            width: 0.04,
            height: 0.003,
            youngs_modulus: 210e9,
            density: 7800.0,
            n_elements: 10,
        }
    }
}

impl BeamParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.length, self.width, self.height, self.youngs_modulus, self.density];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.n_elements == 0 {
            return Err(Error::InvalidInput(format!(
                "beam parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn bending_stiffness(&self) -> f64 {
        self.youngs_modulus * self.width * self.height.powi(3) / 12.0
    }

    pub fn mass_per_length(&self) -> f64 {
        self.density * self.width * self.height
    }

    pub fn n_dof(&self) -> usize {
        2 * self.n_elements
    }

    /// Transverse DOF of node `node` (1-based from the clamp).
    pub fn translation_dof(&self, node: usize) -> usize {
        assert!(
            node >= 1 && node <= self.n_elements,
            "node {node} is clamped or out of range"
        );
        2 * (node - 1)
    }

    pub fn tip_dof(&self) -> usize {
        self.translation_dof(self.n_elements)
    }

    /// Transverse DOF closest to mid-span.
    pub fn mid_dof(&self) -> usize {
        self.translation_dof((self.n_elements / 2).max(1))
    }

    /// First bending eigenfrequency of the continuous cantilever [rad/s].
    pub fn analytic_first_frequency(&self) -> f64 {
        let beta_l = 1.875_104_068_711_961_f64;
        beta_l * beta_l * (self.bending_stiffness() / (self.mass_per_length() * self.length.powi(4))).sqrt()
    }
}

/// Cantilever with transverse and rotational DOFs per node (clamped node
/// removed) and consistent mass; `tip` is attached at the free-end
/// transverse DOF.
pub fn build_clamped_beam(params: &BeamParams, tip: Option<NonlinearElement>) -> Result<SecondOrderModel> {
    params.validate()?;
    let ne = params.n_elements;
    let l = params.length / ne as f64;
    let ei = params.bending_stiffness();
    let rho_a = params.mass_per_length();
    let n_full = 2 * (ne + 1);

    let ke = DMatrix::from_row_slice(
        4,
        4,
        &[
            12.0,
            6.0 * l,
            -12.0,
            6.0 * l, //
            6.0 * l,
            4.0 * l * l,
            -6.0 * l,
            2.0 * l * l, //
            -12.0,
            -6.0 * l,
            12.0,
            -6.0 * l, //
            6.0 * l,
            2.0 * l * l,
            -6.0 * l,
            4.0 * l * l,
        ],
    ) * (ei / l.powi(3));
    let me = DMatrix::from_row_slice(
        4,
        4,
        &[
            156.0,
            22.0 * l,
            54.0,
            -13.0 * l, //
            22.0 * l,
            4.0 * l * l,
            13.0 * l,
            -3.0 * l * l, //
            54.0,
            13.0 * l,
            156.0,
            -22.0 * l, //
            -13.0 * l,
            -3.0 * l * l,
            -22.0 * l,
            4.0 * l * l,
        ],
    ) * (rho_a * l / 420.0);

    let mut k = DMatrix::<f64>::zeros(n_full, n_full);
    let mut m = DMatrix::<f64>::zeros(n_full, n_full);
    for e in 0..ne {
        let base = 2 * e;
        for a in 0..4 {
            for b in 0..4 {
                k[(base + a, base + b)] += ke[(a, b)];
                m[(base + a, base + b)] += me[(a, b)];
            }
        }
    }
    let n = params.n_dof();
    let k = k.view((2, 2), (n, n)).into_owned();
    let m = m.view((2, 2), (n, n)).into_owned();
    let c = DMatrix::zeros(n, n);
    let elements = match tip {
        Some(e) => vec![e.retargeted(&[params.tip_dof()])],
        None => vec![],
    };
    SecondOrderModel::with_linearized_elements(m, c, k, elements)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| amp * (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin())
            .collect()
    }

    #[test]
    fn two_dof_fixture_matches_equations_of_motion() {
        let m = build_2dof_cubic();
        assert_eq!(m.mass, DMatrix::identity(2, 2));
        assert_eq!(m.stiffness, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        assert!(!m.has_damping());
        assert_eq!(m.nonlinear_dofs(), &[0]);
        assert_eq!(m.linear_dofs(), vec![1]);
    }

    #[test]
    fn beam_matrices_are_symmetric_and_mass_is_spd() {
        let p = BeamParams::default();
        let m = build_clamped_beam(&p, None).unwrap();
        assert_eq!(m.n_dof(), 20);
        assert!(m.max_asymmetry() < 1e-14);
        assert!(m.mass.clone().cholesky().is_some());
        assert!(m.nonlinear_dofs().is_empty());
    }

    #[test]
    fn beam_absorbs_contact_stiffness() {
        let p = BeamParams::default();
        let bare = build_clamped_beam(&p, None).unwrap();
        let spring = NonlinearElement::UnilateralSpring {
            dof: 0,
            stiffness: 2e3,
            preload: 1e-4,
        };
        let m = build_clamped_beam(&p, Some(spring)).unwrap();
        let t = p.tip_dof();
        assert_eq!(m.nonlinear_dofs(), &[t]);
        assert!((m.stiffness[(t, t)] - bare.stiffness[(t, t)] - 2e3).abs() < 1e-9);
        assert_eq!(m.structural_stiffness(), bare.stiffness);
    }

    #[test]
    fn invalid_beam_parameters_are_rejected() {
        let p = BeamParams {
            height: -1.0,
            ..Default::default()
        };
        assert!(build_clamped_beam(&p, None).is_err());
        let p = BeamParams {
            n_elements: 0,
            ..Default::default()
        };
        assert!(build_clamped_beam(&p, None).is_err());
    }

    #[test]
    fn invalid_elements_are_rejected() {
        let k = DMatrix::identity(2, 2);
        let bad = NonlinearElement::CubicSpring {
            dof: 5,
            coefficient: 1.0,
        };
        assert!(SecondOrderModel::new(k.clone(), k.clone() * 0.0, k.clone(), vec![bad]).is_err());
        let bad = NonlinearElement::ElasticCoulomb {
            dof: 0,
            stiffness: -1.0,
            slip_force: 1.0,
        };
        assert!(SecondOrderModel::new(k.clone(), k.clone() * 0.0, k.clone(), vec![bad]).is_err());
    }

    #[test]
    fn asymmetric_or_indefinite_mass_is_rejected() {
        let k = DMatrix::identity(2, 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            SecondOrderModel::new(m, k.clone() * 0.0, k.clone(), vec![]),
            Err(Error::NotSymmetric(_))
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            SecondOrderModel::new(m, k.clone() * 0.0, k, vec![]),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn unilateral_spring_at_rest_carries_preload() {
        let e = NonlinearElement::UnilateralSpring {
            dof: 0,
            stiffness: 2e3,
            preload: 1e-3,
        };
        let (f, _) = nl_force_time(&e, &[0.0; 16], None).unwrap();
        assert!(f.iter().all(|v| (v - 2.0).abs() < 1e-15));
        let (r, _) = e.residual_force(&[0.0; 16]).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unilateral_spring_lifts_off() {
        let e = NonlinearElement::UnilateralSpring {
            dof: 0,
            stiffness: 10.0,
            preload: 1.0,
        };
        let (f, _) = nl_force_time(&e, &[-2.0, -1.0, 0.0, 1.0], None).unwrap();
        assert_eq!(f, vec![0.0, 0.0, 10.0, 20.0]);
        let (r, _) = e.residual_force(&[-2.0, -1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r, vec![10.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stuck_jenkins_is_linear_and_lossless() {
        let (kt, mu) = (100.0, 1.0);
        let e = NonlinearElement::ElasticCoulomb {
            dof: 0,
            stiffness: kt,
            slip_force: mu,
        };
        let x = sine(0.5 * mu / kt, 64);
        let (f, st) = nl_force_time(&e, &x, None).unwrap();
        for (f, x) in f.iter().zip(&x) {
            assert!((f - kt * x).abs() < 1e-14);
        }
        assert!(loop_dissipation(&x, &f).abs() < 1e-15);
        assert!(st.periods <= 2);
        let (r, _) = e.residual_force(&x).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn slipping_jenkins_dissipates_closed_form_loop_area() {
        let (kt, mu, a) = (100.0, 1.0, 0.05);
        let e = NonlinearElement::ElasticCoulomb {
            dof: 0,
            stiffness: kt,
            slip_force: mu,
        };
        let x = sine(a, 4096);
        let (f, st) = nl_force_time(&e, &x, None).unwrap();
        let expected = 4.0 * mu * (a - mu / kt);
        let w = loop_dissipation(&x, &f);
        assert!((w - expected).abs() / expected < 1e-3, "{w} vs {expected}");
        assert!(f.iter().all(|v| v.abs() <= mu + 1e-15));
        assert!(st.periods >= 2 && st.periods <= 10);
    }

    #[test]
    fn conservative_elements_have_zero_loop_area() {
        let x = sine(2.0, 256);
        for e in [
            NonlinearElement::CubicSpring {
                dof: 0,
                coefficient: 3.0,
            },
            NonlinearElement::UnilateralSpring {
                dof: 0,
                stiffness: 5.0,
                preload: 0.7,
            },
        ] {
            let (f, _) = nl_force_time(&e, &x, None).unwrap();
            assert!(loop_dissipation(&x, &f).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_samples_are_rejected() {
        let e = NonlinearElement::CubicSpring {
            dof: 0,
            coefficient: 1.0,
        };
        assert!(nl_force_time(&e, &[], None).is_err());
    }
}
