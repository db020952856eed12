//! Single-nonlinear-mode reduced-order model.
//!
//! Near the 1:1 resonance of mode `j` the response is approximated as the
//! nonlinear mode at modal amplitude `q_j` plus the linearized contributions
//! of all other modes:
//!
//! `u(t) = Re{ sum_n |q_j| exp(i n theta) psi_n(|q_j|) exp(i n Omega t)
//!            + sum_{k != j} q_k phi_k exp(i Omega t) }`,
//!
//! where `theta = arg q_j`. The phase of `q_j` is applied as a time shift of
//! the whole multi-harmonic mode, so harmonic `n` rotates by `n theta`.
//! Projection onto the mode gives the scalar equation
//!
//! `[omega_j^2 - Omega^2 + i Omega 2 D_j omega_j + i c(Omega)] q_j = psi_1^H f_1`
//!
//! with the extra damping term `c` from [`DampingSpec`]. Modal properties are
//! interpolated in `ln |q_j|` from a [`ModalDatabase`].
//!
//! Damping given here is added on top of whatever the modal database already
//! contains; the model's own viscous matrix is only applied to the linear
//! modes `k != j`.

use serde::{Deserialize, Serialize};

use crate::aft::{DftTables, HarmonicSignal};
use crate::cnma::{ModalPoint, ModeBranch};
use crate::continuation::{self, PathProblem, StepControl, Termination};
use crate::linalg::check_symmetric;
use crate::linmodal::{modal_damping_matrix, LinearModalBasis};
use crate::model::{NonlinearElement, SecondOrderModel};
use crate::{CMat, CVec, Complex64, Error, RMat, RVec, Result};

/// Interpolation scheme of the modal database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Monotone piecewise-cubic Hermite.
    #[default]
    Cubic,
}

/// Interpolated modal properties at one amplitude.
#[derive(Debug, Clone)]
pub struct ModalProperties {
    pub amplitude: f64,
    pub omega: f64,
    pub damping: f64,
    /// Column `n` is `psi_n`.
    pub psi: CMat,
}

impl ModalProperties {
    pub fn psi1(&self) -> CVec {
        self.psi.column(1).into_owned()
    }
}

/// Amplitude-indexed modal properties of one nonlinear mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalDatabase {
    pub mode: usize,
    /// `|q_j|`, strictly increasing.
    pub amplitudes: Vec<f64>,
    pub omegas: Vec<f64>,
    pub dampings: Vec<f64>,
    /// Mass-normalized shapes, `n_dof x (NH + 1)` each.
    pub shapes: Vec<CMat>,
    pub interpolation: Interpolation,
    /// Series data (`omega`, `D`, then Re/Im of every shape entry) per sample.
    series: RMat,
    /// Node derivatives w.r.t. `ln |q|` for cubic interpolation.
    slopes: RMat,
    abscissa: Vec<f64>,
}

/// Modal amplitude `sqrt(U_1^H M U_1)`.
pub fn modal_amplitude(harmonics: &HarmonicSignal, mass: &RMat) -> f64 {
    let u1 = harmonics.harmonic(1);
    let mu = mass.map(|v| Complex64::new(v, 0.0)) * &u1;
    u1.dotc(&mu).re.max(0.0).sqrt()
}

/// Builds a database from a branch (see [`ModalDatabase::from_points`]).
pub fn ingest(branch: &ModeBranch, model: &SecondOrderModel, interpolation: Interpolation) -> Result<ModalDatabase> {
    ModalDatabase::from_points(branch.mode, &branch.points, &model.mass, interpolation)
}

impl ModalDatabase {
    /// Normalizes each point to `q_j = sqrt(U_1^H M U_1)`, `psi_n = U_n / q_j`.
    /// Points must be monotone in `q_j`; decreasing input is reversed and
    /// exact duplicates are dropped.
    pub fn from_points(mode: usize, points: &[ModalPoint], mass: &RMat, interpolation: Interpolation) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("no modal points to ingest".into()));
        }
        let mut rows: Vec<(f64, f64, f64, CMat)> = Vec::with_capacity(points.len());
        for p in points {
            let q = modal_amplitude(&p.harmonics, mass);
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidInput("modal point with zero amplitude".into()));
            }
            let psi = &p.harmonics.coeffs / Complex64::new(q, 0.0);
            rows.push((q, p.omega0, p.damping, psi));
        }
        if rows.len() >= 2 && rows[rows.len() - 1].0 < rows[0].0 {
            rows.reverse();
        }
        let mut kept: Vec<(f64, f64, f64, CMat)> = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            if let Some(last) = kept.last() {
                if r.0 == last.0 {
                    continue;
                }
                if r.0 < last.0 {
                    return Err(Error::FoldInRange(i));
                }
            }
            kept.push(r);
        }
        let nh = kept[0].3.ncols() - 1;
        let n_dof = kept[0].3.nrows();
        if kept.iter().any(|r| r.3.shape() != (n_dof, nh + 1)) {
            return Err(Error::InvalidInput("inconsistent shape sizes".into()));
        }
        let mut db = Self {
            mode,
            amplitudes: kept.iter().map(|r| r.0).collect(),
            omegas: kept.iter().map(|r| r.1).collect(),
            dampings: kept.iter().map(|r| r.2).collect(),
            shapes: kept.into_iter().map(|r| r.3).collect(),
            interpolation,
            series: RMat::zeros(0, 0),
            slopes: RMat::zeros(0, 0),
            abscissa: Vec::new(),
        };
        db.build_series();
        Ok(db)
    }

    /// Rebuilds a database from stored samples (used by file readers).
    pub fn from_samples(
        mode: usize,
        amplitudes: Vec<f64>,
        omegas: Vec<f64>,
        dampings: Vec<f64>,
        shapes: Vec<CMat>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        let n = amplitudes.len();
        if n == 0 || omegas.len() != n || dampings.len() != n || shapes.len() != n {
            return Err(Error::InvalidInput("database columns have different lengths".into()));
        }
        for (i, w) in amplitudes.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::FoldInRange(i + 1));
            }
        }
        if amplitudes[0] <= 0.0 {
            return Err(Error::InvalidInput("amplitudes must be positive".into()));
        }
        let mut db = Self {
            mode,
            amplitudes,
            omegas,
            dampings,
            shapes,
            interpolation,
            series: RMat::zeros(0, 0),
            slopes: RMat::zeros(0, 0),
            abscissa: Vec::new(),
        };
        db.build_series();
        Ok(db)
    }

    fn build_series(&mut self) {
        let n = self.amplitudes.len();
        let entries = self.shapes[0].len();
        let mut series = RMat::zeros(n, 2 + 2 * entries);
        for i in 0..n {
            series[(i, 0)] = self.omegas[i];
            series[(i, 1)] = self.dampings[i];
            for (e, c) in self.shapes[i].iter().enumerate() {
                series[(i, 2 + 2 * e)] = c.re;
                series[(i, 3 + 2 * e)] = c.im;
            }
        }
        self.abscissa = self.amplitudes.iter().map(|q| q.ln()).collect();
        self.slopes = pchip_slopes(&self.abscissa, &series);
        self.series = series;
    }

    pub fn n_dof(&self) -> usize {
        self.shapes[0].nrows()
    }

    pub fn nh(&self) -> usize {
        self.shapes[0].ncols() - 1
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.amplitudes[0], *self.amplitudes.last().unwrap())
    }

    /// Same data with another interpolation scheme.
    pub fn with_interpolation(&self, interpolation: Interpolation) -> Self {
        let mut db = self.clone();
        db.interpolation = interpolation;
        db
    }

    /// Largest deviation of `psi_1^H M psi_1` from one over the samples.
    pub fn normalization_error(&self, mass: &RMat) -> f64 {
        let mc = mass.map(|v| Complex64::new(v, 0.0));
        self.shapes
            .iter()
            .map(|s| {
                let p = s.column(1).into_owned();
                (p.dotc(&(&mc * &p)).re - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    fn check_range(&self, q: f64) -> Result<()> {
        let (lo, hi) = self.range();
        let slack = 1e-12;
        if !(q >= lo * (1.0 - slack) && q <= hi * (1.0 + slack)) {
            return Err(Error::AmplitudeOutOfRange {
                amplitude: q,
                min: lo,
                max: hi,
            });
        }
        Ok(())
    }

    /// Interpolated series row at `ln q`.
    fn row_at(&self, q: f64) -> Result<RVec> {
        let ncols = self.series.ncols();
        self.interp_columns(q, 0..ncols).map(RVec::from_vec)
    }

    /// Interpolated series entries for the given columns.
    fn interp_columns(&self, q: f64, cols: std::ops::Range<usize>) -> Result<Vec<f64>> {
        self.check_range(q)?;
        let n = self.len();
        if n == 1 {
            return Ok(cols.map(|c| self.series[(0, c)]).collect());
        }
        let x = q.ln().clamp(self.abscissa[0], self.abscissa[n - 1]);
        let i = match self.abscissa.partition_point(|&a| a <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.abscissa[i + 1] - self.abscissa[i];
        let t = (x - self.abscissa[i]) / h;
        let out = match self.interpolation {
            Interpolation::Linear => cols
                .map(|c| (1.0 - t) * self.series[(i, c)] + t * self.series[(i + 1, c)])
                .collect(),
            Interpolation::Cubic => {
                let (t2, t3) = (t * t, t * t * t);
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                cols.map(|c| {
                    h00 * self.series[(i, c)]
                        + h10 * h * self.slopes[(i, c)]
                        + h01 * self.series[(i + 1, c)]
                        + h11 * h * self.slopes[(i + 1, c)]
                })
                .collect()
            }
        };
        Ok(out)
    }

    /// Eigenfrequency, damping ratio and fundamental shape at `|q_j| = q`,
    /// without interpolating the other harmonics.
    pub fn eval_fundamental(&self, q: f64) -> Result<(f64, f64, CVec)> {
        let nd = self.n_dof();
        let head = self.interp_columns(q, 0..2)?;
        let body = self.interp_columns(q, 2 + 2 * nd..2 + 4 * nd)?;
        let psi1 = CVec::from_fn(nd, |d, _| Complex64::new(body[2 * d], body[2 * d + 1]));
        Ok((head[0], head[1], psi1))
    }

    /// Modal properties at `|q_j| = q`.
    pub fn eval(&self, q: f64) -> Result<ModalProperties> {
        let row = self.row_at(q)?;
        let (nd, nc) = (self.n_dof(), self.nh() + 1);
        let mut psi = CMat::zeros(nd, nc);
        // column-major iteration order matches `build_series`
        for (e, c) in psi.iter_mut().enumerate() {
            *c = Complex64::new(row[2 + 2 * e], row[3 + 2 * e]);
        }
        Ok(ModalProperties {
            amplitude: q,
            omega: row[0],
            damping: row[1],
            psi,
        })
    }

    /// Fine grid of amplitudes covering the range, `per_interval` points
    /// between consecutive samples.
    pub fn amplitude_grid(&self, per_interval: usize) -> Vec<f64> {
        let k = per_interval.max(1);
        let mut g = Vec::with_capacity(self.len() * k);
        for w in self.abscissa.windows(2) {
            for s in 0..k {
                g.push((w[0] + (w[1] - w[0]) * s as f64 / k as f64).exp());
            }
        }
        g.push(*self.amplitudes.last().unwrap());
        g
    }
}

/// Fritsch-Carlson monotone slopes per column.
fn pchip_slopes(x: &[f64], y: &RMat) -> RMat {
    let n = x.len();
    let mut d = RMat::zeros(n, y.ncols());
    if n < 2 {
        return d;
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    for c in 0..y.ncols() {
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[(i + 1, c)] - y[(i, c)]) / h[i]).collect();
        if n == 2 {
            d[(0, c)] = delta[0];
            d[(1, c)] = delta[0];
            continue;
        }
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[(i, c)] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[(i, c)] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d[(0, c)] = pchip_end(h[0], h[1], delta[0], delta[1]);
        d[(n - 1, c)] = pchip_end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }
    d
}

fn pchip_end(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Damping added to the reduced-order model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DampingSpec {
    /// Viscous matrix: term `i Omega psi_1^H C psi_1`.
    Viscous { matrix: Vec<Vec<f64>> },
    /// Hysteretic matrix: term `i psi_1^H D psi_1`.
    Hysteretic { matrix: Vec<Vec<f64>> },
    /// Modal damping `eta`: term `i Omega eta` (mass-proportional `C = eta M`).
    Modal { eta: f64 },
    /// Viscous `C = M Phi diag(2 D_k omega_k) Phi^T M` from modal ratios.
    ModalMatrix { ratios: Vec<f64> },
}

/// Damping contributions collapsed to matrices.
#[derive(Debug, Clone)]
pub struct ResolvedDamping {
    /// Extra viscous matrix (viscous, modal-matrix and `eta M` terms).
    pub viscous: RMat,
    /// Hysteretic matrix.
    pub hysteretic: RMat,
}

impl ResolvedDamping {
    pub fn none(n: usize) -> Self {
        Self {
            viscous: RMat::zeros(n, n),
            hysteretic: RMat::zeros(n, n),
        }
    }

    pub fn has_hysteretic(&self) -> bool {
        self.hysteretic.iter().any(|v| *v != 0.0)
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<RMat> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!("{what} matrix must be {n}x{n}")));
    }
    let m = RMat::from_fn(n, n, |i, j| rows[i][j]);
    check_symmetric(&m, 1e-12)?;
    Ok(m)
}

/// Builds the extra damping matrices of a spec list for `model`.
pub fn resolve_damping(specs: &[DampingSpec], model: &SecondOrderModel) -> Result<ResolvedDamping> {
    let n = model.n_dof();
    let mut out = ResolvedDamping::none(n);
    for s in specs {
        match s {
            DampingSpec::Viscous { matrix } => out.viscous += matrix_from_rows(matrix, n, "viscous")?,
            DampingSpec::Hysteretic { matrix } => out.hysteretic += matrix_from_rows(matrix, n, "hysteretic")?,
            DampingSpec::Modal { eta } => {
                if !eta.is_finite() {
                    return Err(Error::InvalidInput("modal damping must be finite".into()));
                }
                out.viscous += &model.mass * *eta;
            }
            DampingSpec::ModalMatrix { ratios } => {
                let basis = LinearModalBasis::from_model(model)?;
                out.viscous += modal_damping_matrix(&model.mass, &basis, ratios)?;
            }
        }
    }
    Ok(out)
}

impl DampingSpec {
    /// Hysteretic damping proportional to the stiffness, `D = eta K`.
    pub fn stiffness_proportional_hysteretic(model: &SecondOrderModel, eta: f64) -> Self {
        let k = &model.stiffness * eta;
        Self::Hysteretic {
            matrix: (0..k.nrows()).map(|i| k.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn viscous(c: &RMat) -> Self {
        Self::Viscous {
            matrix: (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect(),
        }
    }
}

/// Row of a response curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRow {
    /// Sweep parameter (excitation frequency, force scale, damping ratio...).
    pub param: f64,
    pub omega: f64,
    pub q: Complex64,
    /// Linear modal amplitudes `q_k` (zero at `k = j`).
    pub q_linear: Vec<Complex64>,
    /// Max of the zero-mean probe response over a period.
    pub amplitude: f64,
    pub amplitude_norm: f64,
    pub stable: Option<bool>,
}

/// Sequence of response rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCurve {
    pub rows: Vec<ResponseRow>,
    pub probe: usize,
    pub amplitude_ref: f64,
}

impl ResponseCurve {
    pub fn omegas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.omega).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.amplitude).collect()
    }

    /// Row with the largest probe amplitude.
    pub fn peak(&self) -> Option<&ResponseRow> {
        self.rows.iter().max_by(|a, b| a.amplitude.total_cmp(&b.amplitude))
    }

    /// Amplitudes of all branch crossings of `omega`, linearly interpolated.
    pub fn amplitudes_at(&self, omega: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let (lo, hi) = if a.omega <= b.omega {
                (a.omega, b.omega)
            } else {
                (b.omega, a.omega)
            };
            if omega < lo || omega > hi || hi == lo {
                continue;
            }
            let t = (omega - a.omega) / (b.omega - a.omega);
            out.push(a.amplitude + t * (b.amplitude - a.amplitude));
        }
        out
    }

    /// Relative amplitude gap between `(omega, amplitude)` and this curve,
    /// allowing a relative frequency slack `freq_tol`. Every segment
    /// overlapping the slack band contributes the amplitude interval it spans
    /// there; the gap is zero inside any of them. Infinite when the band
    /// misses the curve.
    pub fn amplitude_gap(&self, omega: f64, amplitude: f64, freq_tol: f64) -> f64 {
        let (wl, wh) = (omega * (1.0 - freq_tol), omega * (1.0 + freq_tol));
        let mut best = f64::INFINITY;
        let lerp = |a: &ResponseRow, b: &ResponseRow, w: f64| {
            if b.omega == a.omega {
                a.amplitude
            } else {
                a.amplitude + (w - a.omega) / (b.omega - a.omega) * (b.amplitude - a.amplitude)
            }
        };
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let lo = a.omega.min(b.omega).max(wl);
            let hi = a.omega.max(b.omega).min(wh);
            if lo > hi {
                continue;
            }
            let (p, q) = (lerp(a, b, lo), lerp(a, b, hi));
            let (amin, amax) = (p.min(q), p.max(q));
            let gap = if amplitude < amin {
                amin - amplitude
            } else if amplitude > amax {
                amplitude - amax
            } else {
                0.0
            };
            best = best.min(gap / amplitude.abs().max(f64::MIN_POSITIVE));
        }
        best
    }
}

/// Settings shared by the ROM solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisOptions {
    /// DOF whose zero-mean amplitude is reported.
    pub probe: usize,
    /// Time samples used to extract amplitudes.
    pub nt: usize,
    /// Divisor for the normalized amplitude.
    pub amplitude_ref: f64,
    /// Add the linearized contributions of modes `k != j`.
    pub linear_modes: bool,
    /// Continuation controls in (normalized frequency, `ln |q|`).
    pub step: StepControl,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            probe: 0,
            nt: 512,
            amplitude_ref: 1.0,
            linear_modes: true,
            step: StepControl {
                ds_initial: 0.005,
                ds_min: 1e-9,
                ds_max: 0.02,
                max_points: 5000,
                tol: 1e-12,
                max_iterations: 30,
                growth: 1.5,
                fast_iterations: 4,
                min_tangent_cos: 0.9,
                max_step_ratio: 5.0,
            },
        }
    }
}

/// Reduced-order model: database plus the linear data it is combined with.
pub struct Rom<'a> {
    pub db: &'a ModalDatabase,
    pub basis: LinearModalBasis,
    damping: ResolvedDamping,
    /// Model viscous damping (applied to the linear modes).
    model_damping: RMat,
    mass: RMat,
    pub options: SynthesisOptions,
    /// Projections `phi_k^T C phi_k` etc. for the linear modes.
    lin_visc: Vec<f64>,
    lin_hyst: Vec<f64>,
    tables: DftTables,
}

impl<'a> Rom<'a> {
    pub fn new(
        db: &'a ModalDatabase,
        model: &SecondOrderModel,
        damping: &[DampingSpec],
        options: &SynthesisOptions,
    ) -> Result<Self> {
        if db.n_dof() != model.n_dof() {
            return Err(Error::InvalidInput("database and model DOF counts differ".into()));
        }
        if options.probe >= model.n_dof() {
            return Err(Error::InvalidInput(format!("probe DOF {} out of range", options.probe)));
        }
        if options.nt < 4 * db.nh() + 1 {
            return Err(Error::InvalidInput("too few reconstruction samples".into()));
        }
        if !(options.amplitude_ref > 0.0) {
            return Err(Error::InvalidInput("amplitude reference must be positive".into()));
        }
        let basis = LinearModalBasis::from_model(model)?;
        let damping = resolve_damping(damping, model)?;
        let total = &model.damping + &damping.viscous;
        let lin_visc = (0..basis.n_modes())
            .map(|k| basis.phi(k).dot(&(&total * basis.phi(k))))
            .collect();
        let lin_hyst = (0..basis.n_modes())
            .map(|k| basis.phi(k).dot(&(&damping.hysteretic * basis.phi(k))))
            .collect();
        Ok(Self {
            db,
            basis,
            damping,
            model_damping: model.damping.clone(),
            mass: model.mass.clone(),
            options: options.clone(),
            lin_visc,
            lin_hyst,
            tables: DftTables::new(db.nh(), options.nt)?,
        })
    }

    /// `Re(v^H m v)` for symmetric real `m`.
    fn quad(m: &RMat, v: &CVec) -> f64 {
        let x = v.map(|c| c.re);
        let y = v.map(|c| c.im);
        x.dot(&(m * &x)) + y.dot(&(m * &y))
    }

    fn damping_term_psi1(&self, psi1: &CVec, omega: f64) -> f64 {
        omega * Self::quad(&self.damping.viscous, psi1) + Self::quad(&self.damping.hysteretic, psi1)
    }

    /// Extra damping term `c(Omega)` of the projected equation.
    pub fn damping_term(&self, props: &ModalProperties, omega: f64) -> f64 {
        self.damping_term_psi1(&props.psi1(), omega)
    }

    fn projected_parts(&self, w: f64, d: f64, psi1: &CVec, omega: f64) -> Complex64 {
        Complex64::new(
            w * w - omega * omega,
            omega * 2.0 * d * w + self.damping_term_psi1(psi1, omega),
        )
    }

    /// Projected dynamic stiffness `B(Omega, |q|)`.
    pub fn projected(&self, props: &ModalProperties, omega: f64) -> Complex64 {
        self.projected_parts(props.omega, props.damping, &props.psi1(), omega)
    }

    /// Linear modal amplitudes at `Omega` for force `f1`.
    pub fn linear_amplitudes(&self, f1: &CVec, omega: f64) -> Vec<Complex64> {
        let j = self.db.mode;
        (0..self.basis.n_modes())
            .map(|k| {
                if k == j || !self.options.linear_modes {
                    return Complex64::new(0.0, 0.0);
                }
                let phi = self.basis.phi(k);
                let pf: Complex64 = phi.iter().zip(f1.iter()).map(|(a, b)| b * a).sum();
                let w = self.basis.omegas[k];
                pf / Complex64::new(w * w - omega * omega, omega * self.lin_visc[k] + self.lin_hyst[k])
            })
            .collect()
    }

    /// Physical harmonics of the synthesized response.
    pub fn reconstruct(&self, q: Complex64, q_linear: &[Complex64], omega: f64) -> Result<HarmonicSignal> {
        let props = self.db.eval(q.norm())?;
        let theta = q.arg();
        let mut c = props.psi.clone();
        for (n, mut col) in c.column_iter_mut().enumerate() {
            col *= Complex64::from_polar(q.norm(), n as f64 * theta);
        }
        for (k, qk) in q_linear.iter().enumerate() {
            if *qk == Complex64::new(0.0, 0.0) {
                continue;
            }
            for d in 0..c.nrows() {
                c[(d, 1)] += qk * self.basis.phis[(d, k)];
            }
        }
        HarmonicSignal::new(c, omega)
    }

    /// Zero-mean peak amplitude of the probe DOF.
    pub fn probe_amplitude(&self, u: &HarmonicSignal) -> Result<f64> {
        if u.nh() != self.db.nh() {
            return peak_amplitude(u, self.options.probe, self.options.nt);
        }
        let mut c = u.coeffs.rows(self.options.probe, 1).into_owned();
        c[(0, 0)] = Complex64::new(0.0, 0.0);
        let s = self.tables.synthesize(&c);
        Ok(s.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    fn row(&self, param: f64, omega: f64, q: Complex64, f1: Option<&CVec>) -> Result<ResponseRow> {
        let q_linear = match f1 {
            Some(f) => self.linear_amplitudes(f, omega),
            None => vec![Complex64::new(0.0, 0.0); self.basis.n_modes()],
        };
        let u = self.reconstruct(q, &q_linear, omega)?;
        let amplitude = self.probe_amplitude(&u)?;
        Ok(ResponseRow {
            param,
            omega,
            q,
            q_linear,
            amplitude,
            amplitude_norm: amplitude / self.options.amplitude_ref,
            stable: None,
        })
    }

    /// Generalized force `psi_1^H f_1`.
    fn modal_force(&self, props: &ModalProperties, f1: &CVec) -> Complex64 {
        props.psi1().dotc(f1)
    }

    /// Log-modulus residual `ln|q| + ln|B| - ln|psi_1^H f_1|`.
    fn log_residual(&self, rho: f64, omega: f64, f1: &CVec) -> Result<f64> {
        let (w, d, psi1) = self.db.eval_fundamental(rho.exp())?;
        let b = self.projected_parts(w, d, &psi1, omega);
        let h = psi1.dotc(f1);
        if h.norm() == 0.0 {
            return Err(Error::InvalidInput("force is orthogonal to the mode".into()));
        }
        Ok(rho + b.norm().ln() - h.norm().ln())
    }

    /// Complex `q_j` solving the projected equation at (`Omega`, `|q|`).
    pub fn phase_solution(&self, amplitude: f64, omega: f64, f1: &CVec) -> Result<Complex64> {
        let props = self.db.eval(amplitude)?;
        let b = self.projected(&props, omega);
        let h = self.modal_force(&props, f1);
        let q = h / b;
        Ok(Complex64::from_polar(amplitude, q.arg()))
    }

    /// Relative residual `|B q - psi^H f| / |psi^H f|` of a row.
    pub fn projected_residual(&self, row: &ResponseRow, f1: &CVec) -> Result<f64> {
        let props = self.db.eval(row.q.norm())?;
        let b = self.projected(&props, row.omega);
        let h = self.modal_force(&props, f1);
        Ok((b * row.q - h).norm() / h.norm())
    }

    /// Forced response over `[omega_lo, omega_hi]`, continued in
    /// (`Omega`, `ln |q|`) through turning points.
    pub fn frf(&self, f1: &CVec, omega_lo: f64, omega_hi: f64) -> Result<ResponseCurve> {
        if !(omega_hi > omega_lo && omega_lo > 0.0) {
            return Err(Error::InvalidInput("invalid frequency range".into()));
        }
        if f1.len() != self.db.n_dof() {
            return Err(Error::InvalidInput("force vector length mismatch".into()));
        }
        let (qlo, qhi) = self.db.range();
        let roots = scalar_roots(
            |rho| self.log_residual(rho, omega_lo, f1),
            qlo.ln(),
            qhi.ln(),
            &self.db.amplitude_grid(4).iter().map(|q| q.ln()).collect::<Vec<_>>(),
        )?;
        let rho0 = match roots.first() {
            Some(r) => *r,
            None => {
                let amp = self.amplitude_estimate(omega_lo, f1)?;
                return Err(Error::AmplitudeOutOfRange {
                    amplitude: amp,
                    min: qlo,
                    max: qhi,
                });
            }
        };
        let width = omega_hi - omega_lo;
        let mut problem = FrfProblem {
            rom: self,
            f1,
            omega_lo,
            width,
            out_of_range: None,
        };
        let y0 = RVec::from_vec(vec![0.0, rho0]);
        let path = continuation::trace(&mut problem, y0, -0.05, 1.0, true, &self.options.step)?;
        if let Termination::Stalled { .. } = path.termination {
            if let Some(e) = problem.out_of_range.take() {
                return Err(e);
            }
            return Err(Error::Stall {
                step: self.options.step.ds_min,
                points: path.points.len(),
            });
        }
        let mut rows = Vec::with_capacity(path.points.len());
        for (y, t) in path.points.iter().zip(&path.tangents) {
            let omega = omega_lo + y[0] * width;
            let q = self.phase_solution(y[1].exp(), omega, f1)?;
            let mut row = self.row(omega, omega, q, Some(f1))?;
            row.stable = Some(t[0] > 0.0);
            rows.push(row);
        }
        Ok(ResponseCurve {
            rows,
            probe: self.options.probe,
            amplitude_ref: self.options.amplitude_ref,
        })
    }

    fn amplitude_estimate(&self, omega: f64, f1: &CVec) -> Result<f64> {
        let props = self.db.eval(self.db.range().0)?;
        Ok(self.modal_force(&props, f1).norm() / self.projected(&props, omega).norm())
    }

    /// Backbone: resonance points `Omega = omega_j(|q|)` with the force scale
    /// `alpha` of pattern `f1` needed to reach them, at the database samples.
    pub fn backbone(&self, f1: &CVec, per_interval: usize) -> Result<ResponseCurve> {
        let mut rows = Vec::new();
        for q in self.db.amplitude_grid(per_interval) {
            let props = self.db.eval(q)?;
            let omega = props.omega;
            let b = self.projected(&props, omega);
            let h = self.modal_force(&props, f1);
            let alpha = q * b.norm() / h.norm();
            let phase = (h / b).arg();
            let scaled = f1 * Complex64::new(alpha, 0.0);
            rows.push(self.row(alpha, omega, Complex64::from_polar(q, phase), Some(&scaled))?);
        }
        Ok(ResponseCurve {
            rows,
            probe: self.options.probe,
            amplitude_ref: self.options.amplitude_ref,
        })
    }

    /// Backbone points reached with force `level * f1`, for each level.
    pub fn backbone_at_levels(&self, f1: &CVec, levels: &[f64]) -> Result<ResponseCurve> {
        let (qlo, qhi) = self.db.range();
        let grid: Vec<f64> = self.db.amplitude_grid(8).iter().map(|q| q.ln()).collect();
        let mut rows = Vec::new();
        for &level in levels {
            let f = f1 * Complex64::new(level, 0.0);
            let res = |rho: f64| -> Result<f64> {
                let props = self.db.eval(rho.exp())?;
                let b = self.projected(&props, props.omega);
                Ok(rho + b.norm().ln() - self.modal_force(&props, &f).norm().ln())
            };
            for rho in scalar_roots(res, qlo.ln(), qhi.ln(), &grid)? {
                let props = self.db.eval(rho.exp())?;
                let q = self.phase_solution(rho.exp(), props.omega, &f)?;
                rows.push(self.row(level, props.omega, q, Some(&f))?);
            }
        }
        Ok(ResponseCurve {
            rows,
            probe: self.options.probe,
            amplitude_ref: self.options.amplitude_ref,
        })
    }

    /// Total modal damping `delta(|q|) = 2 D_j omega_j + c(omega_j) / omega_j`
    /// of the autonomous balance; it vanishes at limit cycles.
    pub fn lco_balance(&self, q: f64) -> Result<f64> {
        let props = self.db.eval(q)?;
        Ok(2.0 * props.damping * props.omega + self.damping_term(&props, props.omega) / props.omega)
    }

    /// All limit cycles in the database range with their stability.
    pub fn lco(&self) -> Result<Vec<LimitCycle>> {
        let (qlo, qhi) = self.db.range();
        let grid: Vec<f64> = self.db.amplitude_grid(8).iter().map(|q| q.ln()).collect();
        let roots = scalar_roots(|rho| self.lco_balance(rho.exp()), qlo.ln(), qhi.ln(), &grid)?;
        let mut out = Vec::with_capacity(roots.len());
        for rho in roots {
            let q = rho.exp();
            let h = 1e-6;
            let lo = (rho - h).max(qlo.ln());
            let hi = (rho + h).min(qhi.ln());
            let slope = (self.lco_balance(hi.exp())? - self.lco_balance(lo.exp())?) / (hi - lo);
            let props = self.db.eval(q)?;
            let row = self.row(0.0, props.omega, Complex64::new(q, 0.0), None)?;
            out.push(LimitCycle {
                amplitude: q,
                omega: props.omega,
                probe_amplitude: row.amplitude,
                slope,
                stable: slope > 0.0,
            });
        }
        Ok(out)
    }

    pub fn mass(&self) -> &RMat {
        &self.mass
    }

    pub fn model_damping(&self) -> &RMat {
        &self.model_damping
    }
}

/// Limit cycle predicted by the reduced-order model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycle {
    pub amplitude: f64,
    pub omega: f64,
    pub probe_amplitude: f64,
    /// `d delta / d ln|q|` at the root.
    pub slope: f64,
    pub stable: bool,
}

struct FrfProblem<'r, 'a> {
    rom: &'r Rom<'a>,
    f1: &'r CVec,
    omega_lo: f64,
    width: f64,
    out_of_range: Option<Error>,
}

impl PathProblem for FrfProblem<'_, '_> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&mut self, y: &RVec) -> Result<(RVec, RMat)> {
        let omega = self.omega_lo + y[0] * self.width;
        let f = |om: f64, rho: f64| self.rom.log_residual(rho, om, self.f1);
        let r = match f(omega, y[1]) {
            Ok(v) => v,
            Err(e) => {
                if matches!(e, Error::AmplitudeOutOfRange { .. }) {
                    self.out_of_range = Some(e);
                    return Err(Error::AmplitudeOutOfRange {
                        amplitude: y[1].exp(),
                        min: 0.0,
                        max: 0.0,
                    });
                }
                return Err(e);
            }
        };
        let hw = 1e-7;
        let dr_dw = (f(omega + hw * self.width, y[1])? - f(omega - hw * self.width, y[1])?) / (2.0 * hw);
        let (qlo, qhi) = self.rom.db.range();
        let hr = 1e-6;
        let (a, b) = ((y[1] - hr).max(qlo.ln()), (y[1] + hr).min(qhi.ln()));
        let dr_dr = (f(omega, b)? - f(omega, a)?) / (b - a);
        Ok((RVec::from_vec(vec![r]), RMat::from_row_slice(1, 2, &[dr_dw, dr_dr])))
    }

    fn param_index(&self) -> usize {
        0
    }
}

/// Zero-mean peak amplitude of one DOF of a harmonic signal.
pub fn peak_amplitude(u: &HarmonicSignal, dof: usize, nt: usize) -> Result<f64> {
    let mut zero_mean = u.select_dofs(&[dof]);
    zero_mean.coeffs[(0, 0)] = Complex64::new(0.0, 0.0);
    let s = zero_mean.synthesize(nt)?;
    Ok(s.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// All roots of a scalar function on `[a, b]` bracketed on `grid`, refined
/// by safeguarded Newton with bisection fallback.
pub fn scalar_roots<F>(f: F, a: f64, b: f64, grid: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut pts: Vec<f64> = grid.iter().copied().filter(|x| *x >= a && *x <= b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let vals: Vec<f64> = pts.iter().map(|x| f(*x)).collect::<Result<_>>()?;
    let mut roots = Vec::new();
    for i in 0..pts.len() - 1 {
        let (x0, x1, f0, f1) = (pts[i], pts[i + 1], vals[i], vals[i + 1]);
        if f0 == 0.0 {
            roots.push(x0);
            continue;
        }
        if f0 * f1 < 0.0 {
            roots.push(refine_root(&f, x0, x1, f0, f1)?);
        }
    }
    if vals.last() == Some(&0.0) {
        roots.push(*pts.last().unwrap());
    }
    Ok(roots)
}

fn refine_root<F>(f: &F, mut lo: f64, mut hi: f64, mut flo: f64, _fhi: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x)?;
        if fx == 0.0 || (hi - lo).abs() < 1e-15 * (1.0 + x.abs()) {
            return Ok(x);
        }
        if (fx < 0.0) == (flo < 0.0) {
            lo = x;
            flo = fx;
        } else {
            hi = x;
        }
        let h = 1e-7 * (hi - lo).abs().max(1e-12);
        let d = (f(x + h)? - f(x - h)?) / (2.0 * h);
        let newton = x - fx / d;
        x = if d.is_finite() && d != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if fx.abs() < 1e-14 {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Response at another preload by the similarity hypothesis: a curve
/// computed at preload `f_pre` and force `f_pre / f_new * f1` maps to
/// preload `f_new` and force `f1` by scaling every amplitude with
/// `f_new / f_pre`.
pub fn similarity_rescale(
    curve: &ResponseCurve,
    model: &SecondOrderModel,
    preload_ratio: f64,
) -> Result<ResponseCurve> {
    check_similarity_model(model)?;
    if !(preload_ratio > 0.0 && preload_ratio.is_finite()) {
        return Err(Error::InvalidInput("preload ratio must be positive".into()));
    }
    let r = preload_ratio;
    let c = Complex64::new(r, 0.0);
    let rows = curve
        .rows
        .iter()
        .map(|row| ResponseRow {
            param: row.param,
            omega: row.omega,
            q: row.q * c,
            q_linear: row.q_linear.iter().map(|v| v * c).collect(),
            amplitude: row.amplitude * r,
            amplitude_norm: row.amplitude_norm * r,
            stable: row.stable,
        })
        .collect();
    Ok(ResponseCurve {
        rows,
        probe: curve.probe,
        amplitude_ref: curve.amplitude_ref,
    })
}

/// Similarity requires every element to be a preloaded piecewise-linear
/// contact (positively homogeneous in amplitude and preload).
pub fn check_similarity_model(model: &SecondOrderModel) -> Result<()> {
    if model.elements.is_empty()
        || model
            .elements
            .iter()
            .any(|e| !NonlinearElement::is_piecewise_linear_contact(e))
    {
        return Err(Error::InvalidInput(
            "similarity rescaling needs preloaded contact elements only".into(),
        ));
    }
    Ok(())
}

/// FRF at preload scaled by `preload_ratio` from a database computed at the
/// original preload.
pub fn frf_at_preload(
    rom: &Rom<'_>,
    model: &SecondOrderModel,
    f1: &CVec,
    omega_lo: f64,
    omega_hi: f64,
    preload_ratio: f64,
) -> Result<ResponseCurve> {
    check_similarity_model(model)?;
    let reduced = f1 / Complex64::new(preload_ratio, 0.0);
    let curve = rom.frf(&reduced, omega_lo, omega_hi)?;
    similarity_rescale(&curve, model, preload_ratio)
}

/// Critical value of the first modal damping ratio below which no limit
/// cycle exists, by bisection between `d_exists` (LCO present) and
/// `d_none` (absent). `ratios_for` builds the full ratio list for a trial
/// `D_1`.
pub fn lco_existence_boundary<F>(
    db: &ModalDatabase,
    model: &SecondOrderModel,
    options: &SynthesisOptions,
    ratios_for: F,
    mut d_exists: f64,
    mut d_none: f64,
    tol: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Vec<f64>,
{
    let has_lco = |d1: f64| -> Result<bool> {
        let spec = [DampingSpec::ModalMatrix { ratios: ratios_for(d1) }];
        let rom = Rom::new(db, model, &spec, options)?;
        Ok(rom.lco()?.iter().any(|c| c.stable))
    };
    if !has_lco(d_exists)? || has_lco(d_none)? {
        return Err(Error::InvalidInput(
            "existence bracket does not straddle the boundary".into(),
        ));
    }
    while (d_exists - d_none).abs() > tol {
        let mid = 0.5 * (d_exists + d_none);
        if has_lco(mid)? {
            d_exists = mid;
        } else {
            d_none = mid;
        }
    }
    Ok(0.5 * (d_exists + d_none))
}
