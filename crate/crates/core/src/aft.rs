//! Harmonic signals and the alternating frequency-time (AFT) scheme.
//!
//! Time convention: `u(t) = Re sum_{n=0}^{NH} U_n exp(i n omega t)` with a
//! real `U_0`.
//!
//! Real packing. Solvers work with real unknown vectors. A set of `m` DOFs
//! over `NH` harmonics is packed into `m (2 NH + 1)` reals. Block `b` holds
//! one real per DOF at `b * m + dof`, with `b = 0` for `U_0`,
//! `b = 2n - 1` for `Re U_n` and `b = 2n` for `Im U_n`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::model::{NonlinearElement, SampleJacobian};
use crate::{CMat, CVec, Complex64, Error, RMat, RVec, Result};

/// Default number of time samples per period.
pub const DEFAULT_NT: usize = 128;

/// Block index of the real part of harmonic `n`.
#[inline]
pub fn re_block(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        2 * n - 1
    }
}

/// Block index of the imaginary part of harmonic `n >= 1`.
#[inline]
pub fn im_block(n: usize) -> usize {
    debug_assert!(n >= 1);
    2 * n
}

/// Number of real blocks for harmonic order `nh`.
#[inline]
pub fn n_blocks(nh: usize) -> usize {
    2 * nh + 1
}

/// Per-DOF complex Fourier amplitudes at a fundamental frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSignal {
    /// Column `n` holds `U_n` for every represented DOF.
    pub coeffs: CMat,
    pub omega: f64,
}

impl HarmonicSignal {
    pub fn zeros(n_dof: usize, nh: usize, omega: f64) -> Self {
        Self {
            coeffs: CMat::zeros(n_dof, nh + 1),
            omega,
        }
    }

    /// Builds a signal, forcing `U_0` real.
    pub fn new(mut coeffs: CMat, omega: f64) -> Result<Self> {
        if coeffs.ncols() == 0 {
            return Err(Error::InvalidInput("signal needs at least U_0".into()));
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite("harmonic coefficients"));
        }
        for v in coeffs.column_mut(0).iter_mut() {
            v.im = 0.0;
        }
        Ok(Self { coeffs, omega })
    }

    pub fn nh(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    pub fn n_dof(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn harmonic(&self, n: usize) -> CVec {
        self.coeffs.column(n).into_owned()
    }

    /// Restriction to a subset of DOFs.
    pub fn select_dofs(&self, dofs: &[usize]) -> Self {
        Self {
            coeffs: self.coeffs.select_rows(dofs.iter()),
            omega: self.omega,
        }
    }

    /// Time shift by `phi / omega`: `U_n -> U_n exp(i n phi)`.
    pub fn rotated(&self, phi: f64) -> Self {
        let mut c = self.coeffs.clone();
        for (n, mut col) in c.column_iter_mut().enumerate() {
            col *= Complex64::from_polar(1.0, n as f64 * phi);
        }
        Self {
            coeffs: c,
            omega: self.omega,
        }
    }

    /// Same signal truncated or zero-padded to order `nh`.
    pub fn with_order(&self, nh: usize) -> Self {
        let mut c = CMat::zeros(self.n_dof(), nh + 1);
        let k = nh.min(self.nh());
        c.columns_mut(0, k + 1).copy_from(&self.coeffs.columns(0, k + 1));
        Self {
            coeffs: c,
            omega: self.omega,
        }
    }

    /// Packs into the real layout described in the module docs.
    pub fn to_real(&self) -> RVec {
        let m = self.n_dof();
        let nh = self.nh();
        let mut v = RVec::zeros(m * n_blocks(nh));
        for d in 0..m {
            v[d] = self.coeffs[(d, 0)].re;
            for n in 1..=nh {
                v[re_block(n) * m + d] = self.coeffs[(d, n)].re;
                v[im_block(n) * m + d] = self.coeffs[(d, n)].im;
            }
        }
        v
    }

    pub fn from_real(v: &RVec, n_dof: usize, omega: f64) -> Result<Self> {
        if n_dof == 0 || !v.len().is_multiple_of(n_dof) || (v.len() / n_dof) % 2 != 1 {
            return Err(Error::InvalidInput(format!(
                "packed length {} incompatible with {n_dof} DOFs",
                v.len()
            )));
        }
        let nh = (v.len() / n_dof - 1) / 2;
        let mut c = CMat::zeros(n_dof, nh + 1);
        for d in 0..n_dof {
            c[(d, 0)] = Complex64::new(v[d], 0.0);
            for n in 1..=nh {
                c[(d, n)] = Complex64::new(v[re_block(n) * n_dof + d], v[im_block(n) * n_dof + d]);
            }
        }
        Ok(Self { coeffs: c, omega })
    }

    /// Samples over one period; row `d` is DOF `d`.
    pub fn synthesize(&self, nt: usize) -> Result<RMat> {
        let tables = DftTables::new(self.nh(), nt)?;
        Ok(tables.synthesize(&self.coeffs))
    }

    /// Samples of the time derivative over one period.
    pub fn synthesize_velocity(&self, nt: usize) -> Result<RMat> {
        let mut d = self.coeffs.clone();
        for (n, mut col) in d.column_iter_mut().enumerate() {
            col *= Complex64::new(0.0, n as f64 * self.omega);
        }
        let tables = DftTables::new(self.nh(), nt)?;
        Ok(tables.synthesize(&d))
    }

    /// Value at a single time instant.
    pub fn eval(&self, t: f64) -> RVec {
        let mut u = RVec::zeros(self.n_dof());
        for n in 0..=self.nh() {
            let e = Complex64::from_polar(1.0, n as f64 * self.omega * t);
            for d in 0..self.n_dof() {
                u[d] += (self.coeffs[(d, n)] * e).re;
            }
        }
        u
    }

    /// Velocity at a single time instant.
    pub fn eval_velocity(&self, t: f64) -> RVec {
        let mut v = RVec::zeros(self.n_dof());
        for n in 1..=self.nh() {
            let w = n as f64 * self.omega;
            let e = Complex64::new(0.0, w) * Complex64::from_polar(1.0, w * t);
            for d in 0..self.n_dof() {
                v[d] += (self.coeffs[(d, n)] * e).re;
            }
        }
        v
    }

    /// Mean of `u(t)^2` per DOF, summed: `U_0^2 + 1/2 sum |U_n|^2`.
    pub fn mean_power(&self) -> f64 {
        let mut p = 0.0;
        for d in 0..self.n_dof() {
            p += self.coeffs[(d, 0)].re.powi(2);
            for n in 1..=self.nh() {
                p += 0.5 * self.coeffs[(d, n)].norm_sqr();
            }
        }
        p
    }
}

/// One-sided Fourier coefficients of uniformly sampled periodic rows.
pub fn fourier_coeffs(samples: &RMat, nh: usize, omega: f64) -> Result<HarmonicSignal> {
    let nt = samples.ncols();
    if nt < 2 * nh + 1 {
        return Err(Error::InvalidInput(format!(
            "{nt} samples cannot resolve {nh} harmonics"
        )));
    }
    let tables = DftTables::build(nh, nt);
    Ok(HarmonicSignal {
        coeffs: tables.analyze(samples),
        omega,
    })
}

/// Precomputed trigonometric tables for one (NH, N_t) pair.
#[derive(Debug, Clone)]
pub struct DftTables {
    nh: usize,
    nt: usize,
    cos: RMat,
    sin: RMat,
}

impl DftTables {
    /// Tables for synthesis-side use; enforces `nt >= 4 NH + 1`.
    pub fn new(nh: usize, nt: usize) -> Result<Self> {
        if nt < 4 * nh + 1 || nt == 0 {
            return Err(Error::InvalidInput(format!(
                "N_t = {nt} too small for NH = {nh} (need at least {})",
                4 * nh + 1
            )));
        }
        Ok(Self::build(nh, nt))
    }

    fn build(nh: usize, nt: usize) -> Self {
        let mut cos = RMat::zeros(nh + 1, nt);
        let mut sin = RMat::zeros(nh + 1, nt);
        for n in 0..=nh {
            for k in 0..nt {
                // reduce the angle exactly before evaluating
                let a = 2.0 * PI * ((n * k) % nt) as f64 / nt as f64;
                cos[(n, k)] = a.cos();
                sin[(n, k)] = a.sin();
            }
        }
        Self { nh, nt, cos, sin }
    }

    pub fn nh(&self) -> usize {
        self.nh
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn synthesize(&self, coeffs: &CMat) -> RMat {
        let m = coeffs.nrows();
        let mut x = RMat::zeros(m, self.nt);
        for d in 0..m {
            for n in 0..=self.nh.min(coeffs.ncols() - 1) {
                let c = coeffs[(d, n)];
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                for k in 0..self.nt {
                    x[(d, k)] += c.re * self.cos[(n, k)] - c.im * self.sin[(n, k)];
                }
            }
        }
        x
    }

    pub fn analyze(&self, samples: &RMat) -> CMat {
        let m = samples.nrows();
        let scale = 2.0 / self.nt as f64;
        let mut c = CMat::zeros(m, self.nh + 1);
        for d in 0..m {
            let row = samples.row(d);
            c[(d, 0)] = Complex64::new(row.sum() / self.nt as f64, 0.0);
            for n in 1..=self.nh {
                let mut re = 0.0;
                let mut im = 0.0;
                for k in 0..self.nt {
                    re += row[k] * self.cos[(n, k)];
                    im -= row[k] * self.sin[(n, k)];
                }
                c[(d, n)] = Complex64::new(re * scale, im * scale);
            }
        }
        c
    }

    /// Synthesis operator `E`: samples = E * packed coefficients (one DOF).
    pub fn synthesis_matrix(&self) -> RMat {
        let nb = n_blocks(self.nh);
        let mut e = RMat::zeros(self.nt, nb);
        for k in 0..self.nt {
            e[(k, 0)] = 1.0;
            for n in 1..=self.nh {
                e[(k, re_block(n))] = self.cos[(n, k)];
                e[(k, im_block(n))] = -self.sin[(n, k)];
            }
        }
        e
    }

    /// Analysis operator `F`: packed coefficients = F * samples (one DOF).
    pub fn analysis_matrix(&self) -> RMat {
        let nb = n_blocks(self.nh);
        let scale = 2.0 / self.nt as f64;
        let mut f = RMat::zeros(nb, self.nt);
        for k in 0..self.nt {
            f[(0, k)] = 1.0 / self.nt as f64;
            for n in 1..=self.nh {
                f[(re_block(n), k)] = scale * self.cos[(n, k)];
                f[(im_block(n), k)] = -scale * self.sin[(n, k)];
            }
        }
        f
    }
}

/// AFT evaluator bound to a fixed element set and harmonic order.
///
/// Inputs and outputs live on the sorted nonlinear DOF set given at
/// construction.
#[derive(Debug, Clone)]
pub struct Aft {
    tables: DftTables,
    e: RMat,
    f: RMat,
    elements: Vec<NonlinearElement>,
    dofs: Vec<usize>,
    /// Per element: (local position in `dofs`, direction) for each footprint DOF.
    maps: Vec<Vec<(usize, f64)>>,
}

impl Aft {
    pub fn new(elements: &[NonlinearElement], dofs: &[usize], nh: usize, nt: usize) -> Result<Self> {
        let tables = DftTables::new(nh, nt)?;
        let mut maps = Vec::with_capacity(elements.len());
        for el in elements {
            let mut map = Vec::new();
            for (d, dir) in el.footprint().into_iter().zip(el.direction()) {
                let pos = dofs
                    .iter()
                    .position(|&x| x == d)
                    .ok_or_else(|| Error::InvalidInput(format!("element DOF {d} not in the nonlinear DOF set")))?;
                map.push((pos, dir));
            }
            maps.push(map);
        }
        Ok(Self {
            e: tables.synthesis_matrix(),
            f: tables.analysis_matrix(),
            tables,
            elements: elements.to_vec(),
            dofs: dofs.to_vec(),
            maps,
        })
    }

    pub fn nh(&self) -> usize {
        self.tables.nh
    }

    pub fn nt(&self) -> usize {
        self.tables.nt
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn tables(&self) -> &DftTables {
        &self.tables
    }

    /// Residual force harmonics `G` and `dG/dU`, both in real packing over
    /// the nonlinear DOF set. The Jacobian is skipped when `jacobian` is
    /// false.
    pub fn eval_real(&self, u: &RVec, jacobian: bool) -> Result<(RVec, Option<RMat>)> {
        let m = self.dofs.len();
        let nb = n_blocks(self.nh());
        if u.len() != m * nb {
            return Err(Error::InvalidInput(format!(
                "packed input has length {}, expected {}",
                u.len(),
                m * nb
            )));
        }
        let mut g = RVec::zeros(m * nb);
        let mut jac = if jacobian {
            Some(RMat::zeros(m * nb, m * nb))
        } else {
            None
        };
        let nt = self.nt();
        for (el, map) in self.elements.iter().zip(&self.maps) {
            // local coordinate samples
            let mut x = vec![0.0; nt];
            for &(pos, dir) in map {
                let coeffs: RVec = RVec::from_iterator(nb, (0..nb).map(|b| u[b * m + pos]));
                let s = &self.e * coeffs;
                for k in 0..nt {
                    x[k] += dir * s[k];
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("AFT displacement samples"));
            }
            let (fs, dfs) = el.residual_force(&x)?;
            let fc = &self.f * RVec::from_vec(fs);
            for &(pos, dir) in map {
                for b in 0..nb {
                    g[b * m + pos] += dir * fc[b];
                }
            }
            if let Some(jac) = jac.as_mut() {
                // F * diag(dg/dx) * E or F * Jdense * E
                let local = match dfs {
                    SampleJacobian::Diagonal(d) => {
                        let mut de = self.e.clone();
                        for (k, &dk) in d.iter().enumerate().take(nt) {
                            de.row_mut(k).scale_mut(dk);
                        }
                        &self.f * de
                    }
                    SampleJacobian::Dense(jd) => &self.f * (jd * &self.e),
                };
                for &(pa, da) in map {
                    for &(pc, dc) in map {
                        let s = da * dc;
                        for b in 0..nb {
                            for c in 0..nb {
                                jac[(b * m + pa, c * m + pc)] += s * local[(b, c)];
                            }
                        }
                    }
                }
            }
        }
        Ok((g, jac))
    }

    /// Complex-signal convenience wrapper around [`Self::eval_real`].
    pub fn nl_harmonics(&self, u: &HarmonicSignal) -> Result<(HarmonicSignal, RMat)> {
        if u.n_dof() != self.dofs.len() || u.nh() != self.nh() {
            return Err(Error::InvalidInput(format!(
                "signal covers {} DOFs / NH = {}, AFT expects {} / {}",
                u.n_dof(),
                u.nh(),
                self.dofs.len(),
                self.nh()
            )));
        }
        let (g, j) = self.eval_real(&u.to_real(), true)?;
        let sig = HarmonicSignal::from_real(&g, self.dofs.len(), u.omega)?;
        Ok((sig, j.expect("requested")))
    }
}

/// Forward transform of one real sample row into the packed layout.
pub fn pack_row(tables: &DftTables, samples: &[f64]) -> RVec {
    let m = DMatrix::from_row_slice(1, samples.len(), samples);
    let c = tables.analyze(&m);
    HarmonicSignal { coeffs: c, omega: 1.0 }.to_real()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cubic() -> NonlinearElement {
        NonlinearElement::CubicSpring {
            dof: 0,
            coefficient: 2.0,
        }
    }

    #[test]
    fn single_cosine_synthesis() {
        let mut c = CMat::zeros(1, 2);
        c[(0, 1)] = Complex64::new(1.0, 0.0);
        let s = HarmonicSignal::new(c, 1.0).unwrap().synthesize(8).unwrap();
        for k in 0..8 {
            assert_relative_eq!(s[(0, k)], (2.0 * PI * k as f64 / 8.0).cos(), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_signal_synthesizes_to_zero() {
        let s = HarmonicSignal::zeros(3, 4, 2.0).synthesize(32).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_few_samples_rejected() {
        let s = HarmonicSignal::zeros(1, 4, 1.0);
        assert!(s.synthesize(16).is_err());
        assert!(fourier_coeffs(&RMat::zeros(1, 8), 4, 1.0).is_err());
    }

    #[test]
    fn imaginary_mean_is_dropped() {
        let mut c = CMat::zeros(1, 2);
        c[(0, 0)] = Complex64::new(1.0, 5.0);
        let s = HarmonicSignal::new(c, 1.0).unwrap();
        assert_eq!(s.coeffs[(0, 0)].im, 0.0);
    }

    #[test]
    fn real_packing_round_trip() {
        let mut c = CMat::zeros(2, 3);
        c[(0, 0)] = Complex64::new(0.5, 0.0);
        c[(1, 2)] = Complex64::new(-1.0, 2.0);
        c[(0, 1)] = Complex64::new(3.0, -4.0);
        let s = HarmonicSignal::new(c, 1.5).unwrap();
        let v = s.to_real();
        assert_eq!(v[re_block(1) * 2], 3.0);
        assert_eq!(v[im_block(2) * 2 + 1], 2.0);
        assert_eq!(HarmonicSignal::from_real(&v, 2, 1.5).unwrap(), s);
    }

    #[test]
    fn cubic_harmonics_match_trigonometric_identity() {
        let a = 0.7;
        let aft = Aft::new(&[cubic()], &[0], 5, 64).unwrap();
        let mut u = HarmonicSignal::zeros(1, 5, 1.0);
        u.coeffs[(0, 1)] = Complex64::new(a, 0.0);
        let (g, _) = aft.nl_harmonics(&u).unwrap();
        let g3 = 2.0 * a * a * a;
        assert_relative_eq!(g.coeffs[(0, 1)].re, 0.75 * g3, epsilon = 1e-14);
        assert_relative_eq!(g.coeffs[(0, 3)].re, 0.25 * g3, epsilon = 1e-14);
        for n in [0, 2, 4, 5] {
            assert!(g.coeffs[(0, n)].norm() < 1e-14);
        }
    }

    #[test]
    fn stuck_friction_has_zero_residual_harmonics() {
        let el = NonlinearElement::ElasticCoulomb {
            dof: 0,
            stiffness: 1e3,
            slip_force: 1.0,
        };
        let aft = Aft::new(&[el], &[0], 3, 64).unwrap();
        let mut u = HarmonicSignal::zeros(1, 3, 1.0);
        u.coeffs[(0, 1)] = Complex64::new(1e-4, 2e-4);
        u.coeffs[(0, 2)] = Complex64::new(-1e-4, 0.0);
        let (g, _) = aft.nl_harmonics(&u).unwrap();
        assert!(g.coeffs.iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn footprint_mismatch_rejected() {
        let el = NonlinearElement::CubicSpring {
            dof: 3,
            coefficient: 1.0,
        };
        assert!(Aft::new(&[el], &[0, 1], 3, 32).is_err());
    }
}
