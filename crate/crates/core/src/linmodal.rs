//! Linear modal bases, dynamic stiffness and dynamic compliance.
//!
//! Dynamic stiffness of harmonic `n` at eigenvalue `lambda`:
//! `S_n = (n lambda)^2 M + n lambda C + K`; the compliance `H_n` is its
//! inverse, assembled from either the real modes (for `C = 0`) or the
//! state-space eigenpairs (general `C`).

use nalgebra::DMatrix;

use crate::linalg::{check_symmetric, to_complex};
use crate::model::SecondOrderModel;
use crate::{CMat, CVec, Complex64, Error, RMat, Result};

/// Relative guard on compliance denominators.
pub const DEFAULT_GUARD: f64 = 1e-6;

/// Mass-normalized real modes, ascending in frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModalBasis {
    pub omegas: Vec<f64>,
    /// Column `k` is `phi_k`.
    pub phis: RMat,
}

/// Eigenvalues and eigenvectors of the linear free-vibration problem `M u'' + K u = 0`.
pub fn real_modes(mass: &RMat, stiffness: &RMat) -> Result<LinearModalBasis> {
    check_symmetric(mass, 1e-12)?;
    check_symmetric(stiffness, 1e-12)?;
    if mass.shape() != stiffness.shape() {
        return Err(Error::InvalidInput("mass and stiffness sizes differ".into()));
    }
    let n = mass.nrows();
    let chol = mass.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // A = L^-1 K L^-T
    let linv_k = l
        .solve_lower_triangular(stiffness)
        .ok_or(Error::Singular("Cholesky factor"))?;
    let a = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or(Error::Singular("Cholesky factor"))?;
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut phis = RMat::zeros(n, n);
    let mut omegas = Vec::with_capacity(n);
    for (col, &i) in order.iter().enumerate() {
        let w2 = eig.eigenvalues[i];
        if w2 < -1e-10 * eig.eigenvalues.amax().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "stiffness is indefinite (eigenvalue {w2:e})"
            )));
        }
        omegas.push(w2.max(0.0).sqrt());
        let y = eig.eigenvectors.column(i).into_owned();
        let mut phi = lt
            .solve_upper_triangular(&y)
            .ok_or(Error::Singular("Cholesky factor"))?;
        // deterministic sign: largest component positive
        let imax = phi.iamax();
        if phi[imax] < 0.0 {
            phi.neg_mut();
        }
        phis.set_column(col, &phi);
    }
    Ok(LinearModalBasis { omegas, phis })
}

impl LinearModalBasis {
    pub fn from_model(model: &SecondOrderModel) -> Result<Self> {
        real_modes(&model.mass, &model.stiffness)
    }

    pub fn n_modes(&self) -> usize {
        self.omegas.len()
    }

    pub fn phi(&self, k: usize) -> nalgebra::DVectorView<'_, f64> {
        self.phis.column(k)
    }

    /// `Phi^T A Phi` for a physical matrix `A`.
    pub fn project(&self, a: &RMat) -> RMat {
        self.phis.transpose() * a * &self.phis
    }

    /// DOF with the largest `|phi_j|`, preferring DOFs outside `exclude`.
    pub fn master_dof(&self, j: usize, exclude: &[usize]) -> usize {
        let phi = self.phi(j);
        let pick = |allow: &dyn Fn(usize) -> bool| {
            (0..phi.len())
                .filter(|&d| allow(d))
                .max_by(|&a, &b| phi[a].abs().total_cmp(&phi[b].abs()).then(b.cmp(&a)))
        };
        pick(&|d| !exclude.contains(&d)).unwrap_or_else(|| pick(&|_| true).expect("non-empty"))
    }
}

/// `S_n(lambda) = (n lambda)^2 M + n lambda C + K`.
pub fn dyn_stiffness(n: usize, lambda: Complex64, model: &SecondOrderModel) -> CMat {
    let s = lambda * n as f64;
    let mut out = to_complex(&model.stiffness);
    if n == 0 {
        return out;
    }
    let s2 = s * s;
    for ((o, m), c) in out.iter_mut().zip(model.mass.iter()).zip(model.damping.iter()) {
        *o += s2 * m + s * c;
    }
    out
}

/// Source of dynamic-compliance blocks and their eigenvalue derivative.
pub trait ComplianceProvider {
    fn n_dof(&self) -> usize;

    /// Rows `rows` and columns `cols` of `H_n(lambda)`.
    fn block(&self, n: usize, lambda: Complex64, rows: &[usize], cols: &[usize]) -> Result<CMat>;

    /// Rows/columns of `dH_n / d lambda`.
    fn d_block(&self, n: usize, lambda: Complex64, rows: &[usize], cols: &[usize]) -> Result<CMat>;

    /// Fails with [`Error::NearResonantDenominator`] if any pole is too close.
    fn check_guard(&self, n: usize, lambda: Complex64, guard: f64) -> Result<()>;
}

/// Spectral compliance for undamped linear parts (`C = 0`).
#[derive(Debug, Clone)]
pub struct SpectralCompliance {
    pub basis: LinearModalBasis,
    pub guard: f64,
}

impl SpectralCompliance {
    pub fn new(basis: LinearModalBasis) -> Self {
        Self {
            basis,
            guard: DEFAULT_GUARD,
        }
    }

    fn denominators(&self, n: usize, lambda: Complex64) -> Vec<Complex64> {
        let s = lambda * n as f64;
        self.basis
            .omegas
            .iter()
            .map(|w| Complex64::new(w * w, 0.0) + s * s)
            .collect()
    }

    fn weighted(&self, rows: &[usize], cols: &[usize], w: &[Complex64]) -> CMat {
        let phis = &self.basis.phis;
        let mut h = CMat::zeros(rows.len(), cols.len());
        for (k, wk) in w.iter().enumerate() {
            for (a, &r) in rows.iter().enumerate() {
                let pr = phis[(r, k)];
                if pr == 0.0 {
                    continue;
                }
                let f = wk * pr;
                for (b, &c) in cols.iter().enumerate() {
                    h[(a, b)] += f * phis[(c, k)];
                }
            }
        }
        h
    }
}

impl ComplianceProvider for SpectralCompliance {
    fn n_dof(&self) -> usize {
        self.basis.phis.nrows()
    }

    fn block(&self, n: usize, lambda: Complex64, rows: &[usize], cols: &[usize]) -> Result<CMat> {
        self.check_guard(n, lambda, self.guard)?;
        let w: Vec<Complex64> = self.denominators(n, lambda).into_iter().map(|d| d.inv()).collect();
        Ok(self.weighted(rows, cols, &w))
    }

    fn d_block(&self, n: usize, lambda: Complex64, rows: &[usize], cols: &[usize]) -> Result<CMat> {
        self.check_guard(n, lambda, self.guard)?;
        let nn = (n * n) as f64;
        let w: Vec<Complex64> = self
            .denominators(n, lambda)
            .into_iter()
            .map(|d| -2.0 * nn * lambda / (d * d))
            .collect();
        Ok(self.weighted(rows, cols, &w))
    }

    fn check_guard(&self, n: usize, lambda: Complex64, guard: f64) -> Result<()> {
        for (k, (d, w)) in self.denominators(n, lambda).iter().zip(&self.basis.omegas).enumerate() {
            let scale = (w * w).max(f64::MIN_POSITIVE);
            if d.norm() < guard * scale {
                return Err(Error::NearResonantDenominator {
                    mode: k,
                    harmonic: n,
                    denominator: d.norm(),
                });
            }
        }
        Ok(())
    }
}

/// Full compliance `H_n = sum_k phi_k phi_k^T / (omega_k^2 + (n lambda)^2)`.
pub fn compliance_spectral(n: usize, lambda: Complex64, basis: &LinearModalBasis) -> Result<CMat> {
    let all: Vec<usize> = (0..basis.phis.nrows()).collect();
    SpectralCompliance::new(basis.clone()).block(n, lambda, &all, &all)
}

/// Bi-orthonormal eigenpairs of the first-order state matrix
/// `A = [[0, -I], [M^-1 K, M^-1 C]]` acting on `[u; u']`.
///
/// With this sign `A`'s eigenvalues are `nu = -lambda` for the free-vibration
/// eigenvalues `lambda`, and `H_n = sum_k v_k w_k M^-1 / (nu_k + n lambda)`.
#[derive(Debug, Clone)]
pub struct StateSpaceModalBasis {
    pub nus: Vec<Complex64>,
    /// Column `k`: displacement block `v_k` of the right eigenvector.
    pub right_disp: CMat,
    /// Row `k`: `w_k M^-1`, the velocity block of the left eigenvector
    /// times the inverse mass.
    pub left_minv: CMat,
    /// Full right (columns) and left (rows) eigenvectors.
    pub right: CMat,
    pub left: CMat,
    pub guard: f64,
}

fn state_matrix(mass: &RMat, damping: &RMat, stiffness: &RMat) -> Result<RMat> {
    let n = mass.nrows();
    let lu = mass.clone().lu();
    let mk = lu.solve(stiffness).ok_or(Error::Singular("mass matrix"))?;
    let mc = lu.solve(damping).ok_or(Error::Singular("mass matrix"))?;
    let mut a = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = -1.0;
    }
    a.view_mut((n, 0), (n, n)).copy_from(&mk);
    a.view_mut((n, n), (n, n)).copy_from(&mc);
    Ok(a)
}

/// Eigenvector of `a` for the (approximate) eigenvalue `nu` by shifted
/// inverse iteration; returns the refined eigenvalue as well.
fn inverse_iteration(a: &CMat, nu: Complex64) -> Result<(CVec, Complex64)> {
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1.0);
    let mut shift = nu + Complex64::new(1e-11, 1e-11) * scale;
    let mut x = CVec::from_iterator(
        n,
        (0..n).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.3 - 0.05 * i as f64)),
    );
    x /= Complex64::new(x.norm(), 0.0);
    for it in 0..6 {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] -= shift;
        }
        let y = shifted.lu().solve(&x).ok_or(Error::Singular("inverse iteration"))?;
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Singular("inverse iteration"));
        }
        x = y / Complex64::new(norm, 0.0);
        // Rayleigh quotient refresh for the last sweeps
        let ax = a * &x;
        let rq = x.dotc(&ax) / x.dotc(&x);
        if it >= 2 {
            shift = rq + Complex64::new(1e-13, 1e-13) * scale;
        }
        let res = (&ax - &x * rq).norm();
        if it >= 2 && res < 1e-14 * scale {
            return Ok((x, rq));
        }
    }
    let ax = a * &x;
    let rq = x.dotc(&ax) / x.dotc(&x);
    Ok((x, rq))
}

/// State-space spectral decomposition for general viscous damping.
pub fn state_modes(mass: &RMat, damping: &RMat, stiffness: &RMat) -> Result<StateSpaceModalBasis> {
    let n = mass.nrows();
    if damping.shape() != mass.shape() || stiffness.shape() != mass.shape() {
        return Err(Error::InvalidInput("matrix sizes differ".into()));
    }
    let a = state_matrix(mass, damping, stiffness)?;
    let mut nus: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    nus.sort_by(|x, y| {
        x.im.abs()
            .total_cmp(&y.im.abs())
            .then(x.re.total_cmp(&y.re))
            .then(x.im.total_cmp(&y.im))
    });
    let scale = nus.iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1.0);
    for i in 0..nus.len() {
        for j in (i + 1)..nus.len() {
            if (nus[i] - nus[j]).norm() < 1e-8 * scale {
                return Err(Error::DegenerateSpectrum(i, j));
            }
        }
    }
    let ac = to_complex(&a);
    let at = ac.transpose();
    let m2 = 2 * n;
    let mut right = CMat::zeros(m2, m2);
    let mut left = CMat::zeros(m2, m2);
    for (k, nu) in nus.iter_mut().enumerate() {
        let (xr, nu_r) = inverse_iteration(&ac, *nu)?;
        let (xl, _) = inverse_iteration(&at, nu_r)?;
        // non-conjugated bi-orthonormalization x_l x_r = 1
        let p = xl.transpose() * &xr;
        let p = p[(0, 0)];
        if p.norm() < 1e-12 {
            return Err(Error::DegenerateSpectrum(k, k));
        }
        right.set_column(k, &xr);
        left.set_row(k, &(xl / p).transpose());
        *nu = nu_r;
    }
    let minv = mass.clone().try_inverse().ok_or(Error::Singular("mass matrix"))?;
    let right_disp = right.rows(0, n).into_owned();
    let left_minv = left.columns(n, n).into_owned() * to_complex(&minv);
    Ok(StateSpaceModalBasis {
        nus,
        right_disp,
        left_minv,
        right,
        left,
        guard: DEFAULT_GUARD,
    })
}

impl StateSpaceModalBasis {
    pub fn from_model(model: &SecondOrderModel) -> Result<Self> {
        state_modes(&model.mass, &model.damping, &model.stiffness)
    }

    fn weighted(&self, rows: &[usize], cols: &[usize], w: &[Complex64]) -> CMat {
        let mut h = CMat::zeros(rows.len(), cols.len());
        for (k, wk) in w.iter().enumerate() {
            for (a, &r) in rows.iter().enumerate() {
                let f = wk * self.right_disp[(r, k)];
                for (b, &c) in cols.iter().enumerate() {
                    h[(a, b)] += f * self.left_minv[(k, c)];
                }
            }
        }
        h
    }
}

impl ComplianceProvider for StateSpaceModalBasis {
    fn n_dof(&self) -> usize {
        self.right_disp.nrows()
    }

    fn block(&self, n: usize, lambda: Complex64, rows: &[usize], cols: &[usize]) -> Result<CMat> {
        self.check_guard(n, lambda, self.guard)?;
        let s = lambda * n as f64;
        let w: Vec<Complex64> = self.nus.iter().map(|nu| (nu + s).inv()).collect();
        Ok(self.weighted(rows, cols, &w))
    }

    fn d_block(&self, n: usize, lambda: Complex64, rows: &[usize], cols: &[usize]) -> Result<CMat> {
        self.check_guard(n, lambda, self.guard)?;
        let s = lambda * n as f64;
        let nn = n as f64;
        let w: Vec<Complex64> = self.nus.iter().map(|nu| -nn / ((nu + s) * (nu + s))).collect();
        Ok(self.weighted(rows, cols, &w))
    }

    fn check_guard(&self, n: usize, lambda: Complex64, guard: f64) -> Result<()> {
        let s = lambda * n as f64;
        for (k, nu) in self.nus.iter().enumerate() {
            let d = (nu + s).norm();
            if d < guard * nu.norm().max(f64::MIN_POSITIVE) {
                return Err(Error::NearResonantDenominator {
                    mode: k,
                    harmonic: n,
                    denominator: d,
                });
            }
        }
        Ok(())
    }
}

/// Full compliance from the state-space decomposition.
pub fn compliance_general(n: usize, lambda: Complex64, basis: &StateSpaceModalBasis) -> Result<CMat> {
    let all: Vec<usize> = (0..basis.n_dof()).collect();
    basis.block(n, lambda, &all, &all)
}

/// Compliance provider matching the model's damping: spectral for `C = 0`,
/// state-space otherwise.
pub fn compliance_for(model: &SecondOrderModel, guard: f64) -> Result<Box<dyn ComplianceProvider + Send + Sync>> {
    if model.has_damping() {
        let mut b = StateSpaceModalBasis::from_model(model)?;
        b.guard = guard;
        Ok(Box::new(b))
    } else {
        let mut b = SpectralCompliance::new(LinearModalBasis::from_model(model)?);
        b.guard = guard;
        Ok(Box::new(b))
    }
}

/// Dense `C = M Phi diag(2 D_k omega_k) Phi^T M`, the inverse modal
/// transform of prescribed modal damping ratios.
pub fn modal_damping_matrix(mass: &RMat, basis: &LinearModalBasis, ratios: &[f64]) -> Result<RMat> {
    if ratios.len() != basis.n_modes() {
        return Err(Error::InvalidInput(format!(
            "{} damping ratios for {} modes",
            ratios.len(),
            basis.n_modes()
        )));
    }
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        ratios.len(),
        ratios.iter().zip(&basis.omegas).map(|(d, w)| 2.0 * d * w),
    ));
    let mp = mass * &basis.phis;
    let c = &mp * diag * mp.transpose();
    Ok((&c + c.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_diff;
    use crate::model::build_2dof_cubic;
    use approx::assert_relative_eq;

    #[test]
    fn two_dof_frequencies() {
        let m = build_2dof_cubic();
        let b = LinearModalBasis::from_model(&m).unwrap();
        assert_relative_eq!(b.omegas[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.omegas[1], 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn diagonal_system_has_unit_modes() {
        let m = DMatrix::identity(3, 3);
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 9.0]));
        let b = real_modes(&m, &k).unwrap();
        assert_eq!(b.omegas, vec![1.0, 2.0, 3.0]);
        assert!((b.phis.clone() - DMatrix::identity(3, 3)).amax() < 1e-15);
        let h = compliance_spectral(1, Complex64::new(0.0, 0.5), &b).unwrap();
        assert_relative_eq!(h[(1, 1)].re, 1.0 / 3.75, epsilon = 1e-15);
        assert_eq!(h[(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn static_stiffness_and_undamped_dynamic_stiffness() {
        let m = build_2dof_cubic();
        let s0 = dyn_stiffness(0, Complex64::new(0.3, 2.0), &m);
        assert_eq!(s0, to_complex(&m.stiffness));
        let w = 0.8;
        let s1 = dyn_stiffness(1, Complex64::new(0.0, w), &m);
        let expect = to_complex(&(&m.stiffness - &m.mass * (w * w)));
        assert!(rel_diff(&s1, &expect) < 1e-15);
    }

    #[test]
    fn exact_resonance_trips_guard() {
        let m = build_2dof_cubic();
        let b = LinearModalBasis::from_model(&m).unwrap();
        let r = compliance_spectral(1, Complex64::new(0.0, 1.0), &b);
        assert!(matches!(
            r,
            Err(Error::NearResonantDenominator {
                mode: 0,
                harmonic: 1,
                ..
            })
        ));
    }

    #[test]
    fn undamped_state_eigenvalues_are_imaginary_pairs() {
        let m = build_2dof_cubic();
        let s = StateSpaceModalBasis::from_model(&m).unwrap();
        let mut ims: Vec<f64> = s.nus.iter().map(|v| v.im).collect();
        ims.sort_by(f64::total_cmp);
        for v in &s.nus {
            assert!(v.re.abs() < 1e-12);
        }
        let w3 = 3f64.sqrt();
        for (a, b) in ims.iter().zip([-w3, -1.0, 1.0, w3]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn modal_damping_matrix_diagonalizes() {
        let m = build_2dof_cubic();
        let b = LinearModalBasis::from_model(&m).unwrap();
        let c = modal_damping_matrix(&m.mass, &b, &[0.01, 0.02]).unwrap();
        let p = b.project(&c);
        assert_relative_eq!(p[(0, 0)], 0.02, epsilon = 1e-14);
        assert_relative_eq!(p[(1, 1)], 0.04 * 3f64.sqrt(), epsilon = 1e-14);
        assert!(p[(0, 1)].abs() < 1e-14);
    }
}
