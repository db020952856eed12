//! Invariant suites of the `check` task, run on the configured model.

use nlmodal::aft::{Aft, DftTables, HarmonicSignal};
use nlmodal::cnma::kinetic_energy;
use nlmodal::linmodal::{
    compliance_general, compliance_spectral, dyn_stiffness, LinearModalBasis, StateSpaceModalBasis,
};
use nlmodal::model::{NonlinearElement, SecondOrderModel};
use nlmodal::{CMat, Complex64, RMat, RVec, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn pass(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn random_coeffs(rng: &mut ChaCha8Rng, n: usize, nh: usize, scale: f64) -> CMat {
    CMat::from_fn(n, nh + 1, |_, k| {
        let im = if k == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
        Complex64::new(rng.random_range(-1.0..1.0), im) * scale
    })
}

fn element_scale(el: &NonlinearElement) -> f64 {
    match *el {
        NonlinearElement::UnilateralSpring { preload, .. } => 2.0 * preload.abs(),
        NonlinearElement::ElasticCoulomb {
            stiffness, slip_force, ..
        } => 2.0 * (slip_force / stiffness).abs(),
        _ => 1.0,
    }
}

pub fn run(
    model: &SecondOrderModel,
    seed: u64,
    cases: usize,
    amplitude: Option<f64>,
    nh: usize,
    nt: usize,
) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_dof();
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let h = rng.random_range(1..=15);
        let t = DftTables::new(h, 4 * h + 1 + rng.random_range(0..64))?;
        let c = random_coeffs(&mut rng, 2, h, 1.0);
        worst = worst.max((t.analyze(&t.synthesize(&c)) - &c).camax());
    }
    out.push(SuiteResult {
        name: "dft_round_trip",
        cases,
        max_error: worst,
        tolerance: 1e-12,
    });

    // H_n S_n = I at random complex eigenvalues around the spectrum
    let basis = LinearModalBasis::from_model(model)?;
    let damped = model.has_damping();
    let state = if damped {
        Some(StateSpaceModalBasis::from_model(model)?)
    } else {
        None
    };
    let w_lo = basis.omegas[0];
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let h = rng.random_range(1..=5);
        let w = w_lo * rng.random_range(0.2..3.0);
        let lam = Complex64::new(-w * rng.random_range(0.001..0.1), w);
        let hs = match &state {
            Some(sb) => compliance_general(h, lam, sb)?,
            None => compliance_spectral(h, lam, &basis)?,
        };
        worst = worst.max((hs * dyn_stiffness(h, lam, model) - CMat::identity(n, n)).camax());
    }
    out.push(SuiteResult {
        name: if damped {
            "compliance_inverse_state_space"
        } else {
            "compliance_inverse_spectral"
        },
        cases,
        max_error: worst,
        tolerance: 1e-9,
    });

    if !model.elements.is_empty() {
        let dofs = model.nonlinear_dofs().to_vec();
        let aft = Aft::new(&model.elements, &dofs, nh, nt)?;
        let scale = amplitude.unwrap_or_else(|| model.elements.iter().map(element_scale).fold(0.0, f64::max));
        let piecewise = model.elements.iter().any(|e| e.is_piecewise_linear_contact());
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let u = HarmonicSignal::new(random_coeffs(&mut rng, dofs.len(), nh, scale), 1.0)?.to_real();
            let (_, j) = aft.eval_real(&u, true)?;
            let j = j.expect("requested");
            let step = 1e-7 * scale;
            let mut fd = RMat::zeros(j.nrows(), j.ncols());
            for k in 0..u.len() {
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += step;
                um[k] -= step;
                let d: RVec = (aft.eval_real(&up, false)?.0 - aft.eval_real(&um, false)?.0) / (2.0 * step);
                fd.set_column(k, &d);
            }
            let denom = j.amax();
            if denom > 0.0 {
                worst = worst.max((&j - fd).amax() / denom);
            }
        }
        out.push(SuiteResult {
            name: "aft_jacobian",
            cases,
            max_error: worst,
            tolerance: if piecewise { 1e-4 } else { 1e-6 },
        });
    }

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let u = HarmonicSignal::new(random_coeffs(&mut rng, n, 7, 1.0), rng.random_range(0.5..3.0))?;
        let v = u.synthesize_velocity(128)?;
        let mean: f64 = (0..128)
            .map(|k| {
                let vk = v.column(k);
                0.5 * vk.dot(&(&model.mass * vk))
            })
            .sum::<f64>()
            / 128.0;
        let e = kinetic_energy(&u, &model.mass);
        worst = worst.max((e - mean).abs() / e);
    }
    out.push(SuiteResult {
        name: "parseval_energy",
        cases,
        max_error: worst,
        tolerance: 1e-8,
    });
    Ok(out)
}
