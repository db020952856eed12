//! Beam fixtures shared by the integration tests.
#![allow(dead_code)]

use nlmodal::cnma::{continue_branch, ContinuationSettings, ModeBranch};
use nlmodal::linmodal::LinearModalBasis;
use nlmodal::model::{build_clamped_beam, BeamParams, NonlinearElement, SecondOrderModel};
use nlmodal::synthesis::DampingSpec;
use nlmodal::{CVec, Complex64};

/// Preload compression of the unilateral spring [m]; also the amplitude
/// reference `a*` of both beam fixtures.
pub const A0: f64 = 1e-4;
pub const KN: f64 = 2e3;
pub const KN_STIFF: f64 = 1e4;
pub const KT: f64 = 1e3;
pub const MU_N: f64 = 1.0;
pub const ETA: f64 = 1e-3;

pub fn beam() -> BeamParams {
    BeamParams::default()
}

pub fn unilateral_beam(kn: f64, preload: f64) -> SecondOrderModel {
    let p = beam();
    let el = NonlinearElement::UnilateralSpring {
        dof: p.tip_dof(),
        stiffness: kn,
        preload,
    };
    build_clamped_beam(&p, Some(el)).unwrap()
}

pub fn friction_beam(slip_force: f64) -> SecondOrderModel {
    let p = beam();
    let el = NonlinearElement::ElasticCoulomb {
        dof: p.tip_dof(),
        stiffness: KT,
        slip_force,
    };
    build_clamped_beam(&p, Some(el)).unwrap()
}

pub fn hysteretic(model: &SecondOrderModel) -> Vec<DampingSpec> {
    vec![DampingSpec::stiffness_proportional_hysteretic(model, ETA)]
}

/// Point force at the beam middle.
pub fn mid_force(model: &SecondOrderModel, level: f64) -> CVec {
    let mut f = CVec::zeros(model.n_dof());
    f[beam().mid_dof()] = Complex64::new(level, 0.0);
    f
}

pub fn first_linear_frequency(model: &SecondOrderModel) -> f64 {
    LinearModalBasis::from_model(model).unwrap().omegas[0]
}

pub fn beam_settings() -> ContinuationSettings {
    let mut s = ContinuationSettings {
        nh: 7,
        nt: 128,
        ..Default::default()
    };
    s.step.max_points = 3000;
    s.step.ds_max = 0.05;
    s
}

/// First-mode branch over kinetic energies `[1e-10, e_max]`.
pub fn beam_branch(model: &SecondOrderModel, e_max: f64) -> ModeBranch {
    continue_branch(model, 0, 1e-10, e_max, &beam_settings())
        .and_then(|b| b.require_complete())
        .unwrap()
}
