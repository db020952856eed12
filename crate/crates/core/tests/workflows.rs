mod common;

use nlmodal::cnma::{continue_branch, ContinuationSettings};
use nlmodal::io::{read_branch, read_database, write_branch, write_database};
use nlmodal::model::build_2dof_cubic;
use nlmodal::synthesis::{ingest, Interpolation, ModalDatabase, Rom, SynthesisOptions};
use nlmodal::validate::{hbm_frf, integrate, Excitation, HbmSettings, TimeIntegrationSettings};

use common::*;

fn two_dof_database() -> (nlmodal::cnma::ModeBranch, ModalDatabase) {
    let m = build_2dof_cubic();
    let s = ContinuationSettings {
        nh: 5,
        ..Default::default()
    };
    let b = continue_branch(&m, 0, 1e-4, 1.0, &s)
        .and_then(|b| b.require_complete())
        .unwrap();
    let db = ingest(&b, &m, Interpolation::Cubic).unwrap();
    (b, db)
}

#[test]
fn branch_and_database_files_round_trip() {
    let (b, db) = two_dof_database();
    let mut buf = Vec::new();
    write_branch(&mut buf, &b, 1.0).unwrap();
    let table = read_branch(buf.as_slice()).unwrap();
    assert_eq!(table.mode, b.mode);
    assert_eq!(table.points, b.points);
    let m = build_2dof_cubic();
    let again = ModalDatabase::from_points(table.mode, &table.points, &m.mass, Interpolation::Cubic).unwrap();
    assert_eq!(again, db);

    let mut buf = Vec::new();
    write_database(&mut buf, &db).unwrap();
    let back = read_database(buf.as_slice(), Interpolation::Cubic).unwrap();
    assert_eq!(back, db);
    let (lo, hi) = db.range();
    for k in 0..20 {
        let q = lo * (hi / lo).powf(k as f64 / 19.0);
        let (a, b) = (db.eval(q).unwrap(), back.eval(q).unwrap());
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.psi, b.psi);
    }
}

#[test]
fn database_is_mass_normalized_and_reproduces_nodes() {
    let (b, db) = two_dof_database();
    let m = build_2dof_cubic();
    assert!(db.normalization_error(&m.mass) < 1e-12);
    for (k, &q) in db.amplitudes.iter().enumerate() {
        let p = db.eval(q).unwrap();
        assert!((p.omega - db.omegas[k]).abs() < 1e-12 * p.omega);
    }
    // stiffening: frequency grows with amplitude along the backbone
    assert!(db.omegas.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(db.len(), b.points.len());
}

/// Steady forced response from time integration agrees with the harmonic
/// balance solution it starts from.
#[test]
fn hbm_matches_time_integration_on_friction_beam() {
    let model = friction_beam(MU_N);
    let tip = beam().tip_dof();
    let damping = hysteretic(&model);
    let w1 = first_linear_frequency(&model);
    let f1 = mid_force(&model, 1.0);
    let hs = HbmSettings {
        probe: tip,
        amplitude_ref: A0,
        ..Default::default()
    };
    let hc = hbm_frf(&model, &f1, 0.85 * w1, 1.05 * w1, &damping, &hs).unwrap();
    let ipk = hc
        .curve
        .rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.amplitude.total_cmp(&b.1.amplitude))
        .unwrap()
        .0;
    for i in [ipk, ipk / 2] {
        let row = &hc.curve.rows[i];
        assert_eq!(row.stable, Some(true));
        let u = &hc.solutions[i];
        let ex = Excitation {
            f1: f1.clone(),
            omega: row.omega,
        };
        let ts = TimeIntegrationSettings {
            record_dofs: vec![tip],
            periods: 200.0,
            ..Default::default()
        };
        let tr = integrate(
            &model,
            &damping,
            &u.eval(0.0),
            &u.eval_velocity(0.0),
            Some(&ex),
            0.0,
            &ts,
        )
        .unwrap();
        let ss = tr.steady_state(0, 0.5).unwrap();
        let err = (ss.amplitude - row.amplitude).abs() / row.amplitude;
        assert!(
            err < 0.02,
            "omega {} hbm {} integration {} err {err}",
            row.omega,
            row.amplitude,
            ss.amplitude
        );
    }
}

/// At low forcing the reduced model is the linear single-mode response.
#[test]
fn rom_reduces_to_linear_response_at_low_forcing() {
    let model = friction_beam(MU_N);
    let tip = beam().tip_dof();
    let damping = hysteretic(&model);
    let branch = beam_branch(&model, 1e-4);
    let db = ingest(&branch, &model, Interpolation::Cubic).unwrap();
    let opts = SynthesisOptions {
        probe: tip,
        amplitude_ref: A0,
        ..Default::default()
    };
    let rom = Rom::new(&db, &model, &damping, &opts).unwrap();
    let w1 = first_linear_frequency(&model);
    let f1 = mid_force(&model, 1e-3);
    let curve = rom.frf(&f1, 0.95 * w1, 1.05 * w1).unwrap();
    let hs = HbmSettings {
        probe: tip,
        amplitude_ref: A0,
        nh: 1,
        ..Default::default()
    };
    let lin = hbm_frf(&model, &f1, 0.95 * w1, 1.05 * w1, &damping, &hs).unwrap();
    let (p, q) = (curve.peak().unwrap(), lin.curve.peak().unwrap());
    assert!((p.omega - q.omega).abs() < 1e-3 * q.omega);
    assert!((p.amplitude - q.amplitude).abs() < 1e-2 * q.amplitude);
}
