//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that the report is always
//! printed; the process fails if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use nlmodal::aft::{Aft, DftTables, HarmonicSignal};
use nlmodal::cnma::{
    continue_branch, kinetic_energy, mode_at_tongue_check, CnmaSystem, ContinuationSettings, ModeBranch,
};
use nlmodal::linmodal::{
    compliance_general, compliance_spectral, dyn_stiffness, real_modes, LinearModalBasis, StateSpaceModalBasis,
};
use nlmodal::model::{build_2dof_cubic, NonlinearElement, SecondOrderModel};
use nlmodal::synthesis::{
    frf_at_preload, ingest, lco_existence_boundary, DampingSpec, Interpolation, ModalDatabase, ResponseCurve, Rom,
    SynthesisOptions,
};
use nlmodal::validate::{hbm_frf, integrate, Excitation, ForcedHbm, HbmSettings, TimeIntegrationSettings};
use nlmodal::{CMat, Complex64, RMat, RVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

/// Relative frequency slack when comparing amplitudes of two response
/// curves (near-vertical flanks and fold tips make equal-frequency
/// comparisons ill-posed).
const FREQ_SLACK: f64 = 5e-4;

type Outcome = Result<(bool, String), String>;

struct Report {
    lines: Vec<(String, bool, String, Duration)>,
}

impl Report {
    fn run(&mut self, id: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let (ok, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        let el = t.elapsed();
        println!(
            "criterion {id}: {} ({:.1} s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            el.as_secs_f64()
        );
        self.lines.push((id.into(), ok, detail, el));
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------- 2-DOF

fn two_dof_settings() -> ContinuationSettings {
    let mut s = ContinuationSettings {
        nh: 9,
        nt: 128,
        ..Default::default()
    };
    s.step.ds_initial = 5e-4;
    s.step.ds_max = 0.03;
    s.step.min_tangent_cos = 0.9;
    s.step.max_points = 40000;
    s
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let m = build_2dof_cubic();
    let mut worst = 0.0f64;
    for (mode, exact) in [(0, 1.0), (1, 3f64.sqrt())] {
        let b = continue_branch(&m, mode, 1e-10, 1e-9, &two_dof_settings()).map_err(e)?;
        worst = worst.max((b.points[0].omega0 - exact).abs() / exact);
    }
    let el = t.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-4 && el < 1.0,
        format!("max rel error {worst:.2e} (tol 1e-4), runtime {el:.3} s (limit 1 s)"),
    ))
}

fn two_dof_branches() -> Result<(ModeBranch, ModeBranch), String> {
    let m = build_2dof_cubic();
    let s = two_dof_settings();
    let b1 = continue_branch(&m, 0, 1e-4, 5e3, &s).and_then(|b| b.require_complete());
    let b2 = continue_branch(&m, 1, 1e-4, 5e3, &s).and_then(|b| b.require_complete());
    Ok((b1.map_err(e)?, b2.map_err(e)?))
}

fn criterion_2(b1: &ModeBranch, b2: &ModeBranch, elapsed: f64) -> Outcome {
    let first_fold = *b1.turning_points.first().ok_or("no tongue traversed")?;
    let last_fold = *b1.turning_points.last().unwrap();
    // backbone below the tongue and the tail after it
    let pre = &b1.points[..first_fold];
    let stiffening = pre
        .windows(2)
        .all(|w| w[1].omega0 > w[0].omega0 && w[1].kinetic_energy > w[0].kinetic_energy);
    let tail = &b1.points[b1.points.len() - 10..];
    let tail_stiffening = last_fold < b1.points.len() - 10 && tail.windows(2).all(|w| w[1].omega0 > w[0].omega0);
    let r3 = mode_at_tongue_check(b1, b2, 3, 0.005);
    let r2 = mode_at_tongue_check(b1, b2, 2, 0.005);
    let tip = r3.tongue_tips.first().copied();
    let ok = stiffening && tail_stiffening && r3.detected() && !r2.detected() && elapsed < 60.0;
    Ok((
        ok,
        format!(
            "stiffening below tongue {stiffening}, tail {tail_stiffening}, S3:1 tip {}, N=2 tips {}, runtime {elapsed:.1} s",
            tip.map_or("none".into(), |h| format!(
                "E {:.1} omega1 {:.5} omega2/3 {:.5} rel {:.2e}",
                h.energy,
                h.omega_a,
                h.omega_b / 3.0,
                h.rel_error
            )),
            r2.tongue_tips.len()
        ),
    ))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let m = build_2dof_cubic();
    // nh = 9 truncates visibly above E ~ 100; the oracle needs the
    // harmonic series converged to well below the tolerance
    let mut s = two_dof_settings();
    s.nh = 41;
    s.nt = 512;
    let b1 = continue_branch(&m, 0, 1e-4, 5e3, &s)
        .and_then(|b| b.require_complete())
        .map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = &b1.points[rng.random_range(0..b1.points.len())];
        let (u0, v0) = p.initial_state();
        let ts = TimeIntegrationSettings {
            steps_per_period: 2000,
            periods: 1.0,
            stop_when_steady: false,
            record_dofs: vec![0, 1],
            record_stride: 2000,
            ..Default::default()
        };
        let period = 2.0 * std::f64::consts::PI / p.omega0;
        let tr = integrate(&m, &[], &u0, &v0, None, period, &ts).map_err(e)?;
        let scale = |u: &RVec, v: &RVec| -> RVec {
            RVec::from_iterator(4, u.iter().copied().chain(v.iter().map(|x| x / p.omega0)))
        };
        let x0 = scale(&u0, &v0);
        let x1 = scale(&tr.final_u, &tr.final_v);
        worst = worst.max((&x1 - &x0).norm() / x0.norm());
    }
    let el = t.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-4 && el < 60.0,
        format!(
            "10 random points of a {}-point nh=41 branch, max relative state error after one period {worst:.2e} (tol 1e-4), runtime {el:.1} s",
            b1.points.len()
        ),
    ))
}

// ---------------------------------------------------------------- beams

fn criterion_4() -> Outcome {
    let soft = beam_branch(&unilateral_beam(KN, A0), 1e-1);
    let tip = beam().tip_dof();
    let w_lin = soft.points[0].omega0;
    let mut constant = true;
    let mut decreasing = true;
    let mut lifted = false;
    for w in soft.points.windows(2) {
        // lift-off starts once the tip amplitude reaches the preload
        let amp = w[1].harmonics.coeffs[(tip, 1)].norm();
        if amp < 0.99 * A0 && !lifted {
            constant &= (w[1].omega0 - w_lin).abs() <= 1e-8 * w_lin;
        } else {
            lifted = true;
            decreasing &= w[1].omega0 <= w[0].omega0 * (1.0 + 1e-9);
        }
    }
    let drop = 1.0 - soft.points.last().unwrap().omega0 / w_lin;
    let stiff = stiff_contact_fold()?;
    Ok((
        constant && decreasing && lifted && drop > 0.01 && stiff.is_some(),
        format!(
            "k_n=2e3: constant below lift-off {constant}, monotone decrease after {decreasing}, total drop {:.1}%; k_n=1e4: {}",
            100.0 * drop,
            stiff.unwrap_or_else(|| "no internal-resonance fold traversed".into())
        ),
    ))
}

/// First energy fold of the k_n = 1e4 branch that is caused by an internal
/// resonance: the dominant higher harmonic `h` sits at a linear
/// eigenfrequency, `h omega ~ omega_k`, and the branch continues past it.
fn stiff_contact_fold() -> Result<Option<String>, String> {
    let model = unilateral_beam(KN_STIFF, A0);
    let mut s = beam_settings();
    // the resolved tongue is S13:1 with the third mode
    s.nh = 13;
    s.nt = 512;
    s.step.ds_max = 0.02;
    s.step.ds_initial = 0.02;
    let b = continue_branch(&model, 0, 1e-10, 1.0, &s).map_err(e)?;
    let omegas = LinearModalBasis::from_model(&model).map_err(e)?.omegas;
    let mass = model.mass.map(|v| Complex64::new(v, 0.0));
    for &f in &b.turning_points {
        let p = &b.points[f];
        // a genuine fold: energy recedes by at least 1% after it
        let e_after = b.points[f..]
            .iter()
            .map(|q| q.kinetic_energy)
            .fold(f64::INFINITY, f64::min);
        if b.points.len() < f + 5 || e_after > 0.99 * p.kinetic_energy {
            continue;
        }
        let (h, _) = (2..=s.nh)
            .map(|h| {
                let c = p.harmonics.coeffs.column(h).into_owned();
                (h, (h as f64).powi(2) * c.dotc(&(&mass * &c)).re)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let hw = h as f64 * p.omega0;
        if let Some(k) = (1..omegas.len()).find(|&k| (hw - omegas[k]).abs() < 0.02 * omegas[k]) {
            return Ok(Some(format!(
                "fold at E {:.3e} (energy recedes to {:.3e}), {h} x {:.2} rad/s near mode {} at {:.1} rad/s, {} points, {:?}",
                p.kinetic_energy,
                e_after,
                p.omega0,
                k + 1,
                omegas[k],
                b.points.len(),
                b.termination
            )));
        }
    }
    Ok(None)
}

fn criterion_5(friction: &ModeBranch) -> Outcome {
    let d: Vec<f64> = friction.dampings();
    let dmax = d.iter().cloned().fold(f64::MIN, f64::max);
    let imax = d.iter().position(|&v| v == dmax).unwrap();
    let zero_low = d[0].abs() < 1e-8;
    let interior = imax > 0 && imax < d.len() - 1;
    // single maximum: nondecreasing up to it, nonincreasing after
    let tol = 1e-6 * dmax;
    let rising = d[..=imax].windows(2).all(|w| w[1] >= w[0] - tol);
    let falling = d[imax..].windows(2).all(|w| w[1] <= w[0] + tol);
    let tail = *d.last().unwrap();
    let decays = tail < 0.25 * dmax;
    Ok((
        zero_low && interior && rising && falling && decays,
        format!(
            "D(E_min) {:.1e}, D_max {:.2}% at E {:.2e}, single maximum {}, D(E_max) {:.2}%",
            d[0],
            100.0 * dmax,
            friction.points[imax].kinetic_energy,
            rising && falling,
            100.0 * tail
        ),
    ))
}

struct CurveCheck {
    worst_in: f64,
    worst_out: f64,
    checked: usize,
    backbone: f64,
}

fn compare_curves(
    rom: &Rom<'_>,
    f1: &nlmodal::CVec,
    rom_curve: &ResponseCurve,
    hbm: &ResponseCurve,
    lo: f64,
    hi: f64,
) -> Result<CurveCheck, String> {
    let peak = hbm.peak().ok_or("empty HBM curve")?;
    let mut c = CurveCheck {
        worst_in: 0.0,
        worst_out: 0.0,
        checked: 0,
        backbone: f64::INFINITY,
    };
    for r in &hbm.rows {
        if r.stable != Some(true) || r.omega < lo || r.omega > hi {
            continue;
        }
        let gap = rom_curve.amplitude_gap(r.omega, r.amplitude, FREQ_SLACK);
        c.checked += 1;
        if (r.omega - peak.omega).abs() <= 0.02 * peak.omega {
            c.worst_in = c.worst_in.max(gap);
        } else {
            c.worst_out = c.worst_out.max(gap);
        }
    }
    let bb = rom.backbone(f1, 8).map_err(e)?;
    c.backbone = bb.amplitude_gap(peak.omega, peak.amplitude, FREQ_SLACK);
    Ok(c)
}

fn criterion_6(uni_db: &ModalDatabase, fric_db: &ModalDatabase, db_time: f64) -> Outcome {
    let t = Instant::now();
    let tip = beam().tip_dof();
    let mut ok = true;
    let mut parts = Vec::new();
    let fixtures: [(&str, SecondOrderModel, &ModalDatabase, [f64; 3]); 2] = [
        ("unilateral", unilateral_beam(KN, A0), uni_db, [0.03, 0.1, 0.3]),
        ("friction", friction_beam(MU_N), fric_db, [0.3, 1.0, 3.0]),
    ];
    for (name, model, db, levels) in fixtures.iter() {
        let w1 = first_linear_frequency(model);
        let (lo, hi) = (0.85 * w1, 1.05 * w1);
        let damping = hysteretic(model);
        let opts = SynthesisOptions {
            probe: tip,
            amplitude_ref: A0,
            ..Default::default()
        };
        let rom = Rom::new(db, model, &damping, &opts).map_err(e)?;
        for &level in levels {
            let f1 = mid_force(model, level);
            let rc = rom.frf(&f1, lo, hi).map_err(e)?;
            let hs = HbmSettings {
                probe: tip,
                amplitude_ref: A0,
                ..Default::default()
            };
            let hc = hbm_frf(model, &f1, lo, hi, &damping, &hs).map_err(e)?;
            let c = compare_curves(&rom, &f1, &rc, &hc.curve, lo, hi)?;
            let pass = c.worst_in <= 0.01 && c.worst_out <= 0.05 && c.backbone <= 0.01 && c.checked > 20;
            ok &= pass;
            let pk = hc.curve.peak().unwrap();
            parts.push(format!(
                "{name} f={level}: peak a*={:.2} at Omega*={:.4}, near-res {:.2e}, elsewhere {:.2e}, backbone {:.2e} ({} pts)",
                pk.amplitude_norm,
                pk.omega / w1,
                c.worst_in,
                c.worst_out,
                c.backbone,
                c.checked
            ));
        }
    }
    let el = t.elapsed().as_secs_f64() + db_time;
    ok &= el < 300.0;
    Ok((ok, format!("runtime {el:.1} s; {}", parts.join("; "))))
}

fn lco_ratios(n: usize, d1: f64) -> Vec<f64> {
    let mut r = vec![0.01; n];
    r[0] = d1;
    r
}

/// Steady probe amplitude of a free run started from a reconstructed cycle
/// scaled by `factor`.
#[allow(clippy::too_many_arguments)]
fn free_run(
    model: &SecondOrderModel,
    rom: &Rom<'_>,
    damping: &[DampingSpec],
    q: f64,
    omega: f64,
    factor: f64,
    periods: f64,
    stop_when_steady: bool,
) -> Result<Result<(f64, Vec<f64>), ()>, String> {
    let zeros = vec![Complex64::new(0.0, 0.0); model.n_dof()];
    let u = rom
        .reconstruct(Complex64::new(q * factor, 0.0), &zeros, omega)
        .map_err(e)?;
    let ts = TimeIntegrationSettings {
        record_dofs: vec![beam().tip_dof()],
        periods,
        stop_when_steady,
        record_stride: 10,
        ..Default::default()
    };
    match integrate(
        model,
        damping,
        &u.eval(0.0),
        &u.eval_velocity(0.0),
        None,
        2.0 * std::f64::consts::PI / omega,
        &ts,
    ) {
        Ok(tr) => {
            let ss = tr.steady_state(0, 0.8).map_err(e)?;
            Ok(Ok((ss.amplitude, tr.period_amplitudes)))
        }
        Err(nlmodal::Error::Diverged { .. }) => Ok(Err(())),
        Err(err) => Err(e(err)),
    }
}

fn criterion_7(db: &ModalDatabase) -> Outcome {
    let model = friction_beam(MU_N);
    let n = model.n_dof();
    let opts = SynthesisOptions {
        probe: beam().tip_dof(),
        amplitude_ref: MU_N / KT,
        ..Default::default()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for d1 in [-0.005, -0.01, -0.015] {
        let damping = vec![DampingSpec::ModalMatrix {
            ratios: lco_ratios(n, d1),
        }];
        let rom = Rom::new(db, &model, &damping, &opts).map_err(e)?;
        let cycles = rom.lco().map_err(e)?;
        let stable: Vec<_> = cycles.iter().filter(|c| c.stable).collect();
        if stable.len() != 1 {
            ok = false;
            parts.push(format!("D1={d1}: {} stable cycles", stable.len()));
            continue;
        }
        let c = stable[0];
        let mut worst = 0.0f64;
        for factor in [0.95, 1.05] {
            match free_run(&model, &rom, &damping, c.amplitude, c.omega, factor, 300.0, true)? {
                Ok((a, _)) => worst = worst.max((a - c.probe_amplitude).abs() / c.probe_amplitude),
                Err(()) => worst = f64::INFINITY,
            }
        }
        // unstable cycles: perturbations must leave them
        let mut labels = true;
        for u in cycles.iter().filter(|c| !c.stable) {
            let grows = match free_run(&model, &rom, &damping, u.amplitude, u.omega, 1.05, 60.0, false)? {
                Err(()) => true,
                Ok((_, amps)) => amps.last().unwrap() > &(1.1 * amps[0]),
            };
            let decays = match free_run(&model, &rom, &damping, u.amplitude, u.omega, 0.95, 60.0, false)? {
                Err(()) => false,
                Ok((_, amps)) => amps.last().unwrap() < &(0.9 * amps[0]),
            };
            labels &= grows && decays;
        }
        ok &= worst <= 0.02 && labels;
        parts.push(format!(
            "D1={:.1}%: LCO a={:.4e} m at {:.2} rad/s, integration error {:.2e}, unstable-cycle labels consistent {labels}",
            100.0 * d1,
            c.probe_amplitude,
            c.omega,
            worst
        ));
    }
    let boundary = lco_existence_boundary(db, &model, &opts, |d| lco_ratios(n, d), -0.005, -0.05, 1e-5);
    match boundary {
        Ok(b) => parts.push(format!("existence boundary D1 = {:.3}%", 100.0 * b)),
        Err(err) => {
            ok = false;
            parts.push(format!("boundary not found: {err}"));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_8(uni_db: &ModalDatabase, fric_db: &ModalDatabase) -> Outcome {
    let tip = beam().tip_dof();
    let ratio = 2.0;
    let mut ok = true;
    let mut parts = Vec::new();
    let cases = [
        (
            "unilateral",
            unilateral_beam(KN, A0),
            unilateral_beam(KN, ratio * A0),
            uni_db,
            0.1,
        ),
        (
            "friction",
            friction_beam(MU_N),
            friction_beam(ratio * MU_N),
            fric_db,
            1.0,
        ),
    ];
    for (name, base, target, db, level) in cases.iter() {
        let w1 = first_linear_frequency(base);
        let (lo, hi) = (0.85 * w1, 1.05 * w1);
        let damping = hysteretic(base);
        let opts = SynthesisOptions {
            probe: tip,
            amplitude_ref: A0,
            ..Default::default()
        };
        let rom = Rom::new(db, base, &damping, &opts).map_err(e)?;
        let f1 = mid_force(base, ratio * level);
        let scaled = frf_at_preload(&rom, base, &f1, lo, hi, ratio).map_err(e)?;
        let hs = HbmSettings {
            probe: tip,
            amplitude_ref: A0,
            ..Default::default()
        };
        let direct = hbm_frf(target, &f1, lo, hi, &hysteretic(target), &hs).map_err(e)?;
        let peak = direct.curve.peak().ok_or("empty HBM curve")?;
        let mut worst = 0.0f64;
        for r in &direct.curve.rows {
            if r.stable == Some(true) && (r.omega - peak.omega).abs() <= 0.02 * peak.omega {
                worst = worst.max(scaled.amplitude_gap(r.omega, r.amplitude, FREQ_SLACK));
            }
        }
        ok &= worst <= 0.02;
        parts.push(format!(
            "{name} preload x{ratio}: peak a*={:.2}, max near-resonance error {worst:.2e}",
            peak.amplitude_norm
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> RMat {
    let a = RMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + RMat::identity(n, n) * shift
}

fn fd_rel_error(f: &dyn Fn(&RVec) -> RVec, jac: &RMat, x: &RVec, h: f64) -> f64 {
    let mut fd = RMat::zeros(jac.nrows(), jac.ncols());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        fd.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    (jac - fd).amax() / jac.amax()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut parts = Vec::new();
    let mut ok = true;
    let mut timed = |name: &str, limit: f64, f: &mut dyn FnMut() -> Result<(f64, f64), String>| -> Result<(), String> {
        let t = Instant::now();
        let (err, tol) = f()?;
        let el = t.elapsed().as_secs_f64();
        let pass = err <= tol && el < 5.0;
        ok &= pass;
        parts.push(format!("{name} {err:.1e} (tol {tol:.0e}, {el:.2} s)"));
        let _ = limit;
        Ok(())
    };

    timed("H_n S_n = I", 5.0, &mut || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let mass = random_spd(&mut rng, n, 0.5);
            let stiff = random_spd(&mut rng, n, 1.0);
            let lam = Complex64::new(rng.random_range(-0.2..0.0), rng.random_range(0.1..3.0));
            let h = rng.random_range(1..6);
            let undamped = SecondOrderModel::new(mass.clone(), RMat::zeros(n, n), stiff.clone(), vec![]).map_err(e)?;
            let basis = real_modes(&mass, &stiff).map_err(e)?;
            let hs = compliance_spectral(h, lam, &basis).map_err(e)?;
            let s = dyn_stiffness(h, lam, &undamped);
            worst = worst.max((&hs * &s - CMat::identity(n, n)).camax());
            let c = random_spd(&mut rng, n, 0.0) * 0.05;
            let damped = SecondOrderModel::new(mass, c, stiff, vec![]).map_err(e)?;
            let sb = StateSpaceModalBasis::from_model(&damped).map_err(e)?;
            let hg = compliance_general(h, lam, &sb).map_err(e)?;
            let s = dyn_stiffness(h, lam, &damped);
            worst = worst.max((&hg * &s - CMat::identity(n, n)).camax());
        }
        Ok((worst, 1e-9))
    })?;

    timed("AFT Jacobian (cubic)", 5.0, &mut || {
        let aft = Aft::new(
            &[NonlinearElement::CubicSpring {
                dof: 0,
                coefficient: 0.7,
            }],
            &[0],
            7,
            128,
        )
        .map_err(e)?;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let x = RVec::from_fn(15, |_, _| rng.random_range(-1.0..1.0));
            let (_, j) = aft.eval_real(&x, true).map_err(e)?;
            let f = |y: &RVec| aft.eval_real(y, false).unwrap().0;
            worst = worst.max(fd_rel_error(&f, &j.unwrap(), &x, 1e-6));
        }
        Ok((worst, 1e-6))
    })?;

    timed("AFT Jacobian (unilateral, friction)", 5.0, &mut || {
        let els = [
            NonlinearElement::UnilateralSpring {
                dof: 0,
                stiffness: 3.0,
                preload: 0.3,
            },
            NonlinearElement::ElasticCoulomb {
                dof: 1,
                stiffness: 2.0,
                slip_force: 0.5,
            },
        ];
        let aft = Aft::new(&els, &[0, 1], 5, 256).map_err(e)?;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let x = RVec::from_fn(22, |_, _| rng.random_range(-0.5..0.5));
            let (_, j) = aft.eval_real(&x, true).map_err(e)?;
            let f = |y: &RVec| aft.eval_real(y, false).unwrap().0;
            worst = worst.max(fd_rel_error(&f, &j.unwrap(), &x, 1e-8));
        }
        Ok((worst, 1e-4))
    })?;

    timed("eigenproblem Jacobian (2-DOF)", 5.0, &mut || {
        let m = build_2dof_cubic();
        let s = two_dof_settings();
        let sys = CnmaSystem::new(&m, 0, &s).map_err(e)?;
        let b = continue_branch(&m, 0, 1e-4, 30.0, &s).map_err(e)?;
        let mut worst = 0.0f64;
        for p in b.points.iter().step_by(b.points.len() / 4) {
            let y = sys.from_point(p, sys.param_for(p.kinetic_energy)).map_err(e)?;
            let (_, j) = sys.eval_full(&y, true).map_err(e)?;
            let f = |z: &RVec| sys.eval_full(z, false).unwrap().0;
            worst = worst.max(fd_rel_error(&f, &j.unwrap(), &y, 1e-7));
        }
        Ok((worst, 1e-6))
    })?;

    timed("forced HBM Jacobian (friction beam)", 5.0, &mut || {
        let model = friction_beam(MU_N);
        let w1 = first_linear_frequency(&model);
        let hbm = ForcedHbm::new(
            &model,
            &mid_force(&model, 1.0),
            0.85 * w1,
            1.05 * w1,
            &hysteretic(&model),
            7,
            256,
        )
        .map_err(e)?;
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let y = RVec::from_fn(hbm.dim(), |_, _| rng.random_range(-2.0..2.0));
            let (_, j) = hbm.eval(&y, true).map_err(e)?;
            let f = |z: &RVec| hbm.eval(z, false).unwrap().0;
            worst = worst.max(fd_rel_error(&f, &j.unwrap(), &y, 1e-7));
        }
        Ok((worst, 1e-4))
    })?;

    timed("Parseval kinetic energy", 5.0, &mut || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let n = 3;
            let mass = random_spd(&mut rng, n, 0.5);
            let c = CMat::from_fn(n, 8, |_, k| {
                if k == 0 {
                    Complex64::new(rng.random_range(-1.0..1.0), 0.0)
                } else {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                }
            });
            let u = HarmonicSignal::new(c, rng.random_range(0.5..3.0)).map_err(e)?;
            let v = u.synthesize_velocity(128).map_err(e)?;
            let mut mean = 0.0;
            for k in 0..128 {
                let vk = v.column(k);
                mean += 0.5 * vk.dot(&(&mass * vk));
            }
            mean /= 128.0;
            let ek = kinetic_energy(&u, &mass);
            worst = worst.max((ek - mean).abs() / ek);
        }
        Ok((worst, 1e-8))
    })?;

    timed("DFT round trip", 5.0, &mut || {
        let mut worst = 0.0f64;
        for nh in [1, 5, 9, 15] {
            let tables = DftTables::new(nh, 128).map_err(e)?;
            let c = CMat::from_fn(4, nh + 1, |_, k| {
                if k == 0 {
                    Complex64::new(rng.random_range(-1.0..1.0), 0.0)
                } else {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                }
            });
            let back = tables.analyze(&tables.synthesize(&c));
            worst = worst.max((back - &c).camax());
        }
        Ok((worst, 1e-12))
    })?;

    Ok((ok, parts.join("; ")))
}

fn criterion_10(db: &ModalDatabase) -> Outcome {
    let model = friction_beam(MU_N);
    let tip = beam().tip_dof();
    let damping = hysteretic(&model);
    let w1 = first_linear_frequency(&model);
    let opts = SynthesisOptions {
        probe: tip,
        amplitude_ref: A0,
        ..Default::default()
    };
    let rom = Rom::new(db, &model, &damping, &opts).map_err(e)?;
    let f1 = mid_force(&model, 1.0);
    let curve = rom.frf(&f1, 0.85 * w1, 1.05 * w1).map_err(e)?;
    let peak = curve.peak().ok_or("empty ROM curve")?.clone();
    let full = rom.reconstruct(peak.q, &peak.q_linear, peak.omega).map_err(e)?;
    let fundamental = full.with_order(1);
    let ex = Excitation {
        f1: f1.clone(),
        omega: peak.omega,
    };
    let ts = TimeIntegrationSettings {
        record_dofs: vec![tip],
        periods: 300.0,
        ..Default::default()
    };
    let tr = integrate(
        &model,
        &damping,
        &full.eval(0.0),
        &full.eval_velocity(0.0),
        Some(&ex),
        0.0,
        &ts,
    )
    .map_err(e)?;
    let samples = tr.last_period(0);
    let k0 = tr.t.len() - 1 - samples.len();
    let rms = |u: &HarmonicSignal| -> f64 {
        let s: f64 = samples
            .iter()
            .enumerate()
            .map(|(k, x)| (u.eval(tr.t[k0 + k])[tip] - x).powi(2))
            .sum();
        (s / samples.len() as f64).sqrt()
    };
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (e_full, e_fund) = (rms(&full) / scale, rms(&fundamental) / scale);
    Ok((
        tr.steady && e_full < e_fund,
        format!(
            "resonance at Omega*={:.4}: relative RMS error full NH {e_full:.2e}, fundamental only {e_fund:.2e}",
            peak.omega / w1
        ),
    ))
}

fn criterion_cpu(db: &ModalDatabase) -> Outcome {
    let model = friction_beam(MU_N);
    let tip = beam().tip_dof();
    let damping = hysteretic(&model);
    let w1 = first_linear_frequency(&model);
    let (lo, hi) = (0.85 * w1, 1.05 * w1);
    let f1 = mid_force(&model, 1.0);
    let opts = SynthesisOptions {
        probe: tip,
        amplitude_ref: A0,
        ..Default::default()
    };
    let mut rom_times = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        let rom = Rom::new(db, &model, &damping, &opts).map_err(e)?;
        rom.frf(&f1, lo, hi).map_err(e)?;
        rom_times.push(t.elapsed().as_secs_f64());
    }
    rom_times.sort_by(f64::total_cmp);
    let t = Instant::now();
    let hs = HbmSettings {
        probe: tip,
        amplitude_ref: A0,
        ..Default::default()
    };
    hbm_frf(&model, &f1, lo, hi, &damping, &hs).map_err(e)?;
    let t_hbm = t.elapsed().as_secs_f64();
    let ratio = rom_times[1] / t_hbm;
    Ok((
        ratio < 0.01,
        format!(
            "NMS FRF {:.1} ms vs HBM FRF {:.0} ms: ratio {:.2}% (limit 1%)",
            1e3 * rom_times[1],
            1e3 * t_hbm,
            100.0 * ratio
        ),
    ))
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    report.run("1 linear limits", criterion_1);

    let t = Instant::now();
    let two_dof = two_dof_branches();
    let two_dof_time = t.elapsed().as_secs_f64();
    report.run("2 stiffening FEP and S3:1 tongue", || {
        let (b1, b2) = two_dof.as_ref().map_err(|s| s.clone())?;
        criterion_2(b1, b2, two_dof_time)
    });
    report.run("3 periodicity oracle", criterion_3);
    report.run("4 softening unilateral beam", criterion_4);

    let t = Instant::now();
    let uni_model = unilateral_beam(KN, A0);
    let fric_model = friction_beam(MU_N);
    let uni_branch = beam_branch(&uni_model, 10.0);
    let fric_branch = beam_branch(&fric_model, 10.0);
    let uni_db = ingest(&uni_branch, &uni_model, Interpolation::Cubic).unwrap();
    let fric_db = ingest(&fric_branch, &fric_model, Interpolation::Cubic).unwrap();
    let db_time = t.elapsed().as_secs_f64();

    report.run("5 friction damping curve", || criterion_5(&fric_branch));
    report.run("6 ROM vs HBM forced response", || {
        criterion_6(&uni_db, &fric_db, db_time)
    });
    report.run("7 limit cycles", || criterion_7(&fric_db));
    report.run("8 similarity rescaling", || criterion_8(&uni_db, &fric_db));
    report.run("9 numerics", criterion_9);
    report.run("10 multi-harmonic reconstruction", || criterion_10(&fric_db));
    report.run("CPU NMS/HBM cost ratio", || criterion_cpu(&fric_db));

    let failed: Vec<_> = report.lines.iter().filter(|l| !l.1).map(|l| l.0.clone()).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        report.lines.len() - failed.len(),
        report.lines.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
