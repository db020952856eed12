//! `nlmodal` command-line runner.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for solver
//! failures (a `diagnostics.json` is written to the output directory).

mod check;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlmodal::cnma::continue_branch;
use nlmodal::continuation::Termination;
use nlmodal::io::{read_database, write_branch, write_curve, write_database, write_lco, write_trajectory};
use nlmodal::linmodal::LinearModalBasis;
use nlmodal::model::SecondOrderModel;
use nlmodal::synthesis::{ingest, ModalDatabase, ResponseCurve, Rom, SynthesisOptions};
use nlmodal::validate::{hbm_frf, integrate, Excitation};
use nlmodal::{CVec, Complex64, RVec};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::{check_levels, check_range, resolve, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "nlmodal", version, about = "Nonlinear modal analysis and synthesis runner")]
struct Cli {
    #[command(subcommand)]
    task: Task,
}

#[derive(Subcommand)]
enum Task {
    /// Continue a nonlinear mode over energy; writes branch and database.
    Nma(Common),
    /// Forced response of the reduced model.
    Frf(Common),
    /// Backbone curve of the reduced model.
    Backbone(Common),
    /// Self-excited limit cycles of the reduced model.
    Lco(Common),
    /// Reference forced response by harmonic balance.
    Hbm(Common),
    /// Direct time integration.
    Integrate(Common),
    /// Invariant suites on the configured model.
    Check(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Overrides the number of harmonics.
    #[arg(long)]
    nh: Option<usize>,
    /// Overrides the number of time samples per period.
    #[arg(long)]
    nt: Option<usize>,
    /// Overrides the Newton tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

enum Failure {
    Config(String),
    Solver { error: String, detail: Value },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn solver(e: nlmodal::Error) -> Failure {
    Failure::Solver {
        error: e.to_string(),
        detail: json!({ "kind": format!("{e:?}") }),
    }
}

fn config_err(e: nlmodal::Error) -> Failure {
    Failure::Config(e.to_string())
}

fn sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Collects outputs and writes the manifest.
struct Run {
    task: &'static str,
    out_dir: PathBuf,
    config_path: PathBuf,
    config_hash: String,
    inputs: Vec<Value>,
    outputs: Vec<Value>,
    settings: Value,
    normalization: Value,
    notes: Vec<String>,
}

impl Run {
    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), Failure> {
        let path = self.out_dir.join(name);
        fs::write(&path, &bytes).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(json!({ "file": name, "sha256": sha256(&bytes) }));
        Ok(())
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        self.inputs
            .push(json!({ "path": path.display().to_string(), "sha256": sha256(&bytes) }));
        Ok(bytes)
    }

    fn manifest(&self) -> Value {
        json!({
            "task": self.task,
            "config": { "path": self.config_path.display().to_string(), "sha256": self.config_hash },
            "inputs": self.inputs,
            "settings": self.settings,
            "normalization": self.normalization,
            "versions": {
                "nlmodal": nlmodal::VERSION,
                "nlmodal-cli": env!("CARGO_PKG_VERSION"),
            },
            "outputs": self.outputs,
            "notes": self.notes,
        })
    }

    fn finish(&self) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        fs::write(self.out_dir.join("manifest.json"), text + "\n")
            .map_err(|e| Failure::Config(format!("cannot write manifest: {e}")))
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> nlmodal::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(solver)?;
    Ok(buf)
}

fn task_name(t: &Task) -> (&'static str, &Common) {
    match t {
        Task::Nma(c) => ("nma", c),
        Task::Frf(c) => ("frf", c),
        Task::Backbone(c) => ("backbone", c),
        Task::Lco(c) => ("lco", c),
        Task::Hbm(c) => ("hbm", c),
        Task::Integrate(c) => ("integrate", c),
        Task::Check(c) => ("check", c),
    }
}

fn missing(task: &str) -> Failure {
    Failure::Config(format!("config has no \"{task}\" section"))
}

fn apply_step_tol(step: &mut nlmodal::continuation::StepControl, tol: Option<f64>) {
    if let Some(t) = tol {
        step.tol = t;
    }
}

fn load_database(
    run: &mut Run,
    base: &Path,
    file: &Path,
    interp: nlmodal::synthesis::Interpolation,
    model: &SecondOrderModel,
) -> Result<ModalDatabase, Failure> {
    let path = resolve(base, file)?;
    let bytes = run.input(&path)?;
    let db = read_database(bytes.as_slice(), interp).map_err(config_err)?;
    if db.n_dof() != model.n_dof() {
        return Err(Failure::Config(format!(
            "database has {} DOFs, model has {}",
            db.n_dof(),
            model.n_dof()
        )));
    }
    Ok(db)
}

fn synthesis_options(mut o: SynthesisOptions, c: &Common) -> SynthesisOptions {
    if let Some(nt) = c.nt {
        o.nt = nt;
    }
    apply_step_tol(&mut o.step, c.tol);
    o
}

/// Runs `job` for every level on scoped threads; results keep level order.
fn per_level<T: Send>(levels: &[f64], job: impl Fn(f64) -> nlmodal::Result<T> + Sync) -> Vec<nlmodal::Result<T>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = levels
            .iter()
            .map(|&l| {
                let job = &job;
                s.spawn(move || job(l))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn curve_files(run: &mut Run, stem: &str, curves: Vec<ResponseCurve>, omega_ref: f64) -> Result<(), Failure> {
    let single = curves.len() == 1;
    for (k, c) in curves.into_iter().enumerate() {
        let name = if single {
            format!("{stem}.csv")
        } else {
            format!("{stem}_level{k}.csv")
        };
        let bytes = csv_bytes(|b| write_curve(b, &c, omega_ref))?;
        run.write(&name, bytes)?;
    }
    Ok(())
}

fn execute(task: &Task) -> Result<(), Failure> {
    let (name, c) = task_name(task);
    let text =
        fs::read(&c.config).map_err(|e| Failure::Config(format!("cannot read config {}: {e}", c.config.display())))?;
    let cfg = RunConfig::parse(std::str::from_utf8(&text).map_err(|e| Failure::Config(format!("config: {e}")))?)?;
    let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let model = cfg.model.build().map_err(config_err)?;
    let omega_ref = LinearModalBasis::from_model(&model).map_err(config_err)?.omegas[0];
    fs::create_dir_all(&c.out_dir)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", c.out_dir.display())))?;
    let mut run = Run {
        task: name,
        out_dir: c.out_dir.clone(),
        config_path: c.config.clone(),
        config_hash: sha256(&text),
        inputs: Vec::new(),
        outputs: Vec::new(),
        settings: Value::Null,
        normalization: json!({ "omega_ref": omega_ref }),
        notes: Vec::new(),
    };
    let result = dispatch(task, c, &cfg, &base, &model, omega_ref, &mut run);
    if let Err(Failure::Solver { error, detail }) = &result {
        let diag = json!({
            "task": name,
            "error": error,
            "detail": detail,
            "settings": run.settings,
            "outputs": run.outputs,
        });
        let _ = fs::write(
            c.out_dir.join("diagnostics.json"),
            serde_json::to_string_pretty(&diag).expect("diagnostics serialize") + "\n",
        );
    }
    result?;
    run.finish()
}

fn dispatch(
    task: &Task,
    c: &Common,
    cfg: &RunConfig,
    base: &Path,
    model: &SecondOrderModel,
    omega_ref: f64,
    run: &mut Run,
) -> Result<(), Failure> {
    let n = model.n_dof();
    match task {
        Task::Nma(_) => {
            let t = cfg.nma.clone().ok_or_else(|| missing("nma"))?;
            let mut s = t.settings.clone();
            if let Some(nh) = c.nh {
                s.nh = nh;
            }
            if let Some(nt) = c.nt {
                s.nt = nt;
            }
            apply_step_tol(&mut s.step, c.tol);
            s.validate().map_err(config_err)?;
            check_range(t.target_min, t.target_max, "target")?;
            if t.mode >= n {
                return Err(Failure::Config(format!("mode {} out of range", t.mode)));
            }
            run.settings = json!({ "mode": t.mode, "target_min": t.target_min, "target_max": t.target_max,
                "settings": s, "interpolation": t.interpolation });
            let b = continue_branch(model, t.mode, t.target_min, t.target_max, &s).map_err(solver)?;
            let bytes = csv_bytes(|w| write_branch(w, &b, omega_ref))?;
            if b.termination != Termination::Completed {
                run.write("branch_partial.csv", bytes)?;
                return Err(Failure::Solver {
                    error: format!("branch did not reach the target range: {:?}", b.termination),
                    detail: json!({
                        "points": b.points.len(),
                        "last_energy": b.points.last().map(|p| p.kinetic_energy),
                        "turning_points": b.turning_points,
                    }),
                });
            }
            run.write("branch.csv", bytes)?;
            match ingest(&b, model, t.interpolation) {
                Ok(db) => {
                    let bytes = csv_bytes(|w| write_database(w, &db))?;
                    run.write("database.csv", bytes)?;
                }
                Err(e) => run.notes.push(format!("database not written: {e}")),
            }
        }
        Task::Frf(_) => {
            let t = cfg.frf.clone().ok_or_else(|| missing("frf"))?;
            check_range(t.omega_min, t.omega_max, "frequency")?;
            check_levels(&t.levels)?;
            let f1 = cfg.require_force(n)?;
            let opts = synthesis_options(t.options.clone(), c);
            let db = load_database(run, base, &t.database, t.interpolation, model)?;
            Rom::new(&db, model, &cfg.damping, &opts).map_err(config_err)?;
            run.settings = json!({ "omega_min": t.omega_min, "omega_max": t.omega_max, "levels": t.levels,
                "options": opts, "interpolation": t.interpolation, "damping": cfg.damping });
            run.normalization["amplitude_ref"] = json!(opts.amplitude_ref);
            let curves = per_level(&t.levels, |l| {
                let rom = Rom::new(&db, model, &cfg.damping, &opts)?;
                rom.frf(&scaled(&f1, l), t.omega_min, t.omega_max)
            });
            let curves = curves
                .into_iter()
                .collect::<nlmodal::Result<Vec<_>>>()
                .map_err(solver)?;
            curve_files(run, "frf", curves, omega_ref)?;
        }
        Task::Backbone(_) => {
            let t = cfg.backbone.clone().ok_or_else(|| missing("backbone"))?;
            let f1 = cfg.require_force(n)?;
            if let Some(l) = &t.levels {
                check_levels(l)?;
            }
            if t.per_interval == 0 {
                return Err(Failure::Config("per_interval must be positive".into()));
            }
            let opts = synthesis_options(t.options.clone(), c);
            let db = load_database(run, base, &t.database, t.interpolation, model)?;
            let rom = Rom::new(&db, model, &cfg.damping, &opts).map_err(config_err)?;
            run.settings = json!({ "per_interval": t.per_interval, "levels": t.levels, "options": opts,
                "interpolation": t.interpolation, "damping": cfg.damping });
            run.normalization["amplitude_ref"] = json!(opts.amplitude_ref);
            let curve = match &t.levels {
                Some(l) => rom.backbone_at_levels(&f1, l),
                None => rom.backbone(&f1, t.per_interval),
            }
            .map_err(solver)?;
            curve_files(run, "backbone", vec![curve], omega_ref)?;
        }
        Task::Lco(_) => {
            let t = cfg.lco.clone().ok_or_else(|| missing("lco"))?;
            let opts = synthesis_options(t.options.clone(), c);
            let db = load_database(run, base, &t.database, t.interpolation, model)?;
            let rom = Rom::new(&db, model, &cfg.damping, &opts).map_err(config_err)?;
            run.settings = json!({ "options": opts, "interpolation": t.interpolation, "damping": cfg.damping });
            run.normalization["amplitude_ref"] = json!(opts.amplitude_ref);
            let cycles = rom.lco().map_err(solver)?;
            let bytes = csv_bytes(|w| write_lco(w, &cycles, omega_ref, opts.amplitude_ref))?;
            run.write("lco.csv", bytes)?;
        }
        Task::Hbm(_) => {
            let t = cfg.hbm.clone().ok_or_else(|| missing("hbm"))?;
            check_range(t.omega_min, t.omega_max, "frequency")?;
            check_levels(&t.levels)?;
            let f1 = cfg.require_force(n)?;
            let mut s = t.settings.clone();
            if let Some(nh) = c.nh {
                s.nh = nh;
            }
            if let Some(nt) = c.nt {
                s.nt = nt;
            }
            apply_step_tol(&mut s.step, c.tol);
            if s.nh == 0 || s.nt < 4 * s.nh + 1 || s.probe >= n {
                return Err(Failure::Config(format!(
                    "invalid harmonic balance settings (nh {}, nt {}, probe {})",
                    s.nh, s.nt, s.probe
                )));
            }
            s.step.validate().map_err(config_err)?;
            run.settings = json!({ "omega_min": t.omega_min, "omega_max": t.omega_max, "levels": t.levels,
                "settings": s, "damping": cfg.damping });
            run.normalization["amplitude_ref"] = json!(s.amplitude_ref);
            let curves = per_level(&t.levels, |l| {
                hbm_frf(model, &scaled(&f1, l), t.omega_min, t.omega_max, &cfg.damping, &s).map(|h| h.curve)
            });
            let curves = curves
                .into_iter()
                .collect::<nlmodal::Result<Vec<_>>>()
                .map_err(solver)?;
            curve_files(run, "hbm", curves, omega_ref)?;
        }
        Task::Integrate(_) => {
            let t = cfg.integrate.clone().ok_or_else(|| missing("integrate"))?;
            let s = t.settings.clone();
            s.validate().map_err(config_err)?;
            let state = |v: &Option<Vec<f64>>, what: &str| -> Result<RVec, Failure> {
                match v {
                    None => Ok(RVec::zeros(n)),
                    Some(x) if x.len() == n => Ok(RVec::from_column_slice(x)),
                    Some(_) => Err(Failure::Config(format!("{what} must have {n} entries"))),
                }
            };
            let (u0, v0) = (state(&t.u0, "u0")?, state(&t.v0, "v0")?);
            let excitation = match t.omega {
                Some(w) if w > 0.0 => Some(Excitation {
                    f1: cfg.require_force(n)?,
                    omega: w,
                }),
                Some(_) => return Err(Failure::Config("excitation frequency must be positive".into())),
                None => None,
            };
            let period = t.period.unwrap_or(2.0 * std::f64::consts::PI / omega_ref);
            if s.record_dofs.iter().any(|&d| d >= n) {
                return Err(Failure::Config("recorded DOF out of range".into()));
            }
            run.settings = json!({ "omega": t.omega, "period": period, "settings": s, "damping": cfg.damping });
            let tr = integrate(model, &cfg.damping, &u0, &v0, excitation.as_ref(), period, &s).map_err(solver)?;
            let bytes = csv_bytes(|w| write_trajectory(w, &tr))?;
            run.write("trajectory.csv", bytes)?;
            let mut summary = String::from("dof,amplitude,mean,frequency,cycles,steady\n");
            for (i, d) in tr.dofs.iter().enumerate() {
                let ss = tr.steady_state(i, s.discard_fraction).map_err(solver)?;
                summary.push_str(&format!(
                    "{d},{:?},{:?},{:?},{},{}\n",
                    ss.amplitude, ss.mean, ss.frequency, ss.cycles, tr.steady as u8
                ));
            }
            run.write("steady_state.csv", summary.into_bytes())?;
        }
        Task::Check(_) => {
            let t = cfg.check.clone().unwrap_or_default();
            let nh = c.nh.unwrap_or(5);
            let nt = c.nt.unwrap_or(256);
            if t.cases == 0 || nh == 0 || nt < 4 * nh + 1 {
                return Err(Failure::Config("invalid check settings".into()));
            }
            run.settings = json!({ "cases": t.cases, "amplitude": t.amplitude, "nh": nh, "nt": nt, "seed": cfg.seed });
            let results = check::run(model, cfg.seed, t.cases, t.amplitude, nh, nt).map_err(solver)?;
            let mut table = String::from("suite,cases,max_error,tolerance,pass\n");
            for r in &results {
                table.push_str(&format!(
                    "{},{},{:?},{:?},{}\n",
                    r.name,
                    r.cases,
                    r.max_error,
                    r.tolerance,
                    r.pass() as u8
                ));
            }
            run.write("check.csv", table.into_bytes())?;
            let failed: Vec<&str> = results.iter().filter(|r| !r.pass()).map(|r| r.name).collect();
            if !failed.is_empty() {
                return Err(Failure::Solver {
                    error: format!("invariant suites failed: {}", failed.join(", ")),
                    detail: json!({ "failed": failed }),
                });
            }
        }
    }
    Ok(())
}

fn scaled(f: &CVec, level: f64) -> CVec {
    f * Complex64::new(level, 0.0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.task) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver { error, .. }) => {
            eprintln!("solver failure: {error}");
            ExitCode::from(3)
        }
    }
}
