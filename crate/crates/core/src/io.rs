//! Model files and tabular exports.
//!
//! Models are JSON documents tagged by `builder`:
//!
//! ```json
//! {"builder": "2dof_cubic"}
//! {"builder": "clamped_beam", "beam": {"n_elements": 10},
//!  "tip": {"type": "elastic_coulomb", "dof": 18, "stiffness": 1e3, "slip_force": 1.0}}
//! {"builder": "inline", "mass": [[1, 0], [0, 1]], "stiffness": [[2, -1], [-1, 2]],
//!  "elements": [{"type": "cubic_spring", "dof": 0, "coefficient": 0.5}]}
//! ```
//!
//! Every table is CSV with a header row; floats are written in shortest
//! round-trip form so that each reader reproduces the written values
//! exactly. Harmonic columns are named `u{dof}_{n}_re` / `u{dof}_{n}_im`
//! (branches) or `psi{dof}_{n}_re` / `psi{dof}_{n}_im` (databases).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::aft::HarmonicSignal;
use crate::cnma::{ModalPoint, ModeBranch};
use crate::model::{build_2dof_cubic, build_clamped_beam, BeamParams, NonlinearElement, SecondOrderModel};
use crate::synthesis::{Interpolation, LimitCycle, ModalDatabase, ResponseCurve, ResponseRow};
use crate::validate::Trajectory;
use crate::{CMat, Complex64, Error, RMat, Result};

/// Declarative model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Two unit masses, unit springs and a cubic spring on DOF 0.
    #[serde(rename = "2dof_cubic")]
    TwoDofCubic {
        /// Overrides the cubic coefficient (default 0.5).
        #[serde(default)]
        gamma: Option<f64>,
    },
    /// Finite-element cantilever with an optional free-end element.
    ClampedBeam {
        #[serde(default)]
        beam: BeamParams,
        #[serde(default)]
        tip: Option<NonlinearElement>,
    },
    /// Explicit matrices. `stiffness` is the structural stiffness; element
    /// linearizations are added unless `stiffness_includes_elements`.
    Inline {
        mass: Vec<Vec<f64>>,
        stiffness: Vec<Vec<f64>>,
        #[serde(default)]
        damping: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        elements: Vec<NonlinearElement>,
        #[serde(default)]
        stiffness_includes_elements: bool,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<SecondOrderModel> {
        match self {
            ModelSpec::TwoDofCubic { gamma } => {
                let m = build_2dof_cubic();
                match gamma {
                    None => Ok(m),
                    Some(g) => SecondOrderModel::new(
                        m.mass.clone(),
                        m.damping.clone(),
                        m.stiffness.clone(),
                        vec![NonlinearElement::CubicSpring {
                            dof: 0,
                            coefficient: *g,
                        }],
                    ),
                }
            }
            ModelSpec::ClampedBeam { beam, tip } => build_clamped_beam(beam, tip.clone()),
            ModelSpec::Inline {
                mass,
                stiffness,
                damping,
                elements,
                stiffness_includes_elements,
            } => {
                let m = matrix_from_rows(mass, "mass")?;
                let n = m.nrows();
                let k = matrix_from_rows(stiffness, "stiffness")?;
                let c = match damping {
                    Some(rows) => matrix_from_rows(rows, "damping")?,
                    None => RMat::zeros(n, n),
                };
                if *stiffness_includes_elements {
                    SecondOrderModel::new(m, c, k, elements.clone())
                } else {
                    SecondOrderModel::with_linearized_elements(m, c, k, elements.clone())
                }
            }
        }
    }
}

/// Square matrix from nested rows.
pub fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<RMat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!(
            "{name} matrix must be square and non-empty"
        )));
    }
    Ok(RMat::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn read_model_json(text: &str) -> Result<ModelSpec> {
    Ok(serde_json::from_str(text)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, col: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("column {col}: cannot parse {s:?} as a number")))
}

fn parse_usize(s: &str, col: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("column {col}: cannot parse {s:?} as an index")))
}

/// Table read into a header and string rows.
struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    }

    fn f64_at(&self, row: usize, name: &str) -> Result<f64> {
        let c = self.col(name)?;
        parse_f64(&self.rows[row][c], name)
    }

    /// Highest `(dof, harmonic)` of the `{prefix}{dof}_{n}_re` columns.
    fn harmonic_layout(&self, prefix: &str) -> Result<(usize, usize)> {
        let mut dofs = 0;
        let mut nh = 0;
        let mut found = false;
        for h in &self.header {
            let Some(rest) = h.strip_prefix(prefix).and_then(|r| r.strip_suffix("_re")) else {
                continue;
            };
            let Some((d, n)) = rest.split_once('_') else { continue };
            let (Ok(d), Ok(n)) = (d.parse::<usize>(), n.parse::<usize>()) else {
                continue;
            };
            dofs = dofs.max(d + 1);
            nh = nh.max(n);
            found = true;
        }
        if !found {
            return Err(Error::Parse(format!("no {prefix}* harmonic columns")));
        }
        Ok((dofs, nh))
    }

    fn harmonics_at(&self, row: usize, prefix: &str, dofs: usize, nh: usize) -> Result<CMat> {
        let mut c = CMat::zeros(dofs, nh + 1);
        for d in 0..dofs {
            for n in 0..=nh {
                let re = self.f64_at(row, &format!("{prefix}{d}_{n}_re"))?;
                let im = self.f64_at(row, &format!("{prefix}{d}_{n}_im"))?;
                c[(d, n)] = Complex64::new(re, im);
            }
        }
        Ok(c)
    }
}

fn harmonic_header(prefix: &str, dofs: usize, nh: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(2 * dofs * (nh + 1));
    for d in 0..dofs {
        for n in 0..=nh {
            h.push(format!("{prefix}{d}_{n}_re"));
            h.push(format!("{prefix}{d}_{n}_im"));
        }
    }
    h
}

fn push_harmonics(rec: &mut Vec<String>, c: &CMat) {
    for d in 0..c.nrows() {
        for n in 0..c.ncols() {
            rec.push(fmt(c[(d, n)].re));
            rec.push(fmt(c[(d, n)].im));
        }
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

/// Writes a mode branch. `omega_ref` normalizes `omega0_norm`.
pub fn write_branch<W: Write>(w: W, branch: &ModeBranch, omega_ref: f64) -> Result<()> {
    let first = branch
        .points
        .first()
        .ok_or_else(|| Error::InvalidInput("empty branch".into()))?;
    let (dofs, nh) = (first.harmonics.n_dof(), first.harmonics.nh());
    let mut out = writer(w);
    let mut header: Vec<String> = [
        "point",
        "mode",
        "param",
        "energy",
        "omega0",
        "omega0_norm",
        "damping",
        "lambda_re",
        "lambda_im",
        "master_dof",
        "master_amp",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(harmonic_header("u", dofs, nh));
    out.write_record(&header).map_err(csv_err)?;
    for (i, p) in branch.points.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            branch.mode.to_string(),
            fmt(branch.params.get(i).copied().unwrap_or(f64::NAN)),
            fmt(p.kinetic_energy),
            fmt(p.omega0),
            fmt(p.omega0 / omega_ref),
            fmt(p.damping),
            fmt(p.lambda.re),
            fmt(p.lambda.im),
            p.master_dof.to_string(),
            fmt(p.master_amp),
        ];
        push_harmonics(&mut rec, &p.harmonics.coeffs);
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Branch table read back as its mode index and points.
#[derive(Debug, Clone)]
pub struct BranchTable {
    pub mode: usize,
    pub params: Vec<f64>,
    pub points: Vec<ModalPoint>,
}

pub fn read_branch<R: Read>(r: R) -> Result<BranchTable> {
    let t = Table::read(r)?;
    if t.rows.is_empty() {
        return Err(Error::Parse("branch table has no rows".into()));
    }
    let (dofs, nh) = t.harmonic_layout("u")?;
    let (c_mode, c_master) = (t.col("mode")?, t.col("master_dof")?);
    let mode = parse_usize(&t.rows[0][c_mode], "mode")?;
    let mut points = Vec::with_capacity(t.rows.len());
    let mut params = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        let omega0 = t.f64_at(i, "omega0")?;
        points.push(ModalPoint {
            lambda: Complex64::new(t.f64_at(i, "lambda_re")?, t.f64_at(i, "lambda_im")?),
            omega0,
            damping: t.f64_at(i, "damping")?,
            harmonics: HarmonicSignal::new(t.harmonics_at(i, "u", dofs, nh)?, omega0)?,
            kinetic_energy: t.f64_at(i, "energy")?,
            master_dof: parse_usize(&t.rows[i][c_master], "master_dof")?,
            master_amp: t.f64_at(i, "master_amp")?,
        });
        params.push(t.f64_at(i, "param")?);
    }
    Ok(BranchTable { mode, params, points })
}

/// Writes the samples of a modal database.
pub fn write_database<W: Write>(w: W, db: &ModalDatabase) -> Result<()> {
    let (dofs, nh) = (db.n_dof(), db.nh());
    let mut out = writer(w);
    let mut header: Vec<String> = ["mode", "amplitude", "omega", "damping"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(harmonic_header("psi", dofs, nh));
    out.write_record(&header).map_err(csv_err)?;
    for i in 0..db.len() {
        let mut rec = vec![
            db.mode.to_string(),
            fmt(db.amplitudes[i]),
            fmt(db.omegas[i]),
            fmt(db.dampings[i]),
        ];
        push_harmonics(&mut rec, &db.shapes[i]);
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_database<R: Read>(r: R, interpolation: Interpolation) -> Result<ModalDatabase> {
    let t = Table::read(r)?;
    if t.rows.is_empty() {
        return Err(Error::Parse("database table has no rows".into()));
    }
    let (dofs, nh) = t.harmonic_layout("psi")?;
    let mode = parse_usize(&t.rows[0][t.col("mode")?], "mode")?;
    let n = t.rows.len();
    let mut amps = Vec::with_capacity(n);
    let mut omegas = Vec::with_capacity(n);
    let mut damps = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        amps.push(t.f64_at(i, "amplitude")?);
        omegas.push(t.f64_at(i, "omega")?);
        damps.push(t.f64_at(i, "damping")?);
        shapes.push(t.harmonics_at(i, "psi", dofs, nh)?);
    }
    ModalDatabase::from_samples(mode, amps, omegas, damps, shapes, interpolation)
}

/// Writes a response curve; `omega_ref` normalizes frequencies.
pub fn write_curve<W: Write>(w: W, curve: &ResponseCurve, omega_ref: f64) -> Result<()> {
    let n_lin = curve.rows.iter().map(|r| r.q_linear.len()).max().unwrap_or(0);
    let mut out = writer(w);
    let mut header: Vec<String> = [
        "param",
        "omega",
        "omega_norm",
        "q_re",
        "q_im",
        "amplitude",
        "amplitude_norm",
        "stable",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 0..n_lin {
        header.push(format!("ql{k}_re"));
        header.push(format!("ql{k}_im"));
    }
    out.write_record(&header).map_err(csv_err)?;
    for r in &curve.rows {
        let mut rec = vec![
            fmt(r.param),
            fmt(r.omega),
            fmt(r.omega / omega_ref),
            fmt(r.q.re),
            fmt(r.q.im),
            fmt(r.amplitude),
            fmt(r.amplitude_norm),
            match r.stable {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            },
        ];
        for k in 0..n_lin {
            let v = r.q_linear.get(k).copied().unwrap_or_default();
            rec.push(fmt(v.re));
            rec.push(fmt(v.im));
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a curve written by [`write_curve`]. The probe DOF and amplitude
/// reference are not part of the table and are passed in.
pub fn read_curve<R: Read>(r: R, probe: usize, amplitude_ref: f64) -> Result<ResponseCurve> {
    let t = Table::read(r)?;
    let n_lin = t
        .header
        .iter()
        .filter(|h| h.starts_with("ql") && h.ends_with("_re"))
        .count();
    let c_stable = t.col("stable")?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        let stable = match t.rows[i][c_stable].trim() {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            s => return Err(Error::Parse(format!("column stable: unexpected {s:?}"))),
        };
        let mut q_linear = Vec::with_capacity(n_lin);
        for k in 0..n_lin {
            q_linear.push(Complex64::new(
                t.f64_at(i, &format!("ql{k}_re"))?,
                t.f64_at(i, &format!("ql{k}_im"))?,
            ));
        }
        rows.push(ResponseRow {
            param: t.f64_at(i, "param")?,
            omega: t.f64_at(i, "omega")?,
            q: Complex64::new(t.f64_at(i, "q_re")?, t.f64_at(i, "q_im")?),
            q_linear,
            amplitude: t.f64_at(i, "amplitude")?,
            amplitude_norm: t.f64_at(i, "amplitude_norm")?,
            stable,
        });
    }
    Ok(ResponseCurve {
        rows,
        probe,
        amplitude_ref,
    })
}

/// Writes limit cycles; `omega_ref` and `amplitude_ref` add normalized
/// columns.
pub fn write_lco<W: Write>(w: W, cycles: &[LimitCycle], omega_ref: f64, amplitude_ref: f64) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "amplitude",
        "omega",
        "omega_norm",
        "probe_amplitude",
        "amplitude_norm",
        "slope",
        "stable",
    ])
    .map_err(csv_err)?;
    for c in cycles {
        out.write_record([
            fmt(c.amplitude),
            fmt(c.omega),
            fmt(c.omega / omega_ref),
            fmt(c.probe_amplitude),
            fmt(c.probe_amplitude / amplitude_ref),
            fmt(c.slope),
            if c.stable { "1".into() } else { "0".into() },
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_lco<R: Read>(r: R) -> Result<Vec<LimitCycle>> {
    let t = Table::read(r)?;
    let c_stable = t.col("stable")?;
    (0..t.rows.len())
        .map(|i| {
            Ok(LimitCycle {
                amplitude: t.f64_at(i, "amplitude")?,
                omega: t.f64_at(i, "omega")?,
                probe_amplitude: t.f64_at(i, "probe_amplitude")?,
                slope: t.f64_at(i, "slope")?,
                stable: match t.rows[i][c_stable].trim() {
                    "1" => true,
                    "0" => false,
                    s => return Err(Error::Parse(format!("column stable: unexpected {s:?}"))),
                },
            })
        })
        .collect()
}

/// Writes `t`, then `u{dof}` and `v{dof}` for every recorded DOF.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(traj.dofs.iter().map(|d| format!("u{d}")));
    header.extend(traj.dofs.iter().map(|d| format!("v{d}")));
    out.write_record(&header).map_err(csv_err)?;
    for k in 0..traj.t.len() {
        let mut rec = vec![fmt(traj.t[k])];
        rec.extend(traj.u[k].iter().map(|v| fmt(*v)));
        rec.extend(traj.v[k].iter().map(|v| fmt(*v)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Samples of a trajectory table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub dofs: Vec<usize>,
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub fn read_trajectory<R: Read>(r: R) -> Result<TrajectoryTable> {
    let t = Table::read(r)?;
    let dofs: Vec<usize> = t
        .header
        .iter()
        .filter_map(|h| h.strip_prefix('u'))
        .map(|d| parse_usize(d, "header"))
        .collect::<Result<_>>()?;
    let mut out = TrajectoryTable {
        dofs: dofs.clone(),
        t: Vec::with_capacity(t.rows.len()),
        u: Vec::with_capacity(t.rows.len()),
        v: Vec::with_capacity(t.rows.len()),
    };
    for i in 0..t.rows.len() {
        out.t.push(t.f64_at(i, "t")?);
        out.u.push(
            dofs.iter()
                .map(|d| t.f64_at(i, &format!("u{d}")))
                .collect::<Result<_>>()?,
        );
        out.v.push(
            dofs.iter()
                .map(|d| t.f64_at(i, &format!("v{d}")))
                .collect::<Result<_>>()?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NonlinearElement;

    #[test]
    fn builders_parse_and_build() {
        let m = read_model_json(r#"{"builder": "2dof_cubic"}"#)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(m.n_dof(), 2);
        let m = read_model_json(r#"{"builder": "2dof_cubic", "gamma": 2.0}"#)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(
            m.elements[0],
            NonlinearElement::CubicSpring {
                dof: 0,
                coefficient: 2.0
            }
        );
        let beam = r#"{"builder": "clamped_beam", "beam": {"n_elements": 4},
            "tip": {"type": "unilateral_spring", "dof": 6, "stiffness": 2000.0, "preload": 1e-4}}"#;
        let m = read_model_json(beam).unwrap().build().unwrap();
        assert_eq!(m.n_dof(), 8);
        assert_eq!(m.nonlinear_dofs(), &[6]);
    }

    #[test]
    fn inline_model_adds_linearization() {
        let spec = r#"{"builder": "inline", "mass": [[1, 0], [0, 1]], "stiffness": [[2, -1], [-1, 2]],
            "elements": [{"type": "elastic_coulomb", "dof": 1, "stiffness": 3.0, "slip_force": 1.0}]}"#;
        let m = read_model_json(spec).unwrap().build().unwrap();
        assert_eq!(m.stiffness[(1, 1)], 5.0);
    }

    #[test]
    fn unknown_fields_and_builders_are_rejected() {
        assert!(read_model_json(r#"{"builder": "2dof_cubic", "gama": 1.0}"#).is_err());
        assert!(read_model_json(r#"{"builder": "plate"}"#).is_err());
        let ragged = r#"{"builder": "inline", "mass": [[1, 0], [0]], "stiffness": [[1, 0], [0, 1]]}"#;
        assert!(read_model_json(ragged).unwrap().build().is_err());
    }

    #[test]
    fn curve_round_trip_is_exact() {
        let rows = vec![
            ResponseRow {
                param: 0.1,
                omega: 1.0 / 3.0,
                q: Complex64::new(1e-300, -2.5),
                q_linear: vec![Complex64::new(0.1, 0.2), Complex64::new(-1e-17, 3.0)],
                amplitude: std::f64::consts::PI,
                amplitude_norm: 2.0 * std::f64::consts::PI,
                stable: Some(false),
            },
            ResponseRow {
                param: 0.2,
                omega: 0.7,
                q: Complex64::new(1.0, 0.0),
                q_linear: vec![Complex64::default(); 2],
                amplitude: 1.0,
                amplitude_norm: 2.0,
                stable: None,
            },
        ];
        let curve = ResponseCurve {
            rows,
            probe: 3,
            amplitude_ref: 0.5,
        };
        let mut buf = Vec::new();
        write_curve(&mut buf, &curve, 2.0).unwrap();
        let back = read_curve(buf.as_slice(), 3, 0.5).unwrap();
        assert_eq!(back.rows, curve.rows);
    }

    #[test]
    fn lco_round_trip_is_exact() {
        let cycles = vec![LimitCycle {
            amplitude: 1.25e-4,
            omega: 418.1,
            probe_amplitude: 1e-3 / 7.0,
            slope: -0.3,
            stable: false,
        }];
        let mut buf = Vec::new();
        write_lco(&mut buf, &cycles, 420.0, 1e-3).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("amplitude,omega,omega_norm"));
        assert_eq!(read_lco(buf.as_slice()).unwrap(), cycles);
    }

    #[test]
    fn malformed_tables_are_reported() {
        assert!(matches!(
            read_lco("amplitude,omega\n1,2\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            read_curve(
                "param,omega,omega_norm,q_re,q_im,amplitude,amplitude_norm,stable\n1,x,1,1,1,1,1,1\n".as_bytes(),
                0,
                1.0
            ),
            Err(Error::Parse(_))
        ));
    }
}
