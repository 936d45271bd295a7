//! Trajectory CSV (`vpmm-csv-1`) and JSON summaries (`vpmm-json-1`).
//!
//! Floats are written as the shortest decimal that parses back to the same
//! `f64` (positional for moderate magnitudes, scientific otherwise), so
//! parsing a cell returns the identical value and save → load → save
//! reproduces the file byte for byte.
//!
//! Layout: a schema line, a metadata line, a column header, then one row per
//! time node. Row columns are the scalar fields followed by `P_a_ij`,
//! `xi_a_ij` and `phi_k`. The `edi_prefix_residual` column is derived and is
//! recomputed on load.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::RefinementTable;
use crate::discretization::{DeformationField, PlasticField};
use crate::minimizing_movements::{EdiQuadrature, StepRecord, TimeGrid, Trajectory};
use crate::tensor::Mat;
use crate::{Error, Result};

pub const CSV_SCHEMA: &str = "vpmm-csv-1";
pub const JSON_SCHEMA: &str = "vpmm-json-1";

const SCALAR_COLUMNS: [&str; 14] = [
    "step",
    "t",
    "E",
    "psi_inc",
    "psi_star_inc",
    "power_inc",
    "fenchel_gap",
    "edi_prefix_residual",
    "min_det_P",
    "inner_grad_norm",
    "psi_star_end",
    "power_end",
    "comparison_slack",
    "iterations",
];

fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn quadrature_name(q: EdiQuadrature) -> &'static str {
    match q {
        EdiQuadrature::Endpoint => "endpoint",
        EdiQuadrature::Midpoint => "midpoint",
        EdiQuadrature::Gauss3 => "gauss3",
        EdiQuadrature::Gauss5 => "gauss5",
    }
}

fn parse_quadrature(s: &str) -> Option<EdiQuadrature> {
    [EdiQuadrature::Endpoint, EdiQuadrature::Midpoint, EdiQuadrature::Gauss3, EdiQuadrature::Gauss5]
        .into_iter()
        .find(|q| quadrature_name(*q) == s)
}

struct Shape {
    dim: usize,
    nodes: usize,
    phi: usize,
}

impl Shape {
    fn of(traj: &Trajectory) -> Self {
        let first = &traj.records[0];
        Self { dim: first.p.values[0].dim(), nodes: first.p.values.len(), phi: first.phi.dofs.len() }
    }

    fn columns(&self) -> usize {
        SCALAR_COLUMNS.len() + 2 * self.nodes * self.dim * self.dim + self.phi
    }
}

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let shape = Shape::of(traj);
    let mut out = String::new();
    let _ = writeln!(out, "# {CSV_SCHEMA}");
    let _ = writeln!(
        out,
        "# t_final={},n_steps={},quadrature={},config_hash={},n_records={},dim={},n_nodes={},n_phi={}",
        fmt_f64(traj.grid.t_final),
        traj.grid.n_steps,
        quadrature_name(traj.quadrature),
        traj.config_hash,
        traj.records.len(),
        shape.dim,
        shape.nodes,
        shape.phi
    );
    let mut header: Vec<String> = SCALAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    for prefix in ["P", "xi"] {
        for a in 0..shape.nodes {
            for i in 0..shape.dim {
                for j in 0..shape.dim {
                    header.push(format!("{prefix}_{a}_{i}{j}"));
                }
            }
        }
    }
    header.extend((0..shape.phi).map(|k| format!("phi_{k}")));
    out.push_str(&header.join(","));
    out.push('\n');

    let residuals = traj.edi_prefix_residuals();
    for (n, r) in traj.records.iter().enumerate() {
        let mut cells: Vec<String> = vec![
            n.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.energy),
            fmt_f64(r.psi_inc),
            fmt_f64(r.psi_star_inc),
            fmt_f64(r.power_inc),
            fmt_f64(r.fenchel_gap),
            fmt_f64(residuals[n]),
            fmt_f64(r.min_det_p),
            fmt_f64(r.inner_grad_norm),
            fmt_f64(r.psi_star_end),
            fmt_f64(r.power_end),
            fmt_f64(r.comparison_slack),
            r.iterations.to_string(),
        ];
        for m in r.p.values.iter().chain(&r.xi) {
            cells.extend(m.to_vec().into_iter().map(fmt_f64));
        }
        cells.extend(r.phi.dofs.iter().copied().map(fmt_f64));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn meta_value<'a>(meta: &'a str, key: &str) -> Result<&'a str> {
    meta.split(',')
        .find_map(|kv| kv.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
        .ok_or_else(|| Error::Malformed { row: 2, message: format!("missing metadata key {key}") })
}

fn parse_meta<T: std::str::FromStr>(meta: &str, key: &str) -> Result<T> {
    meta_value(meta, key)?
        .parse()
        .map_err(|_| Error::Malformed { row: 2, message: format!("bad value for metadata key {key}") })
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    let schema = lines.next().unwrap_or("").trim_start_matches('#').trim();
    if schema != CSV_SCHEMA {
        return Err(Error::SchemaMismatch { expected: CSV_SCHEMA.into(), found: schema.into() });
    }
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Io("truncated file: missing metadata at row 2".into()))?;
    let grid = TimeGrid::new(parse_meta(meta, "t_final")?, parse_meta(meta, "n_steps")?)?;
    let quadrature = parse_quadrature(meta_value(meta, "quadrature")?)
        .ok_or_else(|| Error::Malformed { row: 2, message: "unknown quadrature".into() })?;
    let config_hash = meta_value(meta, "config_hash")?.to_string();
    let n_records: usize = parse_meta(meta, "n_records")?;
    let shape = Shape { dim: parse_meta(meta, "dim")?, nodes: parse_meta(meta, "n_nodes")?, phi: parse_meta(meta, "n_phi")? };
    let header = lines.next().ok_or_else(|| Error::Io("truncated file: missing column header at row 3".into()))?;
    if header.split(',').count() != shape.columns() || !header.starts_with(&SCALAR_COLUMNS.join(",")) {
        return Err(Error::Malformed { row: 3, message: "column header does not match metadata".into() });
    }

    let dd = shape.dim * shape.dim;
    let mut records = Vec::with_capacity(n_records);
    for (k, line) in lines.enumerate() {
        let row = k + 4;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != shape.columns() {
            return Err(Error::Io(format!(
                "truncated row {row}: expected {} cells, found {}",
                shape.columns(),
                cells.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i].parse().map_err(|_| Error::Malformed { row, message: format!("column {i} is not a number") })
        };
        let int = |i: usize| -> Result<usize> {
            cells[i].parse().map_err(|_| Error::Malformed { row, message: format!("column {i} is not an integer") })
        };
        if int(0)? != records.len() {
            return Err(Error::Malformed { row, message: "step index out of sequence".into() });
        }
        let mats = |offset: usize| -> Result<Vec<Mat>> {
            (0..shape.nodes)
                .map(|a| {
                    let start = offset + a * dd;
                    let v = (start..start + dd).map(num).collect::<Result<Vec<f64>>>()?;
                    Ok(Mat::from_row_slice(&v))
                })
                .collect()
        };
        let base = SCALAR_COLUMNS.len();
        let phi_start = base + 2 * shape.nodes * dd;
        records.push(StepRecord {
            t: num(1)?,
            energy: num(2)?,
            psi_inc: num(3)?,
            psi_star_inc: num(4)?,
            power_inc: num(5)?,
            fenchel_gap: num(6)?,
            min_det_p: num(8)?,
            inner_grad_norm: num(9)?,
            psi_star_end: num(10)?,
            power_end: num(11)?,
            comparison_slack: num(12)?,
            iterations: int(13)?,
            p: PlasticField { values: mats(base)? },
            xi: mats(base + shape.nodes * dd)?,
            phi: DeformationField { dofs: (phi_start..phi_start + shape.phi).map(num).collect::<Result<_>>()? },
        });
    }
    if records.len() != n_records {
        return Err(Error::Io(format!(
            "truncated file: expected {n_records} records, found {} (missing row {})",
            records.len(),
            records.len() + 4
        )));
    }
    if records.is_empty() {
        return Err(Error::Malformed { row: 4, message: "no records".into() });
    }
    Ok(Trajectory { grid, quadrature, config_hash, records })
}

pub fn serialize_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(traj))?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_csv(&std::fs::read_to_string(path)?)
}

/// Run summary written next to the trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub name: String,
    pub config_hash: String,
    pub t_final: f64,
    pub n_steps: usize,
    pub completed_steps: usize,
    pub quadrature: EdiQuadrature,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub dissipation: f64,
    pub work: f64,
    pub max_edi_prefix_residual: f64,
    pub edi_tolerance: f64,
    pub max_relative_fenchel_gap: f64,
    pub min_comparison_slack: f64,
    pub min_det_p: f64,
    pub total_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn new(name: &str, traj: &Trajectory, edi_tolerance: f64, failure: Option<String>) -> Self {
        let recs = &traj.records;
        let last = &recs[traj.last_index()];
        Self {
            schema: JSON_SCHEMA.into(),
            name: name.into(),
            config_hash: traj.config_hash.clone(),
            t_final: traj.grid.t_final,
            n_steps: traj.grid.n_steps,
            completed_steps: traj.last_index(),
            quadrature: traj.quadrature,
            energy_initial: recs[0].energy,
            energy_final: last.energy,
            dissipation: traj.dissipation_sum(),
            work: traj.work_sum(),
            max_edi_prefix_residual: traj.edi_prefix_residuals().into_iter().fold(f64::NEG_INFINITY, f64::max),
            edi_tolerance,
            max_relative_fenchel_gap: recs.iter().map(|r| r.fenchel_gap / (1.0 + r.energy.abs())).fold(0.0, f64::max),
            min_comparison_slack: recs.iter().map(|r| r.comparison_slack).fold(f64::INFINITY, f64::min),
            min_det_p: recs.iter().map(|r| r.min_det_p).fold(f64::INFINITY, f64::min),
            total_iterations: recs.iter().map(|r| r.iterations).sum(),
            failure,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

pub fn refinement_to_csv(table: &RefinementTable) -> String {
    let mut out = format!("# {CSV_SCHEMA} refinement\n");
    let _ = writeln!(out, "# monotone_decrease={}", table.monotone_decrease);
    out.push_str("n_steps,tau,cauchy_difference,max_edi_residual,edb_residual,final_energy\n");
    for l in &table.levels {
        let diff = l.cauchy_difference.map(fmt_f64).unwrap_or_default();
        let cells = [fmt_f64(l.tau), diff, fmt_f64(l.max_edi_residual), fmt_f64(l.edb_residual), fmt_f64(l.final_energy)];
        let _ = writeln!(out, "{},{}", l.n_steps, cells.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn short_run() -> Trajectory {
        let cfg = RunConfig::reference("point_ramp").unwrap().with_overrides(None, Some(4)).unwrap();
        cfg.execute().unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let traj = short_run();
        let text = trajectory_to_csv(&traj);
        let back = trajectory_from_csv(&text).unwrap();
        assert_eq!(back, traj);
        assert_eq!(trajectory_to_csv(&back), text);
    }

    #[test]
    fn special_values_round_trip() {
        let mut traj = short_run();
        traj.records[1].energy = -0.0;
        traj.records[1].psi_inc = f64::MIN_POSITIVE / 3.0;
        traj.records[2].power_inc = 1e300;
        traj.records[2].psi_inc = 5e-324;
        traj.records[3].psi_inc = 0.1 + 0.2;
        let back = trajectory_from_csv(&trajectory_to_csv(&traj)).unwrap();
        assert_eq!(back.records[1].energy.to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.records[1].psi_inc, f64::MIN_POSITIVE / 3.0);
        assert_eq!(back, traj);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let text = trajectory_to_csv(&short_run()).replacen(CSV_SCHEMA, "vpmm-csv-0", 1);
        assert!(matches!(trajectory_from_csv(&text), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn truncation_names_the_row() {
        let text = trajectory_to_csv(&short_run());
        let cut = &text[..text.len() - 40];
        match trajectory_from_csv(cut) {
            Err(Error::Io(msg)) => assert!(msg.contains("row 8"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let lines: Vec<&str> = text.lines().take(6).collect();
        match trajectory_from_csv(&lines.join("\n")) {
            Err(Error::Io(msg)) => assert!(msg.contains("row 7"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_is_malformed() {
        let text = trajectory_to_csv(&short_run());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[5] = lines[5].replacen(',', ",x", 2);
        let joined = lines.join("\n");
        assert!(matches!(trajectory_from_csv(&joined), Err(Error::Malformed { row: 6, .. })));
    }

    #[test]
    fn summary_json_has_schema() {
        let traj = short_run();
        let s = RunSummary::new("point_ramp", &traj, 1e-6, None);
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["schema"], JSON_SCHEMA);
        assert_eq!(v["completed_steps"], 4);
    }
}
