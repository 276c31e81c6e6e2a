//! On-disk artifacts: time-series CSV, legacy VTK snapshots, surface and
//! profile tables, provenance.

use crate::mesh::StructuredMesh;
use crate::postprocess::{line_profile_normalized, TimeSeries};
use crate::scenario::Scenario;
use crate::solver::transient::{MstRecord, RunOutput};
use crate::solver::ThermalState;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

pub const SERIES_HEADER: &str = "t_s,theta_outlet_K,cop,power_W";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to write an empty series")]
    EmptySeries,
    #[error("state has {got} values, mesh has {expected} nodes")]
    Dimension { expected: usize, got: usize },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Postprocess(#[from] crate::postprocess::PostprocessError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Fixed decimal notation with 15 significant digits.
pub fn format_fixed(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { format!("{:.14}", 0.0) } else { format!("{v}") };
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (14 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, OutputError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::write(path, text).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

pub fn timeseries_csv(series: &TimeSeries) -> Result<String, OutputError> {
    if series.records.is_empty() {
        return Err(OutputError::EmptySeries);
    }
    let mut s = String::with_capacity(80 * (series.records.len() + 1));
    s.push_str(SERIES_HEADER);
    s.push('\n');
    for r in &series.records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            format_fixed(r.time),
            format_fixed(r.outlet_temperature),
            format_fixed(r.cop),
            format_fixed(r.power)
        );
    }
    Ok(s)
}

pub fn write_timeseries_csv(series: &TimeSeries, path: &Path) -> Result<PathBuf, OutputError> {
    write_text(path, &timeseries_csv(series)?)
}

/// Rows `(t, theta_outlet, cop, power)` of a series file.
pub fn read_timeseries_csv(path: &Path) -> Result<Vec<[f64; 4]>, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, message: String| OutputError::Malformed {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(SERIES_HEADER) => {}
        other => return Err(malformed(1, format!("unexpected header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| malformed(i + 2, e.to_string()))?;
            <[f64; 4]>::try_from(v).map_err(|v| malformed(i + 2, format!("{} fields", v.len())))
        })
        .collect()
}

pub fn field_snapshot_vtk(state: &ThermalState, mesh: &StructuredMesh) -> Result<String, OutputError> {
    let n = mesh.n_nodes();
    if state.temperatures.len() != n {
        return Err(OutputError::Dimension {
            expected: n,
            got: state.temperatures.len(),
        });
    }
    let [nx, ny, nz] = mesh.dims();
    let mut s = String::with_capacity(64 * n);
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "temperature at t = {} s", format_fixed(state.time));
    s.push_str("ASCII\nDATASET STRUCTURED_GRID\n");
    let _ = writeln!(s, "DIMENSIONS {nx} {ny} {nz}");
    let _ = writeln!(s, "POINTS {n} double");
    for node in 0..n {
        let p = mesh.node_point(node);
        let _ = writeln!(s, "{} {} {}", format_fixed(p[0]), format_fixed(p[1]), format_fixed(p[2]));
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    s.push_str("SCALARS temperature_K double 1\nLOOKUP_TABLE default\n");
    for &t in &state.temperatures {
        s.push_str(&format_fixed(t));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_field_snapshot(
    state: &ThermalState,
    mesh: &StructuredMesh,
    path: &Path,
) -> Result<PathBuf, OutputError> {
    write_text(path, &field_snapshot_vtk(state, mesh)?)
}

pub fn mst_csv(edges: &[f64], records: &[MstRecord]) -> String {
    let mut s = String::from("t_s");
    for a in edges {
        let _ = write!(s, ",mst_a{}_K", a);
    }
    s.push('\n');
    for r in records {
        s.push_str(&format_fixed(r.time));
        for v in &r.values {
            s.push(',');
            s.push_str(&format_fixed(*v));
        }
        s.push('\n');
    }
    s
}

pub fn profile_csv(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("normalized_length,theta_K\n");
    for (x, v) in samples {
        let _ = writeln!(s, "{},{}", format_fixed(*x), format_fixed(*v));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub completed: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub directory: PathBuf,
    pub series: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub provenance: Provenance,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn run_directory(root: &Path, scenario: &Scenario) -> PathBuf {
    root.join(scenario.id())
}

const PLOT_STUB: &str = r#"# Plot the data files of this run. Requires pandas and matplotlib.
import pandas as pd
import matplotlib.pyplot as plt

series = pd.read_csv("series.csv")
fig, ax = plt.subplots(1, 2, figsize=(10, 4))
ax[0].plot(series["t_s"] / 3.15576e7, series["theta_outlet_K"])
ax[0].set_xlabel("time [years]")
ax[0].set_ylabel("outlet temperature [K]")
ax[1].plot(series["t_s"] / 3.15576e7, series["power_W"] / 1e6)
ax[1].set_xlabel("time [years]")
ax[1].set_ylabel("power [MW]")

mst = pd.read_csv("mst.csv")
fig2, ax2 = plt.subplots()
for col in mst.columns[1:]:
    ax2.plot(mst["t_s"] / 3.15576e7, mst[col] - mst[col].iloc[0], label=col)
ax2.set_xlabel("time [years]")
ax2.set_ylabel("mean surface temperature rise [K]")
ax2.legend()

profile = pd.read_csv("profile.csv")
fig3, ax3 = plt.subplots()
ax3.plot(profile["normalized_length"], profile["theta_K"])
ax3.set_xlabel("normalized length")
ax3.set_ylabel("temperature [K]")
plt.show()
"#;

fn write_common(
    dir: &Path,
    scenario: &Scenario,
    series: &TimeSeries,
    mst: &[MstRecord],
) -> Result<PathBuf, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_text(&dir.join("scenario.toml"), &scenario.to_document())?;
    let series_path = write_timeseries_csv(series, &dir.join("series.csv"))?;
    write_text(&dir.join("mst.csv"), &mst_csv(&scenario.output.mst_edges, mst))?;
    Ok(series_path)
}

fn write_provenance(dir: &Path, p: &Provenance) -> Result<(), OutputError> {
    let json = serde_json::to_string_pretty(p).expect("provenance serialises");
    write_text(&dir.join("provenance.json"), &(json + "\n"))?;
    Ok(())
}

/// Writes everything a completed run produces into `<root>/<scenario id>/`.
pub fn write_run(root: &Path, scenario: &Scenario, run: &RunOutput, started: u64) -> Result<RunArtifacts, OutputError> {
    let dir = run_directory(root, scenario);
    let series = write_common(&dir, scenario, &run.series, &run.mst)?;
    let mut snapshots = Vec::new();
    for state in &run.snapshots {
        let name = format!("snapshots/t{:012.0}.vtk", state.time);
        snapshots.push(write_field_snapshot(state, &run.model.mesh, &dir.join(name))?);
    }
    snapshots.push(write_field_snapshot(&run.final_state, &run.model.mesh, &dir.join("snapshots/final.vtk"))?);
    let profile = line_profile_normalized(
        &run.final_state.temperatures,
        &run.model.mesh,
        run.model.network.outlet_point()[1],
        scenario.layout.depth,
        scenario.output.profile_depth_fraction,
        scenario.alpha(),
        scenario.layout.spacing,
    )?;
    write_text(&dir.join("profile.csv"), &profile_csv(&profile))?;
    write_text(&dir.join("plot.py"), PLOT_STUB)?;
    let provenance = Provenance {
        scenario_id: scenario.id(),
        config_hash: scenario.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_s: started,
        finished_unix_s: unix_now(),
        completed: true,
        steps: run.series.records.len() - 1,
    };
    write_provenance(&dir, &provenance)?;
    Ok(RunArtifacts {
        directory: dir,
        series,
        snapshots,
        provenance,
    })
}

/// Flushes the records of a failed run.
pub fn write_partial(
    root: &Path,
    scenario: &Scenario,
    series: &TimeSeries,
    mst: &[MstRecord],
    started: u64,
) -> Result<PathBuf, OutputError> {
    let dir = run_directory(root, scenario);
    write_common(&dir, scenario, series, mst)?;
    write_provenance(
        &dir,
        &Provenance {
            scenario_id: scenario.id(),
            config_hash: scenario.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: started,
            finished_unix_s: unix_now(),
            completed: false,
            steps: series.records.len().saturating_sub(1),
        },
    )?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_format() {
        assert_eq!(format_fixed(303.15), "303.150000000000");
        assert_eq!(format_fixed(14_663_506.5), "14663506.5000000");
        assert_eq!(format_fixed(0.0), "0.00000000000000");
        assert_eq!(format_fixed(2e9), "2000000000.00000");
        assert_eq!(format_fixed(-0.5), "-0.500000000000000");
    }

    fn two_records() -> TimeSeries {
        let mut s = TimeSeries::new("x", 30.0, 4183.0, 303.15, 303.15);
        s.push(0.0, 303.15);
        s.push(1e6, 420.0);
        s
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = two_records();
        write_timeseries_csv(&s, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(!text.contains('\r'));
        assert!(text.starts_with("t_s,theta_outlet_K,cop,power_W\n"));
        let rows = read_timeseries_csv(&p).unwrap();
        for (row, r) in rows.iter().zip(&s.records) {
            for (a, b) in row.iter().zip([r.time, r.outlet_temperature, r.cop, r.power]) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
            }
        }
        let empty = TimeSeries::new("x", 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(write_timeseries_csv(&empty, &p), Err(OutputError::EmptySeries)));
    }

    #[test]
    fn vtk_layout() {
        let mesh = StructuredMesh::from_axes(vec![0.0, 1.0], vec![0.0, 2.0], vec![0.0, 10000.0]).unwrap();
        let theta: Vec<f64> = (0..8).map(|n| 303.15 + 0.03 * mesh.node_point(n)[2]).collect();
        let text = field_snapshot_vtk(&ThermalState::new(theta, 0.0), &mesh).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET STRUCTURED_GRID");
        assert_eq!(lines[4], "DIMENSIONS 2 2 2");
        assert_eq!(lines[5], "POINTS 8 double");
        assert_eq!(lines[6], "0.00000000000000 0.00000000000000 0.00000000000000");
        assert_eq!(lines[7], "1.00000000000000 0.00000000000000 0.00000000000000");
        assert_eq!(lines[14], "POINT_DATA 8");
        assert_eq!(lines[15], "SCALARS temperature_K double 1");
        let scalars = &lines[17..];
        assert_eq!(scalars.len(), 8);
        assert_eq!(scalars[0], "303.150000000000");
        assert_eq!(scalars[7], "603.150000000000");
        let bad = ThermalState::new(vec![1.0; 3], 0.0);
        assert!(matches!(field_snapshot_vtk(&bad, &mesh), Err(OutputError::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn fixed_format_round_trips(v in -1e12f64..1e12) {
            let back: f64 = format_fixed(v).parse().unwrap();
            prop_assert!((back - v).abs() <= 1e-13 * v.abs().max(1e-300) * 10.0 || v == 0.0);
        }
    }
}
