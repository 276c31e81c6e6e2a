use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "name = \"small\"\n\
[mesh]\ncells_x = 4\ncells_y = 4\ncells_z = 5\n\
[solver]\ntime_step = 1e8\ntotal_time = 1e9\n\
[output]\nsnapshot_times = [5e8]\n";

fn geoloop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoloop"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(geoloop(&[], tmp.path()).status.code(), Some(2));
    assert_eq!(geoloop(&["frobnicate"], tmp.path()).status.code(), Some(2));
    assert_eq!(geoloop(&["run", "missing.toml"], tmp.path()).status.code(), Some(2));
    fs::write(tmp.path().join("bad.toml"), "[fluid]\nmass_flow_rte = 3.0\n").unwrap();
    let o = geoloop(&["run", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mass_flow_rte"));
}

#[test]
fn run_writes_artifacts_and_post_is_read_only() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.toml"), SMALL).unwrap();
    let o = geoloop(&["run", "small.toml", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join(stdout(&o).trim());
    for f in ["scenario.toml", "series.csv", "mst.csv", "profile.csv", "plot.py", "provenance.json", "snapshots/final.vtk"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_dir(dir.join("snapshots")).unwrap().count(), 2);

    let rows = csv_rows(&dir.join("series.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[10][0].parse::<f64>().unwrap(), 1e9);

    let prov: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["completed"], true);
    assert_eq!(prov["steps"], 10);

    let before = snapshot(&dir);
    let p = geoloop(&["post", dir.to_str().unwrap()], tmp.path());
    assert_eq!(p.status.code(), Some(0));
    assert!(stdout(&p).contains("peak_theta_K"));
    assert_eq!(before, snapshot(&dir));

    // a rerun reproduces the series byte for byte
    let again = geoloop(&["run", "small.toml", "--out", "again"], tmp.path());
    let dir2 = tmp.path().join(stdout(&again).trim());
    assert_eq!(fs::read(dir.join("series.csv")).unwrap(), fs::read(dir2.join("series.csv")).unwrap());
}

#[test]
fn sweep_summary_matches_run_series() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("base.toml"), SMALL).unwrap();
    fs::write(
        tmp.path().join("sweep.toml"),
        "base = \"base.toml\"\noutput_root = \"sw\"\n\
         [[axes]]\nkey = \"fluid.mass_flow_rate\"\nvalues = [20.0, 5.0]\n\
         [[axes]]\nkey = \"layout.kind\"\nvalues = [\"u\", \"comb\"]\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_geoloop"))
        .args(["sweep", "sweep.toml"])
        .env("GEOLOOP_WORKERS", "2")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let root = tmp.path().join("sw");
    let text = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "layout,mdot_kg_s,avg_power_W,peak_theta_K,breakdown_time_s");
    let rows = csv_rows(&root.join("summary.csv"));
    let keys: Vec<(String, f64)> = rows.iter().map(|r| (r[0].clone(), r[1].parse().unwrap())).collect();
    assert_eq!(
        keys,
        vec![("comb".into(), 5.0), ("u".into(), 5.0), ("comb".into(), 20.0), ("u".into(), 20.0)]
    );

    let run_dirs: Vec<PathBuf> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(run_dirs.len(), 4);
    for row in &rows {
        let mdot: f64 = row[1].parse().unwrap();
        let dir = run_dirs
            .iter()
            .find(|d| {
                let s = fs::read_to_string(d.join("scenario.toml")).unwrap();
                let t: toml::Table = s.parse().unwrap();
                t["layout"]["kind"].as_str() == Some(row[0].as_str())
                    && t["fluid"]["mass_flow_rate"].as_float() == Some(mdot)
            })
            .expect("run directory for summary row");
        let series: Vec<Vec<f64>> = csv_rows(&dir.join("series.csv"))
            .iter()
            .map(|r| r.iter().map(|v| v.parse().unwrap()).collect())
            .collect();
        let peak = series.iter().map(|r| r[1]).fold(f64::NEG_INFINITY, f64::max);
        let span = series.last().unwrap()[0] - series[0][0];
        let avg = series.windows(2).map(|w| 0.5 * (w[0][3] + w[1][3]) * (w[1][0] - w[0][0])).sum::<f64>() / span;
        let got_peak: f64 = row[3].parse().unwrap();
        let got_avg: f64 = row[2].parse().unwrap();
        assert!((got_peak - peak).abs() <= 1e-9 * peak, "{got_peak} vs {peak}");
        assert!((got_avg - avg).abs() <= 1e-9 * avg.abs().max(1.0), "{got_avg} vs {avg}");
    }
}

#[test]
fn verify_subcommand_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = geoloop(&["verify"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("[FAIL]"));
}
