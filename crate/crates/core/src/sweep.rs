//! Parameter sweeps: Cartesian products over scenario keys, run in
//! parallel, summarised in `summary.csv`.

use crate::output::{format_fixed, write_partial, write_run, unix_now, OutputError};
use crate::postprocess::average_power;
use crate::scenario::{schema_has_key, scenario_from_table, set_key, ConfigError, Scenario};
use crate::solver::run_transient;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use thiserror::Error;
use toml::{Table, Value};

pub const SUMMARY_HEADER: &str = "layout,mdot_kg_s,avg_power_W,peak_theta_K,breakdown_time_s";
pub const WORKERS_ENV: &str = "GEOLOOP_WORKERS";
pub const DEFAULT_MAX_JOBS: usize = 256;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep spec: {0}")]
    Spec(String),
    #[error("sweep expands to {count} scenarios, cap is {cap}")]
    TooLarge { count: usize, cap: usize },
    #[error("axis `{key}`, value {value}: {source}")]
    Scenario {
        key: String,
        value: String,
        #[source]
        source: ConfigError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{failed} of {total} runs failed")]
    RunsFailed { failed: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Table,
    pub axes: Vec<SweepAxis>,
    pub output_root: PathBuf,
    pub max_jobs: usize,
}

fn value_order(a: &Value, b: &Value) -> Ordering {
    let num = |v: &Value| match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    };
    match (num(a), num(b)) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.to_string().cmp(&b.to_string()),
    }
}

impl SweepSpec {
    /// Parses a sweep document. `base` is a scenario file path, resolved
    /// against `dir`.
    pub fn parse(document: &str, dir: &Path) -> Result<Self, SweepError> {
        let doc: Table = document
            .parse()
            .map_err(|e: toml::de::Error| SweepError::Spec(e.to_string()))?;
        for k in doc.keys() {
            if !["base", "axes", "output_root", "max_jobs"].contains(&k.as_str()) {
                return Err(SweepError::Spec(format!("unknown key `{k}`")));
            }
        }
        let base = match doc.get("base") {
            None => Table::new(),
            Some(Value::String(p)) => {
                let path = dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    SweepError::Spec(format!("cannot read base {}: {e}", path.display()))
                })?;
                text.parse::<Table>()
                    .map_err(|e| SweepError::Spec(format!("base {}: {e}", path.display())))?
            }
            Some(_) => return Err(SweepError::Spec("`base` must be a path".into())),
        };
        let output_root = match doc.get("output_root") {
            None => dir.join("runs"),
            Some(Value::String(p)) => dir.join(p),
            Some(_) => return Err(SweepError::Spec("`output_root` must be a path".into())),
        };
        let max_jobs = match doc.get("max_jobs") {
            None => DEFAULT_MAX_JOBS,
            Some(Value::Integer(n)) if *n > 0 => *n as usize,
            Some(_) => return Err(SweepError::Spec("`max_jobs` must be a positive integer".into())),
        };
        let mut axes = Vec::new();
        if let Some(list) = doc.get("axes") {
            let list = list
                .as_array()
                .ok_or_else(|| SweepError::Spec("`axes` must be an array of tables".into()))?;
            for (i, entry) in list.iter().enumerate() {
                let t = entry
                    .as_table()
                    .ok_or_else(|| SweepError::Spec(format!("axes[{i}] must be a table")))?;
                for k in t.keys() {
                    if k != "key" && k != "values" {
                        return Err(SweepError::Spec(format!("unknown key `axes[{i}].{k}`")));
                    }
                }
                let key = t
                    .get("key")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| SweepError::Spec(format!("axes[{i}].key must be a string")))?;
                let values = t
                    .get("values")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| SweepError::Spec(format!("axes[{i}].values must be an array")))?;
                axes.push(SweepAxis {
                    key: key.to_string(),
                    values: values.clone(),
                });
            }
        }
        let spec = Self {
            base,
            axes,
            output_root,
            max_jobs,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SweepError::Spec(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn check(&self) -> Result<(), SweepError> {
        for a in &self.axes {
            if !schema_has_key(&a.key) {
                return Err(SweepError::Config(ConfigError::UnknownKey(a.key.clone())));
            }
            if a.values.is_empty() {
                return Err(SweepError::Spec(format!("axis `{}` has no values", a.key)));
            }
        }
        let count = self.axes.iter().map(|a| a.values.len()).product::<usize>();
        if count > self.max_jobs {
            return Err(SweepError::TooLarge {
                count,
                cap: self.max_jobs,
            });
        }
        Ok(())
    }
}

/// The Cartesian product of the axes in lexicographic order of the axis
/// values (first axis most significant). No axes gives the base alone.
pub fn expand_sweep(spec: &SweepSpec) -> Result<Vec<Scenario>, SweepError> {
    spec.check()?;
    let axes: Vec<Vec<Value>> = spec
        .axes
        .iter()
        .map(|a| {
            let mut v = a.values.clone();
            v.sort_by(value_order);
            v.dedup_by(|x, y| value_order(x, y) == Ordering::Equal);
            v
        })
        .collect();
    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for values in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (0..values.len()).map(move |i| {
                    let mut c = c.clone();
                    c.push(i);
                    c
                })
            })
            .collect();
    }
    combos
        .iter()
        .map(|combo| {
            let mut doc = spec.base.clone();
            for ((axis, values), &i) in spec.axes.iter().zip(&axes).zip(combo) {
                set_key(&mut doc, &axis.key, values[i].clone())?;
            }
            scenario_from_table(&doc).map_err(|source| {
                let (key, value) = spec
                    .axes
                    .iter()
                    .zip(&axes)
                    .zip(combo)
                    .map(|((a, v), &i)| (a.key.clone(), v[i].to_string()))
                    .next_back()
                    .unwrap_or_default();
                SweepError::Scenario { key, value, source }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub layout: String,
    pub mass_flow_rate: f64,
    pub average_power: f64,
    pub peak_theta: f64,
    pub breakdown_time: Option<f64>,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layout,
            format_fixed(r.mass_flow_rate),
            format_fixed(r.average_power),
            format_fixed(r.peak_theta),
            r.breakdown_time.map(format_fixed).unwrap_or_else(|| "none".into())
        ));
    }
    s
}

/// Worker cap from the environment, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every scenario of the sweep and writes `summary.csv` under the
/// output root. Failed runs are flushed, left out of the summary and
/// reported as an error after all jobs finish.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SummaryRow>, SweepError> {
    let scenarios = expand_sweep(spec)?;
    let root = &spec.output_root;
    std::fs::create_dir_all(root).map_err(|e| OutputError::Io {
        path: root.display().to_string(),
        source: e,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SweepError::Spec(e.to_string()))?;
    let results: Vec<Option<SummaryRow>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let started = unix_now();
                match run_transient(s) {
                    Ok(run) => {
                        if let Err(e) = write_run(root, s, &run, started) {
                            log::error!("{}: {e}", s.id());
                            return None;
                        }
                        let (_, peak) = run.series.peak_outlet()?;
                        Some(SummaryRow {
                            layout: s.layout.kind.as_str().to_string(),
                            mass_flow_rate: s.fluid.mass_flow_rate,
                            average_power: average_power(&run.series).unwrap_or(0.0),
                            peak_theta: peak,
                            breakdown_time: run.series.breakdown_time(),
                        })
                    }
                    Err(failure) => {
                        log::error!("{}: {failure}", s.id());
                        if let Some(series) = &failure.series {
                            if let Err(e) = write_partial(root, s, series, &failure.mst, started) {
                                log::error!("{}: {e}", s.id());
                            }
                        }
                        None
                    }
                }
            })
            .collect()
    });
    let total = results.len();
    let rows: Vec<SummaryRow> = results.into_iter().flatten().collect();
    let path = root.join("summary.csv");
    std::fs::write(&path, summary_csv(&rows)).map_err(|e| OutputError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if rows.len() < total {
        return Err(SweepError::RunsFailed {
            failed: total - rows.len(),
            total,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(doc: &str) -> SweepSpec {
        SweepSpec::parse(doc, Path::new(".")).unwrap()
    }

    #[test]
    fn two_by_two_in_lexicographic_order() {
        let s = spec(
            "[[axes]]\nkey = \"fluid.mass_flow_rate\"\nvalues = [30, 10]\n\
             [[axes]]\nkey = \"layout.kind\"\nvalues = [\"u\", \"comb\"]\n",
        );
        let sc = expand_sweep(&s).unwrap();
        let got: Vec<(f64, &str)> = sc
            .iter()
            .map(|s| (s.fluid.mass_flow_rate, s.layout.kind.as_str()))
            .collect();
        assert_eq!(got, vec![(10.0, "comb"), (10.0, "u"), (30.0, "comb"), (30.0, "u")]);
        // comb defaults follow the kind
        assert_eq!(sc[0].layout.depth, 8000.0);
    }

    #[test]
    fn empty_axes_give_base() {
        let sc = expand_sweep(&spec("")).unwrap();
        assert_eq!(sc, vec![Scenario::default_u()]);
    }

    #[test]
    fn cap_and_unknown_keys() {
        let err = SweepSpec::parse(
            "max_jobs = 3\n[[axes]]\nkey = \"fluid.mass_flow_rate\"\nvalues = [1, 2, 3, 4]\n",
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(err, SweepError::TooLarge { count: 4, cap: 3 }));
        let err = SweepSpec::parse("[[axes]]\nkey = \"fluid.speed\"\nvalues = [1]\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("fluid.speed"));
        let err = SweepSpec::parse("[[axes]]\nkey = \"fluid.mass_flow_rate\"\nvalues = [-1]\n", Path::new("."))
            .map(|s| expand_sweep(&s));
        assert!(matches!(err, Ok(Err(SweepError::Scenario { .. }))));
    }

    #[test]
    fn summary_format() {
        let rows = vec![
            SummaryRow {
                layout: "u".into(),
                mass_flow_rate: 30.0,
                average_power: 1.5e6,
                peak_theta: 380.0,
                breakdown_time: Some(3e7),
            },
            SummaryRow {
                layout: "comb".into(),
                mass_flow_rate: 5.0,
                average_power: 1e6,
                peak_theta: 350.0,
                breakdown_time: None,
            },
        ];
        let s = summary_csv(&rows);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert!(lines[1].starts_with("u,30.0000000000000,1500000.00000000,"));
        assert!(lines[2].ends_with(",none"));
    }
}
