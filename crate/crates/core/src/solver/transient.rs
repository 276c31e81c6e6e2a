//! Fixed-step transient runs of a scenario.

use super::{BdfIntegrator, SolverError, ThermalState};
use crate::model::{ModelError, ThermalModel};
use crate::postprocess::{mean_surface_temperature, PostprocessError, SurfaceRegion, TimeSeries};
use crate::scenario::Scenario;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("building the model: {0}")]
    Model(#[from] ModelError),
    #[error("step {step} (t = {time} s): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
}

/// Mean surface temperature per configured edge length at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MstRecord {
    pub time: f64,
    pub values: Vec<f64>,
}

pub struct RunOutput {
    pub series: TimeSeries,
    /// States at the configured snapshot times (nearest step).
    pub snapshots: Vec<ThermalState>,
    pub final_state: ThermalState,
    pub mst: Vec<MstRecord>,
    pub model: ThermalModel,
}

/// A failed run with everything recorded up to the failing step.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: RunError,
    pub series: Option<TimeSeries>,
    pub mst: Vec<MstRecord>,
}

impl From<RunError> for RunFailure {
    fn from(error: RunError) -> Self {
        Self {
            error,
            series: None,
            mst: Vec::new(),
        }
    }
}

fn mst_record(
    state: &ThermalState,
    model: &ThermalModel,
    regions: &[SurfaceRegion],
) -> Result<MstRecord, PostprocessError> {
    let values = regions
        .iter()
        .map(|r| mean_surface_temperature(&state.temperatures, &model.mesh, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MstRecord {
        time: state.time,
        values,
    })
}

/// Runs the scenario from the geothermal profile for `round(T / dt)` steps.
pub fn run_transient(scenario: &Scenario) -> Result<RunOutput, RunFailure> {
    let model = ThermalModel::build(scenario).map_err(RunError::from)?;
    run_model(scenario, model)
}

pub fn run_model(scenario: &Scenario, model: ThermalModel) -> Result<RunOutput, RunFailure> {
    let id = scenario.id();
    let mut series = TimeSeries::new(
        id.clone(),
        scenario.fluid.mass_flow_rate,
        scenario.fluid.specific_heat,
        scenario.boundary.ambient_temperature,
        scenario.boundary.inlet_temperature,
    );
    let regions: Vec<SurfaceRegion> = scenario
        .output
        .mst_edges
        .iter()
        .map(|&a| SurfaceRegion::around_outlet(a, &model.network))
        .collect();
    let outlet = model.outlet_node();
    let dt = scenario.solver.time_step;
    let n_steps = scenario.n_steps();
    let newton = scenario.newton_config();
    let mut integrator = BdfIntegrator::new(scenario.bdf_order(), dt);

    let init = model.initial_state();
    series.push(init.time, init.temperatures[outlet]);
    let mut mst = Vec::with_capacity(n_steps + 1);
    mst.push(mst_record(&init, &model, &regions).map_err(RunError::from)?);

    let mut pending: Vec<f64> = scenario.output.snapshot_times.clone();
    pending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut snapshots = Vec::new();
    let take_snapshots = |state: &ThermalState, pending: &mut Vec<f64>, snapshots: &mut Vec<ThermalState>| {
        while pending.first().is_some_and(|&t| state.time >= t - 0.5 * dt) {
            pending.remove(0);
            snapshots.push(state.clone());
        }
    };
    take_snapshots(&init, &mut pending, &mut snapshots);

    let mut prev: Option<ThermalState> = None;
    let mut current = init;
    for step in 1..=n_steps {
        let history: Vec<&ThermalState> = match &prev {
            Some(p) => vec![p, &current],
            None => vec![&current],
        };
        let (mut next, outcome) = match integrator.advance(&history, &model, &newton) {
            Ok(v) => v,
            Err(source) => {
                log::error!("{id}: step {step} failed: {source}");
                return Err(RunFailure {
                    error: RunError::Step {
                        step,
                        time: current.time + dt,
                        source,
                    },
                    series: Some(series),
                    mst,
                });
            }
        };
        // time as an exact multiple of the step avoids drift in long runs
        next.time = step as f64 * dt;
        let rec = series.push(next.time, next.temperatures[outlet]);
        rec.newton_iterations = outcome.iterations;
        rec.linear_iterations = outcome.linear_iterations;
        match mst_record(&next, &model, &regions) {
            Ok(r) => mst.push(r),
            Err(e) => {
                return Err(RunFailure {
                    error: e.into(),
                    series: Some(series),
                    mst,
                })
            }
        }
        take_snapshots(&next, &mut pending, &mut snapshots);
        if step % 50 == 0 || step == n_steps {
            log::info!(
                "{id}: step {step}/{n_steps}, t = {:.3e} s, outlet {:.3} K",
                next.time,
                next.temperatures[outlet]
            );
        }
        prev = Some(std::mem::replace(&mut current, next));
    }
    Ok(RunOutput {
        series,
        snapshots,
        final_state: current,
        mst,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;

    const SMALL: &str = "[mesh]\ncells_x = 6\ncells_y = 6\ncells_z = 8\n";

    #[test]
    fn zero_horizon_has_only_the_initial_record() {
        let s = load_scenario(&format!("{SMALL}[solver]\ntotal_time = 0.0\n")).unwrap();
        let out = run_transient(&s).unwrap();
        assert_eq!(out.series.records.len(), 1);
        assert_eq!(out.series.records[0].outlet_temperature, 303.15);
        assert_eq!(out.series.records[0].time, 0.0);
    }

    #[test]
    fn linear_profile_is_steady() {
        let s = load_scenario(&format!(
            "{SMALL}[fluid]\nmass_flow_rate = 0.0\n[boundary]\nvariant = \"all-dirichlet\"\nemissivity = 0.0\n\
             [solver]\ntime_step = 1e8\ntotal_time = 1e9\nkrylov_tolerance = 1e-13\n"
        ))
        .unwrap();
        let out = run_transient(&s).unwrap();
        let init = out.model.initial_state();
        let diff = out
            .final_state
            .temperatures
            .iter()
            .zip(&init.temperatures)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // the inlet node is held at the inlet temperature, which equals the
        // profile at the surface
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn deterministic_and_snapshots() {
        let s = load_scenario(&format!(
            "{SMALL}[solver]\ntime_step = 1e7\ntotal_time = 1e8\n[output]\nsnapshot_times = [0.0, 5e7, 1e8]\n"
        ))
        .unwrap();
        let a = run_transient(&s).unwrap();
        let b = run_transient(&s).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.series.records.len(), 11);
        let times: Vec<f64> = a.snapshots.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 5e7, 1e8]);
        assert_eq!(a.mst.len(), 11);
        for r in &a.series.records {
            assert!(r.outlet_temperature >= 303.15 - 1e-6);
        }
    }
}
