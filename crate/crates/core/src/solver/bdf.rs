//! Fixed-step BDF1/BDF2 integration of `M dθ/dt + A θ + r(θ) = f(t)`.

use super::newton::{newton_solve, NewtonConfig, NewtonOutcome, NonlinearSystem};
use super::SolverError;
use crate::sparse::SparseOperator;
use serde::{Deserialize, Serialize};

/// Nodal temperatures at one time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub temperatures: Vec<f64>,
    pub time: f64,
}

impl ThermalState {
    pub fn new(temperatures: Vec<f64>, time: f64) -> Self {
        Self { temperatures, time }
    }

    pub fn uniform(n: usize, value: f64, time: f64) -> Self {
        Self::new(vec![value; n], time)
    }

    /// All temperatures finite; with `positive`, also strictly above 0 K.
    pub fn check(&self, positive: bool) -> Result<(), SolverError> {
        for (i, &t) in self.temperatures.iter().enumerate() {
            if !t.is_finite() || (positive && t <= 0.0) {
                return Err(SolverError::InvalidState {
                    node: i,
                    value: t,
                    time: self.time,
                });
            }
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.temperatures.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.temperatures.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Spatially discretised heat equation: mass `M`, linear operator `A`, load
/// `f(t)`, an optional nonlinear boundary residual `r(θ)`, and prescribed
/// values.
pub trait SemiDiscrete {
    fn dim(&self) -> usize;
    fn mass(&self) -> &SparseOperator;
    fn stiffness(&self) -> &SparseOperator;
    fn load(&self, time: f64) -> Vec<f64>;
    /// `r(θ)` and its Jacobian, or `None` when the problem is linear.
    fn nonlinear(&self, theta: &[f64]) -> Result<Option<(Vec<f64>, SparseOperator)>, SolverError>;
    fn is_linear(&self) -> bool;
    fn constraints(&self, time: f64) -> Vec<(usize, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BdfOrder {
    One,
    Two,
}

impl BdfOrder {
    pub fn from_int(v: u8) -> Option<Self> {
        match v {
            1 => Some(BdfOrder::One),
            2 => Some(BdfOrder::Two),
            _ => None,
        }
    }
}

/// The implicit equation of one step.
struct TimeLevel<'a> {
    system: &'a dyn SemiDiscrete,
    lhs: &'a SparseOperator,
    history: Vec<f64>,
    load: Vec<f64>,
    constraints: Vec<(usize, f64)>,
}

impl NonlinearSystem for TimeLevel<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn residual(&self, theta: &[f64]) -> Result<Vec<f64>, SolverError> {
        let mut r = self.lhs.matvec(theta);
        for i in 0..r.len() {
            r[i] -= self.history[i] + self.load[i];
        }
        if let Some((rad, _)) = self.system.nonlinear(theta)? {
            for (ri, v) in r.iter_mut().zip(rad) {
                *ri += v;
            }
        }
        Ok(r)
    }

    fn jacobian(&self, theta: &[f64]) -> Result<SparseOperator, SolverError> {
        Ok(match self.system.nonlinear(theta)? {
            Some((_, j)) => self.lhs.add(&j),
            None => self.lhs.clone(),
        })
    }

    fn constraints(&self) -> &[(usize, f64)] {
        &self.constraints
    }

    fn is_linear(&self) -> bool {
        self.system.is_linear()
    }
}

/// Fixed-step integrator. Caches `c0/dt M + A` for the startup and the
/// steady BDF coefficients.
pub struct BdfIntegrator {
    pub order: BdfOrder,
    pub dt: f64,
    lhs_bdf1: Option<SparseOperator>,
    lhs_bdf2: Option<SparseOperator>,
}

impl BdfIntegrator {
    pub fn new(order: BdfOrder, dt: f64) -> Self {
        Self {
            order,
            dt,
            lhs_bdf1: None,
            lhs_bdf2: None,
        }
    }

    /// Advances from `history` (oldest first). BDF2 falls back to BDF1 while
    /// fewer than two states are available.
    pub fn advance(
        &mut self,
        history: &[&ThermalState],
        system: &dyn SemiDiscrete,
        newton: &NewtonConfig,
    ) -> Result<(ThermalState, NewtonOutcome), SolverError> {
        let last = *history.last().ok_or(SolverError::History(
            "at least one previous state is required".into(),
        ))?;
        let n = system.dim();
        if last.temperatures.len() != n {
            return Err(SolverError::Dimension {
                expected: n,
                got: last.temperatures.len(),
            });
        }
        let dt = self.dt;
        let use_two = self.order == BdfOrder::Two && history.len() >= 2;
        let t_new = last.time + dt;
        let m = system.mass();
        let (c0, hist_combo) = if use_two {
            let prev = history[history.len() - 2];
            let combo: Vec<f64> = last
                .temperatures
                .iter()
                .zip(&prev.temperatures)
                .map(|(a, b)| 2.0 * a - 0.5 * b)
                .collect();
            (1.5, combo)
        } else {
            (1.0, last.temperatures.clone())
        };
        let slot = if use_two {
            &mut self.lhs_bdf2
        } else {
            &mut self.lhs_bdf1
        };
        if slot.is_none() {
            *slot = Some(m.linear_combination(c0 / dt, system.stiffness(), 1.0));
        }
        let lhs = slot.as_ref().unwrap();
        let history_term: Vec<f64> = m.matvec(&hist_combo).into_iter().map(|v| v / dt).collect();
        let level = TimeLevel {
            system,
            lhs,
            history: history_term,
            load: system.load(t_new),
            constraints: system.constraints(t_new),
        };
        let outcome = newton_solve(&last.temperatures, &level, newton)?;
        let state = ThermalState::new(outcome.solution.clone(), t_new);
        state.check(false)?;
        Ok((state, outcome))
    }
}

/// One step without operator caching.
pub fn bdf_advance(
    history: &[&ThermalState],
    dt: f64,
    order: BdfOrder,
    system: &dyn SemiDiscrete,
    newton: &NewtonConfig,
) -> Result<ThermalState, SolverError> {
    BdfIntegrator::new(order, dt)
        .advance(history, system, newton)
        .map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Decoupled scalar ODEs `dθ/dt = -k (θ - target)`.
    struct Relaxation {
        mass: SparseOperator,
        stiff: SparseOperator,
        target: Vec<f64>,
        rate: Vec<f64>,
    }

    impl Relaxation {
        fn new(rate: Vec<f64>, target: Vec<f64>) -> Self {
            Self {
                mass: SparseOperator::identity(rate.len()),
                stiff: SparseOperator::from_diagonal(&rate),
                target,
                rate,
            }
        }
    }

    impl SemiDiscrete for Relaxation {
        fn dim(&self) -> usize {
            self.rate.len()
        }
        fn mass(&self) -> &SparseOperator {
            &self.mass
        }
        fn stiffness(&self) -> &SparseOperator {
            &self.stiff
        }
        fn load(&self, _t: f64) -> Vec<f64> {
            self.rate.iter().zip(&self.target).map(|(k, t)| k * t).collect()
        }
        fn nonlinear(&self, _: &[f64]) -> Result<Option<(Vec<f64>, SparseOperator)>, SolverError> {
            Ok(None)
        }
        fn is_linear(&self) -> bool {
            true
        }
        fn constraints(&self, _t: f64) -> Vec<(usize, f64)> {
            Vec::new()
        }
    }

    #[test]
    fn implicit_euler_single_step() {
        let sys = Relaxation::new(vec![1.0], vec![1.0]);
        let s0 = ThermalState::new(vec![0.0], 0.0);
        let s1 = bdf_advance(&[&s0], 1.0, BdfOrder::One, &sys, &NewtonConfig::default()).unwrap();
        assert!((s1.temperatures[0] - 0.5).abs() < 1e-12);
        assert_eq!(s1.time, 1.0);
    }

    #[test]
    fn fixed_point_is_preserved() {
        let sys = Relaxation::new(vec![1.0, 3.0], vec![2.0, 5.0]);
        let s0 = ThermalState::new(vec![2.0, 5.0], 0.0);
        let mut integ = BdfIntegrator::new(BdfOrder::Two, 0.1);
        let (s1, _) = integ.advance(&[&s0], &sys, &NewtonConfig::default()).unwrap();
        let (s2, _) = integ.advance(&[&s0, &s1], &sys, &NewtonConfig::default()).unwrap();
        assert_eq!(s2.temperatures, vec![2.0, 5.0]);
    }

    fn decay_error(order: BdfOrder, steps: usize) -> f64 {
        let sys = Relaxation::new(vec![1.0], vec![0.0]);
        let dt = 1.0 / steps as f64;
        let cfg = NewtonConfig {
            linear: super::super::linear::LinearSolverConfig {
                tolerance: 1e-14,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut integ = BdfIntegrator::new(order, dt);
        let mut hist = vec![ThermalState::new(vec![1.0], 0.0)];
        // exact second starting value so the startup step does not pollute the order
        if order == BdfOrder::Two {
            hist.push(ThermalState::new(vec![(-dt).exp()], dt));
        }
        while hist.last().unwrap().time < 1.0 - 1e-12 {
            let refs: Vec<&ThermalState> = hist.iter().rev().take(2).rev().collect();
            let (next, _) = integ.advance(&refs, &sys, &cfg).unwrap();
            hist.push(next);
        }
        (hist.last().unwrap().temperatures[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn observed_orders() {
        let r1 = decay_error(BdfOrder::One, 40) / decay_error(BdfOrder::One, 80);
        assert!((r1 - 2.0).abs() < 0.1, "BDF1 ratio {r1}");
        let r2 = decay_error(BdfOrder::Two, 40) / decay_error(BdfOrder::Two, 80);
        assert!((r2 - 4.0).abs() < 0.2, "BDF2 ratio {r2}");
    }

    #[test]
    fn missing_history_is_an_error() {
        let sys = Relaxation::new(vec![1.0], vec![1.0]);
        assert!(matches!(
            bdf_advance(&[], 1.0, BdfOrder::One, &sys, &NewtonConfig::default()),
            Err(SolverError::History(_))
        ));
    }
}
