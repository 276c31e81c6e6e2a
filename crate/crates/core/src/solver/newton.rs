//! Newton iteration for the radiation nonlinearity.

use super::linear::{solve_linear_system, LinearSolverConfig};
use super::SolverError;
use crate::sparse::SparseOperator;

/// A nonlinear algebraic system `F(theta) = 0` with prescribed values on a
/// subset of unknowns.
pub trait NonlinearSystem {
    fn dim(&self) -> usize;
    fn residual(&self, theta: &[f64]) -> Result<Vec<f64>, SolverError>;
    fn jacobian(&self, theta: &[f64]) -> Result<SparseOperator, SolverError>;
    /// `(index, value)` pairs, sorted by index.
    fn constraints(&self) -> &[(usize, f64)];
    /// Linear systems are solved with a single update.
    fn is_linear(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Relative reduction of the residual norm.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub linear: LinearSolverConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 20,
            linear: LinearSolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Residual norm before each update and after the last one.
    pub residual_history: Vec<f64>,
    pub linear_iterations: usize,
}

fn free_norm(v: &[f64], constrained: &[bool]) -> f64 {
    v.iter()
        .zip(constrained)
        .filter(|(_, &c)| !c)
        .map(|(x, _)| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Newton's method with the consistent Jacobian. Constrained unknowns are
/// set to their values up front and kept fixed. Converged when the residual
/// has dropped by `tolerance` relative to the initial guess, or when the
/// update is at round-off level.
pub fn newton_solve(
    guess: &[f64],
    system: &dyn NonlinearSystem,
    config: &NewtonConfig,
) -> Result<NewtonOutcome, SolverError> {
    let n = system.dim();
    if guess.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: guess.len(),
        });
    }
    let mut theta = guess.to_vec();
    let mut constrained = vec![false; n];
    for &(i, v) in system.constraints() {
        theta[i] = v;
        constrained[i] = true;
    }
    let mut f = system.residual(&theta)?;
    let r0 = free_norm(&f, &constrained);
    let mut history = vec![r0];
    let mut linear_iterations = 0;
    if r0 == 0.0 {
        return Ok(NewtonOutcome {
            solution: theta,
            iterations: 0,
            residual_history: history,
            linear_iterations,
        });
    }
    for it in 1..=config.max_iterations {
        let jac = system.jacobian(&theta)?.constrain_symmetric(&constrained);
        let rhs: Vec<f64> = f
            .iter()
            .zip(&constrained)
            .map(|(v, &c)| if c { 0.0 } else { -v })
            .collect();
        let (delta, stats) = solve_linear_system(&jac, &rhs, &config.linear)?;
        linear_iterations += stats.iterations;

        // halve the step while the update leaves the admissible set
        let mut step = 1.0;
        let mut attempt = 0;
        let (next, f_next) = loop {
            let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + step * d).collect();
            match system.residual(&cand) {
                Ok(r) => break (cand, r),
                Err(e) if attempt >= 6 => return Err(e),
                Err(_) => {
                    step *= 0.5;
                    attempt += 1;
                }
            }
        };
        let dmax = delta.iter().fold(0.0f64, |m, d| m.max(d.abs())) * step;
        let tmax = next.iter().fold(1.0f64, |m, t| m.max(t.abs()));
        theta = next;
        f = f_next;
        let r = free_norm(&f, &constrained);
        history.push(r);
        if system.is_linear() || r <= config.tolerance * r0 || dmax <= 1e-13 * tmax {
            return Ok(NewtonOutcome {
                solution: theta,
                iterations: it,
                residual_history: history,
                linear_iterations,
            });
        }
    }
    Err(SolverError::NewtonNotConverged {
        iterations: config.max_iterations,
        residual: *history.last().unwrap(),
        initial_residual: r0,
        last_iterate: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::STEFAN_BOLTZMANN;

    /// `h (t - a) + eps sigma (t^4 - a^4) - q = 0` for a single unknown.
    struct ScalarBalance {
        h: f64,
        eps: f64,
        ambient: f64,
        q: f64,
    }

    impl NonlinearSystem for ScalarBalance {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, t: &[f64]) -> Result<Vec<f64>, SolverError> {
            let es = self.eps * STEFAN_BOLTZMANN;
            Ok(vec![
                self.h * (t[0] - self.ambient) + es * (t[0].powi(4) - self.ambient.powi(4)) - self.q,
            ])
        }
        fn jacobian(&self, t: &[f64]) -> Result<SparseOperator, SolverError> {
            let es = self.eps * STEFAN_BOLTZMANN;
            Ok(SparseOperator::from_diagonal(&[self.h + 4.0 * es * t[0].powi(3)]))
        }
        fn constraints(&self) -> &[(usize, f64)] {
            &[]
        }
    }

    fn bisection(sys: &ScalarBalance, mut lo: f64, mut hi: f64) -> f64 {
        let f = |t: f64| sys.residual(&[t]).unwrap()[0];
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_balance_matches_bisection() {
        let sys = ScalarBalance {
            h: 0.5,
            eps: 0.9,
            ambient: 303.15,
            q: 100.0,
        };
        let root = bisection(&sys, 303.15, 400.0);
        let cfg = NewtonConfig {
            tolerance: 1e-14,
            ..Default::default()
        };
        let out = newton_solve(&[303.15], &sys, &cfg).unwrap();
        assert!((out.solution[0] - root).abs() < 1e-6, "{} vs {root}", out.solution[0]);
    }

    #[test]
    fn quadratic_convergence_near_root() {
        let sys = ScalarBalance {
            h: 0.5,
            eps: 0.9,
            ambient: 303.15,
            q: 100.0,
        };
        let root = bisection(&sys, 303.15, 400.0);
        // log the iterates by stepping one iteration at a time
        let cfg = NewtonConfig {
            tolerance: 1e-300,
            max_iterations: 1,
            ..Default::default()
        };
        let mut t = 303.15;
        let mut errors = vec![(t - root).abs()];
        for _ in 0..4 {
            t = match newton_solve(&[t], &sys, &cfg) {
                Ok(o) => o.solution[0],
                Err(SolverError::NewtonNotConverged { last_iterate, .. }) => last_iterate[0],
                Err(e) => panic!("{e}"),
            };
            errors.push((t - root).abs());
        }
        for w in errors.windows(2) {
            if w[1] > 1e-9 {
                let ratio = w[1] / (w[0] * w[0]);
                assert!(ratio < 0.1, "ratio {ratio} in {errors:?}");
            }
        }
    }

    #[test]
    fn linear_problem_single_iteration() {
        let sys = ScalarBalance {
            h: 2.0,
            eps: 0.0,
            ambient: 300.0,
            q: 10.0,
        };
        let out = newton_solve(&[300.0], &sys, &NewtonConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.solution[0] - 305.0).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let sys = ScalarBalance {
            h: 0.5,
            eps: 0.9,
            ambient: 303.15,
            q: 1e5,
        };
        let cfg = NewtonConfig {
            tolerance: 1e-15,
            max_iterations: 2,
            ..Default::default()
        };
        match newton_solve(&[303.15], &sys, &cfg) {
            Err(SolverError::NewtonNotConverged { last_iterate, iterations, .. }) => {
                assert_eq!(iterations, 2);
                assert!(last_iterate[0] > 303.15);
            }
            other => panic!("{other:?}"),
        }
    }
}
