//! Verification machinery: manufactured solutions, the energy-decay
//! diagnostic and a dense direct-solve oracle.

use crate::assembly::{
    assemble_conduction, assemble_mass, assemble_source, radiation_residual_jacobian, MaterialField,
};
use crate::mesh::StructuredMesh;
use crate::model::{ModelError, ThermalModel};
use crate::scenario::Scenario;
use crate::solver::{
    BdfIntegrator, BdfOrder, LinearSolverConfig, NewtonConfig, SemiDiscrete, SolverError, ThermalState,
};
use crate::sparse::SparseOperator;
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{0}")]
    Setup(String),
    #[error("dense oracle limited to {cap} nodes, model has {nodes}")]
    TooLarge { nodes: usize, cap: usize },
    #[error("singular matrix in dense factorisation at column {0}")]
    Singular(usize),
}

/// `theta*(x, t) = base + gradient z + amplitude sin(pi x) sin(pi y) sin(pi z) exp(-t / tau)`
/// on the unit cube with unit material constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub base: f64,
    pub gradient: f64,
    pub amplitude: f64,
    pub tau: f64,
}

impl Default for ManufacturedCase {
    fn default() -> Self {
        Self {
            base: 300.0,
            gradient: 10.0,
            amplitude: 10.0,
            tau: 0.5,
        }
    }
}

impl ManufacturedCase {
    fn shape(p: [f64; 3]) -> f64 {
        (PI * p[0]).sin() * (PI * p[1]).sin() * (PI * p[2]).sin()
    }

    pub fn exact(&self, p: [f64; 3], t: f64) -> f64 {
        self.base + self.gradient * p[2] + self.amplitude * Self::shape(p) * (-t / self.tau).exp()
    }

    /// `rho c d theta*/dt - div(k grad theta*)` with `rho c = k = 1`.
    pub fn source(&self, p: [f64; 3], t: f64) -> f64 {
        (3.0 * PI * PI - 1.0 / self.tau) * self.amplitude * Self::shape(p) * (-t / self.tau).exp()
    }
}

/// Heat equation on the unit cube with the manufactured source and
/// Dirichlet data on every face.
struct ManufacturedSystem {
    case: ManufacturedCase,
    mesh: StructuredMesh,
    mass: SparseOperator,
    stiffness: SparseOperator,
    boundary: Vec<usize>,
}

impl ManufacturedSystem {
    fn new(case: ManufacturedCase, cells: usize, lumped: bool) -> Result<Self, VerifyError> {
        let mesh = StructuredMesh::uniform([1.0; 3], [cells; 3]).map_err(|e| VerifyError::Setup(e.to_string()))?;
        let mat = MaterialField::isotropic(1.0, 1.0, 1.0);
        let mut boundary: Vec<usize> = (0..3)
            .flat_map(|a| [false, true].map(|u| mesh.face_nodes(a, u)))
            .flatten()
            .collect();
        boundary.sort_unstable();
        boundary.dedup();
        Ok(Self {
            case,
            mass: assemble_mass(&mesh, &mat, lumped),
            stiffness: assemble_conduction(&mesh, &mat),
            mesh,
            boundary,
        })
    }

    fn exact_state(&self, t: f64) -> ThermalState {
        ThermalState::new(
            (0..self.mesh.n_nodes())
                .map(|n| self.case.exact(self.mesh.node_point(n), t))
                .collect(),
            t,
        )
    }

    /// L2 norm of `theta_h - theta*` by 3-point Gauss quadrature per axis.
    fn l2_error(&self, state: &ThermalState) -> f64 {
        const G: [(f64, f64); 3] = [
            (0.112_701_665_379_258_3, 5.0 / 18.0),
            (0.5, 8.0 / 18.0),
            (0.887_298_334_620_741_7, 5.0 / 18.0),
        ];
        let m = &self.mesh;
        let mut acc = 0.0;
        m.for_each_cell(|[i, j, k]| {
            let h = m.cell_size(i, j, k);
            let o = [m.x[i], m.y[j], m.z[k]];
            let nodes = m.cell_nodes(i, j, k);
            for &(gx, wx) in &G {
                for &(gy, wy) in &G {
                    for &(gz, wz) in &G {
                        let g = [gx, gy, gz];
                        let mut th = 0.0;
                        for (l, &n) in nodes.iter().enumerate() {
                            let mut s = 1.0;
                            for d in 0..3 {
                                s *= if (l >> d) & 1 == 1 { g[d] } else { 1.0 - g[d] };
                            }
                            th += s * state.temperatures[n];
                        }
                        let p = [o[0] + gx * h[0], o[1] + gy * h[1], o[2] + gz * h[2]];
                        let e = th - self.case.exact(p, state.time);
                        acc += wx * wy * wz * h[0] * h[1] * h[2] * e * e;
                    }
                }
            }
        });
        acc.sqrt()
    }
}

impl SemiDiscrete for ManufacturedSystem {
    fn dim(&self) -> usize {
        self.mesh.n_nodes()
    }
    fn mass(&self) -> &SparseOperator {
        &self.mass
    }
    fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }
    fn load(&self, time: f64) -> Vec<f64> {
        assemble_source(&self.mesh, |p| self.case.source(p, time))
    }
    fn nonlinear(&self, _: &[f64]) -> Result<Option<(Vec<f64>, SparseOperator)>, SolverError> {
        Ok(None)
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn constraints(&self, time: f64) -> Vec<(usize, f64)> {
        self.boundary
            .iter()
            .map(|&n| (n, self.case.exact(self.mesh.node_point(n), time)))
            .collect()
    }
}

fn tight_newton() -> NewtonConfig {
    NewtonConfig {
        tolerance: 1e-12,
        max_iterations: 30,
        linear: LinearSolverConfig {
            tolerance: 1e-13,
            max_iterations: 5000,
            ..Default::default()
        },
    }
}

fn integrate(
    system: &dyn SemiDiscrete,
    init: ThermalState,
    order: BdfOrder,
    dt: f64,
    steps: usize,
    newton: &NewtonConfig,
) -> Result<ThermalState, SolverError> {
    let mut integ = BdfIntegrator::new(order, dt);
    let t0 = init.time;
    let mut prev: Option<ThermalState> = None;
    let mut cur = init;
    for step in 1..=steps {
        let hist: Vec<&ThermalState> = match &prev {
            Some(p) => vec![p, &cur],
            None => vec![&cur],
        };
        let (mut next, _) = integ.advance(&hist, system, newton)?;
        next.time = t0 + step as f64 * dt;
        prev = Some(std::mem::replace(&mut cur, next));
    }
    Ok(cur)
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_order(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    /// Mesh sizes or time steps.
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Orders between consecutive levels.
    pub pairwise: Vec<f64>,
    pub fitted: f64,
    /// Set when the errors do not decrease monotonically.
    pub non_monotone: bool,
}

impl ConvergenceStudy {
    fn from_errors(steps: Vec<f64>, errors: Vec<f64>) -> Self {
        let pairwise = steps
            .windows(2)
            .zip(errors.windows(2))
            .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            .collect();
        let non_monotone = errors.windows(2).any(|w| w[1] >= w[0]);
        if non_monotone {
            log::warn!("error sequence is not monotone: {errors:?}");
        }
        Self {
            fitted: fitted_order(&steps, &errors),
            steps,
            errors,
            pairwise,
            non_monotone,
        }
    }
}

/// Spatial study: L2 errors at `end_time` on uniform `n^3`-cell grids,
/// integrated with BDF2 at step `dt`.
pub fn mms_spatial(
    case: &ManufacturedCase,
    cells: &[usize],
    dt: f64,
    end_time: f64,
) -> Result<ConvergenceStudy, VerifyError> {
    if cells.len() < 3 {
        return Err(VerifyError::Setup("at least three refinement levels are needed".into()));
    }
    let steps = (end_time / dt).round() as usize;
    let mut errors = Vec::new();
    for &n in cells {
        let sys = ManufacturedSystem::new(*case, n, false)?;
        let fin = integrate(&sys, sys.exact_state(0.0), BdfOrder::Two, dt, steps, &tight_newton())?;
        errors.push(sys.l2_error(&fin));
    }
    Ok(ConvergenceStudy::from_errors(
        cells.iter().map(|&n| 1.0 / n as f64).collect(),
        errors,
    ))
}

/// Temporal study by self-convergence: differences between solutions at
/// successive step halvings on a fixed grid. `steps` lists the step counts.
pub fn mms_temporal(
    case: &ManufacturedCase,
    cells: usize,
    order: BdfOrder,
    end_time: f64,
    steps: &[usize],
) -> Result<ConvergenceStudy, VerifyError> {
    if steps.len() < 3 {
        return Err(VerifyError::Setup("at least three step counts are needed".into()));
    }
    let sys = ManufacturedSystem::new(*case, cells, false)?;
    let mut finals = Vec::new();
    for &k in steps {
        let dt = end_time / k as f64;
        finals.push(integrate(&sys, sys.exact_state(0.0), order, dt, k, &tight_newton())?);
    }
    let diffs: Vec<f64> = finals
        .windows(2)
        .map(|w| {
            let d = ThermalState::new(
                w[0].temperatures
                    .iter()
                    .zip(&w[1].temperatures)
                    .map(|(a, b)| a - b)
                    .collect(),
                0.0,
            );
            sys.mass.matvec(&d.temperatures).iter().zip(&d.temperatures).map(|(a, b)| a * b).sum::<f64>().sqrt()
        })
        .collect();
    let dts: Vec<f64> = steps[..steps.len() - 1].iter().map(|&k| end_time / k as f64).collect();
    Ok(ConvergenceStudy::from_errors(dts, diffs))
}

/// Error against the exactly representable case `theta* = base + gradient z`.
pub fn mms_linear_steady(cells: usize) -> Result<f64, VerifyError> {
    let case = ManufacturedCase {
        amplitude: 0.0,
        ..Default::default()
    };
    let sys = ManufacturedSystem::new(case, cells, true)?;
    let mut init = sys.exact_state(0.0);
    for v in init.temperatures.iter_mut() {
        *v = case.base;
    }
    let fin = integrate(&sys, init, BdfOrder::One, 1e6, 3, &tight_newton())?;
    let exact = sys.exact_state(fin.time);
    Ok(fin
        .temperatures
        .iter()
        .zip(&exact.temperatures)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `1/2 w^T M w`.
pub fn discrete_energy(mass: &SparseOperator, w: &[f64]) -> f64 {
    0.5 * mass.matvec(w).iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// Energy of the difference at the initial time and after every step.
    pub energies: Vec<f64>,
    /// First step at which `E^{n+1} > E^n (1 + rel_tol)`, if any.
    pub first_increase: Option<usize>,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.first_increase.is_none()
    }
}

/// Runs the scenario's model from two initial fields in lockstep and records
/// the discrete energy of their difference.
pub fn energy_decay_check(
    scenario: &Scenario,
    a: ThermalState,
    b: ThermalState,
    steps: usize,
    rel_tol: f64,
) -> Result<EnergyReport, VerifyError> {
    let model = ThermalModel::build(scenario)?;
    energy_decay_on_model(&model, scenario, a, b, steps, rel_tol)
}

pub fn energy_decay_on_model(
    model: &ThermalModel,
    scenario: &Scenario,
    a: ThermalState,
    b: ThermalState,
    steps: usize,
    rel_tol: f64,
) -> Result<EnergyReport, VerifyError> {
    let n = model.dim();
    if a.temperatures.len() != n || b.temperatures.len() != n {
        return Err(VerifyError::Setup(format!("initial fields must have {n} values")));
    }
    let dt = scenario.solver.time_step;
    let order = scenario.bdf_order();
    let newton = scenario.newton_config();
    let mut ia = BdfIntegrator::new(order, dt);
    let mut ib = BdfIntegrator::new(order, dt);
    let diff = |x: &ThermalState, y: &ThermalState| -> Vec<f64> {
        x.temperatures.iter().zip(&y.temperatures).map(|(p, q)| p - q).collect()
    };
    let mut energies = vec![discrete_energy(&model.mass, &diff(&a, &b))];
    let (mut ha, mut hb) = (vec![a], vec![b]);
    for _ in 0..steps {
        let ra: Vec<&ThermalState> = ha.iter().rev().take(2).rev().collect();
        let rb: Vec<&ThermalState> = hb.iter().rev().take(2).rev().collect();
        let (na, _) = ia.advance(&ra, model, &newton)?;
        let (nb, _) = ib.advance(&rb, model, &newton)?;
        energies.push(discrete_energy(&model.mass, &diff(&na, &nb)));
        ha.push(na);
        hb.push(nb);
        if ha.len() > 2 {
            ha.remove(0);
            hb.remove(0);
        }
    }
    let first_increase = energies
        .windows(2)
        .position(|w| w[1] > w[0] * (1.0 + rel_tol));
    Ok(EnergyReport {
        energies,
        first_increase,
    })
}

/// Row-major dense LU with partial pivoting.
struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    fn factor(mut a: Vec<f64>, n: usize) -> Result<Self, VerifyError> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).unwrap())
                .unwrap();
            if a[p * n + k] == 0.0 {
                return Err(VerifyError::Singular(k));
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let piv = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / piv;
                a[i * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[i * n + c] -= f * a[k * n + c];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.lu[i * n + k] * x[k];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

fn dense_of(op: &SparseOperator) -> Vec<f64> {
    let n = op.dim();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let (cols, vals) = op.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            d[i * n + j] += v;
        }
    }
    d
}

pub const DENSE_ORACLE_CAP: usize = 512;

/// Advances the scenario's model `steps` times with the production Krylov
/// path and with dense LU (row-replacement constraints, own Newton loop),
/// and returns the largest nodal discrepancy over all steps.
pub fn dense_oracle_compare(scenario: &Scenario, steps: usize) -> Result<f64, VerifyError> {
    let model = ThermalModel::build(scenario)?;
    let n = model.dim();
    if n > DENSE_ORACLE_CAP {
        return Err(VerifyError::TooLarge {
            nodes: n,
            cap: DENSE_ORACLE_CAP,
        });
    }
    let dt = scenario.solver.time_step;
    let order = scenario.bdf_order();
    let newton = scenario.newton_config();
    let mut integ = BdfIntegrator::new(order, dt);
    let mass = dense_of(&model.mass);
    let stiff = dense_of(&model.stiffness);
    let constraints = model.constraints(0.0);

    let init = model.initial_state();
    let mut sparse_hist = vec![init.clone()];
    let mut dense_hist = vec![init.temperatures.clone()];
    let mut worst: f64 = 0.0;
    for step in 1..=steps {
        let refs: Vec<&ThermalState> = sparse_hist.iter().rev().take(2).rev().collect();
        let (next, _) = integ.advance(&refs, &model, &newton)?;

        // dense time level
        let two = order == BdfOrder::Two && dense_hist.len() >= 2;
        let (c0, combo): (f64, Vec<f64>) = if two {
            let (p, c) = (&dense_hist[dense_hist.len() - 2], &dense_hist[dense_hist.len() - 1]);
            (1.5, c.iter().zip(p).map(|(a, b)| 2.0 * a - 0.5 * b).collect())
        } else {
            (1.0, dense_hist.last().unwrap().clone())
        };
        let base: Vec<f64> = (0..n * n).map(|i| c0 / dt * mass[i] + stiff[i]).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| mass[i * n + j] * combo[j]).sum::<f64>() / dt)
            .collect();
        for (r, l) in rhs.iter_mut().zip(&model.load) {
            *r += l;
        }
        let mut theta = dense_hist.last().unwrap().clone();
        for &(i, v) in &constraints {
            theta[i] = v;
        }
        for it in 0.. {
            let mut jac = base.clone();
            let mut f: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| base[i * n + j] * theta[j]).sum::<f64>() - rhs[i])
                .collect();
            if model.has_radiation() {
                let (r, j) = radiation_residual_jacobian(&theta, &model.mesh, &model.bc)
                    .map_err(SolverError::from)?;
                let jd = dense_of(&j);
                for i in 0..n * n {
                    jac[i] += jd[i];
                }
                for i in 0..n {
                    f[i] += r[i];
                }
            }
            for &(i, _) in &constraints {
                for c in 0..n {
                    jac[i * n + c] = 0.0;
                }
                jac[i * n + i] = 1.0;
                f[i] = 0.0;
            }
            let delta = DenseLu::factor(jac, n)?.solve(&f);
            let mut dmax: f64 = 0.0;
            for (t, d) in theta.iter_mut().zip(&delta) {
                *t -= d;
                dmax = dmax.max(d.abs());
            }
            if dmax <= 1e-11 || !model.has_radiation() {
                break;
            }
            if it > 50 {
                return Err(VerifyError::Setup(format!("dense Newton stalled at step {step}")));
            }
        }
        for (a, b) in next.temperatures.iter().zip(&theta) {
            worst = worst.max((a - b).abs());
        }
        sparse_hist.push(next);
        dense_hist.push(theta);
        if sparse_hist.len() > 2 {
            sparse_hist.remove(0);
            dense_hist.remove(0);
        }
    }
    Ok(worst)
}

/// Largest `|(K + C) 1|` relative to the largest operator entry.
pub fn constant_annihilation(model: &ThermalModel, scenario: &Scenario) -> Result<f64, VerifyError> {
    let k = assemble_conduction(&model.mesh, &scenario.material);
    let c = crate::assembly::assemble_channel_advection(&model.mesh, &model.edges, &scenario.coupling())
        .map_err(SolverError::from)?;
    let op = k.add(&c);
    let ones = vec![1.0; op.dim()];
    let r = op.matvec(&ones);
    Ok(r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / op.max_abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let n = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{n}/{} checks passed", self.checks.len())
    }
}

fn load(doc: &str) -> Result<Scenario, VerifyError> {
    crate::scenario::load_scenario(doc).map_err(|e| VerifyError::Setup(e.to_string()))
}

pub const ORACLE_SCENARIO: &str = "name = \"dense-oracle\"\n\
[mesh]\ncells_x = 4\ncells_y = 4\ncells_z = 4\n\
[solver]\ntime_step = 1e7\ntotal_time = 1e8\nbdf_order = 2\nnewton_tolerance = 1e-13\nkrylov_tolerance = 1e-14\n";

pub const ENERGY_SCENARIO: &str = "name = \"energy-decay\"\n\
[mesh]\ncells_x = 8\ncells_y = 8\ncells_z = 10\n\
[boundary]\nemissivity = 0.0\n\
[solver]\ntime_step = 1e7\ntotal_time = 1e9\nbdf_order = 1\nupwind = 1.0\nkrylov_tolerance = 1e-13\n";

/// Initial fields for the decay diagnostic: the geothermal profile and the
/// same plus a bump of `height` K on interior nodes within `radius` m of the
/// domain centre.
pub fn bump_pair(model: &ThermalModel, scenario: &Scenario, height: f64, radius: f64) -> (ThermalState, ThermalState) {
    let a = model.initial_state();
    let mut b = a.clone();
    let c = [
        0.5 * scenario.domain.length_x,
        0.5 * scenario.domain.length_y,
        0.5 * scenario.domain.length_z,
    ];
    let fixed: std::collections::HashSet<usize> = model.constraints.iter().map(|&(n, _)| n).collect();
    for n in 0..model.dim() {
        let p = model.mesh.node_point(n);
        let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        if r <= radius && !fixed.contains(&n) {
            b.temperatures[n] += height * (1.0 - r / radius).max(0.0).max(0.25);
        }
    }
    (a, b)
}

/// Runs the full verification suite.
pub fn run_suite() -> Result<VerificationReport, VerifyError> {
    let mut report = VerificationReport::default();
    let case = ManufacturedCase::default();

    let spatial = mms_spatial(&case, &[8, 16, 32], 1e-3, 0.02)?;
    report.push(
        "manufactured solution, spatial order",
        spatial.fitted >= 1.9,
        format!("L2 errors {:?}, fitted order {:.3}", spatial.errors, spatial.fitted),
    );
    for (order, min, label) in [(BdfOrder::One, 0.9, "BDF1"), (BdfOrder::Two, 1.8, "BDF2")] {
        let t = mms_temporal(&case, 8, order, 0.5, &[8, 16, 32, 64])?;
        report.push(
            &format!("manufactured solution, {label} temporal order"),
            t.fitted >= min,
            format!("differences {:?}, fitted order {:.3}", t.errors, t.fitted),
        );
    }
    let lin = mms_linear_steady(6)?;
    report.push(
        "linear manufactured solution is exact",
        lin < 1e-9,
        format!("max error {lin:.3e}"),
    );

    let steady = load(
        "name = \"steady\"\n[mesh]\ncells_x = 8\ncells_y = 8\ncells_z = 10\n[fluid]\nmass_flow_rate = 0.0\n\
         [boundary]\nvariant = \"all-dirichlet\"\nemissivity = 0.0\n\
         [solver]\ntime_step = 1e8\ntotal_time = 1e9\nkrylov_tolerance = 1e-14\n",
    )?;
    let run = crate::solver::run_transient(&steady).map_err(|f| VerifyError::Setup(f.to_string()))?;
    let init = run.model.initial_state();
    let dev = run
        .final_state
        .temperatures
        .iter()
        .zip(&init.temperatures)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report.push(
        "geothermal profile is a steady state",
        dev < 1e-8,
        format!("max deviation {dev:.3e} K"),
    );

    let mut worst: f64 = 0.0;
    for kind in ["u", "comb"] {
        for beta in [0.0, 1.0] {
            let s = load(&format!(
                "[layout]\nkind = \"{kind}\"\n[mesh]\ncells_x = 8\ncells_y = 8\ncells_z = 10\n[solver]\nupwind = {beta:.1}\n"
            ))?;
            let m = ThermalModel::build(&s)?;
            worst = worst.max(constant_annihilation(&m, &s)?);
        }
    }
    report.push(
        "constant field annihilated by conduction and channel operators",
        worst <= 1e-12,
        format!("max relative residual {worst:.3e}"),
    );

    let es = load(ENERGY_SCENARIO)?;
    let model = ThermalModel::build(&es)?;
    let (a, b) = bump_pair(&model, &es, 10.0, 3000.0);
    let e = energy_decay_on_model(&model, &es, a, b, 100, 1e-12)?;
    report.push(
        "energy of the difference of two solutions does not grow",
        e.passed(),
        format!(
            "E0 = {:.6e}, E100 = {:.6e}, first increase {:?}",
            e.energies[0],
            e.energies.last().unwrap(),
            e.first_increase
        ),
    );

    let os = load(ORACLE_SCENARIO)?;
    let d = dense_oracle_compare(&os, 10)?;
    report.push(
        "Krylov and dense direct solves agree",
        d < 1e-8,
        format!("max discrepancy {d:.3e} K"),
    );
    Ok(report)
}
