//! Preconditioned Krylov solvers for nonsymmetric sparse systems.
//!
//! BiCGSTAB is tried first; on breakdown or stagnation the system is retried
//! with restarted GMRES before an error is reported.

use crate::sparse::SparseOperator;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    Diagonal,
    /// Zero-fill incomplete LU.
    IncompleteFactorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolverConfig {
    /// Relative residual target `||b - Ax|| <= tol ||b||`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 2000,
            preconditioner: Preconditioner::IncompleteFactorization,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("dimension mismatch: operator {op}, rhs {rhs}")]
    Dimension { op: usize, rhs: usize },
    #[error("zero or non-finite pivot at row {0} while building the preconditioner")]
    BadPivot(usize),
    #[error(
        "Krylov solve failed after {iterations} iterations: relative residual {residual:.3e} \
         (trace of last residuals: {trace:?})"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub method: &'static str,
}

trait Precond {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

struct Jacobi(Vec<f64>);

impl Precond for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.0) {
            *zi = ri * di;
        }
    }
}

impl Jacobi {
    fn new(a: &SparseOperator) -> Result<Self, LinearSolveError> {
        a.diagonal()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d != 0.0 && d.is_finite() {
                    Ok(1.0 / d)
                } else {
                    Err(LinearSolveError::BadPivot(i))
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Jacobi)
    }
}

/// ILU(0) factors stored in the sparsity pattern of `A`: strictly lower part
/// holds `L` (unit diagonal implied), the rest holds `U`.
struct Ilu0 {
    lu: SparseOperator,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &SparseOperator) -> Result<Self, LinearSolveError> {
        let n = a.dim();
        let mut lu = a.clone();
        let rp = lu.row_ptr().to_vec();
        let ci = lu.col_idx().to_vec();
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for p in rp[i]..rp[i + 1] {
                if ci[p] == i {
                    diag_pos[i] = p;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(LinearSolveError::BadPivot(i));
            }
        }
        let mut marker = vec![usize::MAX; n];
        let vals = lu.values_mut();
        for i in 0..n {
            for p in rp[i]..rp[i + 1] {
                marker[ci[p]] = p;
            }
            for p in rp[i]..rp[i + 1] {
                let k = ci[p];
                if k >= i {
                    break;
                }
                let pivot = vals[diag_pos[k]];
                if pivot == 0.0 || !pivot.is_finite() {
                    return Err(LinearSolveError::BadPivot(k));
                }
                vals[p] /= pivot;
                let lik = vals[p];
                for q in diag_pos[k] + 1..rp[k + 1] {
                    let m = marker[ci[q]];
                    if m != usize::MAX {
                        vals[m] -= lik * vals[q];
                    }
                }
            }
            for p in rp[i]..rp[i + 1] {
                marker[ci[p]] = usize::MAX;
            }
            let d = vals[diag_pos[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(LinearSolveError::BadPivot(i));
            }
        }
        Ok(Self { lu, diag_pos })
    }
}

impl Precond for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let rp = self.lu.row_ptr();
        let ci = self.lu.col_idx();
        let v = self.lu.values();
        for i in 0..n {
            let mut s = r[i];
            for p in rp[i]..self.diag_pos[i] {
                s -= v[p] * z[ci[p]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for p in self.diag_pos[i] + 1..rp[i + 1] {
                s -= v[p] * z[ci[p]];
            }
            z[i] = s / v[self.diag_pos[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b`. The returned solution satisfies
/// `||b - A x|| <= tolerance * ||b||`.
pub fn solve_linear_system(
    a: &SparseOperator,
    b: &[f64],
    config: &LinearSolverConfig,
) -> Result<(Vec<f64>, LinearSolveStats), LinearSolveError> {
    solve_with_guess(a, b, None, config)
}

pub fn solve_with_guess(
    a: &SparseOperator,
    b: &[f64],
    guess: Option<&[f64]>,
    config: &LinearSolverConfig,
) -> Result<(Vec<f64>, LinearSolveStats), LinearSolveError> {
    let n = a.dim();
    if b.len() != n || guess.is_some_and(|g| g.len() != n) {
        return Err(LinearSolveError::Dimension { op: n, rhs: b.len() });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            LinearSolveStats {
                iterations: 0,
                relative_residual: 0.0,
                method: "trivial",
            },
        ));
    }
    let pc: Box<dyn Precond> = match config.preconditioner {
        Preconditioner::Diagonal => Box::new(Jacobi::new(a)?),
        Preconditioner::IncompleteFactorization => Box::new(Ilu0::new(a)?),
    };
    let x0 = guess.map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    match bicgstab(a, b, x0.clone(), pc.as_ref(), config, bnorm) {
        Ok(r) => Ok(r),
        Err(first) => {
            log::debug!("BiCGSTAB failed ({first}); retrying with GMRES");
            gmres(a, b, x0, pc.as_ref(), config, bnorm, 50)
        }
    }
}

fn true_residual(a: &SparseOperator, b: &[f64], x: &[f64]) -> f64 {
    let ax = a.matvec(x);
    norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>())
}

fn bicgstab(
    a: &SparseOperator,
    b: &[f64],
    mut x: Vec<f64>,
    pc: &dyn Precond,
    cfg: &LinearSolverConfig,
    bnorm: f64,
) -> Result<(Vec<f64>, LinearSolveStats), LinearSolveError> {
    let n = b.len();
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut trace = Vec::new();
    let target = cfg.tolerance * bnorm;
    let fail = |iterations: usize, trace: &[f64]| LinearSolveError::NotConverged {
        iterations,
        residual: trace.last().copied().unwrap_or(f64::NAN),
        trace: trace.iter().rev().take(8).rev().copied().collect(),
    };
    if norm(&r) <= target {
        let rel = norm(&r) / bnorm;
        return Ok((
            x,
            LinearSolveStats {
                iterations: 0,
                relative_residual: rel,
                method: "bicgstab",
            },
        ));
    }
    for it in 1..=cfg.max_iterations {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || !rho_new.is_finite() {
            return Err(fail(it, &trace));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pc.apply(&p, &mut p_hat);
        a.matvec_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(fail(it, &trace));
        }
        alpha = rho / denom;
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm(&r) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            let res = true_residual(a, b, &x) / bnorm;
            if res <= cfg.tolerance {
                return Ok((
                    x,
                    LinearSolveStats {
                        iterations: it,
                        relative_residual: res,
                        method: "bicgstab",
                    },
                ));
            }
            trace.push(res);
            return Err(fail(it, &trace));
        }
        pc.apply(&r, &mut s_hat);
        a.matvec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(fail(it, &trace));
        }
        omega = dot(&t, &r) / tt;
        if omega.abs() < 1e-300 || !omega.is_finite() {
            return Err(fail(it, &trace));
        }
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] -= omega * t[i];
        }
        let rel = norm(&r) / bnorm;
        trace.push(rel);
        if rel <= cfg.tolerance {
            let res = true_residual(a, b, &x) / bnorm;
            if res <= cfg.tolerance {
                return Ok((
                    x,
                    LinearSolveStats {
                        iterations: it,
                        relative_residual: res,
                        method: "bicgstab",
                    },
                ));
            }
            // recurrence drifted from the true residual
            return Err(fail(it, &trace));
        }
    }
    Err(fail(cfg.max_iterations, &trace))
}

/// Right-preconditioned restarted GMRES with Givens rotations.
fn gmres(
    a: &SparseOperator,
    b: &[f64],
    mut x: Vec<f64>,
    pc: &dyn Precond,
    cfg: &LinearSolverConfig,
    bnorm: f64,
    restart: usize,
) -> Result<(Vec<f64>, LinearSolveStats), LinearSolveError> {
    let n = b.len();
    let mut trace = Vec::new();
    let mut total = 0;
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    while total < cfg.max_iterations {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= cfg.tolerance {
            return Ok((
                x,
                LinearSolveStats {
                    iterations: total,
                    relative_residual: beta / bnorm,
                    method: "gmres",
                },
            ));
        }
        let m = restart.min(cfg.max_iterations - total);
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            total += 1;
            pc.apply(&basis[k], &mut z);
            a.matvec_into(&z, &mut w);
            for (j, vj) in basis.iter().enumerate() {
                h[j][k] = dot(&w, vj);
                for i in 0..n {
                    w[i] -= h[j][k] * vj[i];
                }
            }
            h[k + 1][k] = norm(&w);
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = (h[k][k].powi(2) + h[k + 1][k].powi(2)).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            let hk1 = h[k + 1][k];
            h[k][k] = cs[k] * h[k][k] + sn[k] * hk1;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            let rel = g[k + 1].abs() / bnorm;
            trace.push(rel);
            if rel <= cfg.tolerance * 0.5 {
                break;
            }
            let hn = norm(&w);
            if hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution for the update coefficients
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                update[i] += yj * basis[j][i];
            }
        }
        pc.apply(&update, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
        if k_used == 0 {
            break;
        }
    }
    let res = true_residual(a, b, &x) / bnorm;
    if res <= cfg.tolerance {
        return Ok((
            x,
            LinearSolveStats {
                iterations: total,
                relative_residual: res,
                method: "gmres",
            },
        ));
    }
    trace.push(res);
    Err(LinearSolveError::NotConverged {
        iterations: total,
        residual: res,
        trace: trace.iter().rev().take(8).rev().copied().collect(),
    })
}
