//! Discrete operators of the Galerkin weak form on trilinear hexahedra.
//!
//! Conventions: the test function index is the row, the trial function index
//! the column. Element integrals on axis-aligned boxes are evaluated in
//! closed form as tensor products of the 1D linear-element matrices; the
//! radiation term uses 2x2 Gauss points on each boundary face.

use crate::geometry::Point3;
use crate::mesh::{ChannelEdgeMap, StructuredMesh};
use crate::sparse::{SparseOperator, TripletBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STEFAN_BOLTZMANN: f64 = 5.67e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("material: {0}")]
    Material(String),
    #[error("channel edge {index} ({a} -> {b}) is not a grid edge")]
    NotAGridEdge { index: usize, a: usize, b: usize },
    #[error("non-positive temperature {value} K at node {node}")]
    NonPositiveTemperature { node: usize, value: f64 },
    #[error("vector length {got} does not match node count {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Conductivity {
    /// Diagonal tensor shared by every cell.
    Uniform([f64; 3]),
    /// Diagonal tensor per cell, in lexicographic cell order.
    PerCell(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialField {
    pub density: f64,
    pub specific_heat: f64,
    pub conductivity: Conductivity,
}

impl MaterialField {
    pub fn isotropic(density: f64, specific_heat: f64, k: f64) -> Self {
        Self {
            density,
            specific_heat,
            conductivity: Conductivity::Uniform([k; 3]),
        }
    }

    pub fn heat_capacity(&self) -> f64 {
        self.density * self.specific_heat
    }

    pub fn validate(&self, n_cells: usize) -> Result<(), AssemblyError> {
        if !(self.density > 0.0) || !(self.specific_heat > 0.0) {
            return Err(AssemblyError::Material(
                "density and specific heat must be positive".into(),
            ));
        }
        let ok = |k: &[f64; 3]| k.iter().all(|&v| v > 0.0 && v.is_finite());
        match &self.conductivity {
            Conductivity::Uniform(k) if !ok(k) => Err(AssemblyError::Material(
                "conductivity entries must be positive".into(),
            )),
            Conductivity::PerCell(v) if v.len() != n_cells => Err(AssemblyError::Material(format!(
                "{} conductivity entries for {} cells",
                v.len(),
                n_cells
            ))),
            Conductivity::PerCell(v) if !v.iter().all(ok) => Err(AssemblyError::Material(
                "conductivity entries must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    fn cell_conductivity(&self, cell: usize) -> [f64; 3] {
        match &self.conductivity {
            Conductivity::Uniform(k) => *k,
            Conductivity::PerCell(v) => v[cell],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    /// `z = 0`, the ground surface.
    Top,
    /// `z = Lz`.
    Bottom,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMin,
        Face::XMax,
        Face::YMin,
        Face::YMax,
        Face::Top,
        Face::Bottom,
    ];

    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::Top | Face::Bottom => 2,
        }
    }

    pub fn upper(self) -> bool {
        matches!(self, Face::XMax | Face::YMax | Face::Bottom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FaceCondition {
    /// Temperature follows the linear geothermal profile.
    Dirichlet,
    /// Prescribed outward normal heat flux `q.n` in W/m^2.
    Neumann { flux: f64 },
    /// Newton cooling plus Stefan-Boltzmann radiation to ambient.
    ConvectRadiate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceBC {
    /// Condition per face, indexed like [`Face::ALL`].
    pub faces: [FaceCondition; 6],
    /// Geothermal gradient in K/m.
    pub gradient: f64,
    pub ambient: f64,
    pub heat_transfer_coefficient: f64,
    pub emissivity: f64,
    pub stefan_boltzmann: f64,
}

impl SurfaceBC {
    pub fn condition(&self, face: Face) -> FaceCondition {
        self.faces[face as usize]
    }

    /// Prescribed temperature `m z + theta_amb`.
    pub fn profile(&self, z: f64) -> f64 {
        self.gradient * z + self.ambient
    }

    pub fn has_radiation(&self) -> bool {
        self.emissivity > 0.0
            && Face::ALL
                .iter()
                .any(|&f| self.condition(f) == FaceCondition::ConvectRadiate)
    }
}

/// Heat capacity rate of the working fluid and the upwind blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCoupling {
    /// `mdot * c_f` in W/K.
    pub chi: f64,
    /// 0 is the plain Galerkin term, 1 full upwinding.
    pub upwind: f64,
}

// 1D linear element matrices on an interval of length h.
fn mass_1d(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

fn stiff_1d(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

#[inline]
fn bits(l: usize) -> [usize; 3] {
    [l & 1, (l >> 1) & 1, (l >> 2) & 1]
}

/// Mass matrix `int rho c N_i N_j`. With `lumped`, rows are summed onto the
/// diagonal.
pub fn assemble_mass(
    mesh: &StructuredMesh,
    material: &MaterialField,
    lumped: bool,
) -> SparseOperator {
    let rc = material.heat_capacity();
    let n = mesh.n_nodes();
    let mut b = TripletBuilder::with_capacity(n, if lumped { 8 } else { 64 } * mesh.n_cells());
    mesh.for_each_cell(|[i, j, k]| {
        let h = mesh.cell_size(i, j, k);
        let nodes = mesh.cell_nodes(i, j, k);
        if lumped {
            let w = rc * h[0] * h[1] * h[2] / 8.0;
            for &a in &nodes {
                b.add(a, a, w);
            }
            return;
        }
        let (mx, my, mz) = (mass_1d(h[0]), mass_1d(h[1]), mass_1d(h[2]));
        for p in 0..8 {
            let bp = bits(p);
            for q in 0..8 {
                let bq = bits(q);
                let v = rc * mx[bp[0]][bq[0]] * my[bp[1]][bq[1]] * mz[bp[2]][bq[2]];
                b.add(nodes[p], nodes[q], v);
            }
        }
    });
    b.finalize()
}

/// Element conduction matrix for a box with diagonal conductivity `k`.
pub fn element_conduction(h: [f64; 3], k: [f64; 3]) -> [[f64; 8]; 8] {
    let m = [mass_1d(h[0]), mass_1d(h[1]), mass_1d(h[2])];
    let s = [stiff_1d(h[0]), stiff_1d(h[1]), stiff_1d(h[2])];
    let mut out = [[0.0; 8]; 8];
    for p in 0..8 {
        let bp = bits(p);
        for q in 0..8 {
            let bq = bits(q);
            let mut v = 0.0;
            for d in 0..3 {
                let mut term = k[d];
                for e in 0..3 {
                    let f = if e == d { &s[e] } else { &m[e] };
                    term *= f[bp[e]][bq[e]];
                }
                v += term;
            }
            out[p][q] = v;
        }
    }
    out
}

/// Conduction matrix `int grad N_i . K grad N_j`.
pub fn assemble_conduction(mesh: &StructuredMesh, material: &MaterialField) -> SparseOperator {
    let mut b = TripletBuilder::with_capacity(mesh.n_nodes(), 64 * mesh.n_cells());
    mesh.for_each_cell(|[i, j, k]| {
        let cell = mesh.cell_index(i, j, k);
        let ke = element_conduction(mesh.cell_size(i, j, k), material.cell_conductivity(cell));
        let nodes = mesh.cell_nodes(i, j, k);
        for p in 0..8 {
            for q in 0..8 {
                b.add(nodes[p], nodes[q], ke[p][q]);
            }
        }
    });
    b.finalize()
}

/// 2x2 channel edge matrix in (upstream, downstream) order.
pub fn channel_edge_matrix(chi_e: f64, upwind: f64) -> [[f64; 2]; 2] {
    let c = 0.5 * chi_e;
    let u = upwind * c;
    [[-c + u, c - u], [-c - u, c + u]]
}

/// Channel advection `int_Sigma chi N_i dN_j/ds`, edge by edge, plus the
/// upwind blend. Independent of the edge length.
pub fn assemble_channel_advection(
    mesh: &StructuredMesh,
    edges: &ChannelEdgeMap,
    coupling: &ChannelCoupling,
) -> Result<SparseOperator, AssemblyError> {
    let mut b = TripletBuilder::with_capacity(mesh.n_nodes(), 4 * edges.edges.len());
    for (index, e) in edges.edges.iter().enumerate() {
        let (pa, pb) = (mesh.node_ijk(e.a), mesh.node_ijk(e.b));
        let dist: usize = (0..3).map(|d| pa[d].abs_diff(pb[d])).sum();
        if dist != 1 {
            return Err(AssemblyError::NotAGridEdge {
                index,
                a: e.a,
                b: e.b,
            });
        }
        let m = channel_edge_matrix(e.flow_fraction * coupling.chi, coupling.upwind);
        let ids = [e.a, e.b];
        for p in 0..2 {
            for q in 0..2 {
                b.add(ids[p], ids[q], m[p][q]);
            }
        }
    }
    Ok(b.finalize())
}

/// One quadrilateral on a boundary face: its four nodes (tangential axis
/// `u` fastest) and edge lengths along `u` and `v`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryQuad {
    pub nodes: [usize; 4],
    pub hu: f64,
    pub hv: f64,
}

pub fn boundary_quads(mesh: &StructuredMesh, face: Face) -> Vec<BoundaryQuad> {
    let a = face.axis();
    let (u, v) = match a {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let dims = mesh.dims();
    let fixed = if face.upper() { dims[a] - 1 } else { 0 };
    let (cu, cv) = (mesh.axis(u), mesh.axis(v));
    let mut out = Vec::with_capacity((dims[u] - 1) * (dims[v] - 1));
    for jv in 0..dims[v] - 1 {
        for ju in 0..dims[u] - 1 {
            let mut nodes = [0; 4];
            for (l, slot) in nodes.iter_mut().enumerate() {
                let mut ijk = [0; 3];
                ijk[a] = fixed;
                ijk[u] = ju + (l & 1);
                ijk[v] = jv + (l >> 1);
                *slot = mesh.node_index(ijk[0], ijk[1], ijk[2]);
            }
            out.push(BoundaryQuad {
                nodes,
                hu: cu[ju + 1] - cu[ju],
                hv: cv[jv + 1] - cv[jv],
            });
        }
    }
    out
}

/// Linear boundary terms: the matrix `h_T int N_i N_j` on convecting faces,
/// and the load `h_T theta_amb int N_i - int N_i q^p` (convecting and Neumann
/// faces respectively).
pub fn assemble_surface_linear(mesh: &StructuredMesh, bc: &SurfaceBC) -> (SparseOperator, Vec<f64>) {
    let n = mesh.n_nodes();
    let mut b = TripletBuilder::new(n);
    let mut rhs = vec![0.0; n];
    for face in Face::ALL {
        let (coef, load) = match bc.condition(face) {
            FaceCondition::Dirichlet => continue,
            FaceCondition::Neumann { flux } => (0.0, -flux),
            FaceCondition::ConvectRadiate => (
                bc.heat_transfer_coefficient,
                bc.heat_transfer_coefficient * bc.ambient,
            ),
        };
        for q in boundary_quads(mesh, face) {
            let (mu, mv) = (mass_1d(q.hu), mass_1d(q.hv));
            let area = q.hu * q.hv;
            for p in 0..4 {
                rhs[q.nodes[p]] += load * area / 4.0;
                if coef == 0.0 {
                    continue;
                }
                for r in 0..4 {
                    let v = coef * mu[p & 1][r & 1] * mv[p >> 1][r >> 1];
                    b.add(q.nodes[p], q.nodes[r], v);
                }
            }
        }
    }
    (b.finalize(), rhs)
}

const GAUSS_2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Radiation residual `int N_i eps sigma (theta^4 - theta_amb^4)` and its
/// consistent Jacobian `int N_i 4 eps sigma theta^3 N_j` over convect-radiate
/// faces, both with 2x2 Gauss quadrature.
pub fn radiation_residual_jacobian(
    theta: &[f64],
    mesh: &StructuredMesh,
    bc: &SurfaceBC,
) -> Result<(Vec<f64>, SparseOperator), AssemblyError> {
    let n = mesh.n_nodes();
    if theta.len() != n {
        return Err(AssemblyError::DimensionMismatch {
            expected: n,
            got: theta.len(),
        });
    }
    let mut res = vec![0.0; n];
    let mut jac = TripletBuilder::new(n);
    let es = bc.emissivity * bc.stefan_boltzmann;
    if es == 0.0 {
        return Ok((res, jac.finalize()));
    }
    let amb4 = bc.ambient.powi(4);
    for face in Face::ALL {
        if bc.condition(face) != FaceCondition::ConvectRadiate {
            continue;
        }
        for q in boundary_quads(mesh, face) {
            for &node in &q.nodes {
                if !(theta[node] > 0.0) {
                    return Err(AssemblyError::NonPositiveTemperature {
                        node,
                        value: theta[node],
                    });
                }
            }
            let w = q.hu * q.hv / 4.0;
            let mut ke = [[0.0; 4]; 4];
            for &gu in &GAUSS_2 {
                for &gv in &GAUSS_2 {
                    let shape = [
                        (1.0 - gu) * (1.0 - gv),
                        gu * (1.0 - gv),
                        (1.0 - gu) * gv,
                        gu * gv,
                    ];
                    let t: f64 = (0..4).map(|p| shape[p] * theta[q.nodes[p]]).sum();
                    let f = es * (t.powi(4) - amb4);
                    let df = 4.0 * es * t.powi(3);
                    for p in 0..4 {
                        res[q.nodes[p]] += w * shape[p] * f;
                        for r in 0..4 {
                            ke[p][r] += w * shape[p] * shape[r] * df;
                        }
                    }
                }
            }
            for p in 0..4 {
                for r in 0..4 {
                    jac.add(q.nodes[p], q.nodes[r], ke[p][r]);
                }
            }
        }
    }
    Ok((res, jac.finalize()))
}

/// Consistent load `int N_i f` for a volumetric source (verification only).
pub fn assemble_source(mesh: &StructuredMesh, f: impl Fn(Point3) -> f64) -> Vec<f64> {
    let mut rhs = vec![0.0; mesh.n_nodes()];
    mesh.for_each_cell(|[i, j, k]| {
        let h = mesh.cell_size(i, j, k);
        let origin = [mesh.x[i], mesh.y[j], mesh.z[k]];
        let nodes = mesh.cell_nodes(i, j, k);
        let w = h[0] * h[1] * h[2] / 8.0;
        for &gx in &GAUSS_2 {
            for &gy in &GAUSS_2 {
                for &gz in &GAUSS_2 {
                    let p = [
                        origin[0] + gx * h[0],
                        origin[1] + gy * h[1],
                        origin[2] + gz * h[2],
                    ];
                    let fv = f(p);
                    let g = [gx, gy, gz];
                    for (l, &node) in nodes.iter().enumerate() {
                        let b = bits(l);
                        let mut shape = 1.0;
                        for d in 0..3 {
                            shape *= if b[d] == 1 { g[d] } else { 1.0 - g[d] };
                        }
                        rhs[node] += w * shape * fv;
                    }
                }
            }
        }
    });
    rhs
}

/// Nodes with prescribed temperature: every node on a Dirichlet face at the
/// geothermal profile, plus the inlet. The inlet value wins a conflict.
/// Sorted by node index.
pub fn dirichlet_constraints(
    mesh: &StructuredMesh,
    bc: &SurfaceBC,
    inlet: Option<(usize, f64)>,
) -> Vec<(usize, f64)> {
    let mut on_face = vec![false; mesh.n_nodes()];
    for face in Face::ALL {
        if bc.condition(face) == FaceCondition::Dirichlet {
            for n in mesh.face_nodes(face.axis(), face.upper()) {
                on_face[n] = true;
            }
        }
    }
    let mut out: Vec<(usize, f64)> = on_face
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(n, _)| (n, bc.profile(mesh.node_point(n)[2])))
        .collect();
    if let Some((node, value)) = inlet {
        match out.binary_search_by_key(&node, |&(n, _)| n) {
            Ok(p) => {
                if out[p].1 != value {
                    log::warn!(
                        "inlet node {node} is on a Dirichlet face: inlet value {value} K overrides {} K",
                        out[p].1
                    );
                }
                out[p].1 = value;
            }
            Err(p) => out.insert(p, (node, value)),
        }
    }
    out
}

/// Row replacement with column elimination: constrained rows become identity
/// rows with the prescribed value on the right; their columns are moved to
/// the right-hand side of the remaining equations.
pub fn apply_dirichlet(
    op: &SparseOperator,
    rhs: &[f64],
    constraints: &[(usize, f64)],
) -> (SparseOperator, Vec<f64>) {
    let n = op.dim();
    let mut fixed = vec![None; n];
    for &(node, v) in constraints {
        fixed[node] = Some(v);
    }
    let mut b = TripletBuilder::with_capacity(n, op.nnz());
    let mut out_rhs = rhs.to_vec();
    for i in 0..n {
        if let Some(v) = fixed[i] {
            b.add(i, i, 1.0);
            out_rhs[i] = v;
            continue;
        }
        let (cols, vals) = op.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            match fixed[j] {
                Some(g) => out_rhs[i] -= a * g,
                None => b.add(i, j, a),
            }
        }
    }
    (b.finalize(), out_rhs)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::mesh::{conforming_grid, map_channel_to_edges};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn operator_invariants(
            comb in any::<bool>(),
            n in 1usize..5,
            depth in 1000.0f64..9000.0,
            cells in 5usize..10,
            grading in 1.0f64..2.0,
            chi in 0.0f64..3e5,
            upwind in 0.0f64..=1.0,
            kz in 1.0f64..5.0,
        ) {
            let net = crate::mesh::props::network(comb, n, depth, 700.0);
            let m = conforming_grid([6000.0, 6000.0, 10000.0], &net, [cells, cells, cells + 3], grading).unwrap();
            let edges = map_channel_to_edges(&m, &net).unwrap();
            let mat = MaterialField {
                density: 2650.0,
                specific_heat: 1000.0,
                conductivity: Conductivity::Uniform([2.8, 2.8, kz]),
            };
            let coupling = ChannelCoupling { chi, upwind };
            let k = assemble_conduction(&m, &mat);
            let c = assemble_channel_advection(&m, &edges, &coupling).unwrap();
            let op = k.add(&c);
            let r = op.matvec(&vec![1.0; op.dim()]);
            prop_assert!(r.iter().all(|v| v.abs() <= 1e-12 * op.max_abs()));
            prop_assert!(k.asymmetry() < 1e-12);
            prop_assert!(assemble_mass(&m, &mat, false).asymmetry() < 1e-12);
            prop_assert_eq!(assemble_conduction(&m, &mat), k);
            prop_assert_eq!(assemble_channel_advection(&m, &edges, &coupling).unwrap(), c);
        }
    }
}
