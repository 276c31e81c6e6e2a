//! Graded axis-aligned hexahedral grids that conform to a vascular network.

use crate::geometry::{Point3, VascularNetwork};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("axis {axis}: required plane {value} outside [0, {length}]")]
    PlaneOutOfRange { axis: usize, value: f64, length: f64 },
    #[error("axis {axis}: duplicate required plane {value}")]
    DuplicatePlane { axis: usize, value: f64 },
    #[error("axis {axis}: target cell count {count} is below 2")]
    TooFewCells { axis: usize, count: usize },
    #[error("axis {axis}: coordinates are not strictly increasing")]
    NotIncreasing { axis: usize },
    #[error("axis {axis}: domain length {length} must be positive")]
    BadLength { axis: usize, length: f64 },
    #[error("grading ratio {0} must be >= 1")]
    BadGrading(f64),
    #[error("segment {segment} ({from:?} -> {to:?}) does not lie on grid nodes")]
    NonConforming {
        segment: usize,
        from: Point3,
        to: Point3,
    },
}

/// Tensor-product grid. Node `(i, j, k)` has index `i + nx*j + nx*ny*k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuredMesh {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl StructuredMesh {
    pub fn from_axes(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self, MeshError> {
        for (axis, c) in [&x, &y, &z].into_iter().enumerate() {
            if c.len() < 2 || c.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(MeshError::NotIncreasing { axis });
            }
        }
        Ok(Self { x, y, z })
    }

    pub fn uniform(lengths: [f64; 3], cells: [usize; 3]) -> Result<Self, MeshError> {
        build_graded_grid(lengths, [&[][..], &[], &[]], cells, 1.0)
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        match a {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }

    /// Node counts per axis.
    pub fn dims(&self) -> [usize; 3] {
        [self.x.len(), self.y.len(), self.z.len()]
    }

    pub fn cell_dims(&self) -> [usize; 3] {
        let d = self.dims();
        [d[0] - 1, d[1] - 1, d[2] - 1]
    }

    pub fn n_nodes(&self) -> usize {
        self.x.len() * self.y.len() * self.z.len()
    }

    pub fn n_cells(&self) -> usize {
        let c = self.cell_dims();
        c[0] * c[1] * c[2]
    }

    pub fn lengths(&self) -> [f64; 3] {
        [
            self.x[self.x.len() - 1] - self.x[0],
            self.y[self.y.len() - 1] - self.y[0],
            self.z[self.z.len() - 1] - self.z[0],
        ]
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.x.len() * (j + self.y.len() * k)
    }

    #[inline]
    pub fn node_ijk(&self, n: usize) -> [usize; 3] {
        let nx = self.x.len();
        let ny = self.y.len();
        [n % nx, (n / nx) % ny, n / (nx * ny)]
    }

    #[inline]
    pub fn node_point(&self, n: usize) -> Point3 {
        let [i, j, k] = self.node_ijk(n);
        [self.x[i], self.y[j], self.z[k]]
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        let c = self.cell_dims();
        i + c[0] * (j + c[1] * k)
    }

    /// The eight corner nodes of cell `(i, j, k)`, ordered with the x index
    /// fastest: local corner `a + 2b + 4c` sits at `(i+a, j+b, k+c)`.
    pub fn cell_nodes(&self, i: usize, j: usize, k: usize) -> [usize; 8] {
        let mut out = [0; 8];
        for (l, slot) in out.iter_mut().enumerate() {
            *slot = self.node_index(i + (l & 1), j + ((l >> 1) & 1), k + ((l >> 2) & 1));
        }
        out
    }

    pub fn cell_size(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.x[i + 1] - self.x[i],
            self.y[j + 1] - self.y[j],
            self.z[k + 1] - self.z[k],
        ]
    }

    /// Visits every cell in lexicographic order.
    pub fn for_each_cell(&self, mut f: impl FnMut([usize; 3])) {
        let c = self.cell_dims();
        for k in 0..c[2] {
            for j in 0..c[1] {
                for i in 0..c[0] {
                    f([i, j, k]);
                }
            }
        }
    }

    /// Node at exactly this point, if any.
    pub fn find_node(&self, p: Point3) -> Option<usize> {
        let i = exact_position(&self.x, p[0])?;
        let j = exact_position(&self.y, p[1])?;
        let k = exact_position(&self.z, p[2])?;
        Some(self.node_index(i, j, k))
    }

    /// Cell containing `p` and the local coordinates in `[0,1]^3`.
    pub fn locate(&self, p: Point3) -> Option<([usize; 3], [f64; 3])> {
        let mut cell = [0; 3];
        let mut local = [0.0; 3];
        for a in 0..3 {
            let c = self.axis(a);
            if p[a] < c[0] || p[a] > c[c.len() - 1] {
                return None;
            }
            let idx = c.partition_point(|&v| v <= p[a]).clamp(1, c.len() - 1) - 1;
            cell[a] = idx;
            local[a] = (p[a] - c[idx]) / (c[idx + 1] - c[idx]);
        }
        Some((cell, local))
    }

    /// Trilinear interpolation of a nodal field.
    pub fn interpolate(&self, field: &[f64], p: Point3) -> Option<f64> {
        let ([i, j, k], [u, v, w]) = self.locate(p)?;
        let nodes = self.cell_nodes(i, j, k);
        let mut acc = 0.0;
        for (l, &n) in nodes.iter().enumerate() {
            let fx = if l & 1 == 1 { u } else { 1.0 - u };
            let fy = if (l >> 1) & 1 == 1 { v } else { 1.0 - v };
            let fz = if (l >> 2) & 1 == 1 { w } else { 1.0 - w };
            acc += fx * fy * fz * field[n];
        }
        Some(acc)
    }

    /// Nodes lying on the face `axis = min` (`upper == false`) or `axis = max`.
    pub fn face_nodes(&self, axis: usize, upper: bool) -> Vec<usize> {
        let d = self.dims();
        let fixed = if upper { d[axis] - 1 } else { 0 };
        (0..self.n_nodes())
            .filter(|&n| self.node_ijk(n)[axis] == fixed)
            .collect()
    }
}

fn exact_position(c: &[f64], v: f64) -> Option<usize> {
    let idx = c.partition_point(|&x| x < v);
    (idx < c.len() && c[idx] == v).then_some(idx)
}

/// Builds the grid. Each axis is split into spans by the domain bounds and
/// the required planes. Cell sizes start from a common size at every
/// required plane and grow by at most `grading` per cell away from it; the
/// starting size is the smallest one that fits the target count. A domain
/// bound counts as required only if listed.
pub fn build_graded_grid(
    lengths: [f64; 3],
    required: [&[f64]; 3],
    targets: [usize; 3],
    grading: f64,
) -> Result<StructuredMesh, MeshError> {
    if !(grading >= 1.0) || !grading.is_finite() {
        return Err(MeshError::BadGrading(grading));
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(3);
    for a in 0..3 {
        axes.push(graded_axis(a, lengths[a], required[a], targets[a], grading)?);
    }
    let z = axes.pop().unwrap();
    let y = axes.pop().unwrap();
    let x = axes.pop().unwrap();
    StructuredMesh::from_axes(x, y, z)
}

fn graded_axis(
    axis: usize,
    length: f64,
    required: &[f64],
    target: usize,
    grading: f64,
) -> Result<Vec<f64>, MeshError> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(MeshError::BadLength { axis, length });
    }
    if target < 2 {
        return Err(MeshError::TooFewCells { axis, count: target });
    }
    let mut req: Vec<f64> = required.to_vec();
    for &v in &req {
        if !(0.0..=length).contains(&v) {
            return Err(MeshError::PlaneOutOfRange { axis, value: v, length });
        }
    }
    req.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if let Some(w) = req.windows(2).find(|w| w[0] == w[1]) {
        return Err(MeshError::DuplicatePlane { axis, value: w[0] });
    }

    let mut stations = vec![0.0];
    stations.extend(req.iter().copied().filter(|&v| v > 0.0 && v < length));
    stations.push(length);
    let spans: Vec<Span> = stations
        .windows(2)
        .map(|w| Span {
            a: w[0],
            b: w[1],
            lo: req.contains(&w[0]),
            hi: req.contains(&w[1]),
        })
        .collect();
    let r = grading;
    // smallest first cell whose ceilinged counts still fit the target
    let total = |h0: f64| -> usize { spans.iter().map(|s| s.cells(h0, r).ceil().max(1.0) as usize).sum() };
    let (mut lo, mut hi) = (length * 1e-12, length);
    if total(hi) > target {
        lo = hi;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if total(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let h0 = hi;
    let counts = fit_counts(&spans, target, |s| s.cells(h0, r));
    let coords = assemble_axis(&spans, &counts, h0, r);
    if coords.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MeshError::NotIncreasing { axis });
    }
    Ok(coords)
}

/// Part of an axis between consecutive stations; `lo`/`hi` mark ends at a
/// required plane, where cells are finest.
struct Span {
    a: f64,
    b: f64,
    lo: bool,
    hi: bool,
}

/// Number of cells needed to cover `d` starting at size `h0` and growing by
/// `r` per cell (fractional).
fn geometric_count(d: f64, h0: f64, r: f64) -> f64 {
    if r == 1.0 {
        d / h0
    } else {
        (1.0 + (r - 1.0) * d / h0).ln() / r.ln()
    }
}

fn geometric_offset(phi: f64, h0: f64, r: f64) -> f64 {
    if r == 1.0 {
        phi * h0
    } else {
        h0 * (r.powf(phi) - 1.0) / (r - 1.0)
    }
}

impl Span {
    fn len(&self) -> f64 {
        self.b - self.a
    }

    fn cells(&self, h0: f64, r: f64) -> f64 {
        match (self.lo, self.hi) {
            (true, true) => 2.0 * geometric_count(0.5 * self.len(), h0, r),
            (true, false) | (false, true) => geometric_count(self.len(), h0, r),
            (false, false) => self.len() / h0,
        }
    }

    /// Position at fractional cell coordinate `phi` in `[0, total]`.
    fn position(&self, phi: f64, total: f64, h0: f64, r: f64) -> f64 {
        match (self.lo, self.hi) {
            (true, true) if phi <= 0.5 * total => self.a + geometric_offset(phi, h0, r),
            (true, true) => self.b - geometric_offset(total - phi, h0, r),
            (true, false) => self.a + geometric_offset(phi, h0, r),
            (false, true) => self.b - geometric_offset(total - phi, h0, r),
            (false, false) => self.a + self.len() * phi / total,
        }
    }
}

/// Integer counts at least the fractional need of each span (so cells never
/// grow faster than the ratio), topped up to the target on the most
/// stretched spans.
fn fit_counts(spans: &[Span], target: usize, need: impl Fn(&Span) -> f64) -> Vec<usize> {
    let need: Vec<f64> = spans.iter().map(need).collect();
    let mut counts: Vec<usize> = need.iter().map(|v| (v.ceil() as usize).max(1)).collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned < target {
        let (i, _) = need
            .iter()
            .zip(&counts)
            .map(|(v, &c)| v / c as f64)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, q)| if q > best.1 { (i, q) } else { best });
        counts[i] += 1;
        assigned += 1;
    }
    counts
}

fn assemble_axis(spans: &[Span], counts: &[usize], h0: f64, r: f64) -> Vec<f64> {
    let mut coords = vec![spans[0].a];
    for (s, &n) in spans.iter().zip(counts) {
        let total = s.cells(h0, r);
        for i in 1..n {
            coords.push(s.position(total * i as f64 / n as f64, total, h0, r));
        }
        coords.push(s.b);
    }
    coords
}

/// Builds a grid whose planes pass through every network node.
pub fn conforming_grid(
    lengths: [f64; 3],
    network: &VascularNetwork,
    targets: [usize; 3],
    grading: f64,
) -> Result<StructuredMesh, MeshError> {
    let planes: Vec<Vec<f64>> = (0..3).map(|a| network.node_planes(a)).collect();
    build_graded_grid(lengths, [&planes[0], &planes[1], &planes[2]], targets, grading)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelEdge {
    /// Upstream node.
    pub a: usize,
    /// Downstream node.
    pub b: usize,
    pub length: f64,
    pub flow_fraction: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelEdgeMap {
    pub edges: Vec<ChannelEdge>,
    pub inlet_node: usize,
    pub outlet_node: usize,
}

impl ChannelEdgeMap {
    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }
}

/// Splits each network segment into consecutive grid edges, oriented along
/// the flow.
pub fn map_channel_to_edges(
    mesh: &StructuredMesh,
    network: &VascularNetwork,
) -> Result<ChannelEdgeMap, MeshError> {
    let mut edges = Vec::new();
    for (si, seg) in network.segments.iter().enumerate() {
        let (pa, pb) = (network.nodes[seg.from], network.nodes[seg.to]);
        let err = || MeshError::NonConforming {
            segment: si,
            from: pa,
            to: pb,
        };
        let na = mesh.find_node(pa).ok_or_else(err)?;
        let nb = mesh.find_node(pb).ok_or_else(err)?;
        let axis = network.segment_axis(si).ok_or_else(err)?;
        let ia = mesh.node_ijk(na);
        let ib = mesh.node_ijk(nb);
        let coords = mesh.axis(axis);
        let mut cur = ia;
        while cur[axis] != ib[axis] {
            let mut next = cur;
            if ib[axis] > cur[axis] {
                next[axis] += 1;
            } else {
                next[axis] -= 1;
            }
            edges.push(ChannelEdge {
                a: mesh.node_index(cur[0], cur[1], cur[2]),
                b: mesh.node_index(next[0], next[1], next[2]),
                length: (coords[next[axis]] - coords[cur[axis]]).abs(),
                flow_fraction: seg.flow_fraction,
                segment: si,
            });
            cur = next;
        }
    }
    let inlet_node = mesh.find_node(network.inlet_point()).ok_or(MeshError::NonConforming {
        segment: 0,
        from: network.inlet_point(),
        to: network.inlet_point(),
    })?;
    let outlet_node = mesh.find_node(network.outlet_point()).ok_or(MeshError::NonConforming {
        segment: network.segments.len().saturating_sub(1),
        from: network.outlet_point(),
        to: network.outlet_point(),
    })?;
    Ok(ChannelEdgeMap {
        edges,
        inlet_node,
        outlet_node,
    })
}
