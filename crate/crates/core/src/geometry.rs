//! Vascular layouts: the U-shaped loop and the comb (ladder) network.
//!
//! Coordinates are metres with `z` positive downward and the origin on the
//! top surface, so the inlet and outlet sit at `z = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("layout parameter `{name}` must be positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("layout exceeds footprint: {0}")]
    OutOfFootprint(String),
    #[error("segment {index} is not axis-aligned or has zero length")]
    BadSegment { index: usize },
    #[error("network is not connected from inlet to outlet: {0}")]
    Disconnected(String),
    #[error("network contains a cycle")]
    Cyclic,
    #[error("arc length {query} outside [0, {total}]")]
    ArcLengthOutOfRange { query: f64, total: f64 },
    #[error("wrong layout kind for this builder: expected {0}")]
    WrongKind(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    U,
    Comb,
}

impl LayoutKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayoutKind::U => "u",
            LayoutKind::Comb => "comb",
        }
    }
}

/// Parameters of a vascular layout inside a rectangular footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub kind: LayoutKind,
    /// Depth of the horizontal part of the network.
    pub depth: f64,
    /// Leg separation (U) or lateral spacing (comb).
    pub spacing: f64,
    /// Length of each comb lateral; ignored for U.
    pub lateral_length: f64,
    /// Number of comb laterals; ignored for U.
    pub n_laterals: usize,
    pub footprint_x: f64,
    pub footprint_y: f64,
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        positive("depth", self.depth)?;
        positive("spacing", self.spacing)?;
        positive("footprint_x", self.footprint_x)?;
        positive("footprint_y", self.footprint_y)?;
        if self.kind == LayoutKind::Comb {
            positive("lateral_length", self.lateral_length)?;
            if self.n_laterals == 0 {
                return Err(GeometryError::NonPositive {
                    name: "n_laterals",
                    value: 0.0,
                });
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<VascularNetwork, GeometryError> {
        match self.kind {
            LayoutKind::U => build_u_layout(self),
            LayoutKind::Comb => build_comb_layout(self),
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), GeometryError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: usize,
    pub to: usize,
    pub flow_fraction: f64,
}

/// Directed network of axis-aligned channel segments. Flow runs `from -> to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VascularNetwork {
    pub nodes: Vec<Point3>,
    pub segments: Vec<Segment>,
    pub inlet: usize,
    pub outlet: usize,
}

impl VascularNetwork {
    /// Checks the structural invariants and assigns flow fractions.
    pub fn new(
        nodes: Vec<Point3>,
        segments: Vec<(usize, usize)>,
        inlet: usize,
        outlet: usize,
    ) -> Result<Self, GeometryError> {
        let segments = segments
            .into_iter()
            .map(|(from, to)| Segment {
                from,
                to,
                flow_fraction: 0.0,
            })
            .collect();
        let mut net = VascularNetwork {
            nodes,
            segments,
            inlet,
            outlet,
        };
        for i in 0..net.segments.len() {
            if net.segment_axis(i).is_none() {
                return Err(GeometryError::BadSegment { index: i });
            }
        }
        flow_fractions(&mut net)?;
        Ok(net)
    }

    /// Index of the single coordinate that varies along segment `i`.
    pub fn segment_axis(&self, i: usize) -> Option<usize> {
        let s = &self.segments[i];
        let (a, b) = (self.nodes.get(s.from)?, self.nodes.get(s.to)?);
        let differing: Vec<usize> = (0..3).filter(|&k| a[k] != b[k]).collect();
        match differing.as_slice() {
            [k] => Some(*k),
            _ => None,
        }
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        let s = &self.segments[i];
        let (a, b) = (self.nodes[s.from], self.nodes[s.to]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Unit tangent pointing along the flow.
    pub fn segment_tangent(&self, i: usize) -> Point3 {
        let s = &self.segments[i];
        let (a, b) = (self.nodes[s.from], self.nodes[s.to]);
        let len = self.segment_length(i);
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len, (b[2] - a[2]) / len]
    }

    pub fn total_length(&self) -> f64 {
        (0..self.segments.len()).map(|i| self.segment_length(i)).sum()
    }

    pub fn max_depth(&self) -> f64 {
        self.nodes.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inlet_point(&self) -> Point3 {
        self.nodes[self.inlet]
    }

    pub fn outlet_point(&self) -> Point3 {
        self.nodes[self.outlet]
    }

    /// Segments along the spine: from the inlet, always follow the
    /// lowest-index outgoing segment until the outlet is reached.
    pub fn spine(&self) -> Vec<usize> {
        let mut path = Vec::new();
        let mut node = self.inlet;
        while node != self.outlet {
            match self.segments.iter().position(|s| s.from == node) {
                Some(i) => {
                    path.push(i);
                    node = self.segments[i].to;
                }
                None => break,
            }
            if path.len() > self.segments.len() {
                break;
            }
        }
        path
    }

    pub fn spine_length(&self) -> f64 {
        self.spine().iter().map(|&i| self.segment_length(i)).sum()
    }

    /// Point and flow tangent at arc length `s` measured from the inlet
    /// along the spine.
    pub fn arclength_and_tangent(&self, s: f64) -> Result<(Point3, Point3), GeometryError> {
        let total = self.spine_length();
        if !(0.0..=total).contains(&s) {
            return Err(GeometryError::ArcLengthOutOfRange { query: s, total });
        }
        let spine = self.spine();
        let mut start = 0.0;
        for (k, &i) in spine.iter().enumerate() {
            let len = self.segment_length(i);
            if s <= start + len || k + 1 == spine.len() {
                return Ok(self.point_on_segment(i, s - start));
            }
            start += len;
        }
        unreachable!("spine is non-empty for a validated network")
    }

    /// Point and tangent at local arc length `local` along segment `i`.
    pub fn point_on_segment(&self, i: usize, local: f64) -> (Point3, Point3) {
        let a = self.nodes[self.segments[i].from];
        let t = self.segment_tangent(i);
        let local = local.clamp(0.0, self.segment_length(i));
        (
            [a[0] + local * t[0], a[1] + local * t[1], a[2] + local * t[2]],
            t,
        )
    }

    /// Distinct coordinates used by the nodes along axis `axis`, sorted.
    pub fn node_planes(&self, axis: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.nodes.iter().map(|p| p[axis]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }
}

/// U-shaped loop: inlet leg down, one horizontal run, outlet leg up.
pub fn build_u_layout(spec: &LayoutSpec) -> Result<VascularNetwork, GeometryError> {
    if spec.kind != LayoutKind::U {
        return Err(GeometryError::WrongKind("u"));
    }
    spec.validate()?;
    if spec.spacing >= spec.footprint_x {
        return Err(GeometryError::OutOfFootprint(format!(
            "spacing {} must be < footprint_x {}",
            spec.spacing, spec.footprint_x
        )));
    }
    let x_in = 0.5 * (spec.footprint_x - spec.spacing);
    let x_out = 0.5 * (spec.footprint_x + spec.spacing);
    let y = 0.5 * spec.footprint_y;
    let d = spec.depth;
    let nodes = vec![[x_in, y, 0.0], [x_in, y, d], [x_out, y, d], [x_out, y, 0.0]];
    VascularNetwork::new(nodes, vec![(0, 1), (1, 2), (2, 3)], 0, 3)
}

/// Comb network: inlet leg, inlet manifold along y, `n_laterals` laterals in
/// +x, outlet manifold, outlet leg. Both legs sit at `y = Ly/2`; laterals are
/// centred on `Ly/2` and spaced `spacing` apart.
pub fn build_comb_layout(spec: &LayoutSpec) -> Result<VascularNetwork, GeometryError> {
    if spec.kind != LayoutKind::Comb {
        return Err(GeometryError::WrongKind("comb"));
    }
    spec.validate()?;
    let n = spec.n_laterals;
    let yc = 0.5 * spec.footprint_y;
    let half_span = 0.5 * (n as f64 - 1.0) * spec.spacing;
    if yc - half_span <= 0.0 || yc + half_span >= spec.footprint_y {
        return Err(GeometryError::OutOfFootprint(format!(
            "{} laterals at spacing {} span {} m, footprint_y is {}",
            n,
            spec.spacing,
            2.0 * half_span,
            spec.footprint_y
        )));
    }
    if spec.lateral_length >= spec.footprint_x {
        return Err(GeometryError::OutOfFootprint(format!(
            "lateral_length {} must be < footprint_x {}",
            spec.lateral_length, spec.footprint_x
        )));
    }
    let x_in = 0.5 * (spec.footprint_x - spec.lateral_length);
    let x_out = 0.5 * (spec.footprint_x + spec.lateral_length);
    let d = spec.depth;

    // Manifold stations along y: lateral positions plus the leg junction.
    let mut ys: Vec<f64> = (0..n)
        .map(|k| yc - half_span + k as f64 * spec.spacing)
        .collect();
    if !ys.iter().any(|&y| y == yc) {
        ys.push(yc);
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let junction = ys.iter().position(|&y| y == yc).unwrap();
    let lateral_at = |y: f64| ys.len() == n || y != yc;

    let mut nodes = vec![[x_in, yc, 0.0]];
    let mut segs = Vec::new();
    let in_base = nodes.len();
    nodes.extend(ys.iter().map(|&y| [x_in, y, d]));
    let out_base = nodes.len();
    nodes.extend(ys.iter().map(|&y| [x_out, y, d]));
    let outlet = nodes.len();
    nodes.push([x_out, yc, 0.0]);

    segs.push((0, in_base + junction));
    // inlet manifold flows away from the junction
    for k in (0..junction).rev() {
        segs.push((in_base + k + 1, in_base + k));
    }
    for k in junction + 1..ys.len() {
        segs.push((in_base + k - 1, in_base + k));
    }
    for (k, &y) in ys.iter().enumerate() {
        if lateral_at(y) {
            segs.push((in_base + k, out_base + k));
        }
    }
    // outlet manifold flows toward the junction
    for k in 0..junction {
        segs.push((out_base + k, out_base + k + 1));
    }
    for k in (junction + 1..ys.len()).rev() {
        segs.push((out_base + k, out_base + k - 1));
    }
    segs.push((out_base + junction, outlet));
    VascularNetwork::new(nodes, segs, 0, outlet)
}

/// Assigns flow fractions by equal split over inlet-to-outlet paths: each
/// segment carries the share of paths that traverse it. For the comb this is
/// `1/n` per lateral with manifold segments carrying the partial sums.
pub fn flow_fractions(net: &mut VascularNetwork) -> Result<(), GeometryError> {
    let n = net.nodes.len();
    if net.inlet >= n || net.outlet >= n {
        return Err(GeometryError::Disconnected("inlet/outlet index out of range".into()));
    }
    let mut out_edges = vec![Vec::new(); n];
    let mut in_deg = vec![0usize; n];
    for (i, s) in net.segments.iter().enumerate() {
        if s.from >= n || s.to >= n {
            return Err(GeometryError::BadSegment { index: i });
        }
        out_edges[s.from].push(i);
        in_deg[s.to] += 1;
    }
    if in_deg[net.inlet] != 0 {
        return Err(GeometryError::Disconnected("inlet has incoming segments".into()));
    }
    if !out_edges[net.outlet].is_empty() {
        return Err(GeometryError::Disconnected("outlet has outgoing segments".into()));
    }

    // Kahn topological order
    let mut deg = in_deg.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&v| deg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = stack.pop() {
        order.push(v);
        for &e in &out_edges[v] {
            let w = net.segments[e].to;
            deg[w] -= 1;
            if deg[w] == 0 {
                stack.push(w);
            }
        }
    }
    if order.len() != n {
        return Err(GeometryError::Cyclic);
    }

    // paths from inlet to v, and from v to outlet
    let mut from_inlet = vec![0f64; n];
    from_inlet[net.inlet] = 1.0;
    for &v in &order {
        for &e in &out_edges[v] {
            from_inlet[net.segments[e].to] += from_inlet[v];
        }
    }
    let mut to_outlet = vec![0f64; n];
    to_outlet[net.outlet] = 1.0;
    for &v in order.iter().rev() {
        for &e in &out_edges[v] {
            to_outlet[v] += to_outlet[net.segments[e].to];
        }
    }
    let total = from_inlet[net.outlet];
    if total == 0.0 {
        return Err(GeometryError::Disconnected("no path from inlet to outlet".into()));
    }
    for (v, p) in net.nodes.iter().enumerate() {
        if from_inlet[v] == 0.0 || to_outlet[v] == 0.0 {
            return Err(GeometryError::Disconnected(format!(
                "node {v} at {p:?} is not on an inlet-to-outlet path"
            )));
        }
    }
    for s in net.segments.iter_mut() {
        s.flow_fraction = from_inlet[s.from] * to_outlet[s.to] / total;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn u_spec() -> LayoutSpec {
        LayoutSpec {
            kind: LayoutKind::U,
            depth: 5000.0,
            spacing: 3000.0,
            lateral_length: 3000.0,
            n_laterals: 1,
            footprint_x: 6000.0,
            footprint_y: 6000.0,
        }
    }

    fn comb_spec(n: usize) -> LayoutSpec {
        LayoutSpec {
            kind: LayoutKind::Comb,
            depth: 8000.0,
            spacing: 900.0,
            lateral_length: 3000.0,
            n_laterals: n,
            footprint_x: 6000.0,
            footprint_y: 6000.0,
        }
    }

    fn fractions_of_axis(net: &VascularNetwork, axis: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..net.segments.len())
            .filter(|&i| net.segment_axis(i) == Some(axis))
            .map(|i| net.segments[i].flow_fraction)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn u_layout_reference_values() {
        let net = build_u_layout(&u_spec()).unwrap();
        assert_eq!(
            net.nodes,
            vec![
                [1500.0, 3000.0, 0.0],
                [1500.0, 3000.0, 5000.0],
                [4500.0, 3000.0, 5000.0],
                [4500.0, 3000.0, 0.0]
            ]
        );
        assert_eq!(net.segments.len(), 3);
        assert_eq!(net.total_length(), 13000.0);
        assert!(net.segments.iter().all(|s| s.flow_fraction == 1.0));
    }

    #[test]
    fn u_layout_rejects_zero_depth_and_wide_spacing() {
        let mut spec = u_spec();
        spec.depth = 0.0;
        assert!(matches!(
            build_u_layout(&spec),
            Err(GeometryError::NonPositive { name: "depth", .. })
        ));
        let mut spec = u_spec();
        spec.spacing = 6000.0;
        assert!(matches!(build_u_layout(&spec), Err(GeometryError::OutOfFootprint(_))));
    }

    #[test]
    fn comb_two_laterals() {
        let net = build_comb_layout(&comb_spec(2)).unwrap();
        let ys: Vec<f64> = (0..net.segments.len())
            .filter(|&i| net.segment_axis(i) == Some(0))
            .map(|i| net.nodes[net.segments[i].from][1])
            .collect();
        assert_eq!(ys, vec![2550.0, 3450.0]);
        assert_relative_eq!(net.total_length(), 23800.0);
        assert_eq!(fractions_of_axis(&net, 0), vec![0.5, 0.5]);
        assert_eq!(fractions_of_axis(&net, 1), vec![0.5; 4]);
        assert_eq!(fractions_of_axis(&net, 2), vec![1.0, 1.0]);
    }

    #[test]
    fn comb_four_laterals_fractions() {
        let net = build_comb_layout(&comb_spec(4)).unwrap();
        assert_eq!(fractions_of_axis(&net, 0), vec![0.25; 4]);
        // centre-fed manifolds: junction->inner stations carry 0.5, inner->outer 0.25
        assert_eq!(
            fractions_of_axis(&net, 1),
            vec![0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn single_lateral_comb_is_a_u() {
        let net = build_comb_layout(&comb_spec(1)).unwrap();
        assert_eq!(net.segments.len(), 3);
        assert_eq!(net.max_depth(), 8000.0);
        assert_eq!(net.total_length(), 2.0 * 8000.0 + 3000.0);
    }

    #[test]
    fn comb_out_of_footprint() {
        let mut spec = comb_spec(6);
        assert!(build_comb_layout(&spec).is_ok());
        spec.n_laterals = 8;
        assert!(matches!(build_comb_layout(&spec), Err(GeometryError::OutOfFootprint(_))));
    }

    #[test]
    fn arclength_queries() {
        let net = build_u_layout(&u_spec()).unwrap();
        let (p, t) = net.arclength_and_tangent(0.0).unwrap();
        assert_eq!(p, [1500.0, 3000.0, 0.0]);
        assert_eq!(t, [0.0, 0.0, 1.0]);
        let (p, t) = net.arclength_and_tangent(6000.0).unwrap();
        assert_eq!(p, [2500.0, 3000.0, 5000.0]);
        assert_eq!(t, [1.0, 0.0, 0.0]);
        let (p, t) = net.arclength_and_tangent(13000.0).unwrap();
        assert_eq!(p, [4500.0, 3000.0, 0.0]);
        assert_eq!(t, [0.0, 0.0, -1.0]);
        assert!(net.arclength_and_tangent(13000.5).is_err());
        assert!(net.arclength_and_tangent(-1.0).is_err());
    }

    #[test]
    fn disconnected_and_cyclic_networks() {
        let nodes = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [5.0, 0.0, 1.0]];
        let err = VascularNetwork::new(nodes.clone(), vec![(0, 1), (1, 2)], 0, 3).unwrap_err();
        assert!(matches!(err, GeometryError::Disconnected(_)));
        let err =
            VascularNetwork::new(nodes, vec![(0, 1), (1, 2), (2, 1), (2, 3)], 0, 3).unwrap_err();
        assert_eq!(err, GeometryError::Cyclic);
    }

    #[test]
    fn diagonal_segment_rejected() {
        let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]];
        assert_eq!(
            VascularNetwork::new(nodes, vec![(0, 1)], 0, 1).unwrap_err(),
            GeometryError::BadSegment { index: 0 }
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn comb_invariants(n in 1usize..7, spacing in 100.0f64..800.0, lat in 500.0f64..5000.0, d in 500.0f64..9000.0) {
                let spec = LayoutSpec {
                    kind: LayoutKind::Comb, depth: d, spacing, lateral_length: lat,
                    n_laterals: n, footprint_x: 6000.0, footprint_y: 6000.0,
                };
                let net = build_comb_layout(&spec).unwrap();
                // conservation at interior nodes
                for v in 0..net.nodes.len() {
                    if v == net.inlet || v == net.outlet { continue; }
                    let inflow: f64 = net.segments.iter().filter(|s| s.to == v).map(|s| s.flow_fraction).sum();
                    let outflow: f64 = net.segments.iter().filter(|s| s.from == v).map(|s| s.flow_fraction).sum();
                    prop_assert!((inflow - outflow).abs() < 1e-12);
                }
                // every vertical cut between the legs is crossed by unit flow
                let cut = 0.5 * 6000.0;
                let crossing: f64 = net.segments.iter().filter(|s| {
                    let (a, b) = (net.nodes[s.from][0], net.nodes[s.to][0]);
                    a.min(b) < cut && a.max(b) > cut
                }).map(|s| s.flow_fraction).sum();
                prop_assert!((crossing - 1.0).abs() < 1e-12);
                // horizontal cuts: unit flow down, unit flow up
                let zc = 0.5 * d;
                let signed: f64 = net.segments.iter().enumerate().filter(|(_, s)| {
                    let (a, b) = (net.nodes[s.from][2], net.nodes[s.to][2]);
                    a.min(b) < zc && a.max(b) > zc
                }).map(|(i, s)| s.flow_fraction * net.segment_tangent(i)[2]).sum();
                prop_assert!(signed.abs() < 1e-12);
                for i in 0..net.segments.len() {
                    let t = net.segment_tangent(i);
                    let norm = (t[0]*t[0] + t[1]*t[1] + t[2]*t[2]).sqrt();
                    prop_assert!((norm - 1.0).abs() < 1e-15);
                    prop_assert_eq!(t.iter().filter(|c| c.abs() == 1.0).count(), 1);
                }
                prop_assert_eq!(build_comb_layout(&spec).unwrap(), net);
            }
        }
    }
}
