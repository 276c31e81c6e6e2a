//! Derived quantities: outlet temperature, coefficient of performance,
//! power, mean surface temperature and normalised line profiles.

use crate::geometry::VascularNetwork;
use crate::mesh::StructuredMesh;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocessError {
    #[error("outlet point {0:?} is not a mesh node")]
    UnmappedOutlet([f64; 3]),
    #[error("average power needs at least two records, got {0}")]
    TooFewRecords(usize),
    #[error("surface region: {0}")]
    Region(String),
    #[error("depth fraction {0} outside [0, 1]")]
    DepthFraction(f64),
    #[error("state has {got} values, mesh has {expected} nodes")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub time: f64,
    pub outlet_temperature: f64,
    pub cop: f64,
    pub power: f64,
    #[serde(default)]
    pub newton_iterations: usize,
    #[serde(default)]
    pub linear_iterations: usize,
}

/// Per-step records of one run plus the constants needed to re-derive them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub scenario_id: String,
    pub mass_flow_rate: f64,
    pub fluid_specific_heat: f64,
    pub ambient: f64,
    pub inlet_temperature: f64,
    pub records: Vec<SeriesRecord>,
}

impl TimeSeries {
    pub fn new(
        scenario_id: impl Into<String>,
        mass_flow_rate: f64,
        fluid_specific_heat: f64,
        ambient: f64,
        inlet_temperature: f64,
    ) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            mass_flow_rate,
            fluid_specific_heat,
            ambient,
            inlet_temperature,
            records: Vec::new(),
        }
    }

    /// Appends a record derived from the outlet temperature.
    pub fn push(&mut self, time: f64, outlet_temperature: f64) -> &mut SeriesRecord {
        let cop = coefficient_of_performance(self.inlet_temperature, outlet_temperature);
        if cop.below_inlet {
            log::debug!("t = {time}: outlet {outlet_temperature} K below inlet");
        }
        self.records.push(SeriesRecord {
            time,
            outlet_temperature,
            cop: cop.value,
            power: instantaneous_power(
                self.mass_flow_rate,
                self.fluid_specific_heat,
                outlet_temperature,
                self.ambient,
            ),
            newton_iterations: 0,
            linear_iterations: 0,
        });
        self.records.last_mut().unwrap()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn peak_outlet(&self) -> Option<(f64, f64)> {
        self.records
            .iter()
            .fold(None, |best: Option<(f64, f64)>, r| match best {
                Some((_, v)) if v >= r.outlet_temperature => best,
                _ => Some((r.time, r.outlet_temperature)),
            })
    }

    /// Time of peak outlet temperature if it falls before 90% of the run,
    /// otherwise `None` (no breakdown).
    pub fn breakdown_time(&self) -> Option<f64> {
        let (t_peak, _) = self.peak_outlet()?;
        let t0 = self.records.first()?.time;
        let t1 = self.records.last()?.time;
        (t_peak < t0 + 0.9 * (t1 - t0)).then_some(t_peak)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cop {
    pub value: f64,
    /// Set when the outlet is colder than the inlet; the value is negative
    /// and reported unclamped.
    pub below_inlet: bool,
}

/// `1 - theta_inlet / theta_outlet`.
pub fn coefficient_of_performance(inlet: f64, outlet: f64) -> Cop {
    Cop {
        value: 1.0 - inlet / outlet,
        below_inlet: outlet < inlet,
    }
}

/// `mdot c_f (theta_outlet - theta_amb)` in W.
pub fn instantaneous_power(mass_flow_rate: f64, specific_heat: f64, outlet: f64, ambient: f64) -> f64 {
    mass_flow_rate * specific_heat * (outlet - ambient)
}

/// Time average of the power by the trapezoidal rule on the stored steps.
pub fn average_power(series: &TimeSeries) -> Result<f64, PostprocessError> {
    average_of(&series.records.iter().map(|r| (r.time, r.power)).collect::<Vec<_>>())
}

pub fn average_of(samples: &[(f64, f64)]) -> Result<f64, PostprocessError> {
    if samples.len() < 2 {
        return Err(PostprocessError::TooFewRecords(samples.len()));
    }
    let integral: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    let span = samples[samples.len() - 1].0 - samples[0].0;
    Ok(integral / span)
}

pub fn outlet_temperature(
    theta: &[f64],
    mesh: &StructuredMesh,
    network: &VascularNetwork,
) -> Result<f64, PostprocessError> {
    if theta.len() != mesh.n_nodes() {
        return Err(PostprocessError::Dimension {
            expected: mesh.n_nodes(),
            got: theta.len(),
        });
    }
    let p = network.outlet_point();
    mesh.find_node(p)
        .map(|n| theta[n])
        .ok_or(PostprocessError::UnmappedOutlet(p))
}

/// Square region of edge `edge` on the top surface centred at `centre`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRegion {
    pub edge: f64,
    pub centre: [f64; 2],
}

impl SurfaceRegion {
    pub fn around_outlet(edge: f64, network: &VascularNetwork) -> Self {
        let p = network.outlet_point();
        Self {
            edge,
            centre: [p[0], p[1]],
        }
    }

    fn bounds(&self) -> [(f64, f64); 2] {
        let h = 0.5 * self.edge;
        [
            (self.centre[0] - h, self.centre[0] + h),
            (self.centre[1] - h, self.centre[1] + h),
        ]
    }
}

/// Integral of the linear hat pieces `(1 - s, s)` over `[a, b]` within a
/// cell `[x0, x1]`, returned for both end nodes.
fn clipped_weights(x0: f64, x1: f64, a: f64, b: f64) -> Option<[f64; 2]> {
    let lo = a.max(x0);
    let hi = b.min(x1);
    if hi <= lo {
        return None;
    }
    let h = x1 - x0;
    // integral of (x - x0)/h over [lo, hi]
    let right = ((hi - x0).powi(2) - (lo - x0).powi(2)) / (2.0 * h);
    Some([(hi - lo) - right, right])
}

/// Area-weighted mean of the bilinear surface field over the region. Cells
/// cut by the region boundary contribute their clipped part exactly.
pub fn mean_surface_temperature(
    theta: &[f64],
    mesh: &StructuredMesh,
    region: &SurfaceRegion,
) -> Result<f64, PostprocessError> {
    if theta.len() != mesh.n_nodes() {
        return Err(PostprocessError::Dimension {
            expected: mesh.n_nodes(),
            got: theta.len(),
        });
    }
    if !(region.edge > 0.0) {
        return Err(PostprocessError::Region(format!(
            "edge length {} must be positive",
            region.edge
        )));
    }
    let [(ax, bx), (ay, by)] = region.bounds();
    let (xmax, ymax) = (mesh.x[mesh.x.len() - 1], mesh.y[mesh.y.len() - 1]);
    if ax < mesh.x[0] || ay < mesh.y[0] || bx > xmax || by > ymax {
        return Err(PostprocessError::Region(format!(
            "square [{ax}, {bx}] x [{ay}, {by}] leaves the footprint"
        )));
    }
    let mut integral = 0.0;
    for j in 0..mesh.y.len() - 1 {
        let Some(wy) = clipped_weights(mesh.y[j], mesh.y[j + 1], ay, by) else {
            continue;
        };
        for i in 0..mesh.x.len() - 1 {
            let Some(wx) = clipped_weights(mesh.x[i], mesh.x[i + 1], ax, bx) else {
                continue;
            };
            for (b, wyb) in wy.iter().enumerate() {
                for (a, wxa) in wx.iter().enumerate() {
                    integral += wxa * wyb * theta[mesh.node_index(i + a, j + b, 0)];
                }
            }
        }
    }
    Ok(integral / (region.edge * region.edge))
}

/// `x / s - (alpha + 1/2)`.
pub fn normalized_length(x: f64, spacing: f64, alpha: f64) -> f64 {
    x / spacing - (alpha + 0.5)
}

/// Samples along the x-line at `y = y_line`, depth `fraction * depth`, at
/// every grid x-coordinate.
pub fn line_profile_normalized(
    theta: &[f64],
    mesh: &StructuredMesh,
    y_line: f64,
    depth: f64,
    fraction: f64,
    alpha: f64,
    spacing: f64,
) -> Result<Vec<(f64, f64)>, PostprocessError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PostprocessError::DepthFraction(fraction));
    }
    if theta.len() != mesh.n_nodes() {
        return Err(PostprocessError::Dimension {
            expected: mesh.n_nodes(),
            got: theta.len(),
        });
    }
    let z = fraction * depth;
    mesh.x
        .iter()
        .map(|&x| {
            mesh.interpolate(theta, [x, y_line, z])
                .map(|v| (normalized_length(x, spacing, alpha), v))
                .ok_or_else(|| {
                    PostprocessError::Region(format!("sample ({x}, {y_line}, {z}) outside the mesh"))
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cop_values() {
        assert_eq!(coefficient_of_performance(303.15, 303.15).value, 0.0);
        assert!((coefficient_of_performance(303.15, 420.0).value - 0.27821).abs() < 1e-5);
        assert!((coefficient_of_performance(303.15, 440.0).value - 0.31102).abs() < 1e-5);
        let low = coefficient_of_performance(303.15, 300.0);
        assert!(low.below_inlet && low.value < 0.0);
    }

    #[test]
    fn power_values() {
        assert_eq!(instantaneous_power(0.0, 4183.0, 420.0, 303.15), 0.0);
        assert_relative_eq!(
            instantaneous_power(30.0, 4183.0, 420.0, 303.15),
            14_663_506.5,
            max_relative = 1e-12
        );
        assert_eq!(instantaneous_power(30.0, 4183.0, 303.15, 303.15), 0.0);
    }

    #[test]
    fn trapezoid_average() {
        assert_relative_eq!(
            average_of(&[(0.0, 0.0), (1.0, 2.0), (3.0, 2.0)]).unwrap(),
            5.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(average_of(&[(0.0, 4.0), (2.0, 4.0), (5.0, 4.0)]).unwrap(), 4.0);
        assert_eq!(average_of(&[(0.0, 0.0), (10.0, 8.0)]).unwrap(), 4.0);
        assert!(matches!(average_of(&[(0.0, 1.0)]), Err(PostprocessError::TooFewRecords(1))));
    }

    #[test]
    fn breakdown_rule() {
        let mut s = TimeSeries::new("t", 1.0, 1.0, 300.0, 300.0);
        for (t, v) in [(0.0, 300.0), (1.0, 350.0), (2.0, 340.0), (10.0, 320.0)] {
            s.push(t, v);
        }
        assert_eq!(s.breakdown_time(), Some(1.0));
        let mut s = TimeSeries::new("t", 1.0, 1.0, 300.0, 300.0);
        for (t, v) in [(0.0, 300.0), (5.0, 310.0), (10.0, 320.0)] {
            s.push(t, v);
        }
        assert_eq!(s.breakdown_time(), None);
    }

    fn square_mesh() -> StructuredMesh {
        StructuredMesh::from_axes(
            vec![0.0, 50.0, 100.0, 150.0, 200.0],
            vec![0.0, 50.0, 100.0, 150.0, 200.0],
            vec![0.0, 10.0],
        )
        .unwrap()
    }

    #[test]
    fn mst_uniform_and_halves() {
        let m = square_mesh();
        let uniform = vec![303.15; m.n_nodes()];
        for edge in [20.0, 100.0, 130.0] {
            let r = SurfaceRegion {
                edge,
                centre: [100.0, 100.0],
            };
            assert_relative_eq!(mean_surface_temperature(&uniform, &m, &r).unwrap(), 303.15, epsilon = 1e-10);
        }
        // left half 300 K, right half 310 K; the 100 m column is the interface,
        // use a field piecewise constant by cells via a step between nodes 100 and 100+
        let m2 = StructuredMesh::from_axes(
            vec![0.0, 100.0, 100.0 + 1e-9, 200.0],
            vec![0.0, 200.0],
            vec![0.0, 10.0],
        )
        .unwrap();
        let theta: Vec<f64> = (0..m2.n_nodes())
            .map(|n| if m2.node_point(n)[0] <= 100.0 { 300.0 } else { 310.0 })
            .collect();
        let r = SurfaceRegion {
            edge: 200.0,
            centre: [100.0, 100.0],
        };
        assert_relative_eq!(mean_surface_temperature(&theta, &m2, &r).unwrap(), 305.0, epsilon = 1e-6);
        assert!(mean_surface_temperature(&theta, &m2, &SurfaceRegion { edge: 0.0, centre: [1.0, 1.0] }).is_err());
        assert!(mean_surface_temperature(&theta, &m2, &SurfaceRegion { edge: 50.0, centre: [10.0, 10.0] }).is_err());
    }

    fn radial_field(m: &StructuredMesh, c: [f64; 2]) -> Vec<f64> {
        (0..m.n_nodes())
            .map(|n| {
                let p = m.node_point(n);
                let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                303.15 + 50.0 * (-r / 60.0).exp()
            })
            .collect()
    }

    /// Brute-force mean of the bilinear interpolant on a fine pixel grid.
    fn pixel_mean(theta: &[f64], m: &StructuredMesh, r: &SurfaceRegion, n: usize) -> f64 {
        let [(ax, bx), (ay, by)] = r.bounds();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = ax + (i as f64 + 0.5) * (bx - ax) / n as f64;
                let y = ay + (j as f64 + 0.5) * (by - ay) / n as f64;
                acc += m.interpolate(theta, [x, y, 0.0]).unwrap();
            }
        }
        acc / (n * n) as f64
    }

    #[test]
    fn mst_matches_pixel_oracle_and_is_nested_monotone() {
        let m = StructuredMesh::from_axes(
            vec![0.0, 120.0, 170.0, 190.0, 200.0, 210.0, 230.0, 280.0, 400.0, 600.0],
            vec![0.0, 100.0, 180.0, 200.0, 220.0, 300.0, 400.0, 600.0],
            vec![0.0, 10.0],
        )
        .unwrap();
        let c = [200.0, 200.0];
        let theta = radial_field(&m, c);
        let mut last = f64::INFINITY;
        for edge in [100.0, 200.0, 300.0, 390.0] {
            let r = SurfaceRegion { edge, centre: c };
            let mst = mean_surface_temperature(&theta, &m, &r).unwrap();
            let oracle = pixel_mean(&theta, &m, &r, 800);
            assert!((mst - oracle).abs() < 1e-3, "{edge}: {mst} vs {oracle}");
            assert!(mst <= last);
            last = mst;
        }
    }

    #[test]
    fn normalized_length_values() {
        assert_eq!(normalized_length(3000.0 * 1.0, 3000.0, 0.5), 0.0);
        assert_eq!(normalized_length(0.0, 3000.0, 0.5), -1.0);
        assert_eq!(normalized_length(4500.0, 3000.0, 0.5), 0.5);
    }

    #[test]
    fn line_profile_on_linear_field() {
        let m = StructuredMesh::from_axes(
            vec![0.0, 1500.0, 3000.0, 4500.0, 6000.0],
            vec![0.0, 3000.0, 6000.0],
            vec![0.0, 2500.0, 5000.0, 10000.0],
        )
        .unwrap();
        let theta: Vec<f64> = (0..m.n_nodes()).map(|n| 303.15 + 0.03 * m.node_point(n)[2]).collect();
        let prof = line_profile_normalized(&theta, &m, 3000.0, 5000.0, 0.7, 0.5, 3000.0).unwrap();
        assert_eq!(prof.len(), 5);
        assert_eq!(prof[0].0, -1.0);
        for (_, v) in &prof {
            assert_relative_eq!(*v, 303.15 + 0.03 * 3500.0, epsilon = 1e-10);
        }
        assert!(matches!(
            line_profile_normalized(&theta, &m, 3000.0, 5000.0, 1.5, 0.5, 3000.0),
            Err(PostprocessError::DepthFraction(_))
        ));
    }

    proptest! {
        #[test]
        fn cop_monotone(inlet in 250.0f64..350.0, a in 1.0f64..300.0, b in 1.0f64..300.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(coefficient_of_performance(inlet, inlet + lo).value
                < coefficient_of_performance(inlet, inlet + hi).value);
        }

        #[test]
        fn power_linearity(m in 0.0f64..100.0, k in 0.0f64..5.0, dt in -50.0f64..200.0) {
            let p = instantaneous_power(m, 4183.0, 303.15 + dt, 303.15);
            let scaled = instantaneous_power(k * m, 4183.0, 303.15 + dt, 303.15);
            prop_assert!((scaled - k * p).abs() <= 1e-9 * (1.0 + p.abs() * k));
        }

        #[test]
        fn average_power_shift_invariant(vals in proptest::collection::vec(0.0f64..1e7, 2..20), shift in -1e9f64..1e9) {
            let a: Vec<(f64, f64)> = vals.iter().enumerate().map(|(i, &v)| (1e6 * i as f64, v)).collect();
            let b: Vec<(f64, f64)> = a.iter().map(|&(t, v)| (t + shift, v)).collect();
            let (x, y) = (average_of(&a).unwrap(), average_of(&b).unwrap());
            prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()));
        }

        #[test]
        fn mst_within_surface_bounds(seed in proptest::collection::vec(280.0f64..420.0, 25), edge in 1.0f64..190.0) {
            let m = square_mesh();
            let mut theta = vec![300.0; m.n_nodes()];
            theta[..25].copy_from_slice(&seed);
            let top = &theta[..25];
            let lo = top.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = mean_surface_temperature(&theta, &m, &SurfaceRegion { edge, centre: [100.0, 100.0] }).unwrap();
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }
}
