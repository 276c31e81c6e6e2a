//! Scenario configuration: TOML schema, defaults, validation and hashing.

use crate::assembly::{
    ChannelCoupling, Conductivity, FaceCondition, MaterialField, SurfaceBC, STEFAN_BOLTZMANN,
};
use crate::geometry::{LayoutKind, LayoutSpec};
use crate::solver::{BdfOrder, LinearSolverConfig, NewtonConfig, Preconditioner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}` must be {expected}")]
    Type { key: String, expected: &'static str },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub length_x: f64,
    pub length_y: f64,
    pub length_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fluid {
    pub density: f64,
    pub specific_heat: f64,
    /// kg/s
    pub mass_flow_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryVariant {
    /// Lateral and bottom faces at the geothermal profile, top face
    /// convecting and radiating.
    Dirichlet,
    /// Lateral faces insulated, bottom face with the flux of the geothermal
    /// profile, top face convecting and radiating.
    Neumann,
    /// Every face at the geothermal profile.
    AllDirichlet,
}

impl BoundaryVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryVariant::Dirichlet => "dirichlet",
            BoundaryVariant::Neumann => "neumann",
            BoundaryVariant::AllDirichlet => "all-dirichlet",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "dirichlet" => Some(Self::Dirichlet),
            "neumann" => Some(Self::Neumann),
            "all-dirichlet" => Some(Self::AllDirichlet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub variant: BoundaryVariant,
    /// K/m
    pub gradient: f64,
    pub ambient_temperature: f64,
    pub inlet_temperature: f64,
    /// W/(m^2 K)
    pub heat_transfer_coefficient: f64,
    pub emissivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub time_step: f64,
    pub total_time: f64,
    pub bdf_order: u8,
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
    pub krylov_tolerance: f64,
    pub krylov_max_iterations: usize,
    pub preconditioner: Preconditioner,
    pub upwind: f64,
    pub lumped_mass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    pub cells: [usize; 3],
    pub grading_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSettings {
    pub snapshot_times: Vec<f64>,
    pub mst_edges: Vec<f64>,
    pub profile_depth_fraction: f64,
}

/// A fully resolved and validated run description. SI units, kelvin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub domain: Domain,
    pub layout: LayoutSpec,
    pub material: MaterialField,
    pub fluid: Fluid,
    pub boundary: Boundary,
    pub solver: SolverSettings,
    pub mesh: MeshSettings,
    pub output: OutputSettings,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["name"]),
    ("domain", &["length_x", "length_y", "length_z", "alpha"]),
    (
        "layout",
        &["kind", "depth", "spacing", "lateral_length", "n_laterals"],
    ),
    ("material", &["density", "specific_heat", "conductivity"]),
    (
        "fluid",
        &[
            "density",
            "specific_heat",
            "mass_flow_rate",
            "volumetric_flow_rate",
        ],
    ),
    (
        "boundary",
        &[
            "variant",
            "gradient_k_per_km",
            "ambient_temperature",
            "inlet_temperature",
            "heat_transfer_coefficient",
            "emissivity",
        ],
    ),
    (
        "solver",
        &[
            "time_step",
            "total_time",
            "bdf_order",
            "newton_tolerance",
            "newton_max_iterations",
            "krylov_tolerance",
            "krylov_max_iterations",
            "preconditioner",
            "upwind",
            "lumped_mass",
        ],
    ),
    ("mesh", &["cells_x", "cells_y", "cells_z", "grading_ratio"]),
    (
        "output",
        &["snapshot_times", "mst_edges", "profile_depth_fraction"],
    ),
];

/// True when `path` (dotted) names a key of the schema.
pub fn schema_has_key(path: &str) -> bool {
    let (section, key) = match path.split_once('.') {
        Some((s, k)) => (s, k),
        None => ("", path),
    };
    SCHEMA
        .iter()
        .any(|(s, keys)| *s == section && keys.contains(&key))
}

fn check_keys(doc: &Table) -> Result<(), ConfigError> {
    for (k, v) in doc {
        match SCHEMA.iter().find(|(s, _)| !s.is_empty() && s == k) {
            Some((section, keys)) => {
                let table = v.as_table().ok_or(ConfigError::Type {
                    key: k.clone(),
                    expected: "a table",
                })?;
                for key in table.keys() {
                    if !keys.contains(&key.as_str()) {
                        return Err(ConfigError::UnknownKey(format!("{section}.{key}")));
                    }
                }
            }
            None if schema_has_key(k) => {}
            None => return Err(ConfigError::UnknownKey(k.clone())),
        }
    }
    Ok(())
}

/// Typed access to an optional value at `section.key`.
struct Lookup<'a> {
    doc: &'a Table,
}

impl<'a> Lookup<'a> {
    fn raw(&self, path: &str) -> Option<&'a Value> {
        match path.split_once('.') {
            Some((s, k)) => self.doc.get(s)?.as_table()?.get(k),
            None => self.doc.get(path),
        }
    }

    fn f64(&self, path: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(path) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(ConfigError::Type {
                key: path.into(),
                expected: "a number",
            }),
        }
    }

    fn f64_or(&self, path: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64(path)?.unwrap_or(default))
    }

    fn usize_or(&self, path: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(path) {
            None => Ok(default),
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as usize),
            Some(_) => Err(ConfigError::Type {
                key: path.into(),
                expected: "a non-negative integer",
            }),
        }
    }

    fn bool_or(&self, path: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(path) {
            None => Ok(default),
            Some(Value::Boolean(v)) => Ok(*v),
            Some(_) => Err(ConfigError::Type {
                key: path.into(),
                expected: "a boolean",
            }),
        }
    }

    fn str(&self, path: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.raw(path) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ConfigError::Type {
                key: path.into(),
                expected: "a string",
            }),
        }
    }

    fn f64_list_or(&self, path: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(path) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(ConfigError::Type {
                        key: path.into(),
                        expected: "an array of numbers",
                    }),
                })
                .collect(),
            Some(_) => Err(ConfigError::Type {
                key: path.into(),
                expected: "an array of numbers",
            }),
        }
    }
}

fn require(cond: bool, key: &str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(invalid(key, message()))
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    require(v > 0.0 && v.is_finite(), key, || format!("must be positive, got {v}"))
}

fn unit_interval(key: &str, v: f64) -> Result<(), ConfigError> {
    require((0.0..=1.0).contains(&v), key, || format!("must lie in [0, 1], got {v}"))
}

pub const DEFAULT_AMBIENT: f64 = 303.15;

/// Parses a TOML document. Missing values take the reference defaults of the
/// chosen layout; unknown keys are rejected.
pub fn load_scenario(document: &str) -> Result<Scenario, ConfigError> {
    let doc: Table = document
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    scenario_from_table(&doc)
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_scenario(&text)
}

pub fn scenario_from_table(doc: &Table) -> Result<Scenario, ConfigError> {
    check_keys(doc)?;
    let get = Lookup { doc };

    let kind = match get.str("layout.kind")? {
        None | Some("u") => LayoutKind::U,
        Some("comb") => LayoutKind::Comb,
        Some(other) => {
            return Err(invalid("layout.kind", format!("expected \"u\" or \"comb\", got \"{other}\"")))
        }
    };
    let (default_depth, default_spacing) = match kind {
        LayoutKind::U => (5000.0, 3000.0),
        LayoutKind::Comb => (8000.0, 900.0),
    };
    let depth = get.f64_or("layout.depth", default_depth)?;
    let spacing = get.f64_or("layout.spacing", default_spacing)?;
    positive("layout.depth", depth)?;
    positive("layout.spacing", spacing)?;

    let alpha = get.f64("domain.alpha")?;
    let (lx, ly) = match alpha {
        Some(a) => {
            for k in ["domain.length_x", "domain.length_y"] {
                if get.raw(k).is_some() {
                    return Err(invalid(k, "cannot be combined with domain.alpha"));
                }
            }
            require(a >= 0.0 && a.is_finite(), "domain.alpha", || {
                format!("must be non-negative, got {a}")
            })?;
            let l = spacing * (1.0 + 2.0 * a);
            (l, l)
        }
        None => (
            get.f64_or("domain.length_x", 6000.0)?,
            get.f64_or("domain.length_y", 6000.0)?,
        ),
    };
    let domain = Domain {
        length_x: lx,
        length_y: ly,
        length_z: get.f64_or("domain.length_z", 10000.0)?,
    };
    positive("domain.length_x", domain.length_x)?;
    positive("domain.length_y", domain.length_y)?;
    positive("domain.length_z", domain.length_z)?;
    require(depth <= domain.length_z, "layout.depth", || {
        format!("{depth} m exceeds domain.length_z = {} m", domain.length_z)
    })?;

    let layout = LayoutSpec {
        kind,
        depth,
        spacing,
        lateral_length: get.f64_or("layout.lateral_length", 3000.0)?,
        n_laterals: get.usize_or("layout.n_laterals", 4)?,
        footprint_x: domain.length_x,
        footprint_y: domain.length_y,
    };
    if kind == LayoutKind::Comb {
        positive("layout.lateral_length", layout.lateral_length)?;
        require(layout.n_laterals >= 1, "layout.n_laterals", || "must be at least 1".into())?;
    }
    layout
        .build()
        .map_err(|e| invalid("layout", format!("{e} (domain {} x {} m)", lx, ly)))?;

    let conductivity = match get.raw("material.conductivity") {
        None => Conductivity::Uniform([3.5; 3]),
        Some(Value::Float(_)) | Some(Value::Integer(_)) => {
            let k = get.f64("material.conductivity")?.unwrap();
            Conductivity::Uniform([k; 3])
        }
        Some(Value::Array(_)) => {
            let v = get.f64_list_or("material.conductivity", &[])?;
            require(v.len() == 3, "material.conductivity", || {
                format!("needs 3 components, got {}", v.len())
            })?;
            Conductivity::Uniform([v[0], v[1], v[2]])
        }
        Some(_) => {
            return Err(ConfigError::Type {
                key: "material.conductivity".into(),
                expected: "a number or an array of three numbers",
            })
        }
    };
    if let Conductivity::Uniform(k) = &conductivity {
        for &c in k {
            positive("material.conductivity", c)?;
        }
    }
    let material = MaterialField {
        density: get.f64_or("material.density", 2500.0)?,
        specific_heat: get.f64_or("material.specific_heat", 790.0)?,
        conductivity,
    };
    positive("material.density", material.density)?;
    positive("material.specific_heat", material.specific_heat)?;

    let fluid_density = get.f64_or("fluid.density", 1000.0)?;
    positive("fluid.density", fluid_density)?;
    let mass_flow_rate = match (get.f64("fluid.mass_flow_rate")?, get.f64("fluid.volumetric_flow_rate")?) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "fluid.volumetric_flow_rate",
                "give either fluid.mass_flow_rate or fluid.volumetric_flow_rate",
            ))
        }
        (Some(m), None) => m,
        (None, Some(q)) => {
            require(q >= 0.0 && q.is_finite(), "fluid.volumetric_flow_rate", || {
                format!("must be non-negative, got {q}")
            })?;
            fluid_density * q
        }
        (None, None) => 30.0,
    };
    require((0.0..=1000.0).contains(&mass_flow_rate), "fluid.mass_flow_rate", || {
        format!("must lie in [0, 1000] kg/s, got {mass_flow_rate}")
    })?;
    let fluid = Fluid {
        density: fluid_density,
        specific_heat: get.f64_or("fluid.specific_heat", 4183.0)?,
        mass_flow_rate,
    };
    positive("fluid.specific_heat", fluid.specific_heat)?;

    let variant = match get.str("boundary.variant")? {
        None => BoundaryVariant::Dirichlet,
        Some(s) => BoundaryVariant::parse(s).ok_or_else(|| {
            invalid(
                "boundary.variant",
                format!("expected \"dirichlet\", \"neumann\" or \"all-dirichlet\", got \"{s}\""),
            )
        })?,
    };
    let boundary = Boundary {
        variant,
        gradient: get.f64_or("boundary.gradient_k_per_km", 30.0)? / 1000.0,
        ambient_temperature: get.f64_or("boundary.ambient_temperature", DEFAULT_AMBIENT)?,
        inlet_temperature: get.f64_or("boundary.inlet_temperature", DEFAULT_AMBIENT)?,
        heat_transfer_coefficient: get.f64_or("boundary.heat_transfer_coefficient", 0.5)?,
        emissivity: get.f64_or("boundary.emissivity", 0.9)?,
    };
    require(
        boundary.gradient >= 0.0 && boundary.gradient.is_finite(),
        "boundary.gradient_k_per_km",
        || format!("must be non-negative, got {}", boundary.gradient * 1000.0),
    )?;
    positive("boundary.ambient_temperature", boundary.ambient_temperature)?;
    positive("boundary.inlet_temperature", boundary.inlet_temperature)?;
    require(
        boundary.heat_transfer_coefficient >= 0.0 && boundary.heat_transfer_coefficient.is_finite(),
        "boundary.heat_transfer_coefficient",
        || "must be non-negative".into(),
    )?;
    unit_interval("boundary.emissivity", boundary.emissivity)?;

    let preconditioner = match get.str("solver.preconditioner")? {
        None | Some("incomplete-factorization") => Preconditioner::IncompleteFactorization,
        Some("diagonal") => Preconditioner::Diagonal,
        Some(other) => {
            return Err(invalid(
                "solver.preconditioner",
                format!("expected \"incomplete-factorization\" or \"diagonal\", got \"{other}\""),
            ))
        }
    };
    let solver = SolverSettings {
        time_step: get.f64_or("solver.time_step", 1e6)?,
        total_time: get.f64_or("solver.total_time", 2e9)?,
        bdf_order: get.usize_or("solver.bdf_order", 2)?.min(255) as u8,
        newton_tolerance: get.f64_or("solver.newton_tolerance", 1e-8)?,
        newton_max_iterations: get.usize_or("solver.newton_max_iterations", 20)?,
        krylov_tolerance: get.f64_or("solver.krylov_tolerance", 1e-10)?,
        krylov_max_iterations: get.usize_or("solver.krylov_max_iterations", 2000)?,
        preconditioner,
        upwind: get.f64_or("solver.upwind", 1.0)?,
        lumped_mass: get.bool_or("solver.lumped_mass", true)?,
    };
    positive("solver.time_step", solver.time_step)?;
    require(
        solver.total_time == 0.0 || solver.total_time >= solver.time_step,
        "solver.total_time",
        || {
            format!(
                "must be 0 or at least solver.time_step ({}), got {}",
                solver.time_step, solver.total_time
            )
        },
    )?;
    require(solver.total_time.is_finite(), "solver.total_time", || "must be finite".into())?;
    require(BdfOrder::from_int(solver.bdf_order).is_some(), "solver.bdf_order", || {
        format!("must be 1 or 2, got {}", solver.bdf_order)
    })?;
    for (k, v) in [
        ("solver.newton_tolerance", solver.newton_tolerance),
        ("solver.krylov_tolerance", solver.krylov_tolerance),
    ] {
        require(v > 0.0 && v < 1.0, k, || format!("must lie in (0, 1), got {v}"))?;
    }
    for (k, v) in [
        ("solver.newton_max_iterations", solver.newton_max_iterations),
        ("solver.krylov_max_iterations", solver.krylov_max_iterations),
    ] {
        require(v >= 1, k, || "must be at least 1".into())?;
    }
    unit_interval("solver.upwind", solver.upwind)?;

    let mesh = MeshSettings {
        cells: [
            get.usize_or("mesh.cells_x", 24)?,
            get.usize_or("mesh.cells_y", 24)?,
            get.usize_or("mesh.cells_z", 40)?,
        ],
        grading_ratio: get.f64_or("mesh.grading_ratio", 1.3)?,
    };
    for (k, v) in ["mesh.cells_x", "mesh.cells_y", "mesh.cells_z"].iter().zip(mesh.cells) {
        require(v >= 2, k, || format!("must be at least 2, got {v}"))?;
    }
    require(
        mesh.grading_ratio >= 1.0 && mesh.grading_ratio.is_finite(),
        "mesh.grading_ratio",
        || format!("must be at least 1, got {}", mesh.grading_ratio),
    )?;

    let output = OutputSettings {
        snapshot_times: get.f64_list_or("output.snapshot_times", &[])?,
        mst_edges: get.f64_list_or("output.mst_edges", &[100.0, 200.0, 300.0, 450.0])?,
        profile_depth_fraction: get.f64_or("output.profile_depth_fraction", 0.7)?,
    };
    for &t in &output.snapshot_times {
        require((0.0..=solver.total_time).contains(&t), "output.snapshot_times", || {
            format!("{t} s lies outside [0, {}]", solver.total_time)
        })?;
    }
    for &a in &output.mst_edges {
        positive("output.mst_edges", a)?;
    }
    unit_interval("output.profile_depth_fraction", output.profile_depth_fraction)?;

    let name = get.str("name")?.unwrap_or("scenario").to_string();
    require(
        !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.'),
        "name",
        || format!("\"{name}\" must be non-empty and use only letters, digits, '-', '_' or '.'"),
    )?;

    Ok(Scenario {
        name,
        domain,
        layout,
        material,
        fluid,
        boundary,
        solver,
        mesh,
        output,
    })
}

impl Scenario {
    pub fn default_u() -> Self {
        load_scenario("").expect("defaults are valid")
    }

    /// Canonical content hash (hex SHA-256) of the resolved scenario.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serialises");
        hex::encode(Sha256::digest(bytes))
    }

    /// `<name>-<first 8 hex digits of the hash>`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.name, &self.hash()[..8])
    }

    /// Lateral margin in units of the spacing: `Lx = s (1 + 2 alpha)`.
    pub fn alpha(&self) -> f64 {
        (self.domain.length_x / self.layout.spacing - 1.0) / 2.0
    }

    pub fn surface_bc(&self) -> SurfaceBC {
        let b = &self.boundary;
        use FaceCondition::*;
        // XMin, XMax, YMin, YMax, Top, Bottom
        let faces = match b.variant {
            BoundaryVariant::Dirichlet => [Dirichlet, Dirichlet, Dirichlet, Dirichlet, ConvectRadiate, Dirichlet],
            BoundaryVariant::AllDirichlet => [Dirichlet; 6],
            BoundaryVariant::Neumann => {
                let kz = match &self.material.conductivity {
                    Conductivity::Uniform(k) => k[2],
                    Conductivity::PerCell(v) => v.first().map(|k| k[2]).unwrap_or(0.0),
                };
                let zero = Neumann { flux: 0.0 };
                [zero, zero, zero, zero, ConvectRadiate, Neumann { flux: -kz * b.gradient }]
            }
        };
        SurfaceBC {
            faces,
            gradient: b.gradient,
            ambient: b.ambient_temperature,
            heat_transfer_coefficient: b.heat_transfer_coefficient,
            emissivity: b.emissivity,
            stefan_boltzmann: STEFAN_BOLTZMANN,
        }
    }

    pub fn coupling(&self) -> ChannelCoupling {
        ChannelCoupling {
            chi: self.fluid.mass_flow_rate * self.fluid.specific_heat,
            upwind: self.solver.upwind,
        }
    }

    pub fn bdf_order(&self) -> BdfOrder {
        BdfOrder::from_int(self.solver.bdf_order).expect("validated")
    }

    pub fn newton_config(&self) -> NewtonConfig {
        NewtonConfig {
            tolerance: self.solver.newton_tolerance,
            max_iterations: self.solver.newton_max_iterations,
            linear: LinearSolverConfig {
                tolerance: self.solver.krylov_tolerance,
                max_iterations: self.solver.krylov_max_iterations,
                preconditioner: self.solver.preconditioner,
            },
        }
    }

    /// Number of time steps: `round(T / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.solver.total_time / self.solver.time_step).round() as usize
    }

    /// The scenario as a complete TOML document that loads back to itself.
    pub fn to_table(&self) -> Table {
        fn t(pairs: Vec<(&str, Value)>) -> Value {
            Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
        }
        let f = Value::Float;
        let i = |v: usize| Value::Integer(v as i64);
        let list = |v: &[f64]| Value::Array(v.iter().map(|x| Value::Float(*x)).collect());
        let k = match &self.material.conductivity {
            Conductivity::Uniform(k) if k[0] == k[1] && k[1] == k[2] => f(k[0]),
            Conductivity::Uniform(k) => list(k),
            Conductivity::PerCell(_) => f(f64::NAN),
        };
        let mut doc = Table::new();
        doc.insert("name".into(), Value::String(self.name.clone()));
        doc.insert(
            "domain".into(),
            t(vec![
                ("length_x", f(self.domain.length_x)),
                ("length_y", f(self.domain.length_y)),
                ("length_z", f(self.domain.length_z)),
            ]),
        );
        doc.insert(
            "layout".into(),
            t(vec![
                ("kind", Value::String(self.layout.kind.as_str().into())),
                ("depth", f(self.layout.depth)),
                ("spacing", f(self.layout.spacing)),
                ("lateral_length", f(self.layout.lateral_length)),
                ("n_laterals", i(self.layout.n_laterals)),
            ]),
        );
        doc.insert(
            "material".into(),
            t(vec![
                ("density", f(self.material.density)),
                ("specific_heat", f(self.material.specific_heat)),
                ("conductivity", k),
            ]),
        );
        doc.insert(
            "fluid".into(),
            t(vec![
                ("density", f(self.fluid.density)),
                ("specific_heat", f(self.fluid.specific_heat)),
                ("mass_flow_rate", f(self.fluid.mass_flow_rate)),
            ]),
        );
        let b = &self.boundary;
        doc.insert(
            "boundary".into(),
            t(vec![
                ("variant", Value::String(b.variant.as_str().into())),
                ("gradient_k_per_km", f(b.gradient * 1000.0)),
                ("ambient_temperature", f(b.ambient_temperature)),
                ("inlet_temperature", f(b.inlet_temperature)),
                ("heat_transfer_coefficient", f(b.heat_transfer_coefficient)),
                ("emissivity", f(b.emissivity)),
            ]),
        );
        let s = &self.solver;
        doc.insert(
            "solver".into(),
            t(vec![
                ("time_step", f(s.time_step)),
                ("total_time", f(s.total_time)),
                ("bdf_order", i(s.bdf_order as usize)),
                ("newton_tolerance", f(s.newton_tolerance)),
                ("newton_max_iterations", i(s.newton_max_iterations)),
                ("krylov_tolerance", f(s.krylov_tolerance)),
                ("krylov_max_iterations", i(s.krylov_max_iterations)),
                (
                    "preconditioner",
                    Value::String(
                        match s.preconditioner {
                            Preconditioner::Diagonal => "diagonal",
                            Preconditioner::IncompleteFactorization => "incomplete-factorization",
                        }
                        .into(),
                    ),
                ),
                ("upwind", f(s.upwind)),
                ("lumped_mass", Value::Boolean(s.lumped_mass)),
            ]),
        );
        doc.insert(
            "mesh".into(),
            t(vec![
                ("cells_x", i(self.mesh.cells[0])),
                ("cells_y", i(self.mesh.cells[1])),
                ("cells_z", i(self.mesh.cells[2])),
                ("grading_ratio", f(self.mesh.grading_ratio)),
            ]),
        );
        doc.insert(
            "output".into(),
            t(vec![
                ("snapshot_times", list(&self.output.snapshot_times)),
                ("mst_edges", list(&self.output.mst_edges)),
                ("profile_depth_fraction", f(self.output.profile_depth_fraction)),
            ]),
        );
        doc
    }

    pub fn to_document(&self) -> String {
        toml::to_string(&self.to_table()).expect("scenario table serialises")
    }
}

/// Sets `path` (dotted, schema key) in a document table.
pub fn set_key(doc: &mut Table, path: &str, value: Value) -> Result<(), ConfigError> {
    if !schema_has_key(path) {
        return Err(ConfigError::UnknownKey(path.into()));
    }
    match path.split_once('.') {
        None => {
            doc.insert(path.into(), value);
        }
        Some((section, key)) => {
            let entry = doc
                .entry(section.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            let table = entry.as_table_mut().ok_or(ConfigError::Type {
                key: section.into(),
                expected: "a table",
            })?;
            table.insert(key.into(), value);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_default_u() {
        let s = load_scenario("").unwrap();
        assert_eq!(s.domain.length_x, 6000.0);
        assert_eq!(s.domain.length_y, 6000.0);
        assert_eq!(s.domain.length_z, 10000.0);
        assert_eq!(s.layout.kind, LayoutKind::U);
        assert_eq!(s.layout.depth, 5000.0);
        assert_eq!(s.layout.spacing, 3000.0);
        assert_eq!(s.fluid.mass_flow_rate, 30.0);
        assert_eq!(s.fluid.specific_heat, 4183.0);
        assert_eq!(s.material.conductivity, Conductivity::Uniform([3.5; 3]));
        assert_eq!(s.boundary.ambient_temperature, 303.15);
        assert_eq!(s.boundary.inlet_temperature, 303.15);
        assert!((s.boundary.gradient - 0.03).abs() < 1e-15);
        assert_eq!(s.solver.time_step, 1e6);
        assert_eq!(s.solver.total_time, 2e9);
        assert_eq!(s.n_steps(), 2000);
        assert!((s.alpha() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn comb_defaults() {
        let s = load_scenario("[layout]\nkind = \"comb\"\n").unwrap();
        assert_eq!(s.layout.depth, 8000.0);
        assert_eq!(s.layout.spacing, 900.0);
    }

    #[test]
    fn single_override() {
        let s = load_scenario("[fluid]\nmass_flow_rate = 60\n").unwrap();
        let mut d = Scenario::default_u();
        d.fluid.mass_flow_rate = 60.0;
        assert_eq!(s, d);
    }

    #[test]
    fn volumetric_rate_converts() {
        let s = load_scenario("[fluid]\nvolumetric_flow_rate = 0.02\n").unwrap();
        assert!((s.fluid.mass_flow_rate - 20.0).abs() < 1e-12);
        assert!(load_scenario("[fluid]\nvolumetric_flow_rate = 0.02\nmass_flow_rate = 20\n").is_err());
    }

    #[test]
    fn errors_name_the_key() {
        let e = load_scenario("[fluid]\nmass_flow_rate = -5\n").unwrap_err();
        assert!(e.to_string().contains("fluid.mass_flow_rate"), "{e}");
        let e = load_scenario("[solver]\ntime_stpe = 1.0\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("solver.time_stpe".into()));
        let e = load_scenario("colour = 1\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("colour".into()));
        let e = load_scenario("[layout]\ndepth = 12000.0\n").unwrap_err();
        assert!(e.to_string().contains("layout.depth"), "{e}");
        let e = load_scenario("[material]\ndensity = 0\n").unwrap_err();
        assert!(e.to_string().contains("material.density"), "{e}");
        let e = load_scenario("[solver]\ntime_step = \"big\"\n").unwrap_err();
        assert!(matches!(e, ConfigError::Type { .. }));
        let e = load_scenario("[layout]\nspacing = 7000.0\n").unwrap_err();
        assert!(e.to_string().contains("`layout`"), "{e}");
        assert!(matches!(load_scenario("[solver"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn alpha_sets_footprint() {
        let s = load_scenario("[domain]\nalpha = 1.0\n").unwrap();
        assert_eq!(s.domain.length_x, 9000.0);
        assert_eq!(s.layout.footprint_y, 9000.0);
        assert!(load_scenario("[domain]\nalpha = 1.0\nlength_x = 9000.0\n").is_err());
    }

    #[test]
    fn neumann_bottom_flux() {
        let s = load_scenario("[boundary]\nvariant = \"neumann\"\n").unwrap();
        let bc = s.surface_bc();
        match bc.faces[5] {
            FaceCondition::Neumann { flux } => assert!((flux + 3.5 * 0.03).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn document_round_trip() {
        let mut s = load_scenario("[layout]\nkind = \"comb\"\n[material]\nconductivity = [1.0, 2.0, 3.0]\n").unwrap();
        s.output.snapshot_times = vec![1e7, 2e7];
        let back = load_scenario(&s.to_document()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
    }

    #[test]
    fn set_key_rejects_unknown() {
        let mut t = Table::new();
        set_key(&mut t, "fluid.mass_flow_rate", Value::Float(10.0)).unwrap();
        assert_eq!(scenario_from_table(&t).unwrap().fluid.mass_flow_rate, 10.0);
        assert!(set_key(&mut t, "fluid.speed", Value::Float(1.0)).is_err());
    }

    const SECTIONS: [&str; 4] = [
        "[fluid]\nmass_flow_rate = 12.5\nspecific_heat = 4100\n",
        "[solver]\ntime_step = 1e7\nbdf_order = 1\n",
        "[boundary]\nemissivity = 0.0\nheat_transfer_coefficient = 2.0\n",
        "name = \"demo\"\n",
    ];

    proptest! {
        #[test]
        fn hash_invariant_under_reordering(perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(), flip in any::<bool>()) {
            let mut top = String::new();
            let mut rest = String::new();
            for &i in &perm {
                let mut sec = SECTIONS[i].to_string();
                if flip && sec.contains('\n') {
                    let lines: Vec<&str> = sec.lines().collect();
                    if lines.len() == 3 {
                        sec = format!("{}\n{}\n{}\n", lines[0], lines[2], lines[1]);
                    }
                }
                if sec.starts_with('[') { rest.push_str(&sec) } else { top.push_str(&sec) }
            }
            let reference: String = SECTIONS.iter().rev().map(|s| s.to_string()).collect();
            let a = load_scenario(&(top + &rest)).unwrap();
            let b = load_scenario(&reference).unwrap();
            prop_assert_eq!(a.hash(), b.hash());
        }
    }
}
