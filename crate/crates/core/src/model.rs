//! The discretised thermal model of one scenario.

use crate::assembly::{
    assemble_channel_advection, assemble_conduction, assemble_mass, assemble_surface_linear,
    dirichlet_constraints, radiation_residual_jacobian, AssemblyError, SurfaceBC,
};
use crate::geometry::{GeometryError, VascularNetwork};
use crate::mesh::{conforming_grid, map_channel_to_edges, ChannelEdgeMap, MeshError, StructuredMesh};
use crate::scenario::Scenario;
use crate::solver::{SemiDiscrete, SolverError, ThermalState};
use crate::sparse::SparseOperator;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Mesh, channel map and assembled operators of a scenario:
/// `M dθ/dt + (K + C + H) θ + r_rad(θ) = b`.
pub struct ThermalModel {
    pub mesh: StructuredMesh,
    pub network: VascularNetwork,
    pub edges: ChannelEdgeMap,
    pub bc: SurfaceBC,
    pub mass: SparseOperator,
    pub stiffness: SparseOperator,
    pub load: Vec<f64>,
    pub constraints: Vec<(usize, f64)>,
    radiation: bool,
}

impl ThermalModel {
    pub fn build(scenario: &Scenario) -> Result<Self, ModelError> {
        let network = scenario.layout.build()?;
        let d = &scenario.domain;
        let mesh = conforming_grid(
            [d.length_x, d.length_y, d.length_z],
            &network,
            scenario.mesh.cells,
            scenario.mesh.grading_ratio,
        )?;
        Self::on_mesh(scenario, mesh, network)
    }

    /// Builds on a given mesh, which must contain every network node.
    pub fn on_mesh(
        scenario: &Scenario,
        mesh: StructuredMesh,
        network: VascularNetwork,
    ) -> Result<Self, ModelError> {
        scenario.material.validate(mesh.n_cells())?;
        let edges = map_channel_to_edges(&mesh, &network)?;
        let bc = scenario.surface_bc();
        let mass = assemble_mass(&mesh, &scenario.material, scenario.solver.lumped_mass);
        let conduction = assemble_conduction(&mesh, &scenario.material);
        let channel = assemble_channel_advection(&mesh, &edges, &scenario.coupling())?;
        let (surface, load) = assemble_surface_linear(&mesh, &bc);
        let stiffness = conduction.add(&channel).add(&surface);
        let constraints = dirichlet_constraints(
            &mesh,
            &bc,
            Some((edges.inlet_node, scenario.boundary.inlet_temperature)),
        );
        let radiation = bc.has_radiation();
        Ok(Self {
            mesh,
            network,
            edges,
            bc,
            mass,
            stiffness,
            load,
            constraints,
            radiation,
        })
    }

    /// The linear geothermal profile `m z + theta_amb` at every node, with
    /// the inlet at its prescribed value.
    pub fn initial_state(&self) -> ThermalState {
        let mut theta: Vec<f64> = (0..self.mesh.n_nodes())
            .map(|n| self.bc.profile(self.mesh.node_point(n)[2]))
            .collect();
        for &(n, v) in &self.constraints {
            theta[n] = v;
        }
        ThermalState::new(theta, 0.0)
    }

    pub fn outlet_node(&self) -> usize {
        self.edges.outlet_node
    }

    pub fn has_radiation(&self) -> bool {
        self.radiation
    }
}

impl SemiDiscrete for ThermalModel {
    fn dim(&self) -> usize {
        self.mesh.n_nodes()
    }

    fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    fn load(&self, _time: f64) -> Vec<f64> {
        self.load.clone()
    }

    fn nonlinear(&self, theta: &[f64]) -> Result<Option<(Vec<f64>, SparseOperator)>, SolverError> {
        if !self.radiation {
            return Ok(None);
        }
        Ok(Some(radiation_residual_jacobian(theta, &self.mesh, &self.bc)?))
    }

    fn is_linear(&self) -> bool {
        !self.radiation
    }

    fn constraints(&self, _time: f64) -> Vec<(usize, f64)> {
        self.constraints.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;

    #[test]
    fn initial_state_follows_profile() {
        let s = load_scenario("[mesh]\ncells_x = 6\ncells_y = 6\ncells_z = 8\n").unwrap();
        let m = ThermalModel::build(&s).unwrap();
        let init = m.initial_state();
        assert_eq!(init.temperatures[m.outlet_node()], 303.15);
        let bottom = m.mesh.face_nodes(2, true);
        for n in bottom {
            assert!((init.temperatures[n] - 603.15).abs() < 1e-9);
        }
    }

    #[test]
    fn channel_off_gives_symmetric_stiffness() {
        let s = load_scenario("[mesh]\ncells_x = 4\ncells_y = 4\ncells_z = 6\n[fluid]\nmass_flow_rate = 0\n").unwrap();
        let m = ThermalModel::build(&s).unwrap();
        assert!(m.stiffness.asymmetry() < 1e-9 * m.stiffness.max_abs());
    }
}
