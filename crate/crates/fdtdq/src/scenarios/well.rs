//! Ground state of a cubic infinite well.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::constants::{PhysicalConstants, NANOMETER, PICOSECOND};
use crate::coupling::RegionGraph;
use crate::error::{Error, Result};
use crate::grid::RegionGrid;
use crate::operators::Operators;
use crate::stability;
use crate::stepper::{FaceConditions, Simulation, StaggeredState};

/// `ψ = A sin(kx) sin(ky) sin(kz) exp(−i(E₁t/ħ + φ))`, `k = π/a`, on a cube
/// of side `a` with `cells` cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiniteWell {
    pub side: f64,
    pub cells: usize,
    pub phase: f64,
    pub constants: PhysicalConstants,
    /// Physical duration of a run; the step count follows from `Δt`.
    pub horizon: f64,
}

impl Default for InfiniteWell {
    fn default() -> Self {
        Self {
            side: 30.0 * NANOMETER,
            cells: 30,
            phase: PI / 3.0,
            constants: PhysicalConstants::electron(),
            horizon: 28.76 * PICOSECOND,
        }
    }
}

impl InfiniteWell {
    pub fn with_cells(cells: usize) -> Self {
        Self { cells, ..Self::default() }
    }

    pub fn wavenumber(&self) -> f64 {
        PI / self.side
    }

    /// `E₁ = ħ²/2m · 3k²`.
    pub fn energy(&self) -> f64 {
        let k = self.wavenumber();
        self.constants.kinetic_prefactor() * 3.0 * k * k
    }

    /// Unnormalized (`A = 1`) analytic solution.
    pub fn wavefunction(&self, pos: [f64; 3], t: f64) -> Complex64 {
        let k = self.wavenumber();
        let s: f64 = pos.iter().map(|x| (k * x).sin()).product();
        s * Complex64::from_polar(1.0, -(self.energy() * t / self.constants.hbar + self.phase))
    }

    pub fn grid(&self) -> Result<RegionGrid> {
        if self.cells == 0 || !(self.side > 0.0) {
            return Err(Error::Config("well needs a positive side and at least one cell".into()));
        }
        let d = self.side / self.cells as f64;
        RegionGrid::new([self.cells; 3], [d; 3])
    }

    pub fn operators(&self) -> Result<Arc<Operators>> {
        let g = self.grid()?;
        let n = g.node_count();
        Ok(Arc::new(Operators::new(g, self.constants, vec![0.0; n])?))
    }

    /// Sampled state with boundary nodes exactly zero, not yet normalized.
    pub fn sample(&self, grid: &RegionGrid, dt: f64) -> StaggeredState {
        let mut st = super::sample_state(grid, dt, |x, t| self.wavefunction(x, t));
        for p in 0..grid.node_count() {
            if grid.boundary_face_count(p) > 0 {
                st.psi_r[p] = 0.0;
                st.psi_i[p] = 0.0;
            }
        }
        st
    }

    pub fn steps_for(&self, dt: f64) -> u64 {
        (self.horizon / dt).round() as u64
    }

    /// Single-region graph at `Δt = dt_factor · Δt_CFL`, normalized to `℘⁰ = 1`.
    pub fn build(&self, dt_factor: f64, allow_unstable: bool) -> Result<RegionGraph> {
        let ops = self.operators()?;
        let dt = dt_factor * stability::cfl_limit(&ops);
        let st = self.sample(ops.grid(), dt);
        let sim = Simulation::new(ops, FaceConditions::dirichlet(), dt, st)?;
        let mut graph = RegionGraph::new(vec![sim], vec![], allow_unstable)?;
        super::normalize(&mut graph)?;
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ELECTRON_VOLT;
    use crate::scenarios::total_probability;

    #[test]
    fn ground_energy_matches_closed_form() {
        let e = InfiniteWell::default().energy() / ELECTRON_VOLT;
        assert!((e * 1e3 - 1.2534).abs() < 5e-5, "{e}");
    }

    #[test]
    fn sampled_state_is_normalized_with_zero_boundary() {
        let well = InfiniteWell::with_cells(8);
        let graph = well.build(0.999, false).unwrap();
        assert!((total_probability(&graph).unwrap() - 1.0).abs() < 1e-14);
        let sim = &graph.regions()[0];
        let g = sim.operators().grid();
        for p in 0..g.node_count() {
            if g.boundary_face_count(p) > 0 {
                assert_eq!(sim.psi_r()[p], 0.0);
                assert_eq!(sim.psi_i()[p], 0.0);
            }
        }
    }
}
