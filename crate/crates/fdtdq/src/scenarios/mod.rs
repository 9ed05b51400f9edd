//! Analytic benchmarks: a particle in a cubic box, a Gaussian wavepacket
//! reflected by a step barrier, and a three-region tunneling system.

pub mod barrier;
pub mod tunneling;
pub mod well;

pub use barrier::{GaussianBarrier, Wavepacket};
pub use tunneling::{InstabilityTrace, Mode, ModeSpec, Tunneling};
pub use well::InfiniteWell;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::coupling::RegionGraph;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::grid::RegionGrid;
use crate::stepper::StaggeredState;
use crate::sum::pairwise_sum;

/// Sample `psi(pos, t)` into a staggered state: `ψ_R` at `t = 0` and `ψ_I` at
/// `t = −Δt/2`.
pub fn sample_state<F>(grid: &RegionGrid, dt: f64, psi: F) -> StaggeredState
where
    F: Fn([f64; 3], f64) -> Complex64 + Sync,
{
    let (psi_r, psi_i) = (0..grid.node_count())
        .into_par_iter()
        .map(|p| {
            let x = grid.position(p);
            (psi(x, 0.0).re, psi(x, -0.5 * dt).im)
        })
        .unzip();
    StaggeredState::new(psi_r, psi_i)
}

/// `Σ_regions ℘⁰` of the graph's current state.
pub fn total_probability(graph: &RegionGraph) -> Result<f64> {
    let dt = graph.dt();
    let ps = graph
        .regions()
        .iter()
        .map(|s| diagnostics::probability(s.operators(), dt, s.psi_r(), s.psi_i()))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&ps))
}

/// Rescale the graph so that the total probability is one. Returns the
/// applied factor.
pub fn normalize(graph: &mut RegionGraph) -> Result<f64> {
    let p = total_probability(graph)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("cannot normalize a state with total probability {p:e}")));
    }
    let f = p.sqrt().recip();
    graph.scale_states(f);
    Ok(f)
}

/// Complex sum with pairwise summation of each component.
pub(crate) fn complex_sum(terms: impl Iterator<Item = Complex64>) -> Complex64 {
    let (re, im): (Vec<f64>, Vec<f64>) = terms.map(|z| (z.re, z.im)).unzip();
    Complex64::new(pairwise_sum(&re), pairwise_sum(&im))
}
