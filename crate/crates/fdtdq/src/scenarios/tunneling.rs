//! Proton tunneling between two wells through a rectangular barrier.
//!
//! Three boxes (reactant, barrier, product) of equal cross-section are joined
//! along x. The analytic solution is a thermal superposition of separable
//! eigenmodes `f(x) g(y) h(z)`, with `f` a sine in the wells and a cosh/sinh
//! in the barrier. The default geometry uses cells of 1/30 Å and a barrier
//! height recovered from the barrier region's closed-form CFL limit.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{PhysicalConstants, ANGSTROM, ATTOSECOND, BOLTZMANN, PICOSECOND, PLANCK};
use crate::coupling::{Interface, RegionGraph};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::grid::{Face, RegionGrid};
use crate::operators::Operators;
use crate::stability;
use crate::stepper::{BoundaryCondition, FaceConditions, Simulation};

/// Closed-form CFL limit of the reference barrier region.
#[allow(clippy::excessive_precision)]
pub const BARRIER_CFL: f64 = 55.844_895_610_996_282 * ATTOSECOND;

/// Invert the closed-form CFL limit for the potential magnitude.
pub fn height_from_cfl(dt: f64, spacing: [f64; 3], c: &PhysicalConstants) -> f64 {
    let inv: f64 = spacing.iter().map(|d| 1.0 / (d * d)).sum();
    c.hbar * (2.0 / dt - 2.0 * c.hbar / c.mass * inv)
}

/// One eigenmode of the table: x-parity, which root of the matching
/// condition (0 = lowest), transverse quantum numbers, and phase `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub phase: f64,
    pub root: u32,
    pub odd: bool,
    pub ny: u32,
    pub nz: u32,
}

const fn spec(phase: f64, root: u32, odd: bool, ny: u32, nz: u32) -> ModeSpec {
    ModeSpec { phase, root, odd, ny, nz }
}

/// The eight modes of the reference run.
pub const DEFAULT_MODES: [ModeSpec; 8] = [
    spec(0.15 * PI, 0, false, 1, 1),
    spec(0.95 * PI, 0, true, 1, 1),
    spec(0.25 * PI, 1, false, 1, 1),
    spec(1.1 * PI, 1, true, 1, 1),
    spec(0.0, 0, false, 2, 1),
    spec(1.3 * PI, 0, true, 2, 1),
    spec(0.0, 0, false, 1, 2),
    spec(0.7 * PI, 0, true, 1, 2),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Reactant = 0,
    Barrier = 1,
    Product = 2,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Reactant, Region::Barrier, Region::Product];

    pub fn name(self) -> &'static str {
        match self {
            Region::Reactant => "reactant",
            Region::Barrier => "barrier",
            Region::Product => "product",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tunneling {
    pub spacing: f64,
    /// Cells along x of the reactant and product wells (equal, so the modes
    /// have definite parity) and of the barrier.
    pub well_cells: usize,
    pub barrier_cells: usize,
    pub cells_y: usize,
    pub cells_z: usize,
    pub constants: PhysicalConstants,
    pub height: f64,
    pub temperature: f64,
    pub modes: Vec<ModeSpec>,
    pub horizon: f64,
}

impl Default for Tunneling {
    fn default() -> Self {
        let spacing = ANGSTROM / 30.0;
        let constants = PhysicalConstants::proton_dalton();
        Self {
            spacing,
            well_cells: 30,
            barrier_cells: 15,
            cells_y: 27,
            cells_z: 30,
            constants,
            height: height_from_cfl(BARRIER_CFL, [spacing; 3], &constants),
            temperature: 298.0,
            modes: DEFAULT_MODES.to_vec(),
            horizon: PICOSECOND,
        }
    }
}

/// A solved eigenmode. `f` is `A sin(kx)` in the reactant,
/// `B cosh(Kξ) + C sinh(Kξ)` in the barrier (ξ from its center) and
/// `D sin(k(x − l))` in the product, each in local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub spec: ModeSpec,
    pub e_x: f64,
    pub k: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub k_y: f64,
    pub k_z: f64,
    pub energy: f64,
    /// `exp(−E/2k_BT + iδ)`.
    pub weight: Complex64,
    well: f64,
    half_barrier: f64,
    l_y: f64,
    l_z: f64,
}

impl Mode {
    pub fn f(&self, region: Region, x: f64) -> f64 {
        match region {
            Region::Reactant => self.a * (self.k * x).sin(),
            Region::Barrier => {
                let xi = x - self.half_barrier;
                self.b * (self.kappa * xi).cosh() + self.c * (self.kappa * xi).sinh()
            }
            Region::Product => self.d * (self.k * (x - self.well)).sin(),
        }
    }

    pub fn df(&self, region: Region, x: f64) -> f64 {
        match region {
            Region::Reactant => self.a * self.k * (self.k * x).cos(),
            Region::Barrier => {
                let xi = x - self.half_barrier;
                self.kappa * (self.b * (self.kappa * xi).sinh() + self.c * (self.kappa * xi).cosh())
            }
            Region::Product => self.d * self.k * (self.k * (x - self.well)).cos(),
        }
    }

    pub fn g(&self, y: f64) -> f64 {
        (2.0 / self.l_y).sqrt() * (self.k_y * y).sin()
    }

    pub fn h(&self, z: f64) -> f64 {
        (2.0 / self.l_z).sqrt() * (self.k_z * z).sin()
    }
}

impl Tunneling {
    pub fn well_length(&self) -> f64 {
        self.well_cells as f64 * self.spacing
    }

    pub fn barrier_length(&self) -> f64 {
        self.barrier_cells as f64 * self.spacing
    }

    pub fn lengths_yz(&self) -> (f64, f64) {
        (self.cells_y as f64 * self.spacing, self.cells_z as f64 * self.spacing)
    }

    /// `k cot(k l) + K tanh(K l_b/2)` (even) or with `coth` (odd); zero at an
    /// eigenvalue `E_x`.
    pub fn matching_residual(&self, e_x: f64, odd: bool) -> f64 {
        let (k, kappa) = self.wavenumbers(e_x);
        let t = (0.5 * kappa * self.barrier_length()).tanh();
        k / (k * self.well_length()).tan() + kappa * if odd { t.recip() } else { t }
    }

    fn wavenumbers(&self, e_x: f64) -> (f64, f64) {
        let c = self.constants;
        ((2.0 * c.mass * e_x).sqrt() / c.hbar, (2.0 * c.mass * (self.height - e_x)).sqrt() / c.hbar)
    }

    fn kinetic(&self, k: f64) -> f64 {
        self.constants.kinetic_prefactor() * k * k
    }

    /// Bisect the matching condition with `k l ∈ ((j+½)π, (j+1)π)`.
    pub fn solve_ex(&self, root: u32, odd: bool) -> Result<f64> {
        let l = self.well_length();
        let j = root as f64;
        let mut lo = self.kinetic((j + 0.5) * PI / l);
        // Stop just short of the pole of cot(kl).
        let mut hi = (self.kinetic((j + 1.0) * PI / l) * (1.0 - 4.0 * f64::EPSILON)).min(self.height);
        let (f_lo, f_hi) = (self.matching_residual(lo, odd), self.matching_residual(hi, odd));
        if !(f_lo > 0.0 && (f_hi < 0.0 || !f_hi.is_finite()) && lo < hi) {
            return Err(Error::NoRoot(format!("matching condition has no root in bracket {root} (odd = {odd})")));
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Ok(lo);
            }
            if self.matching_residual(mid, odd) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    pub fn solve_modes(&self) -> Result<Vec<Mode>> {
        if self.modes.is_empty() {
            return Err(Error::Config("tunneling needs at least one mode".into()));
        }
        let (l, half) = (self.well_length(), 0.5 * self.barrier_length());
        let (l_y, l_z) = self.lengths_yz();
        self.modes
            .iter()
            .map(|&spec| {
                let e_x = self.solve_ex(spec.root, spec.odd)?;
                let (k, kappa) = self.wavenumbers(e_x);
                let s = (k * l).sin();
                let well = l / 2.0 - (2.0 * k * l).sin() / (4.0 * k);
                let sh2 = (2.0 * kappa * half).sinh() / (2.0 * kappa);
                // Continuity at the reactant end (ξ = −l_b/2) fixes B or C
                // relative to A; parity fixes D = ∓A.
                let (b, c, d, inner) = if spec.odd {
                    let c = -s / (kappa * half).sinh();
                    (0.0, c, 1.0, c * c * (sh2 - half))
                } else {
                    let b = s / (kappa * half).cosh();
                    (b, 0.0, -1.0, b * b * (sh2 + half))
                };
                let a = (2.0 * well + inner).sqrt().recip();
                let k_y = spec.ny as f64 * PI / l_y;
                let k_z = spec.nz as f64 * PI / l_z;
                let energy = e_x + self.kinetic(k_y) + self.kinetic(k_z);
                let weight = Complex64::from_polar((-energy / (2.0 * self.temperature * BOLTZMANN)).exp(), spec.phase);
                Ok(Mode {
                    spec,
                    e_x,
                    k,
                    kappa,
                    a,
                    b: a * b,
                    c: a * c,
                    d: a * d,
                    k_y,
                    k_z,
                    energy,
                    weight,
                    well: l,
                    half_barrier: half,
                    l_y,
                    l_z,
                })
            })
            .collect()
    }

    /// `Σ|M'|² E / Σ|M'|²`.
    pub fn analytic_energy(modes: &[Mode]) -> f64 {
        let w: f64 = modes.iter().map(|m| m.weight.norm_sqr()).sum();
        modes.iter().map(|m| m.weight.norm_sqr() * m.energy).sum::<f64>() / w
    }

    /// `h / max E`.
    pub fn shortest_period(modes: &[Mode]) -> f64 {
        PLANCK / modes.iter().map(|m| m.energy).fold(0.0, f64::max)
    }

    /// Unnormalized analytic solution in local coordinates of `region`.
    pub fn wavefunction(&self, modes: &[Mode], region: Region, pos: [f64; 3], t: f64) -> Complex64 {
        let hbar = self.constants.hbar;
        super::complex_sum(modes.iter().map(|m| {
            m.weight
                * (m.f(region, pos[0]) * m.g(pos[1]) * m.h(pos[2]))
                * Complex64::from_polar(1.0, -m.energy * t / hbar)
        }))
    }

    pub fn origin(&self, region: Region) -> f64 {
        match region {
            Region::Reactant => 0.0,
            Region::Barrier => self.well_length(),
            Region::Product => self.well_length() + self.barrier_length(),
        }
    }

    pub fn grid(&self, region: Region) -> Result<RegionGrid> {
        let nx = if region == Region::Barrier { self.barrier_cells } else { self.well_cells };
        Ok(RegionGrid::new([nx, self.cells_y, self.cells_z], [self.spacing; 3])?.with_origin([
            self.origin(region),
            0.0,
            0.0,
        ]))
    }

    pub fn operators(&self, region: Region) -> Result<Arc<Operators>> {
        let g = self.grid(region)?;
        let u = if region == Region::Barrier { self.height } else { 0.0 };
        let n = g.node_count();
        Ok(Arc::new(Operators::new(g, self.constants, vec![u; n])?))
    }

    pub fn conditions(region: Region) -> FaceConditions {
        let f = FaceConditions::dirichlet();
        match region {
            Region::Reactant => f.with(Face::East, BoundaryCondition::Coupled),
            Region::Barrier => {
                f.with(Face::West, BoundaryCondition::Coupled).with(Face::East, BoundaryCondition::Coupled)
            }
            Region::Product => f.with(Face::West, BoundaryCondition::Coupled),
        }
    }

    pub fn interfaces() -> Vec<Interface> {
        vec![
            Interface { a: 0, face_a: Face::East, b: 1, face_b: Face::West },
            Interface { a: 1, face_a: Face::East, b: 2, face_b: Face::West },
        ]
    }

    /// Closed-form CFL limit of the barrier region, which bounds the shared step.
    pub fn barrier_cfl(&self) -> Result<f64> {
        Ok(stability::cfl_limit(&*self.operators(Region::Barrier)?))
    }

    pub fn steps_for(&self, dt: f64) -> u64 {
        (self.horizon / dt).round() as u64
    }

    /// Three coupled regions at `Δt = dt_factor · Δt_CFL^b`, normalized so
    /// that `Σ℘⁰ = 1`.
    pub fn build(&self, dt_factor: f64, allow_unstable: bool) -> Result<RegionGraph> {
        let modes = self.solve_modes()?;
        let dt = dt_factor * self.barrier_cfl()?;
        let mut regions = Vec::with_capacity(3);
        for region in Region::ALL {
            let ops = self.operators(region)?;
            let x0 = self.origin(region);
            let st = super::sample_state(ops.grid(), dt, |p, t| {
                self.wavefunction(&modes, region, [p[0] - x0, p[1], p[2]], t)
            });
            regions.push(Simulation::new(ops, Self::conditions(region), dt, st)?);
        }
        let mut graph = RegionGraph::new(regions, Self::interfaces(), allow_unstable)?;
        super::normalize(&mut graph)?;
        Ok(graph)
    }

    /// Run past the stability limit, recording per-region `℘` each step until
    /// the graph's divergence guard trips or `max_steps` is reached.
    pub fn instability_trace(&self, dt_factor: f64, max_steps: u64, guard: f64) -> Result<InstabilityTrace> {
        let mut graph = self.build(dt_factor, true)?;
        graph.set_guard_factor(Some(guard));
        let dt = graph.dt();
        let norm0 = graph.initial_norm();
        let mut rows = Vec::new();
        let mut diverged_at = None;
        for _ in 0..max_steps {
            if let Err(e) = graph.step() {
                match e {
                    Error::Diverged { step, .. } => {
                        diverged_at = Some(step);
                        break;
                    }
                    e => return Err(e),
                }
            }
            let mut p = [0.0; 3];
            for (q, s) in p.iter_mut().zip(graph.regions()) {
                *q = diagnostics::probability(s.operators(), dt, s.psi_r(), s.psi_i())?;
            }
            rows.push(TraceRow { n: graph.step_index(), p, norm_ratio: graph.max_norm() / norm0 });
        }
        Ok(InstabilityTrace { dt, rows, diverged_at })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: u64,
    /// `℘` of reactant, barrier, product.
    pub p: [f64; 3],
    /// `max ‖ψ‖∞ / initial`.
    pub norm_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstabilityTrace {
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    /// Step at which the guard tripped.
    pub diverged_at: Option<u64>,
}

impl InstabilityTrace {
    pub fn min_barrier_p(&self) -> f64 {
        self.rows.iter().map(|r| r.p[1]).fold(f64::INFINITY, f64::min)
    }

    /// Rows since `|℘_b|` last rose through a tenth of its final maximum.
    pub fn final_decade(&self) -> &[TraceRow] {
        let peak = self.rows.iter().map(|r| r.p[1].abs()).fold(0.0, f64::max);
        let start = self.rows.iter().rposition(|r| r.p[1].abs() < 0.1 * peak).map_or(0, |i| i + 1);
        &self.rows[start..]
    }

    /// `|℘_b|` is non-decreasing over [`final_decade`](Self::final_decade).
    pub fn barrier_growth_is_monotone(&self) -> bool {
        self.final_decade().windows(2).all(|w| w[1].p[1].abs() >= w[0].p[1].abs())
    }

    /// Largest `|Σ℘ − 1|` while `‖ψ‖∞` stays within `ratio` of its initial value.
    pub fn total_drift_below(&self, ratio: f64) -> f64 {
        self.rows
            .iter()
            .take_while(|r| r.norm_ratio <= ratio)
            .map(|r| (r.p.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ELECTRON_VOLT;

    const MEV: f64 = 1e-3 * ELECTRON_VOLT;

    #[test]
    fn barrier_height_is_one_electronvolt() {
        let t = Tunneling::default();
        assert!((t.height / ELECTRON_VOLT - 1.0).abs() < 1e-12);
        assert!((t.barrier_cfl().unwrap() - BARRIER_CFL).abs() < 1e-6 * ATTOSECOND);
    }

    #[test]
    fn modes_satisfy_continuity_and_normalization() {
        let t = Tunneling::default();
        let (l, lb) = (t.well_length(), t.barrier_length());
        for m in t.solve_modes().unwrap() {
            let scale = m.a;
            let dscale = m.a * m.k;
            assert!((m.f(Region::Reactant, l) - m.f(Region::Barrier, 0.0)).abs() <= 1e-12 * scale);
            assert!((m.df(Region::Reactant, l) - m.df(Region::Barrier, 0.0)).abs() <= 1e-12 * dscale);
            assert!((m.f(Region::Barrier, lb) - m.f(Region::Product, 0.0)).abs() <= 1e-12 * scale);
            assert!((m.df(Region::Barrier, lb) - m.df(Region::Product, 0.0)).abs() <= 1e-12 * dscale);
            if m.spec.odd {
                assert_eq!(m.b, 0.0);
            } else {
                assert_eq!(m.c, 0.0);
            }
            // Oracle: midpoint rule with many intervals.
            let n = 200_000;
            let norm: f64 = [(Region::Reactant, l), (Region::Barrier, lb), (Region::Product, l)]
                .iter()
                .map(|&(r, len)| {
                    let h = len / n as f64;
                    (0..n).map(|i| m.f(r, (i as f64 + 0.5) * h).powi(2)).sum::<f64>() * h
                })
                .sum();
            assert!((norm - 1.0).abs() < 1e-9, "{norm}");
        }
    }

    #[test]
    fn thermal_energy_and_shortest_period() {
        let t = Tunneling::default();
        let modes = t.solve_modes().unwrap();
        let e = Tunneling::analytic_energy(&modes) / MEV;
        assert!((e - 77.5).abs() < 0.5, "{e}");
        let p = Tunneling::shortest_period(&modes) / 1e-15;
        assert!((p - 29.26).abs() < 0.01, "{p}");
    }

    #[test]
    fn missing_root_is_reported() {
        let t = Tunneling { height: 1e-3 * MEV, ..Tunneling::default() };
        assert!(matches!(t.solve_ex(3, false), Err(Error::NoRoot(_))));
    }
}
