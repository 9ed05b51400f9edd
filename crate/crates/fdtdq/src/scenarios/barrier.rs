//! Gaussian wavepacket reflected by a potential step.
//!
//! The packet is the superposition of plane waves `A_p e^{−i(ω_p t − k_p(x−x₀))}`
//! with `A_p = exp(−¼((k_p − k̄)/σ)²)`. Each is split at the step `x = a`
//! into reflected and transmitted parts with `R = (k−K)/(k+K)`,
//! `T = 2k/(k+K)`, `K = √(2m(ħω − U₀))/ħ`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::constants::{PhysicalConstants, ELECTRON_VOLT, NANOMETER};
use crate::coupling::RegionGraph;
use crate::error::{Error, Result};
use crate::grid::{Axis, Face, RegionGrid};
use crate::operators::Operators;
use crate::stability;
use crate::stepper::{BoundaryCondition, FaceConditions, HangingSource, Simulation};

use super::complex_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBarrier {
    /// Packet center at `t = 0`.
    pub x0: f64,
    /// Central wavelength `λ̄`; `k̄ = 2π/λ̄`.
    pub wavelength: f64,
    /// `σ / k̄`.
    pub width_ratio: f64,
    /// The k-grid spans `k̄ ± half_span · σ`.
    pub half_span: f64,
    /// `Δk / σ`.
    pub dk_ratio: f64,
    /// Step position `a` and height `U₀`.
    pub step_at: f64,
    pub height: f64,
    /// Simulated box `[0, length] × width × width`.
    pub length: f64,
    pub width: f64,
    pub spacing: f64,
    pub constants: PhysicalConstants,
    /// Midpoint-rule intervals for the analytic observables.
    pub quadrature_intervals: usize,
}

impl Default for GaussianBarrier {
    fn default() -> Self {
        Self {
            x0: -200.0 * NANOMETER,
            wavelength: 30.0 * NANOMETER,
            width_ratio: 0.1,
            half_span: 10.0,
            dk_ratio: 0.01,
            step_at: 100.0 * NANOMETER,
            height: 1.5e-3 * ELECTRON_VOLT,
            length: 200.0 * NANOMETER,
            width: 2.0 * NANOMETER,
            spacing: 1.0 * NANOMETER,
            constants: PhysicalConstants::electron(),
            quadrature_intervals: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneMode {
    pub k: f64,
    pub amplitude: f64,
    pub omega: f64,
    /// Wavenumber beyond the step (imaginary when evanescent).
    pub k_beyond: Complex64,
    pub reflection: Complex64,
    pub transmission: Complex64,
}

impl GaussianBarrier {
    pub fn cells(&self) -> Result<[usize; 3]> {
        let count = |l: f64| -> Result<usize> {
            let n = (l / self.spacing).round();
            if n < 1.0 || ((n * self.spacing - l).abs() > 1e-9 * l) {
                return Err(Error::Config(format!("length {l:e} m is not a multiple of the spacing")));
            }
            Ok(n as usize)
        };
        Ok([count(self.length)?, count(self.width)?, count(self.width)?])
    }

    pub fn grid(&self) -> Result<RegionGrid> {
        RegionGrid::new(self.cells()?, [self.spacing; 3])
    }

    /// Step potential sampled at nodes, with `U₀/2` on the node at `x = a`.
    pub fn potential_at(&self, x: f64) -> f64 {
        if (x - self.step_at).abs() <= 1e-6 * self.spacing {
            0.5 * self.height
        } else if x < self.step_at {
            0.0
        } else {
            self.height
        }
    }

    pub fn operators(&self) -> Result<Arc<Operators>> {
        let g = self.grid()?;
        let u = (0..g.node_count()).map(|p| self.potential_at(g.position(p)[0])).collect();
        Ok(Arc::new(Operators::new(g, self.constants, u)?))
    }

    pub fn modes(&self) -> Vec<PlaneMode> {
        let k_bar = 2.0 * PI / self.wavelength;
        let sigma = self.width_ratio * k_bar;
        let dk = self.dk_ratio * sigma;
        let steps = (2.0 * self.half_span / self.dk_ratio).round() as usize;
        let c = self.constants;
        (0..=steps)
            .map(|p| {
                let k = k_bar - self.half_span * sigma + p as f64 * dk;
                let omega = c.hbar * k * k / (2.0 * c.mass);
                let kb = Complex64::new(2.0 * c.mass * (c.hbar * omega - self.height), 0.0).sqrt() / c.hbar;
                let kk = Complex64::new(k, 0.0);
                PlaneMode {
                    k,
                    amplitude: (-0.25 * ((k - k_bar) / sigma).powi(2)).exp(),
                    omega,
                    k_beyond: kb,
                    reflection: (kk - kb) / (kk + kb),
                    transmission: 2.0 * kk / (kk + kb),
                }
            })
            .collect()
    }

    pub fn wavepacket(&self) -> Wavepacket {
        Wavepacket { x0: self.x0, step_at: self.step_at, modes: self.modes() }
    }

    /// Open box: prescribed gradients on W/E, zero hanging variables elsewhere.
    pub fn conditions(&self, packet: Arc<Wavepacket>) -> FaceConditions {
        let src = BoundaryCondition::Prescribed(packet);
        FaceConditions::neumann().with(Face::West, src.clone()).with(Face::East, src)
    }

    pub fn build(&self, dt_factor: f64, allow_unstable: bool) -> Result<(RegionGraph, Arc<Wavepacket>)> {
        let ops = self.operators()?;
        let dt = dt_factor * stability::cfl_limit(&ops);
        let packet = Arc::new(self.wavepacket());
        let st = super::sample_state(ops.grid(), dt, |x, t| packet.value(x[0], t));
        let sim = Simulation::new(ops, self.conditions(packet.clone()), dt, st)?;
        Ok((RegionGraph::new(vec![sim], vec![], allow_unstable)?, packet))
    }

    /// Analytic probability and energy (J) in the box at each of `times`,
    /// by the midpoint rule along x times the cross-section.
    pub fn analytic_observables(&self, packet: &Wavepacket, times: &[f64]) -> Vec<(f64, f64)> {
        let n = self.quadrature_intervals;
        let h = self.length / n as f64;
        let area = self.width * self.width;
        let c = self.constants;
        let kin = c.kinetic_prefactor();
        let m = packet.modes.len();
        // Per midpoint, the time-independent factor of each mode and of its x-derivative.
        let table: Vec<(f64, Vec<Complex64>, Vec<Complex64>)> = (0..n)
            .into_par_iter()
            .map(|q| {
                let x = (q as f64 + 0.5) * h;
                let (f, df) = packet.modes.iter().map(|md| packet.spatial(md, x)).unzip();
                (x, f, df)
            })
            .collect();
        times
            .par_iter()
            .map(|&t| {
                let phase: Vec<Complex64> =
                    packet.modes.iter().map(|md| md.amplitude * Complex64::from_polar(1.0, -md.omega * t)).collect();
                let (mut p, mut e) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for (x, f, df) in &table {
                    let psi = complex_sum((0..m).map(|j| phase[j] * f[j]));
                    let dpsi = complex_sum((0..m).map(|j| phase[j] * df[j]));
                    let rho = psi.norm_sqr();
                    p.push(rho);
                    e.push(kin * dpsi.norm_sqr() + self.potential_at(*x) * rho);
                }
                let s = h * area;
                (s * crate::sum::pairwise_sum(&p), s * crate::sum::pairwise_sum(&e))
            })
            .collect()
    }
}

/// The analytic wavepacket; also the boundary source of the simulation.
#[derive(Debug, Clone)]
pub struct Wavepacket {
    pub x0: f64,
    pub step_at: f64,
    pub modes: Vec<PlaneMode>,
}

impl Wavepacket {
    /// Mode `md` without its `A_p e^{−iωt}` factor, and its x-derivative.
    fn spatial(&self, md: &PlaneMode, x: f64) -> (Complex64, Complex64) {
        self.branch(md, x, x > self.step_at)
    }

    fn branch(&self, md: &PlaneMode, x: f64, beyond: bool) -> (Complex64, Complex64) {
        let ik = Complex64::new(0.0, md.k);
        if !beyond {
            let inc = Complex64::from_polar(1.0, md.k * (x - self.x0));
            let refl = md.reflection * Complex64::from_polar(1.0, md.k * (2.0 * self.step_at - self.x0 - x));
            (inc + refl, ik * (inc - refl))
        } else {
            let ikb = Complex64::new(0.0, 1.0) * md.k_beyond;
            let tr = md.transmission
                * (ikb * (x - self.step_at) + Complex64::new(0.0, md.k * (self.step_at - self.x0))).exp();
            (tr, ikb * tr)
        }
    }

    pub fn value(&self, x: f64, t: f64) -> Complex64 {
        self.value_on(x, t, x > self.step_at)
    }

    /// [`value`](Self::value) with the branch chosen explicitly.
    pub fn value_on(&self, x: f64, t: f64, beyond: bool) -> Complex64 {
        complex_sum(
            self.modes
                .iter()
                .map(|md| md.amplitude * Complex64::from_polar(1.0, -md.omega * t) * self.branch(md, x, beyond).0),
        )
    }

    pub fn gradient_x(&self, x: f64, t: f64) -> Complex64 {
        complex_sum(
            self.modes
                .iter()
                .map(|md| md.amplitude * Complex64::from_polar(1.0, -md.omega * t) * self.spatial(md, x).1),
        )
    }
}

impl HangingSource for Wavepacket {
    fn gradient(&self, face: Face, pos: [f64; 3], t: f64) -> Complex64 {
        if face.axis() == Axis::X {
            self.gradient_x(pos[0], t)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// The packet is uniform across each face, so one evaluation serves all
    /// of its nodes.
    fn fill_face(&self, face: Face, positions: &[[f64; 3]], t: f64, out: &mut [Complex64]) {
        let Some(first) = positions.first() else { return };
        let g = self.gradient(face, *first, t);
        for (o, p) in out.iter_mut().zip(positions) {
            *o = if p[0] == first[0] { g } else { self.gradient(face, *p, t) };
        }
    }
}
