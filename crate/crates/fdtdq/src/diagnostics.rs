//! Discrete probability, energy, probability current and supplied power.
//!
//! With `ψⁿ = [ψ_Rⁿ; ψ_I^{n−½}]` the observables are
//!
//! ```text
//! ℘ⁿ        = ψ_RᵀV″ψ_R + ψ_IᵀV″ψ_I − (Δt/ħ) ψ_I^{n−½}ᵀ H ψ_Rⁿ
//! ℋⁿ        = ψ_RᵀHψ_R + ψ_IᵀHψ_I + ħ (ψ_Rⁿ − ψ_R^{n−1})ᵀ V″ (ψ_I^{n+½} − ψ_I^{n−½}) / Δt
//! ℐ_P^{n+½} = (2/ħ) [ avg(ψ_R)ᵀ H⊥ [∇ψ_I]⊥^{n+½} − avg(ψ_I)ᵀ H⊥ [∇ψ_R]⊥ⁿ ]
//! s^{n+½}   = 2 (Δψ_R/Δt)ᵀ H⊥ avg([∇ψ_R]⊥) + 2 (Δψ_I/Δt)ᵀ H⊥ avg([∇ψ_I]⊥)
//! ```
//!
//! and they satisfy `℘^{n+1} − ℘ⁿ = −Δt ℐ_P^{n+½}` and
//! `ℋ^{n+1} − ℋⁿ = Δt s^{n+½}` exactly in exact arithmetic.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::grid::Face;
use crate::operators::Operators;
use crate::stability;
use crate::stepper::{Observer, Simulation, StepView};
use crate::sum::{sum_by, Compensated};

/// Probability current split by face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Current {
    pub total: f64,
    /// W, E, S, N, B, T.
    pub by_face: [f64; 6],
}

/// `ψ_RᵀV″ψ_R + ψ_IᵀV″ψ_I`.
pub fn probability_simple(ops: &Operators, psi_r: &[f64], psi_i: &[f64]) -> Result<f64> {
    check_len(ops.node_count(), psi_r.len())?;
    check_len(ops.node_count(), psi_i.len())?;
    let v = ops.volume();
    Ok(sum_by(v.len(), |p| v[p] * (psi_r[p] * psi_r[p] + psi_i[p] * psi_i[p])))
}

/// `℘ⁿ` from `ψ_Rⁿ` and `ψ_I^{n−½}`.
pub fn probability(ops: &Operators, dt: f64, psi_r: &[f64], psi_i: &[f64]) -> Result<f64> {
    let h_r = ops.apply_h(psi_r)?;
    probability_with(ops, dt, psi_r, psi_i, &h_r)
}

/// `℘ⁿ` reusing a precomputed `Hψ_Rⁿ`.
pub fn probability_with(ops: &Operators, dt: f64, psi_r: &[f64], psi_i: &[f64], h_r: &[f64]) -> Result<f64> {
    check_len(ops.node_count(), h_r.len())?;
    let simple = probability_simple(ops, psi_r, psi_i)?;
    let cross = sum_by(psi_i.len(), |p| psi_i[p] * h_r[p]);
    Ok(simple - dt / ops.constants().hbar * cross)
}

/// `ψ_RᵀHψ_R + ψ_IᵀHψ_I`.
pub fn energy_simple(ops: &Operators, psi_r: &[f64], psi_i: &[f64]) -> Result<f64> {
    let h_r = ops.apply_h(psi_r)?;
    let h_i = ops.apply_h(psi_i)?;
    Ok(sum_by(h_r.len(), |p| psi_r[p] * h_r[p]) + sum_by(h_i.len(), |p| psi_i[p] * h_i[p]))
}

/// `ℋⁿ` from `ψ_R^{n−1}`, `ψ_Rⁿ`, `ψ_I^{n−½}` and `ψ_I^{n+½}`.
pub fn energy(
    ops: &Operators,
    dt: f64,
    psi_r_prev: &[f64],
    psi_r: &[f64],
    psi_i: &[f64],
    psi_i_next: &[f64],
) -> Result<f64> {
    check_len(ops.node_count(), psi_r_prev.len())?;
    check_len(ops.node_count(), psi_i_next.len())?;
    let simple = energy_simple(ops, psi_r, psi_i)?;
    Ok(simple + energy_cross(ops, dt, psi_r_prev, psi_r, psi_i, psi_i_next))
}

/// `ħ (ψ_Rⁿ − ψ_R^{n−1})ᵀ V″ (ψ_I^{n+½} − ψ_I^{n−½}) / Δt`.
fn energy_cross(ops: &Operators, dt: f64, r_prev: &[f64], r: &[f64], i: &[f64], i_next: &[f64]) -> f64 {
    let v = ops.volume();
    ops.constants().hbar / dt * sum_by(v.len(), |p| (r[p] - r_prev[p]) * v[p] * (i_next[p] - i[p]))
}

/// `ℐ_P^{n+½}` of one step.
pub fn probability_current(ops: &Operators, step: &StepView<'_>) -> Result<Current> {
    check_len(ops.hanging_count(), step.grad_r.len())?;
    check_len(ops.hanging_count(), step.grad_i.len())?;
    let grid = ops.grid();
    let coef = ops.hbot_coefficients();
    let nodes = ops.hanging_nodes();
    let scale = 2.0 / ops.constants().hbar;
    let mut by_face = [0.0; 6];
    for face in Face::ALL {
        let off = grid.face_offset(face);
        by_face[face.index()] = scale
            * sum_by(grid.face_len(face), |l| {
                let h = off + l;
                let p = nodes[h];
                let avg_r = 0.5 * (step.psi_r_old[p] + step.psi_r_new[p]);
                let avg_i = 0.5 * (step.psi_i_old[p] + step.psi_i_new[p]);
                coef[h] * (avg_r * step.grad_i[h] - avg_i * step.grad_r[h])
            });
    }
    Ok(Current { total: by_face.iter().sum(), by_face })
}

/// `s^{n+½}` of step `n`, given `[∇ψ_R]⊥^{n+1}` and `[∇ψ_I]⊥^{n−½}`.
pub fn supplied_power(
    ops: &Operators,
    dt: f64,
    step: &StepView<'_>,
    grad_r_next: &[f64],
    grad_i_prev: &[f64],
) -> Result<f64> {
    check_len(ops.hanging_count(), grad_r_next.len())?;
    check_len(ops.hanging_count(), grad_i_prev.len())?;
    let nodes = ops.hanging_nodes();
    let coef = ops.hbot_coefficients();
    Ok(sum_by(nodes.len(), |h| {
        let p = nodes[h];
        let dr = step.psi_r_new[p] - step.psi_r_old[p];
        let di = step.psi_i_new[p] - step.psi_i_old[p];
        coef[h] * (dr * (step.grad_r[h] + grad_r_next[h]) + di * (step.grad_i[h] + grad_i_prev[h])) / dt
    }))
}

/// Lower bound on `ℋⁿ` for any state with `℘ⁿ ≤ p_max`:
/// `ΔxΔyΔz (p_max/λ_min(𝒫)) (min(min U, 0) − 4ħ/Δt)`.
pub fn energy_lower_bound(ops: &Operators, dt: f64, p_max: f64) -> Result<f64> {
    let lambda = stability::lambda_min_p(ops, dt)?;
    if lambda <= 0.0 {
        return Err(Error::Unstable { dt, limit: stability::cfl_gen_limit(ops)? });
    }
    let g = ops.grid();
    let u = ops.min_potential().min(0.0);
    Ok(g.cell_volume() * p_max / lambda * (u - 4.0 * ops.constants().hbar / dt))
}

/// One diagnostics row. Optional fields are outside their validity window.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Record {
    pub n: u64,
    pub t: f64,
    pub p: f64,
    pub p_simple: f64,
    /// `ℐ_P^{n+½}`.
    pub current: Option<Current>,
    pub h: Option<f64>,
    pub h_simple: f64,
    /// `s^{n+½}`.
    pub s: Option<f64>,
    /// `℘ⁿ − ℘⁰ + Δt Σ_{m<n} ℐ_P^{m+½}`, unnormalized.
    pub residual_p: f64,
    /// `ℋⁿ − ℋ¹ − Δt Σ_{m=1}^{n−1} s^{m+½}`, unnormalized.
    pub residual_h: Option<f64>,
    /// Same as `residual_p` with `℘_simple` in place of `℘`.
    pub residual_p_simple: f64,
    pub residual_h_simple: Option<f64>,
}

/// Boundary samples of the previous step, enough to form `s` one step later.
#[derive(Debug, Clone)]
struct BoundaryWindow {
    n: u64,
    dr: Vec<f64>,
    di: Vec<f64>,
    grad_r: Vec<f64>,
    grad_i: Vec<f64>,
    grad_i_prev: Vec<f64>,
}

/// Observer computing a [`Record`] every `stride` steps (and at step 1),
/// while accumulating the balance sums at every step.
pub struct Tracker {
    ops: Arc<Operators>,
    dt: f64,
    t0: f64,
    n0: u64,
    n_t: u64,
    stride: u64,
    records: Vec<Record>,
    currents: Vec<[f64; 6]>,
    powers: Vec<f64>,
    cum_current: Compensated,
    cum_power: Compensated,
    p0: Option<(f64, f64)>,
    h1: Option<(f64, f64)>,
    r_prev: Vec<f64>,
    h_i_prev: Vec<f64>,
    bwin: Option<BoundaryWindow>,
    grad_i_last: Vec<f64>,
}

impl Tracker {
    /// Start tracking `sim` for a run of `n_t` steps.
    pub fn new(sim: &Simulation, n_t: u64, stride: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidInput("diagnostic stride must be at least 1".into()));
        }
        let ops = sim.operators().clone();
        let h_i_prev = ops.apply_h(sim.psi_i())?;
        let hc = ops.hanging_count();
        Ok(Self {
            dt: sim.dt(),
            t0: sim.time(),
            n0: sim.step_index(),
            n_t,
            stride,
            records: Vec::new(),
            currents: Vec::new(),
            powers: Vec::new(),
            cum_current: Compensated::new(),
            cum_power: Compensated::new(),
            p0: None,
            h1: None,
            r_prev: vec![0.0; ops.node_count()],
            h_i_prev,
            bwin: None,
            grad_i_last: vec![0.0; hc],
            ops,
        })
    }

    fn is_row(&self, m: u64) -> bool {
        m.is_multiple_of(self.stride) || m == 1
    }

    fn observe_step(&mut self, v: &StepView<'_>) {
        let ops = self.ops.clone();
        let m = v.n - self.n0;
        let dt = self.dt;
        let hbar = ops.constants().hbar;
        let current = probability_current(&ops, v).expect("lengths checked at construction");

        // s^{(m−1)+½} needs this step's [∇ψ_R]⊥.
        if let Some(w) = self.bwin.take() {
            let mm = w.n - self.n0;
            if mm >= 1 && mm + 2 <= self.n_t {
                let coef = ops.hbot_coefficients();
                let s = sum_by(coef.len(), |h| {
                    coef[h] * (w.dr[h] * (w.grad_r[h] + v.grad_r[h]) + w.di[h] * (w.grad_i[h] + w.grad_i_prev[h])) / dt
                });
                self.cum_power.add(dt * s);
                self.powers.push(s);
                if let Some(rec) = self.records.iter_mut().rev().find(|r| r.n == w.n) {
                    rec.s = Some(s);
                }
            }
        }

        if self.is_row(m) {
            let v_vol = ops.volume();
            let n = v.psi_r_old.len();
            let simple_p = sum_by(n, |p| v_vol[p] * (v.psi_r_old[p].powi(2) + v.psi_i_old[p].powi(2)));
            let cross_p = sum_by(n, |p| v.psi_i_old[p] * v.h_psi_r[p]);
            let p = simple_p - dt / hbar * cross_p;
            let h_simple =
                sum_by(n, |q| v.psi_r_old[q] * v.h_psi_r[q]) + sum_by(n, |q| v.psi_i_old[q] * self.h_i_prev[q]);
            let h = if m >= 1 && m < self.n_t {
                Some(h_simple + energy_cross(&ops, dt, &self.r_prev, v.psi_r_old, v.psi_i_old, v.psi_i_new))
            } else {
                None
            };
            if m == 0 {
                self.p0 = Some((p, simple_p));
            }
            if m == 1 {
                self.h1 = h.map(|h| (h, h_simple));
            }
            let (p0, ps0) = self.p0.unwrap_or((p, simple_p));
            let cum_i = self.cum_current.value();
            let mut rec = Record {
                n: v.n,
                t: self.t0 + m as f64 * dt,
                p,
                p_simple: simple_p,
                current: Some(current),
                h,
                h_simple,
                s: None,
                residual_p: p - p0 + cum_i,
                residual_h: None,
                residual_p_simple: simple_p - ps0 + cum_i,
                residual_h_simple: None,
            };
            if let (Some(h), Some((h1, hs1))) = (h, self.h1) {
                let cum_s = self.cum_power.value();
                rec.residual_h = Some(h - h1 - cum_s);
                rec.residual_h_simple = Some(h_simple - hs1 - cum_s);
            }
            self.records.push(rec);
        }

        self.cum_current.add(dt * current.total);
        self.currents.push(current.by_face);

        // Window for the next step.
        let nodes = ops.hanging_nodes();
        let dr = nodes.iter().map(|&p| v.psi_r_new[p] - v.psi_r_old[p]).collect();
        let di = nodes.iter().map(|&p| v.psi_i_new[p] - v.psi_i_old[p]).collect();
        self.bwin = Some(BoundaryWindow {
            n: v.n,
            dr,
            di,
            grad_r: v.grad_r.to_vec(),
            grad_i: v.grad_i.to_vec(),
            grad_i_prev: std::mem::replace(&mut self.grad_i_last, v.grad_i.to_vec()),
        });
        if self.is_row(m + 1) {
            self.r_prev.copy_from_slice(v.psi_r_old);
        }
        self.h_i_prev.copy_from_slice(v.h_psi_i);
    }

    /// Record the final state (row `n_t`: `℘`, `℘_simple`, `ℋ_simple`).
    pub fn finish(mut self, sim: &Simulation) -> Result<Series> {
        let ops = self.ops.clone();
        let m = sim.step_index() - self.n0;
        if m == 0 {
            return Ok(self.into_series());
        }
        let h_r = ops.apply_h(sim.psi_r())?;
        let (r, i) = (sim.psi_r(), sim.psi_i());
        let p = probability_with(&ops, self.dt, r, i, &h_r)?;
        let p_simple = probability_simple(&ops, r, i)?;
        let n = r.len();
        let h_simple = sum_by(n, |q| r[q] * h_r[q]) + sum_by(n, |q| i[q] * self.h_i_prev[q]);
        let (p0, ps0) = self.p0.unwrap_or((p, p_simple));
        let cum_i = self.cum_current.value();
        self.records.push(Record {
            n: sim.step_index(),
            t: self.t0 + m as f64 * self.dt,
            p,
            p_simple,
            current: None,
            h: None,
            h_simple,
            s: None,
            residual_p: p - p0 + cum_i,
            residual_h: None,
            residual_p_simple: p_simple - ps0 + cum_i,
            residual_h_simple: None,
        });
        Ok(self.into_series())
    }

    fn into_series(self) -> Series {
        Series {
            dt: self.dt,
            records: self.records,
            currents: self.currents,
            powers: self.powers,
            p_scale: None,
            h_scale: None,
        }
    }
}

impl Observer for Tracker {
    fn observe(&mut self, step: &StepView<'_>) {
        self.observe_step(step);
    }
}

/// Diagnostics of one region over a run.
#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub dt: f64,
    pub records: Vec<Record>,
    /// `ℐ_P^{n+½}` by face for every step.
    pub currents: Vec<[f64; 6]>,
    /// `s^{n+½}` for every step in its validity window.
    pub powers: Vec<f64>,
    p_scale: Option<f64>,
    h_scale: Option<f64>,
}

fn max_of<I: Iterator<Item = f64>>(it: I) -> f64 {
    it.fold(0.0, |m, x| m.max(x.abs()))
}

fn nonzero_or_one(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

impl Series {
    /// Normalization of the residuals, usually the analytic maxima.
    pub fn set_scales(&mut self, p_scale: f64, h_scale: f64) {
        self.p_scale = Some(p_scale);
        self.h_scale = Some(h_scale);
    }

    /// Probability normalization; defaults to `max |℘ⁿ|` (or 1 for an all-zero run).
    pub fn p_scale(&self) -> f64 {
        self.p_scale.unwrap_or_else(|| nonzero_or_one(max_of(self.records.iter().map(|r| r.p))))
    }

    /// Energy normalization; defaults to `max |ℋⁿ|`.
    pub fn h_scale(&self) -> f64 {
        self.h_scale.unwrap_or_else(|| nonzero_or_one(max_of(self.records.iter().filter_map(|r| r.h))))
    }

    pub fn max_residual_p(&self) -> f64 {
        max_of(self.records.iter().map(|r| r.residual_p)) / self.p_scale()
    }

    pub fn max_residual_h(&self) -> f64 {
        max_of(self.records.iter().filter_map(|r| r.residual_h)) / self.h_scale()
    }

    pub fn max_residual_p_simple(&self) -> f64 {
        max_of(self.records.iter().map(|r| r.residual_p_simple)) / self.p_scale()
    }

    pub fn max_residual_h_simple(&self) -> f64 {
        max_of(self.records.iter().filter_map(|r| r.residual_h_simple)) / self.h_scale()
    }

    pub fn min_p(&self) -> f64 {
        self.records.iter().map(|r| r.p).fold(f64::INFINITY, f64::min)
    }

    pub fn max_p(&self) -> f64 {
        self.records.iter().map(|r| r.p).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_h(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.h).reduce(f64::min)
    }

    /// CSV with one row per record; energies in joules, 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        let (ps, hs) = (self.p_scale(), self.h_scale());
        for r in &self.records {
            let mut row: Vec<String> = vec![r.n.to_string(), num(r.t), num(r.p), num(r.p_simple)];
            match &r.current {
                Some(c) => {
                    row.push(num(c.total));
                    row.extend(c.by_face.iter().map(|&x| num(x)));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 7)),
            }
            row.push(opt(r.h));
            row.push(num(r.h_simple));
            row.push(opt(r.s));
            row.push(num(r.residual_p / ps));
            row.push(opt(r.residual_h.map(|x| x / hs)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 16] = [
    "n",
    "t_seconds",
    "P",
    "P_simple",
    "I_P_total",
    "I_P_W",
    "I_P_E",
    "I_P_S",
    "I_P_N",
    "I_P_B",
    "I_P_T",
    "H",
    "H_simple",
    "s",
    "residual_P",
    "residual_H",
];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::PhysicalConstants;
    use crate::grid::RegionGrid;
    use crate::operators::{spmv, to_dense};
    use crate::stepper::{FaceConditions, StaggeredState};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(cells: [usize; 3], seed: u64) -> (Arc<Operators>, ChaCha8Rng) {
        let g = RegionGrid::new(cells, [1e-9, 0.8e-9, 1.1e-9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..g.node_count()).map(|_| rng.gen_range(-1e-21..1e-21)).collect();
        (Arc::new(Operators::new(g, PhysicalConstants::electron(), u).unwrap()), rng)
    }

    #[test]
    fn probability_matches_assembled_quadratic_form() {
        let (ops, mut rng) = setup([2, 2, 2], 1);
        let n = ops.node_count();
        let dt = 0.7 * stability::cfl_limit(&ops);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let i: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = to_dense(&ops.assemble_p(dt).unwrap());
        let x = DVector::from_iterator(2 * n, r.iter().chain(&i).copied());
        let oracle = (x.transpose() * &p * &x)[(0, 0)];
        let got = probability(&ops, dt, &r, &i).unwrap();
        assert!((got - oracle).abs() <= 1e-13 * oracle.abs());
    }

    #[test]
    fn zero_state_gives_zero() {
        let (ops, _) = setup([2, 3, 2], 2);
        let z = vec![0.0; ops.node_count()];
        assert_eq!(probability(&ops, 1e-16, &z, &z).unwrap(), 0.0);
        assert_eq!(energy_simple(&ops, &z, &z).unwrap(), 0.0);
        assert_eq!(energy(&ops, 1e-16, &z, &z, &z, &z).unwrap(), 0.0);
    }

    #[test]
    fn energy_matches_term_by_term_dense() {
        let (ops, mut rng) = setup([3, 2, 2], 3);
        let n = ops.node_count();
        let dt = 1e-16;
        let mut v = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (rp, r, i, inext) = (v(), v(), v(), v());
        let h = ops.assemble_h().unwrap();
        let vol = ops.volume();
        let hr = spmv(&h, &r);
        let hi = spmv(&h, &i);
        let mut oracle = 0.0;
        for p in 0..n {
            oracle += r[p] * hr[p] + i[p] * hi[p];
            oracle += ops.constants().hbar / dt * (r[p] - rp[p]) * vol[p] * (inext[p] - i[p]);
        }
        let got = energy(&ops, dt, &rp, &r, &i, &inext).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1e-30), "{got} {oracle}");
    }

    #[test]
    fn neumann_region_has_no_current() {
        let (ops, mut rng) = setup([3, 3, 3], 4);
        let n = ops.node_count();
        let dt = 0.9 * stability::cfl_limit(&ops);
        let st = StaggeredState::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let mut sim = Simulation::new(ops.clone(), FaceConditions::neumann(), dt, st).unwrap();
        let mut tr = Tracker::new(&sim, 30, 1).unwrap();
        sim.run(30, &mut [&mut tr]).unwrap();
        let series = tr.finish(&sim).unwrap();
        for c in &series.currents {
            assert!(c.iter().all(|&x| x == 0.0));
        }
        assert!(series.max_residual_p() < 1e-13);
        assert!(series.max_residual_h() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_blank_fields() {
        let (ops, _) = setup([1, 1, 1], 5);
        let sim = Simulation::new(ops.clone(), FaceConditions::dirichlet(), 1e-16, StaggeredState::zeros(8)).unwrap();
        let tr = Tracker::new(&sim, 0, 1).unwrap();
        let series = tr.finish(&sim).unwrap();
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 0);
    }
}
