//! Leap-frog time integration with hanging-variable boundary inputs.
//!
//! One step advances `(ψ_Rⁿ, ψ_I^{n−½})` to `(ψ_R^{n+1}, ψ_I^{n+½})`:
//!
//! ```text
//! ψ_I^{n+½} = ψ_I^{n−½} + (Δt/ħ) V″⁻¹ (−H ψ_Rⁿ + H⊥ [∇ψ_R]⊥ⁿ)
//! ψ_R^{n+1} = ψ_Rⁿ     + (Δt/ħ) V″⁻¹ ( H ψ_I^{n+½} − H⊥ [∇ψ_I]⊥^{n+½})
//! ```
//!
//! Dirichlet faces pin their nodes to zero. Prescribed faces sample a
//! [`HangingSource`] at `nΔt` (real part) and `(n+½)Δt` (imaginary part).
//! Coupled faces are updated by [`crate::coupling`].

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::grid::Face;
use crate::operators::Operators;
use crate::sum::max_abs;

/// Default divergence guard: abort once `‖ψ‖∞` exceeds this multiple of its
/// initial value.
pub const DEFAULT_GUARD_FACTOR: f64 = 1e6;

/// Analytic boundary data for prescribed faces.
pub trait HangingSource: Send + Sync {
    /// Derivative of the complex wavefunction along the face's axis
    /// (`∂/∂x` on W/E, `∂/∂y` on S/N, `∂/∂z` on B/T) at `pos` and time `t`.
    fn gradient(&self, face: Face, pos: [f64; 3], t: f64) -> Complex64;

    /// Evaluate [`gradient`](Self::gradient) for all nodes of a face.
    fn fill_face(&self, face: Face, positions: &[[f64; 3]], t: f64, out: &mut [Complex64]) {
        for (o, p) in out.iter_mut().zip(positions) {
            *o = self.gradient(face, *p, t);
        }
    }
}

#[derive(Clone)]
pub enum BoundaryCondition {
    DirichletZero,
    NeumannZero,
    Prescribed(Arc<dyn HangingSource>),
    /// Joined to another region; values are set by the coupling module.
    Coupled,
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::DirichletZero => write!(f, "DirichletZero"),
            BoundaryCondition::NeumannZero => write!(f, "NeumannZero"),
            BoundaryCondition::Prescribed(_) => write!(f, "Prescribed(..)"),
            BoundaryCondition::Coupled => write!(f, "Coupled"),
        }
    }
}

/// One boundary condition per face, indexed by [`Face::index`].
#[derive(Debug, Clone)]
pub struct FaceConditions(pub [BoundaryCondition; 6]);

impl FaceConditions {
    pub fn all(bc: BoundaryCondition) -> Self {
        Self(std::array::from_fn(|_| bc.clone()))
    }

    pub fn dirichlet() -> Self {
        Self::all(BoundaryCondition::DirichletZero)
    }

    pub fn neumann() -> Self {
        Self::all(BoundaryCondition::NeumannZero)
    }

    pub fn with(mut self, face: Face, bc: BoundaryCondition) -> Self {
        self.0[face.index()] = bc;
        self
    }

    pub fn get(&self, face: Face) -> &BoundaryCondition {
        &self.0[face.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NodeRole {
    Free,
    Pinned,
    External,
}

/// Values from before the most recent step.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    /// `ψ_R^{n−1}`.
    pub psi_r: Vec<f64>,
    /// `ψ_I^{n−3/2}`.
    pub psi_i: Vec<f64>,
    /// `[∇ψ_R]⊥^{n−1}`.
    pub grad_r: Vec<f64>,
    /// `[∇ψ_I]⊥^{n−½}`.
    pub grad_i: Vec<f64>,
}

/// `ψ_Rⁿ` and `ψ_I^{n−½}` at step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredState {
    pub n: u64,
    pub psi_r: Vec<f64>,
    pub psi_i: Vec<f64>,
    pub history: Option<History>,
}

impl StaggeredState {
    pub fn new(psi_r: Vec<f64>, psi_i: Vec<f64>) -> Self {
        Self { n: 0, psi_r, psi_i, history: None }
    }

    pub fn zeros(nodes: usize) -> Self {
        Self::new(vec![0.0; nodes], vec![0.0; nodes])
    }
}

/// Everything one step touched, borrowed from the simulation.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    /// Index `n` of the step just taken (`n → n+1`).
    pub n: u64,
    pub psi_r_old: &'a [f64],
    pub psi_r_new: &'a [f64],
    pub psi_i_old: &'a [f64],
    pub psi_i_new: &'a [f64],
    /// `H ψ_Rⁿ`.
    pub h_psi_r: &'a [f64],
    /// `H ψ_I^{n+½}`.
    pub h_psi_i: &'a [f64],
    /// `[∇ψ_R]⊥ⁿ`.
    pub grad_r: &'a [f64],
    /// `[∇ψ_I]⊥^{n+½}`.
    pub grad_i: &'a [f64],
}

pub trait Observer {
    fn observe(&mut self, step: &StepView<'_>);
}

pub struct Simulation {
    ops: Arc<Operators>,
    bc: FaceConditions,
    dt: f64,
    t0: f64,
    n: u64,
    role: Vec<NodeRole>,
    /// `Δt/(ħ V″)` per node.
    scale: Vec<f64>,
    r: [Vec<f64>; 2],
    i: [Vec<f64>; 2],
    cur: usize,
    has_history: bool,
    grad_r: Vec<f64>,
    grad_i: Vec<f64>,
    h_r: Vec<f64>,
    h_i: Vec<f64>,
    hb: Vec<f64>,
    face_positions: [Vec<[f64; 3]>; 6],
    source_buf: Vec<Complex64>,
    guard_factor: Option<f64>,
    initial_norm: f64,
    hbot_sign: f64,
}

impl Simulation {
    pub fn new(ops: Arc<Operators>, bc: FaceConditions, dt: f64, state: StaggeredState) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let n_nodes = ops.node_count();
        check_len(n_nodes, state.psi_r.len())?;
        check_len(n_nodes, state.psi_i.len())?;
        let grid = ops.grid().clone();
        let mut role = vec![NodeRole::Free; n_nodes];
        for face in Face::ALL {
            let bcf = bc.get(face);
            for p in grid.face_nodes(face) {
                match bcf {
                    BoundaryCondition::DirichletZero => role[p] = NodeRole::Pinned,
                    BoundaryCondition::Coupled => {
                        if grid.boundary_face_count(p) > 1 {
                            role[p] = NodeRole::Pinned;
                        } else if role[p] == NodeRole::Free {
                            role[p] = NodeRole::External;
                        }
                    }
                    _ => {}
                }
            }
        }
        let hbar = ops.constants().hbar;
        let scale = ops.volume().iter().map(|v| dt / (hbar * v)).collect();
        let face_positions =
            std::array::from_fn(|f| grid.face_nodes(Face::ALL[f]).iter().map(|&p| grid.position(p)).collect());
        let hc = ops.hanging_count();
        let mut r0 = state.psi_r;
        let mut i0 = state.psi_i;
        for (p, role) in role.iter().enumerate() {
            if *role == NodeRole::Pinned {
                r0[p] = 0.0;
                i0[p] = 0.0;
            }
        }
        let (r1, i1, grad_r, grad_i, has_history) = match state.history {
            Some(h) => {
                check_len(n_nodes, h.psi_r.len())?;
                check_len(n_nodes, h.psi_i.len())?;
                check_len(hc, h.grad_r.len())?;
                check_len(hc, h.grad_i.len())?;
                (h.psi_r, h.psi_i, h.grad_r, h.grad_i, true)
            }
            None => (vec![0.0; n_nodes], vec![0.0; n_nodes], vec![0.0; hc], vec![0.0; hc], false),
        };
        let initial_norm = max_abs(&r0).max(max_abs(&i0));
        Ok(Self {
            ops,
            bc,
            dt,
            t0: 0.0,
            n: state.n,
            role,
            scale,
            r: [r0, r1],
            i: [i0, i1],
            cur: 0,
            has_history,
            grad_r,
            grad_i,
            h_r: vec![0.0; n_nodes],
            h_i: vec![0.0; n_nodes],
            hb: vec![0.0; n_nodes],
            face_positions,
            source_buf: Vec::new(),
            guard_factor: Some(DEFAULT_GUARD_FACTOR),
            initial_norm,
            hbot_sign: 1.0,
        })
    }

    /// Physical time of step 0 (prescribed sources are sampled at `t0 + nΔt`).
    pub fn with_start_time(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// `None` disables the divergence guard; NaN/Inf always abort.
    pub fn set_guard_factor(&mut self, factor: Option<f64>) {
        self.guard_factor = factor;
    }

    /// Flip the sign of the `H⊥` term in the updates only (diagnostics keep the
    /// correct sign). Used to check that balance tests catch such defects.
    #[doc(hidden)]
    pub fn inject_boundary_sign_error(&mut self) {
        self.hbot_sign = -1.0;
    }

    pub fn operators(&self) -> &Arc<Operators> {
        &self.ops
    }

    pub fn conditions(&self) -> &FaceConditions {
        &self.bc
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> u64 {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.n as f64 * self.dt
    }

    pub fn psi_r(&self) -> &[f64] {
        &self.r[self.cur]
    }

    pub fn psi_i(&self) -> &[f64] {
        &self.i[self.cur]
    }

    pub fn initial_norm(&self) -> f64 {
        self.initial_norm
    }

    /// `max(‖ψ_R‖∞, ‖ψ_I‖∞)` of the current state.
    pub fn max_norm(&self) -> f64 {
        max_abs(self.psi_r()).max(max_abs(self.psi_i()))
    }

    /// Whether node `p` is pinned by a Dirichlet condition.
    pub fn is_pinned(&self, p: usize) -> bool {
        self.role[p] == NodeRole::Pinned
    }

    pub fn state(&self) -> StaggeredState {
        let other = 1 - self.cur;
        StaggeredState {
            n: self.n,
            psi_r: self.r[self.cur].clone(),
            psi_i: self.i[self.cur].clone(),
            history: self.has_history.then(|| History {
                psi_r: self.r[other].clone(),
                psi_i: self.i[other].clone(),
                grad_r: self.grad_r.clone(),
                grad_i: self.grad_i.clone(),
            }),
        }
    }

    /// Sample prescribed faces into `target` (`grad_r` or `grad_i`) at time `t`.
    fn sample_sources(&mut self, real_part: bool, t: f64) {
        let grid = self.ops.grid();
        let target = if real_part { &mut self.grad_r } else { &mut self.grad_i };
        for face in Face::ALL {
            let off = grid.face_offset(face);
            let len = grid.face_len(face);
            match self.bc.get(face) {
                BoundaryCondition::Prescribed(src) => {
                    self.source_buf.resize(len, Complex64::new(0.0, 0.0));
                    src.fill_face(face, &self.face_positions[face.index()], t, &mut self.source_buf);
                    for (dst, z) in target[off..off + len].iter_mut().zip(&self.source_buf) {
                        *dst = if real_part { z.re } else { z.im };
                    }
                }
                BoundaryCondition::Coupled => {}
                _ => target[off..off + len].iter_mut().for_each(|x| *x = 0.0),
            }
        }
    }

    /// `hb = sign · H⊥ g` restricted to non-coupled faces (coupled faces have
    /// no free nodes).
    fn scatter_hbot(&mut self, real_part: bool) {
        let grid = self.ops.grid();
        let coef = self.ops.hbot_coefficients();
        let nodes = self.ops.hanging_nodes();
        let g = if real_part { &self.grad_r } else { &self.grad_i };
        for face in Face::ALL {
            let off = grid.face_offset(face);
            for &p in &nodes[off..off + grid.face_len(face)] {
                self.hb[p] = 0.0;
            }
        }
        for face in Face::ALL {
            if !matches!(self.bc.get(face), BoundaryCondition::Prescribed(_)) {
                continue;
            }
            let off = grid.face_offset(face);
            for h in off..off + grid.face_len(face) {
                self.hb[nodes[h]] += self.hbot_sign * coef[h] * g[h];
            }
        }
    }

    /// First half of a step: `ψ_I^{n+½}` on free nodes. Coupled nodes keep
    /// `ψ_I^{n−½}` until the coupling module merges them.
    pub(crate) fn phase_imag(&mut self) -> Result<()> {
        let t = self.t0 + self.n as f64 * self.dt;
        self.sample_sources(true, t);
        let (cur, nxt) = (self.cur, 1 - self.cur);
        self.ops.apply_h_into(&self.r[cur], &mut self.h_r)?;
        self.scatter_hbot(true);
        let (a, b) = self.i.split_at_mut(1);
        let (old, new) = if cur == 0 { (&a[0], &mut b[0]) } else { (&b[0], &mut a[0]) };
        let (hr, hb, scale, role) = (&self.h_r, &self.hb, &self.scale, &self.role);
        new.par_iter_mut().enumerate().for_each(|(p, x)| {
            *x = match role[p] {
                NodeRole::Free => old[p] + scale[p] * (hb[p] - hr[p]),
                NodeRole::Pinned => 0.0,
                NodeRole::External => old[p],
            };
        });
        debug_assert_eq!(nxt, 1 - cur);
        Ok(())
    }

    /// Second half: `ψ_R^{n+1}` on free nodes, using the merged `ψ_I^{n+½}`.
    pub(crate) fn phase_real(&mut self) -> Result<()> {
        let t = self.t0 + (self.n as f64 + 0.5) * self.dt;
        self.sample_sources(false, t);
        let (cur, nxt) = (self.cur, 1 - self.cur);
        self.ops.apply_h_into(&self.i[nxt], &mut self.h_i)?;
        self.scatter_hbot(false);
        let (a, b) = self.r.split_at_mut(1);
        let (old, new) = if cur == 0 { (&a[0], &mut b[0]) } else { (&b[0], &mut a[0]) };
        let (hi, hb, scale, role) = (&self.h_i, &self.hb, &self.scale, &self.role);
        new.par_iter_mut().enumerate().for_each(|(p, x)| {
            *x = match role[p] {
                NodeRole::Free => old[p] + scale[p] * (hi[p] - hb[p]),
                NodeRole::Pinned => 0.0,
                NodeRole::External => old[p],
            };
        });
        Ok(())
    }

    /// Rotate buffers and run the divergence checks.
    pub(crate) fn finish_step(&mut self) -> Result<()> {
        let step = self.n;
        self.cur = 1 - self.cur;
        self.n += 1;
        self.has_history = true;
        let norm = self.max_norm();
        if !norm.is_finite() {
            return Err(Error::Diverged { step, reason: "non-finite wavefunction".into() });
        }
        if let Some(f) = self.guard_factor {
            if self.initial_norm > 0.0 && norm > f * self.initial_norm {
                return Err(Error::Diverged {
                    step,
                    reason: format!("max |psi| = {norm:e} exceeds {f:e} x initial {:e}", self.initial_norm),
                });
            }
        }
        Ok(())
    }

    /// Buffers of the step just completed (valid after `finish_step`).
    pub fn last_step(&self) -> Option<StepView<'_>> {
        if !self.has_history {
            return None;
        }
        let (cur, old) = (self.cur, 1 - self.cur);
        Some(StepView {
            n: self.n - 1,
            psi_r_old: &self.r[old],
            psi_r_new: &self.r[cur],
            psi_i_old: &self.i[old],
            psi_i_new: &self.i[cur],
            h_psi_r: &self.h_r,
            h_psi_i: &self.h_i,
            grad_r: &self.grad_r,
            grad_i: &self.grad_i,
        })
    }

    pub(crate) fn has_coupled_faces(&self) -> bool {
        Face::ALL.iter().any(|&f| matches!(self.bc.get(f), BoundaryCondition::Coupled))
    }

    /// Advance one step. Regions with coupled faces must be stepped through
    /// [`crate::coupling::RegionGraph`].
    pub fn step(&mut self) -> Result<StepView<'_>> {
        if self.has_coupled_faces() {
            return Err(Error::Config("region has coupled faces; step it through a RegionGraph".into()));
        }
        self.phase_imag()?;
        self.phase_real()?;
        self.finish_step()?;
        Ok(self.last_step().expect("history exists after a step"))
    }

    /// Step `n_t` times, passing each step to the observers. Stops at the first
    /// error; observers have seen every completed step before it.
    pub fn run(&mut self, n_t: u64, observers: &mut [&mut dyn Observer]) -> Result<()> {
        for _ in 0..n_t {
            let view = self.step()?;
            for o in observers.iter_mut() {
                o.observe(&view);
            }
        }
        Ok(())
    }

    /// Undo one step of an uncoupled region by running the update equations
    /// backwards, resampling prescribed sources at the original times.
    pub fn step_back(&mut self) -> Result<()> {
        if self.has_coupled_faces() {
            return Err(Error::Config("reverse stepping of coupled regions is not supported".into()));
        }
        if self.n == 0 {
            return Err(Error::Range("cannot step back from step 0".into()));
        }
        let (cur, prv) = (self.cur, 1 - self.cur);
        let n = self.n - 1;
        // ψ_R^n = ψ_R^{n+1} − (Δt/ħ)V⁻¹(Hψ_I^{n+½} − H⊥g_I)
        self.sample_sources(false, self.t0 + (n as f64 + 0.5) * self.dt);
        self.ops.apply_h_into(&self.i[cur], &mut self.h_i)?;
        self.scatter_hbot(false);
        {
            let (a, b) = self.r.split_at_mut(1);
            let (src, dst) = if cur == 0 { (&a[0], &mut b[0]) } else { (&b[0], &mut a[0]) };
            let (hi, hb, scale, role) = (&self.h_i, &self.hb, &self.scale, &self.role);
            dst.par_iter_mut().enumerate().for_each(|(p, x)| {
                *x = if role[p] == NodeRole::Free { src[p] - scale[p] * (hi[p] - hb[p]) } else { 0.0 };
            });
        }
        // ψ_I^{n−½} = ψ_I^{n+½} − (Δt/ħ)V⁻¹(−Hψ_R^n + H⊥g_R)
        self.sample_sources(true, self.t0 + n as f64 * self.dt);
        self.ops.apply_h_into(&self.r[prv], &mut self.h_r)?;
        self.scatter_hbot(true);
        {
            let (a, b) = self.i.split_at_mut(1);
            let (src, dst) = if cur == 0 { (&a[0], &mut b[0]) } else { (&b[0], &mut a[0]) };
            let (hr, hb, scale, role) = (&self.h_r, &self.hb, &self.scale, &self.role);
            dst.par_iter_mut().enumerate().for_each(|(p, x)| {
                *x = if role[p] == NodeRole::Free { src[p] - scale[p] * (hb[p] - hr[p]) } else { 0.0 };
            });
        }
        self.cur = prv;
        self.n = n;
        self.has_history = false;
        Ok(())
    }

    /// Multiply the whole state (including history and boundary data) by `f`.
    pub fn scale_state(&mut self, f: f64) {
        for v in self.r.iter_mut().chain(self.i.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= f);
        }
        self.grad_r.iter_mut().chain(self.grad_i.iter_mut()).for_each(|x| *x *= f);
        self.initial_norm *= f.abs();
    }

    pub(crate) fn role(&self, p: usize) -> NodeRole {
        self.role[p]
    }

    /// Split borrows used by the interface merge. `real` selects the `ψ_R`
    /// half-step (after `phase_real`), otherwise the `ψ_I` half-step.
    pub(crate) fn interface_access(&mut self, real: bool) -> InterfaceAccess<'_> {
        let cur = self.cur;
        let (vals, h, grad) =
            if real { (&mut self.r, &self.h_i, &mut self.grad_i) } else { (&mut self.i, &self.h_r, &mut self.grad_r) };
        let (a, b) = vals.split_at_mut(1);
        let (old, new) = if cur == 0 { (&a[0], &mut b[0]) } else { (&b[0], &mut a[0]) };
        InterfaceAccess { old, new, h, grad, volume: self.ops.volume(), coef: self.ops.hbot_coefficients() }
    }

    /// Current `(ψ_R, ψ_I)`, mutable; used to mirror interface samples
    /// before the first step.
    pub(crate) fn current_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let cur = self.cur;
        (&mut self.r[cur], &mut self.i[cur])
    }
}

pub(crate) struct InterfaceAccess<'a> {
    pub old: &'a [f64],
    pub new: &'a mut [f64],
    /// `Hψ_Rⁿ` for the imaginary half-step, `Hψ_I^{n+½}` for the real one.
    pub h: &'a [f64],
    pub grad: &'a mut [f64],
    pub volume: &'a [f64],
    pub coef: &'a [f64],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::PhysicalConstants;
    use crate::grid::RegionGrid;
    use crate::operators::{spmv, Operators};
    use crate::stability::cfl_limit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ops(cells: [usize; 3], seed: u64) -> Arc<Operators> {
        let g = RegionGrid::new(cells, [1e-9, 1.2e-9, 0.9e-9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..g.node_count()).map(|_| rng.gen_range(0.0..1e-21)).collect();
        Arc::new(Operators::new(g, PhysicalConstants::electron(), u).unwrap())
    }

    fn random_state(n: usize, seed: u64) -> StaggeredState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StaggeredState::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn zero_state_stays_zero() {
        let ops = random_ops([3, 3, 3], 1);
        let dt = 0.5 * cfl_limit(&ops);
        let mut sim = Simulation::new(ops.clone(), FaceConditions::neumann(), dt, StaggeredState::zeros(64)).unwrap();
        for _ in 0..5 {
            sim.step().unwrap();
        }
        assert!(sim.psi_r().iter().chain(sim.psi_i()).all(|&x| x == 0.0));
    }

    #[test]
    fn one_step_matches_assembled_update() {
        let ops = random_ops([4, 4, 4], 2);
        let dt = 0.9 * cfl_limit(&ops);
        let n = ops.node_count();
        let mut state = StaggeredState::zeros(n);
        state.psi_r[ops.grid().offset(2, 2, 2)] = 1.0;
        state.psi_i[ops.grid().offset(2, 1, 2)] = 0.5;
        let h = ops.assemble_h().unwrap();
        let hbar = ops.constants().hbar;
        let v = ops.volume();
        let hr = spmv(&h, &state.psi_r);
        let i1: Vec<f64> = (0..n).map(|p| state.psi_i[p] - dt / (hbar * v[p]) * hr[p]).collect();
        let hi = spmv(&h, &i1);
        let r1: Vec<f64> = (0..n).map(|p| state.psi_r[p] + dt / (hbar * v[p]) * hi[p]).collect();
        let mut sim = Simulation::new(ops, FaceConditions::neumann(), dt, state).unwrap();
        sim.step().unwrap();
        for p in 0..n {
            assert!((sim.psi_i()[p] - i1[p]).abs() <= 1e-14 * (1.0 + i1[p].abs()));
            assert!((sim.psi_r()[p] - r1[p]).abs() <= 1e-14 * (1.0 + r1[p].abs()));
        }
    }

    #[test]
    fn dirichlet_nodes_stay_pinned() {
        let ops = random_ops([3, 4, 3], 3);
        let dt = 0.99 * cfl_limit(&ops);
        let st = random_state(ops.node_count(), 4);
        let mut sim = Simulation::new(ops.clone(), FaceConditions::dirichlet(), dt, st).unwrap();
        for _ in 0..20 {
            sim.step().unwrap();
            for p in 0..ops.node_count() {
                if ops.grid().boundary_face_count(p) > 0 {
                    assert_eq!(sim.psi_r()[p], 0.0);
                    assert_eq!(sim.psi_i()[p], 0.0);
                }
            }
        }
    }

    #[test]
    fn reverse_steps_recover_initial_state() {
        let ops = random_ops([5, 4, 3], 5);
        let dt = 0.9 * cfl_limit(&ops);
        let st = random_state(ops.node_count(), 6);
        let mut sim = Simulation::new(ops, FaceConditions::dirichlet(), dt, st).unwrap();
        let r0 = sim.psi_r().to_vec();
        let i0 = sim.psi_i().to_vec();
        for _ in 0..50 {
            sim.step().unwrap();
        }
        for _ in 0..50 {
            sim.step_back().unwrap();
        }
        let err =
            r0.iter().zip(sim.psi_r()).chain(i0.iter().zip(sim.psi_i())).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-12, "reverse error {err:e}");
        assert_eq!(sim.step_index(), 0);
    }

    #[test]
    fn guard_trips_above_cfl() {
        let ops = random_ops([4, 4, 4], 7);
        let dt = 1.2 * crate::stability::cfl_gen_limit(&ops).unwrap();
        let st = random_state(ops.node_count(), 8);
        let mut sim = Simulation::new(ops, FaceConditions::neumann(), dt, st).unwrap();
        let err = sim.run(10_000, &mut []).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn coupled_region_refuses_plain_step() {
        let ops = random_ops([2, 2, 2], 9);
        let bc = FaceConditions::dirichlet().with(Face::East, BoundaryCondition::Coupled);
        let mut sim = Simulation::new(ops, bc, 1e-18, StaggeredState::zeros(27)).unwrap();
        assert!(sim.step().is_err());
    }
}
