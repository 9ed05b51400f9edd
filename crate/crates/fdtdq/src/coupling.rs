//! Joining regions across matching faces.
//!
//! Nodes on a shared face are one physical node. Its update uses the merged
//! stencil `ħ(V_A + V_B)(ψ_I¹ − ψ_I⁰)/Δt = −(Hψ_R)_A − (Hψ_R)_B` (likewise for
//! `ψ_R`), which is the interior update with the potential averaged over the
//! two sides. Afterwards each region's own face equation is solved for its
//! hanging variable, so the single-region diagnostics apply unchanged and the
//! interface currents of the two sides cancel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{Series, Tracker};
use crate::error::{Error, Result};
use crate::grid::Face;
use crate::stability;
use crate::stepper::{BoundaryCondition, NodeRole, Observer, Simulation, DEFAULT_GUARD_FACTOR};

/// Face `face_a` of region `a` is glued to face `face_b` of region `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub a: usize,
    pub face_a: Face,
    pub b: usize,
    pub face_b: Face,
}

#[derive(Debug, Clone)]
struct Link {
    iface: Interface,
    /// `(hanging index in a, node in a, hanging index in b, node in b)` of
    /// face-interior nodes.
    shared: Vec<(usize, usize, usize, usize)>,
    /// Hanging indices of rim nodes, which stay pinned.
    rim: Vec<(usize, usize)>,
}

pub struct RegionGraph {
    regions: Vec<Simulation>,
    links: Vec<Link>,
    guard_factor: Option<f64>,
    initial_norm: f64,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn pair_mut<T>(xs: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = xs.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = xs.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

impl RegionGraph {
    /// Validate the interfaces, mirror the owner's interface samples into the
    /// other region, and (unless `allow_unstable`) require the shared time step
    /// to be below every region's generalized CFL limit.
    pub fn new(mut regions: Vec<Simulation>, interfaces: Vec<Interface>, allow_unstable: bool) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Config("region graph needs at least one region".into()));
        }
        let dt = regions[0].dt();
        if regions.iter().any(|r| r.dt() != dt) {
            return Err(Error::Config("all regions must share the same time step".into()));
        }
        let mut used = vec![[false; 6]; regions.len()];
        let mut links = Vec::with_capacity(interfaces.len());
        for iface in interfaces {
            links.push(Self::link(&regions, &mut used, iface)?);
        }
        for (r, sim) in regions.iter().enumerate() {
            for face in Face::ALL {
                if matches!(sim.conditions().get(face), BoundaryCondition::Coupled) && !used[r][face.index()] {
                    return Err(Error::Config(format!(
                        "region {r} face {} is coupled but has no interface",
                        face.short_name()
                    )));
                }
            }
        }
        if !allow_unstable {
            for (r, sim) in regions.iter().enumerate() {
                let ops = sim.operators();
                if dt >= stability::cfl_limit(ops) {
                    let limit = stability::cfl_gen_limit(ops)?;
                    if dt >= limit {
                        return Err(Error::Config(format!(
                            "time step {dt:e} s is not below the generalized CFL limit {limit:e} s of region {r}"
                        )));
                    }
                }
            }
        }
        for link in &links {
            let Interface { a, b, .. } = link.iface;
            let owner_is_b = b > a;
            let (ra, rb) = pair_mut(&mut regions, a, b);
            let (ar, ai) = ra.current_mut();
            let (br, bi) = rb.current_mut();
            for &(_, pa, _, pb) in &link.shared {
                if owner_is_b {
                    ar[pa] = br[pb];
                    ai[pa] = bi[pb];
                } else {
                    br[pb] = ar[pa];
                    bi[pb] = ai[pa];
                }
            }
        }
        for sim in &mut regions {
            sim.set_guard_factor(None);
        }
        let initial_norm = regions.iter().map(|s| s.max_norm()).fold(0.0, f64::max);
        Ok(Self { regions, links, guard_factor: Some(DEFAULT_GUARD_FACTOR), initial_norm })
    }

    fn link(regions: &[Simulation], used: &mut [[bool; 6]], iface: Interface) -> Result<Link> {
        let Interface { a, face_a, b, face_b } = iface;
        if a >= regions.len() || b >= regions.len() || a == b {
            return Err(Error::Config(format!("interface joins invalid regions {a} and {b}")));
        }
        if face_b != face_a.opposite() {
            return Err(Error::Config(format!(
                "interface faces must be opposite, got {} and {}",
                face_a.short_name(),
                face_b.short_name()
            )));
        }
        for (r, f) in [(a, face_a), (b, face_b)] {
            if !matches!(regions[r].conditions().get(f), BoundaryCondition::Coupled) {
                return Err(Error::Config(format!("region {r} face {} is not marked as coupled", f.short_name())));
            }
            if std::mem::replace(&mut used[r][f.index()], true) {
                return Err(Error::Config(format!("region {r} face {} is used by two interfaces", f.short_name())));
            }
        }
        let (ga, gb) = (regions[a].operators().grid(), regions[b].operators().grid());
        let ax = face_a.axis().index();
        let (ca, cb) = (ga.cells(), gb.cells());
        let (sa, sb) = (ga.spacing(), gb.spacing());
        for d in 0..3 {
            if !close(sa[d], sb[d]) || (d != ax && ca[d] != cb[d]) {
                return Err(Error::Config(format!("regions {a} and {b} do not match across their interface")));
            }
        }
        let (ha, hb) = (ga.face_offset(face_a), gb.face_offset(face_b));
        let mut shared = Vec::new();
        let mut rim = Vec::new();
        for l in 0..ga.face_len(face_a) {
            let (pa, pb) = (ga.face_node(face_a, l), gb.face_node(face_b, l));
            match (regions[a].role(pa), regions[b].role(pb)) {
                (NodeRole::External, NodeRole::External) => shared.push((ha + l, pa, hb + l, pb)),
                (NodeRole::Pinned, NodeRole::Pinned) => rim.push((ha + l, hb + l)),
                _ => {
                    return Err(Error::Config(format!(
                        "regions {a} and {b} disagree on the boundary conditions around their interface"
                    )))
                }
            }
        }
        Ok(Link { iface, shared, rim })
    }

    pub fn regions(&self) -> &[Simulation] {
        &self.regions
    }

    pub fn region_mut(&mut self, r: usize) -> &mut Simulation {
        &mut self.regions[r]
    }

    pub fn interfaces(&self) -> Vec<Interface> {
        self.links.iter().map(|l| l.iface).collect()
    }

    pub fn dt(&self) -> f64 {
        self.regions[0].dt()
    }

    pub fn step_index(&self) -> u64 {
        self.regions[0].step_index()
    }

    /// `None` disables the guard on `max_r ‖ψ_r‖∞` relative to its initial value.
    pub fn set_guard_factor(&mut self, factor: Option<f64>) {
        self.guard_factor = factor;
    }

    pub fn initial_norm(&self) -> f64 {
        self.initial_norm
    }

    pub fn max_norm(&self) -> f64 {
        self.regions.iter().map(|s| s.max_norm()).fold(0.0, f64::max)
    }

    /// Scale every region's state by `f`.
    pub fn scale_states(&mut self, f: f64) {
        self.regions.iter_mut().for_each(|s| s.scale_state(f));
        self.initial_norm *= f.abs();
    }

    fn merge(&mut self, real: bool) {
        let dt = self.dt();
        for link in &self.links {
            let Interface { a, b, .. } = link.iface;
            let hbar = self.regions[a].operators().constants().hbar;
            let owner_is_b = b > a;
            let (ra, rb) = pair_mut(&mut self.regions, a, b);
            let xa = ra.interface_access(real);
            let xb = rb.interface_access(real);
            for &(ha, pa, hb, pb) in &link.shared {
                let (va, vb) = (xa.volume[pa], xb.volume[pb]);
                let old = if owner_is_b { xb.old[pb] } else { xa.old[pa] };
                // ψ_I: −H ψ_R on the right-hand side; ψ_R: +H ψ_I.
                let sign = if real { 1.0 } else { -1.0 };
                let new = old + dt / (hbar * (va + vb)) * sign * (xa.h[pa] + xb.h[pb]);
                xa.new[pa] = new;
                xb.new[pb] = new;
                // Each side's face equation `ħV(new − old)/Δt = sign·(h − coef·g)`
                // solved for its hanging variable g.
                let ga = (xa.h[pa] - sign * hbar * va * (new - xa.old[pa]) / dt) / xa.coef[ha];
                let gb = (xb.h[pb] - sign * hbar * vb * (new - xb.old[pb]) / dt) / xb.coef[hb];
                xa.grad[ha] = ga;
                xb.grad[hb] = gb;
            }
            for &(ha, hb) in &link.rim {
                xa.grad[ha] = 0.0;
                xb.grad[hb] = 0.0;
            }
        }
    }

    /// Advance every region by one step.
    pub fn step(&mut self) -> Result<()> {
        self.regions.par_iter_mut().try_for_each(|s| s.phase_imag())?;
        self.merge(false);
        self.regions.par_iter_mut().try_for_each(|s| s.phase_real())?;
        self.merge(true);
        let mut first_err = None;
        for s in &mut self.regions {
            if let Err(e) = s.finish_step() {
                first_err.get_or_insert(e);
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        if let Some(f) = self.guard_factor {
            let norm = self.max_norm();
            if self.initial_norm > 0.0 && norm > f * self.initial_norm {
                return Err(Error::Diverged {
                    step: self.step_index() - 1,
                    reason: format!("max |psi| = {norm:e} exceeds {f:e} x initial {:e}", self.initial_norm),
                });
            }
        }
        Ok(())
    }

    /// Step `n_t` times; `observers[r]` sees region `r` after every step,
    /// including a step that trips the divergence guard, so that observers
    /// always describe the current state.
    pub fn run(&mut self, n_t: u64, observers: &mut [&mut dyn Observer]) -> Result<()> {
        if observers.len() != self.regions.len() && !observers.is_empty() {
            return Err(Error::Dimension { expected: self.regions.len(), got: observers.len() });
        }
        for _ in 0..n_t {
            let outcome = self.step();
            if matches!(outcome, Ok(()) | Err(Error::Diverged { .. })) {
                for (sim, o) in self.regions.iter().zip(observers.iter_mut()) {
                    let view = sim.last_step().expect("a step was just taken");
                    o.observe(&view);
                }
            }
            outcome?;
        }
        Ok(())
    }

    /// Run with one [`Tracker`] per region. A divergence stops the run early;
    /// the series then cover the steps before it and the error is returned
    /// alongside.
    pub fn run_tracked(&mut self, n_t: u64, stride: u64) -> Result<(Vec<Series>, Option<Error>)> {
        let mut trackers = self.regions.iter().map(|s| Tracker::new(s, n_t, stride)).collect::<Result<Vec<_>>>()?;
        let outcome = {
            let mut obs: Vec<&mut dyn Observer> = trackers.iter_mut().map(|t| t as &mut dyn Observer).collect();
            self.run(n_t, &mut obs)
        };
        let err = match outcome {
            Ok(()) => None,
            Err(e @ Error::Diverged { .. }) => Some(e),
            Err(e) => return Err(e),
        };
        let series = trackers.into_iter().zip(&self.regions).map(|(t, s)| t.finish(s)).collect::<Result<Vec<_>>>()?;
        Ok((series, err))
    }
}

/// Conservation summary of a coupled run.
#[derive(Debug, Clone, Serialize)]
pub struct CrossRegionReport {
    /// `max_n |Σ℘ⁿ − Σ℘⁰| / p_norm`.
    pub probability_drift: f64,
    /// `max_n |Σℋⁿ − Σℋ¹| / h_norm`.
    pub energy_drift: f64,
    pub probability_drift_simple: f64,
    pub energy_drift_simple: f64,
    /// Largest `|ℐ_A + ℐ_B|` over interfaces and steps, relative to the
    /// largest `|ℐ_A|` of that interface.
    pub current_mismatch: f64,
    pub min_region_p: Vec<f64>,
    pub max_region_p: Vec<f64>,
    /// `Σ℘⁰`, the a priori bound on every region's probability.
    pub total_p0: f64,
}

/// Compare aligned per-region series (same stride and horizon).
pub fn cross_region_conservation(
    series: &[Series],
    interfaces: &[Interface],
    p_norm: f64,
    h_norm: f64,
) -> Result<CrossRegionReport> {
    let first = series.first().ok_or_else(|| Error::InvalidInput("no series".into()))?;
    let rows = first.records.len();
    if series.iter().any(|s| s.records.len() != rows) {
        return Err(Error::InvalidInput("series are not aligned".into()));
    }
    let total = |k: usize, f: &dyn Fn(&crate::diagnostics::Record) -> Option<f64>| -> Option<f64> {
        series.iter().map(|s| f(&s.records[k])).sum()
    };
    let p0 = total(0, &|r| Some(r.p)).unwrap_or(0.0);
    let ps0 = total(0, &|r| Some(r.p_simple)).unwrap_or(0.0);
    let h1_row = first.records.iter().position(|r| r.h.is_some());
    let h1 = h1_row.and_then(|k| total(k, &|r| r.h));
    let hs1 = h1_row.and_then(|k| total(k, &|r| Some(r.h_simple)));
    let mut rep = CrossRegionReport {
        probability_drift: 0.0,
        energy_drift: 0.0,
        probability_drift_simple: 0.0,
        energy_drift_simple: 0.0,
        current_mismatch: 0.0,
        min_region_p: series.iter().map(|s| s.min_p()).collect(),
        max_region_p: series.iter().map(|s| s.max_p()).collect(),
        total_p0: p0,
    };
    for k in 0..rows {
        let p = total(k, &|r| Some(r.p)).unwrap_or(0.0);
        let ps = total(k, &|r| Some(r.p_simple)).unwrap_or(0.0);
        rep.probability_drift = rep.probability_drift.max((p - p0).abs() / p_norm);
        rep.probability_drift_simple = rep.probability_drift_simple.max((ps - ps0).abs() / p_norm);
        if let (Some(h), Some(h1)) = (total(k, &|r| r.h), h1) {
            rep.energy_drift = rep.energy_drift.max((h - h1).abs() / h_norm);
        }
        if first.records[k].n >= 1 {
            if let Some(hs1) = hs1 {
                let hs = total(k, &|r| Some(r.h_simple)).unwrap_or(0.0);
                rep.energy_drift_simple = rep.energy_drift_simple.max((hs - hs1).abs() / h_norm);
            }
        }
    }
    for iface in interfaces {
        let (ca, cb) = (&series[iface.a].currents, &series[iface.b].currents);
        let scale = ca.iter().fold(0.0f64, |m, c| m.max(c[iface.face_a.index()].abs()));
        if scale == 0.0 {
            continue;
        }
        for (x, y) in ca.iter().zip(cb) {
            let mismatch = (x[iface.face_a.index()] + y[iface.face_b.index()]).abs() / scale;
            rep.current_mismatch = rep.current_mismatch.max(mismatch);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::PhysicalConstants;
    use crate::grid::RegionGrid;
    use crate::operators::Operators;
    use crate::stepper::{FaceConditions, StaggeredState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    const SP: [f64; 3] = [1e-9, 1e-9, 1e-9];

    fn ops(cells: [usize; 3], origin_x: f64) -> Arc<Operators> {
        let g = RegionGrid::new(cells, SP).unwrap().with_origin([origin_x, 0.0, 0.0]);
        let n = g.node_count();
        Arc::new(Operators::new(g, PhysicalConstants::electron(), vec![2e-22; n]).unwrap())
    }

    fn split_pair(whole: &StaggeredState, dt: f64) -> RegionGraph {
        let left = ops([4, 3, 3], 0.0);
        let right = ops([4, 3, 3], 4e-9);
        let full = RegionGrid::new([8, 3, 3], SP).unwrap();
        let pick = |g: &RegionGrid, shift: usize, v: &[f64]| -> Vec<f64> {
            (0..g.node_count())
                .map(|p| {
                    let (i, j, k) = g.triple(p);
                    v[full.offset(i + shift, j, k)]
                })
                .collect()
        };
        let bl = FaceConditions::dirichlet().with(Face::East, BoundaryCondition::Coupled);
        let br = FaceConditions::dirichlet().with(Face::West, BoundaryCondition::Coupled);
        let sl = StaggeredState::new(pick(left.grid(), 0, &whole.psi_r), pick(left.grid(), 0, &whole.psi_i));
        let sr = StaggeredState::new(pick(right.grid(), 4, &whole.psi_r), pick(right.grid(), 4, &whole.psi_i));
        let regions = vec![Simulation::new(left, bl, dt, sl).unwrap(), Simulation::new(right, br, dt, sr).unwrap()];
        let iface = Interface { a: 0, face_a: Face::East, b: 1, face_b: Face::West };
        RegionGraph::new(regions, vec![iface], false).unwrap()
    }

    #[test]
    fn split_region_reproduces_monolithic_run() {
        let whole_ops = ops([8, 3, 3], 0.0);
        let dt = 0.95 * stability::cfl_limit(&whole_ops);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = whole_ops.node_count();
        let st = StaggeredState::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let mut graph = split_pair(&st, dt);
        let mut mono = Simulation::new(whole_ops, FaceConditions::dirichlet(), dt, st).unwrap();
        for _ in 0..60 {
            mono.step().unwrap();
            graph.step().unwrap();
        }
        let full = mono.operators().grid().clone();
        let scale = mono.max_norm();
        for (r, shift) in [(0usize, 0usize), (1, 4)] {
            let sim = &graph.regions()[r];
            let g = sim.operators().grid();
            for p in 0..g.node_count() {
                let (i, j, k) = g.triple(p);
                let q = full.offset(i + shift, j, k);
                assert!((sim.psi_r()[p] - mono.psi_r()[q]).abs() <= 1e-13 * scale);
                assert!((sim.psi_i()[p] - mono.psi_i()[q]).abs() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn coupled_pair_conserves_totals_and_cancels_currents() {
        let whole = ops([8, 3, 3], 0.0);
        let dt = 0.95 * stability::cfl_limit(&whole);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = whole.node_count();
        let st = StaggeredState::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let mut graph = split_pair(&st, dt);
        let (series, err) = graph.run_tracked(80, 1).unwrap();
        assert!(err.is_none());
        let rep = cross_region_conservation(&series, &graph.interfaces(), series[0].p_scale(), 1.0).unwrap();
        let h_scale = series.iter().map(|s| s.h_scale()).fold(0.0, f64::max);
        assert!(rep.probability_drift < 1e-13, "{}", rep.probability_drift);
        assert!(rep.energy_drift / h_scale < 1e-12);
        assert!(rep.current_mismatch < 1e-12, "{}", rep.current_mismatch);
        for s in &series {
            assert!(s.max_residual_p() < 1e-12);
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let st = StaggeredState::zeros(9 * 4 * 4);
        let mut graph = split_pair(&st, 1e-17);
        for _ in 0..5 {
            graph.step().unwrap();
        }
        assert!(graph.regions().iter().all(|s| s.psi_r().iter().chain(s.psi_i()).all(|&x| x == 0.0)));
    }

    #[test]
    fn mismatched_faces_are_rejected() {
        let bl = FaceConditions::dirichlet().with(Face::East, BoundaryCondition::Coupled);
        let br = FaceConditions::dirichlet().with(Face::West, BoundaryCondition::Coupled);
        let regions = vec![
            Simulation::new(ops([4, 3, 3], 0.0), bl, 1e-17, StaggeredState::zeros(80)).unwrap(),
            Simulation::new(ops([4, 2, 3], 4e-9), br, 1e-17, StaggeredState::zeros(60)).unwrap(),
        ];
        let iface = Interface { a: 0, face_a: Face::East, b: 1, face_b: Face::West };
        assert!(RegionGraph::new(regions, vec![iface], false).is_err());
    }
}
