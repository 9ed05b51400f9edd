//! Desk-scale invariant suites behind `fdtdq verify`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario_operators;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::constants::{PhysicalConstants, ELECTRON_VOLT, NANOMETER};
use crate::coupling::{cross_region_conservation, Interface, RegionGraph};
use crate::diagnostics::Tracker;
use crate::error::{Error, Result};
use crate::grid::{Axis, Face, RegionGrid};
use crate::operators::{spmv, Operators};
use crate::scenarios::{sample_state, total_probability, InfiniteWell};
use crate::stability;
use crate::stepper::{BoundaryCondition, FaceConditions, HangingSource, Observer, Simulation, StaggeredState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Expect {
    AtMost(f64),
    AtLeast(f64),
    Positive,
    Negative,
}

impl Expect {
    pub fn passes(self, v: f64) -> bool {
        match self {
            Expect::AtMost(t) => v <= t,
            Expect::AtLeast(t) => v >= t,
            Expect::Positive => v > 0.0,
            Expect::Negative => v < 0.0,
        }
    }
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expect::AtMost(t) => write!(f, "<= {t:.1e}"),
            Expect::AtLeast(t) => write!(f, ">= {t:.1e}"),
            Expect::Positive => write!(f, "> 0"),
            Expect::Negative => write!(f, "< 0"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub suite: String,
    pub value: f64,
    pub expect: Expect,
    pub passed: bool,
}

fn row(suite: impl Into<String>, value: f64, expect: Expect) -> VerifyRow {
    VerifyRow { suite: suite.into(), value, expect, passed: expect.passes(value) }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Also check the stability limits of this scenario's regions.
    pub scenario: Option<RunConfig>,
    /// Mutate the open-region balance suites; their rows must then fail.
    pub inject_sign_error: bool,
}

pub fn format_table(rows: &[VerifyRow]) -> String {
    let mut s = format!("{:<52} {:>12} {:>12}  {}\n", "suite", "value", "expected", "status");
    for r in rows {
        s.push_str(&format!(
            "{:<52} {:>12.3e} {:>12}  {}\n",
            r.suite,
            r.value,
            r.expect.to_string(),
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} suites, {failed} failed\n", rows.len()));
    s
}

pub fn verify_suite(opts: &VerifyOptions) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    rows.extend(isolated_well()?);
    rows.extend(open_region(opts.inject_sign_error)?);
    if !opts.inject_sign_error {
        let mutated = open_region(true)?;
        rows.push(row("mutation: H-bot sign error breaks P balance", mutated[0].value, Expect::AtLeast(1e-8)));
    }
    rows.extend(coupled_pair()?);
    rows.push(matrix_free()?);
    rows.extend(stability_rows()?);
    rows.push(checkpoint_round_trip()?);
    if let Some(cfg) = &opts.scenario {
        rows.extend(scenario_rows(cfg)?);
    }
    Ok(rows)
}

fn random_state(n: usize, seed: u64) -> StaggeredState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StaggeredState::new(
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

fn isolated_well() -> Result<Vec<VerifyRow>> {
    let mut graph = InfiniteWell::with_cells(8).build(0.999, false)?;
    let (series, err) = graph.run_tracked(400, 1)?;
    if let Some(e) = err {
        return Err(e);
    }
    let s = &series[0];
    let p_dev = s.records.iter().map(|r| (r.p - 1.0).abs()).fold(0.0, f64::max);
    let hs: Vec<f64> = s.records.iter().filter_map(|r| r.h).collect();
    let h_dev = hs.iter().map(|h| ((h - hs[0]) / hs[0]).abs()).fold(0.0, f64::max);
    Ok(vec![
        row("isolated well: max |P - 1|", p_dev, Expect::AtMost(1e-13)),
        row("isolated well: max relative H drift", h_dev, Expect::AtMost(1e-12)),
    ])
}

/// `e^{i(kx − ωt)}` entering through the x faces.
struct PlaneWave {
    k: f64,
    omega: f64,
}

impl HangingSource for PlaneWave {
    fn gradient(&self, face: Face, pos: [f64; 3], t: f64) -> Complex64 {
        if face.axis() != Axis::X {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, self.k) * Complex64::from_polar(1.0, self.k * pos[0] - self.omega * t)
    }
}

fn open_region(mutate: bool) -> Result<Vec<VerifyRow>> {
    let g = RegionGrid::new([10, 3, 4], [NANOMETER; 3])?;
    let u = (0..g.node_count()).map(|p| 0.02 * ELECTRON_VOLT * (g.position(p)[0] / NANOMETER).sin()).collect();
    let ops = Arc::new(Operators::new(g, PhysicalConstants::electron(), u)?);
    let dt = 0.95 * stability::cfl_limit(&ops);
    let wave = PlaneWave { k: 0.7 / NANOMETER, omega: 2e13 };
    let st = sample_state(ops.grid(), dt, |x, t| Complex64::from_polar(1.0, wave.k * x[0] - wave.omega * t));
    let src = BoundaryCondition::Prescribed(Arc::new(wave));
    let bc = FaceConditions::neumann().with(Face::West, src.clone()).with(Face::East, src);
    let mut sim = Simulation::new(ops, bc, dt, st)?;
    if mutate {
        sim.inject_boundary_sign_error();
    }
    let n_t = 300;
    let mut tracker = Tracker::new(&sim, n_t, 1)?;
    let (rp, rh) = match sim.run(n_t, &mut [&mut tracker as &mut dyn Observer]) {
        Ok(()) => {
            let s = tracker.finish(&sim)?;
            (s.max_residual_p(), s.max_residual_h())
        }
        Err(Error::Diverged { .. }) => (f64::INFINITY, f64::INFINITY),
        Err(e) => return Err(e),
    };
    Ok(vec![
        row("open region: normalized P balance residual", rp, Expect::AtMost(1e-13)),
        row("open region: normalized H balance residual", rh, Expect::AtMost(1e-13)),
    ])
}

fn coupled_pair() -> Result<Vec<VerifyRow>> {
    let sp = [NANOMETER; 3];
    let c = PhysicalConstants::electron();
    let mk = |cells: [usize; 3], x0: f64| -> Result<Arc<Operators>> {
        let g = RegionGrid::new(cells, sp)?.with_origin([x0, 0.0, 0.0]);
        let n = g.node_count();
        Ok(Arc::new(Operators::new(g, c, vec![0.1 * ELECTRON_VOLT; n])?))
    };
    let whole = mk([8, 3, 3], 0.0)?;
    let dt = 0.95 * stability::cfl_limit(&whole);
    let st = random_state(whole.node_count(), 7);
    let full = whole.grid().clone();
    let (left, right) = (mk([4, 3, 3], 0.0)?, mk([4, 3, 3], 4.0 * NANOMETER)?);
    let pick = |g: &RegionGrid, shift: usize, v: &[f64]| -> Vec<f64> {
        (0..g.node_count())
            .map(|p| {
                let (i, j, k) = g.triple(p);
                v[full.offset(i + shift, j, k)]
            })
            .collect()
    };
    let sl = StaggeredState::new(pick(left.grid(), 0, &st.psi_r), pick(left.grid(), 0, &st.psi_i));
    let sr = StaggeredState::new(pick(right.grid(), 4, &st.psi_r), pick(right.grid(), 4, &st.psi_i));
    let regions = vec![
        Simulation::new(left, FaceConditions::dirichlet().with(Face::East, BoundaryCondition::Coupled), dt, sl)?,
        Simulation::new(right, FaceConditions::dirichlet().with(Face::West, BoundaryCondition::Coupled), dt, sr)?,
    ];
    let ifaces = vec![Interface { a: 0, face_a: Face::East, b: 1, face_b: Face::West }];
    let mut graph = RegionGraph::new(regions, ifaces.clone(), false)?;
    let p0 = total_probability(&graph)?;
    let mut mono = Simulation::new(whole, FaceConditions::dirichlet(), dt, st)?;
    mono.run(200, &mut [])?;
    let (series, err) = graph.run_tracked(200, 1)?;
    if let Some(e) = err {
        return Err(e);
    }
    let scale = mono.max_norm();
    let mut diff: f64 = 0.0;
    for (r, shift) in [(0usize, 0usize), (1, 4)] {
        let sim = &graph.regions()[r];
        let g = sim.operators().grid();
        for p in 0..g.node_count() {
            let (i, j, k) = g.triple(p);
            let q = full.offset(i + shift, j, k);
            diff = diff.max((sim.psi_r()[p] - mono.psi_r()[q]).abs()).max((sim.psi_i()[p] - mono.psi_i()[q]).abs());
        }
    }
    let h1: f64 = series.iter().filter_map(|s| s.records.iter().find_map(|r| r.h)).sum();
    let rep = cross_region_conservation(&series, &ifaces, p0, h1.abs())?;
    Ok(vec![
        row("coupled pair: split vs monolithic state", diff / scale, Expect::AtMost(1e-13)),
        row("coupled pair: total P drift", rep.probability_drift, Expect::AtMost(1e-13)),
        row("coupled pair: total H drift", rep.energy_drift, Expect::AtMost(1e-12)),
        row("coupled pair: interface current mismatch", rep.current_mismatch, Expect::AtMost(1e-12)),
    ])
}

fn random_ops(rng: &mut ChaCha8Rng) -> Result<Operators> {
    let cells = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
    let sp =
        [rng.gen_range(0.5..2.0) * NANOMETER, rng.gen_range(0.5..2.0) * NANOMETER, rng.gen_range(0.5..2.0) * NANOMETER];
    let g = RegionGrid::new(cells, sp)?;
    let amp = rng.gen_range(0.0..2.0) * ELECTRON_VOLT;
    let u = (0..g.node_count()).map(|_| rng.gen_range(-amp..=amp)).collect();
    Operators::new(g, PhysicalConstants::electron(), u)
}

fn matrix_free() -> Result<VerifyRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ops = random_ops(&mut rng)?;
    let x = random_state(ops.node_count(), 4).psi_r;
    let dense = spmv(&ops.assemble_h()?, &x);
    let free = ops.apply_h(&x)?;
    let scale = dense.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let err = dense.iter().zip(&free).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(row("matrix-free H vs assembled", err / scale, Expect::AtMost(1e-14)))
}

fn stability_rows() -> Result<Vec<VerifyRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut margin = f64::INFINITY;
    for _ in 0..50 {
        let ops = random_ops(&mut rng)?;
        let gen = stability::cfl_gen_limit(&ops)?;
        margin = margin.min((gen - stability::cfl_limit(&ops)) / gen);
    }
    let ops = random_ops(&mut rng)?;
    let gen = stability::cfl_gen_limit(&ops)?;
    let (lo_below, hi_below) = stability::p_extremes(&ops, 0.999 * gen)?;
    let (lo_above, hi_above) = stability::p_extremes(&ops, 1.001 * gen)?;
    Ok(vec![
        row("CFL <= generalized CFL, 50 random potentials", margin, Expect::AtLeast(-1e-15)),
        row("P positive definite at 0.999 x generalized CFL", lo_below / hi_below, Expect::Positive),
        row("P indefinite at 1.001 x generalized CFL", lo_above / hi_above, Expect::Negative),
    ])
}

fn checkpoint_round_trip() -> Result<VerifyRow> {
    let mut graph = InfiniteWell::with_cells(5).build(0.999, false)?;
    graph.run(7, &mut [])?;
    let st = graph.regions()[0].state();
    let mut buf = Vec::new();
    checkpoint::write_checkpoint(&st, &mut buf)?;
    let back = checkpoint::read_checkpoint(buf.as_slice())?;
    let diff = st
        .psi_r
        .iter()
        .zip(&back.psi_r)
        .chain(st.psi_i.iter().zip(&back.psi_i))
        .map(|(a, b)| (a - b).abs())
        .fold(if back.n == st.n { 0.0 } else { f64::INFINITY }, f64::max);
    Ok(row("checkpoint round trip", diff, Expect::AtMost(0.0)))
}

fn scenario_rows(cfg: &RunConfig) -> Result<Vec<VerifyRow>> {
    let (regions, dt) = scenario_operators(cfg)?;
    let mut rows = Vec::new();
    for (name, ops) in regions {
        let gen = stability::cfl_gen_limit(&ops)?;
        let cfl = stability::cfl_limit(&ops);
        rows.push(row(format!("{name}: CFL <= generalized CFL"), (gen - cfl) / gen, Expect::AtLeast(-1e-12)));
        let (lo, hi) = stability::p_extremes(&ops, dt)?;
        let expect = if dt < gen { Expect::Positive } else { Expect::Negative };
        rows.push(row(format!("{name}: P definiteness at run dt"), lo / hi, expect));
    }
    Ok(rows)
}
