use std::sync::Arc;

use fdtdq::config::{Quantity, RunConfig};
use fdtdq::constants::{unit_scale, ELECTRON_VOLT, NANOMETER};
use fdtdq::diagnostics::{self, Tracker};
use fdtdq::operators::spmv;
use fdtdq::stepper::Observer;
use fdtdq::{checkpoint, stability, BoundaryCondition, Face, FaceConditions, Operators, PhysicalConstants};
use fdtdq::{RegionGrid, Simulation, StaggeredState};
use proptest::prelude::*;

/// Grid cells, spacings (nm) and node potentials (eV).
fn region() -> impl Strategy<Value = Operators> {
    (
        [1usize..=4, 1usize..=3, 1usize..=3],
        [0.5f64..2.0, 0.5f64..2.0, 0.5f64..2.0],
        prop::collection::vec(-1.0f64..1.0, 80),
        0.0f64..0.5,
    )
        .prop_map(|(cells, sp, u, amp)| {
            let g = RegionGrid::new(cells, sp.map(|s| s * NANOMETER)).unwrap();
            let pot = (0..g.node_count()).map(|p| amp * ELECTRON_VOLT * u[p % u.len()]).collect();
            Operators::new(g, PhysicalConstants::electron(), pot).unwrap()
        })
}

fn state(n: usize, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = (0..n).map(|p| values[p % values.len()]).collect();
    let i = (0..n).map(|p| values[(p * 7 + 3) % values.len()]).collect();
    (r, i)
}

fn condition() -> impl Strategy<Value = BoundaryCondition> {
    prop_oneof![Just(BoundaryCondition::DirichletZero), Just(BoundaryCondition::NeumannZero)]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn probability_is_a_sum_over_cells(ops in region(), vals in prop::collection::vec(-1.0f64..1.0, 50)) {
        let g = ops.grid().clone();
        let dt = 0.9 * stability::cfl_gen_limit(&ops).unwrap();
        let (r, i) = state(g.node_count(), &vals);
        let whole = diagnostics::probability(&ops, dt, &r, &i).unwrap();
        let [nx, ny, nz] = g.cells();
        let mut parts = 0.0;
        for c in 0..nz {
            for b in 0..ny {
                for a in 0..nx {
                    let cell = ops.cell_operators(a, b, c).unwrap();
                    let (cr, ci): (Vec<f64>, Vec<f64>) = g.cell_nodes(a, b, c).iter().map(|&p| (r[p], i[p])).unzip();
                    parts += diagnostics::probability(&cell, dt, &cr, &ci).unwrap();
                }
            }
        }
        prop_assert!(rel(parts, whole) <= 1e-12, "{parts} vs {whole}");
    }

    #[test]
    fn matrix_free_h_matches_assembly(ops in region(), vals in prop::collection::vec(-1.0f64..1.0, 50)) {
        let (x, _) = state(ops.node_count(), &vals);
        let assembled = spmv(&ops.assemble_h().unwrap(), &x);
        let free = ops.apply_h(&x).unwrap();
        let scale = assembled.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for (a, b) in assembled.iter().zip(&free) {
            prop_assert!((a - b).abs() <= 1e-14 * scale);
        }
    }

    #[test]
    fn closed_form_limit_never_exceeds_generalized(ops in region()) {
        let cfl = stability::cfl_limit(&ops);
        let gen = stability::cfl_gen_limit(&ops).unwrap();
        prop_assert!((gen - cfl) / gen >= -1e-15, "{cfl:e} > {gen:e}");
    }

    #[test]
    fn probability_is_positive_below_the_limit(
        ops in region(),
        vals in prop::collection::vec(-1.0f64..1.0, 50),
        factor in 0.05f64..0.999,
    ) {
        let dt = factor * stability::cfl_gen_limit(&ops).unwrap();
        let (r, i) = state(ops.node_count(), &vals);
        prop_assume!(r.iter().chain(&i).any(|x| *x != 0.0));
        prop_assert!(diagnostics::probability(&ops, dt, &r, &i).unwrap() > 0.0);
    }

    #[test]
    fn balance_residuals_stay_at_round_off(
        ops in region(),
        vals in prop::collection::vec(-1.0f64..1.0, 50),
        bcs in prop::collection::vec(condition(), 6),
        steps in 1u64..40,
        stride in 1u64..5,
    ) {
        let ops = Arc::new(ops);
        let dt = 0.95 * stability::cfl_limit(&ops);
        let (r, i) = state(ops.node_count(), &vals);
        let mut fc = FaceConditions::dirichlet();
        for (f, bc) in Face::ALL.into_iter().zip(bcs) {
            fc = fc.with(f, bc);
        }
        let mut sim = Simulation::new(ops, fc, dt, StaggeredState::new(r, i)).unwrap();
        let mut tracker = Tracker::new(&sim, steps, stride).unwrap();
        sim.run(steps, &mut [&mut tracker as &mut dyn Observer]).unwrap();
        let series = tracker.finish(&sim).unwrap();
        prop_assert!(series.max_residual_p() <= 1e-13, "{}", series.max_residual_p());
        prop_assert!(series.max_residual_h() <= 1e-12, "{}", series.max_residual_h());
    }

    #[test]
    fn checkpoints_round_trip_exactly(
        r in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..40),
        n in any::<u32>(),
    ) {
        let i: Vec<f64> = r.iter().rev().copied().collect();
        let mut st = StaggeredState::new(r, i);
        st.n = u64::from(n);
        let mut buf = Vec::new();
        checkpoint::write_checkpoint(&st, &mut buf).unwrap();
        let back = checkpoint::read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(back.n, st.n);
        for (a, b) in st.psi_r.iter().zip(&back.psi_r).chain(st.psi_i.iter().zip(&back.psi_i)) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tagged_quantities_equal_plain_si(value in -1e3f64..1e3, unit in prop::sample::select(vec!["nm", "A", "fs", "as", "eV", "meV", "Da"])) {
        let tagged: Quantity = serde_json::from_str(&format!(r#"{{"value": {value:e}, "unit": "{unit}"}}"#)).unwrap();
        prop_assert_eq!(tagged.si(), value * unit_scale(unit).unwrap());
        let plain: Quantity = serde_json::from_str(&format!("{value:e}")).unwrap();
        prop_assert_eq!(plain.si(), value);
    }

    #[test]
    fn zero_stride_is_rejected(scenario in prop::sample::select(vec!["infinite_well", "barrier", "tunneling"])) {
        let err = RunConfig::from_json(&format!(r#"{{"scenario": "{scenario}", "diag_stride": 0}}"#));
        prop_assert!(matches!(err, Err(fdtdq::Error::Config(_))));
    }
}
