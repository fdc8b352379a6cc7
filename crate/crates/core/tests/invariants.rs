//! Structural invariants on randomly generated cut meshes.

mod oracle;

use agfem::fespace::Mode;
use oracle::invariants::*;
use proptest::prelude::*;

fn geometry() -> impl Strategy<Value = Geometry> {
    prop_oneof![
        (0.0..1.0f64, 0.0..1.0f64, 0.15..0.8f64).prop_map(|(x, y, r)| Geometry::Circle {
            center: (x, y),
            radius: r
        }),
        (0.0..std::f64::consts::TAU, 0.2..0.8f64).prop_map(|(angle, offset)| Geometry::HalfPlane { angle, offset }),
        Just(Geometry::Flower),
        Just(Geometry::Pacman),
    ]
}

fn instance(max_level: u8) -> impl Strategy<Value = Instance> {
    (
        geometry(),
        any::<bool>(),
        1usize..=2,
        prop_oneof![Just(Mode::Aggregated), Just(Mode::Standard)],
        -6i32..=6,
        3u8..=max_level,
        prop::collection::vec(any::<usize>(), 0..4),
    )
        .prop_map(|(geometry, elasticity, order, mode, e, level, refine)| Instance {
            geometry,
            elasticity,
            order,
            mode,
            contrast: 10f64.powi(e),
            level,
            refine,
        })
}

fn built(inst: &Instance) -> Result<(agfem::bench::ManufacturedCase, agfem::driver::Discrete), TestCaseError> {
    build(inst).map_err(|e| {
        // too coarse to resolve the interface: a documented, reported error, not a violation
        if e.contains("isolated ill-posed island") {
            TestCaseError::reject(e)
        } else {
            TestCaseError::fail(format!("{inst:?}: {e}"))
        }
    })
}

fn check(r: Result<impl Sized, String>) -> Result<(), TestCaseError> {
    r.map(|_| ()).map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cut_area_is_conserved(inst in instance(5)) {
        let (_, d) = built(&inst)?;
        check(area_conservation(&d))?;
    }

    #[test]
    fn constraint_rows_sum_to_one(inst in instance(5)) {
        let (_, d) = built(&inst)?;
        check(constraint_row_sums(&d.space))?;
    }

    #[test]
    fn aggregates_are_connected_with_unique_roots(inst in instance(5)) {
        let (_, d) = built(&inst)?;
        check(aggregates_connected(&d))?;
    }

    #[test]
    fn closure_is_idempotent_and_acyclic(inst in instance(5)) {
        let (_, d) = built(&inst)?;
        check(closure_idempotent_acyclic(&d.space))?;
    }

    #[test]
    fn free_dofs_bounded_by_well_posed_dofs(inst in instance(5)) {
        let (_, d) = built(&inst)?;
        check(free_dof_bound(&d))?;
    }

    #[test]
    fn sparse_assembly_matches_dense(inst in instance(3)) {
        let (case, d) = built(&inst)?;
        prop_assume!(d.space.n_free() <= 2000);
        let (dm, db) = sparse_vs_dense(&case, &d).map_err(TestCaseError::fail)?;
        prop_assert!(dm <= 1e-12 && db <= 1e-12, "matrix {dm:e}, rhs {db:e}");
    }

    #[test]
    fn constraints_reproduce_polynomials(
        inst in instance(5),
        coef in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 9), 2),
    ) {
        let (_, d) = built(&inst)?;
        let n = (d.space.order() + 1).pow(2);
        let coef: Vec<Vec<f64>> = coef.iter().map(|c| c[..n].to_vec()).collect();
        check(polynomial_reproduction(&d, &coef))?;
    }
}
