//! Threading contracts: graphs and space operators are immutable after
//! construction and freely shareable; independent problems run in parallel
//! without interfering.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use chp_core::config::parse_config;
use chp_core::domain::{CoupledDomain, CoupledField, DomainKind};
use chp_core::graphs::MonotoneGraph;
use chp_core::spaces::SpaceOps;

#[test]
fn graphs_evaluate_from_many_threads() {
    let g = MonotoneGraph::logarithmic(0.7).unwrap();
    let reference: Vec<f64> = (0..100)
        .map(|k| g.yosida(0.05, -2.0 + 0.04 * k as f64).unwrap())
        .collect();
    std::thread::scope(|scope| {
        for _ in 0..4 {
            let g = &g;
            let reference = &reference;
            scope.spawn(move || {
                for (k, want) in reference.iter().enumerate() {
                    let got = g.yosida(0.05, -2.0 + 0.04 * k as f64).unwrap();
                    assert_eq!(got.to_bits(), want.to_bits());
                }
            });
        }
    });
}

#[test]
fn shared_factorization_solves_concurrently() {
    let dom = Arc::new(
        CoupledDomain::build(DomainKind::Interval1D { n_cells: 16 }, 1.0, 1.0).unwrap(),
    );
    let ops = SpaceOps::new(dom).unwrap();
    let mut rng = StdRng::seed_from_u64(9);
    let loads: Vec<CoupledField> = (0..8)
        .map(|_| {
            ops.project(&CoupledField {
                bulk: DVector::from_fn(ops.domain().n_bulk, |_, _| rng.random_range(-1.0..1.0)),
                surf: DVector::from_fn(ops.domain().n_surf, |_, _| rng.random_range(-1.0..1.0)),
            })
        })
        .collect();
    let reference: Vec<CoupledField> =
        loads.iter().map(|g| ops.duality_solve(g).unwrap()).collect();
    std::thread::scope(|scope| {
        for t in 0..4 {
            let ops = &ops;
            let loads = &loads;
            let reference = &reference;
            scope.spawn(move || {
                for (g, want) in loads.iter().zip(reference.iter()).skip(t % 2) {
                    let got = ops.duality_solve(g).unwrap();
                    assert!(got.sub(want).linf() == 0.0);
                }
            });
        }
    });
}

#[test]
fn independent_problems_run_in_parallel() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let build = || {
        let text = std::fs::read_to_string(dir.join("interval_zero.toml")).unwrap();
        parse_config(&text).unwrap().build(&dir).unwrap()
    };
    let sequential = {
        let p = build();
        let z = CoupledField::zeros(p.spaces.domain());
        p.fixed_point_solve(0.5, &z).unwrap().residual
    };
    let handles: Vec<_> = (0..3)
        .map(|_| {
            let dir = dir.clone();
            std::thread::spawn(move || {
                let text = std::fs::read_to_string(dir.join("interval_zero.toml")).unwrap();
                let p = parse_config(&text).unwrap().build(&dir).unwrap();
                let z = CoupledField::zeros(p.spaces.domain());
                p.fixed_point_solve(0.5, &z).unwrap().residual
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().to_bits(), sequential.to_bits());
    }
}
