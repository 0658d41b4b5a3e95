//! Convergence survey over the shipped configurations: fixed-point
//! iteration counts, solution amplitudes, energy margins, weak-form
//! residuals, continuation gaps, growth of the monitored quantities, orbit
//! replay gaps and warm-start behavior.
//!
//! Run with `cargo run -p chp-core --example survey`.

use std::path::Path;
use std::time::Instant;

use chp_core::config::parse_config;
use chp_core::domain::CoupledField;

fn survey(path: &str) {
    println!("=== {path} ===");
    let text = std::fs::read_to_string(path).unwrap();
    let cfg = parse_config(&text).unwrap();
    let problem = cfg.build(Path::new("configs")).unwrap();
    println!("c_P = {:.6}", problem.spaces.poincare_constant());

    let t0 = Instant::now();
    let outcome = problem
        .epsilon_continuation(&cfg.problem.eps_schedule)
        .unwrap();
    println!("continuation wall time: {:.2}s", t0.elapsed().as_secs_f64());
    for s in &outcome.solutions {
        let totals = s.orbit.log.totals();
        let umax = s
            .orbit
            .states
            .iter()
            .map(|st| st.v.linf())
            .fold(0.0f64, f64::max);
        println!(
            "eps={:<5} conv={} iters={:3} residual={:.3e} |u|_max={:.3} worst_margin={:.3e} sup_phi={:.3e}",
            s.eps, s.converged, s.picard_iters, s.residual, umax, totals.worst_energy_margin, totals.sup_energy
        );
        let report = problem.verify_weak_solution(s).unwrap();
        println!(
            "   weak: flow={:.3e} potential={:.3e} graph_gap={:.3e}",
            report.max_flow_residual, report.max_potential_residual, report.max_graph_gap
        );
    }
    println!("cauchy diffs: {:?}", outcome.cauchy_diffs);
    let totals: Vec<(f64, _)> = outcome
        .solutions
        .iter()
        .map(|s| (s.eps, s.orbit.log.totals()))
        .collect();
    if totals.len() >= 2 {
        let rep = chp_core::diagnostics::uniformity_report(&totals, 2.0);
        for e in &rep.checked {
            println!("   uniform[{}]: {:?} growth {:.3}", e.name, e.values, e.max_growth);
        }
    }

    if let Some(last) = outcome.solutions.last() {
        let t0 = Instant::now();
        let gap = problem.replay_gap(last).unwrap();
        println!("replay gap = {gap:.3e} ({:.2}s)", t0.elapsed().as_secs_f64());
    }

    // Warm vs cold first-iterate residual at the final eps.
    if outcome.solutions.len() >= 2 {
        let eps_last = outcome.solutions.last().unwrap().eps;
        let warm0 = {
            let warm = outcome.solutions[outcome.solutions.len() - 2].v0.clone();
            let mapped = problem.poincare_map(eps_last, &warm).unwrap();
            problem.spaces.domain().norm_h(&warm.sub(&mapped))
        };
        let cold0 = {
            let zero = CoupledField::zeros(problem.spaces.domain());
            let mapped = problem.poincare_map(eps_last, &zero).unwrap();
            problem.spaces.domain().norm_h(&zero.sub(&mapped))
        };
        println!("first-iterate residual: warm {warm0:.3e} vs cold {cold0:.3e}");
    }
}

fn main() {
    for cfg in [
        "configs/interval_log_sin.toml",
        "configs/interval_prototype_sin.toml",
        "configs/disc_log_sin.toml",
    ] {
        survey(cfg);
    }
}
