//! Seeded randomized property suite over the shipped potential graphs and
//! compatibility pairings. The CLI exposes it as a subcommand and the
//! acceptance tests run it with fixed budgets.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::graphs::{check_compatibility, CompatibilityWitness, MonotoneGraph};

#[derive(Clone, Debug)]
pub struct PropLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct PropsReport {
    pub lines: Vec<PropLine>,
    pub samples: usize,
    pub seed: u64,
}

impl PropsReport {
    pub fn pass(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

pub fn shipped_graphs() -> Vec<(&'static str, MonotoneGraph)> {
    vec![
        ("logarithmic", MonotoneGraph::logarithmic(1.0).unwrap()),
        ("indicator", MonotoneGraph::indicator(-1.0, 1.0).unwrap()),
        (
            "indicator_cubic",
            MonotoneGraph::indicator_plus_cubic(-1.0, 1.0).unwrap(),
        ),
        ("cubic", MonotoneGraph::cubic()),
    ]
}

/// A named bulk/boundary pairing with its compatibility witness.
pub type Pairing = (&'static str, MonotoneGraph, MonotoneGraph, CompatibilityWitness);

/// Declared-valid pairings plus one declared-invalid pairing used as the
/// negative control.
pub fn shipped_pairings() -> (Vec<Pairing>, Pairing) {
    let valid = vec![
        (
            "log_log",
            MonotoneGraph::logarithmic(1.0).unwrap(),
            MonotoneGraph::logarithmic(1.0).unwrap(),
            CompatibilityWitness { rho: 1.0, c0: 0.0 },
        ),
        (
            "indicator_indicator",
            MonotoneGraph::indicator(-1.0, 1.0).unwrap(),
            MonotoneGraph::indicator(-1.0, 1.0).unwrap(),
            CompatibilityWitness { rho: 1.0, c0: 0.0 },
        ),
        (
            "indicator_cubic_vs_indicator",
            MonotoneGraph::indicator_plus_cubic(-1.0, 1.0).unwrap(),
            MonotoneGraph::indicator(-1.0, 1.0).unwrap(),
            CompatibilityWitness { rho: 1.0, c0: 1.0 },
        ),
        (
            "cubic_cubic",
            MonotoneGraph::cubic(),
            MonotoneGraph::cubic(),
            CompatibilityWitness { rho: 1.0, c0: 0.0 },
        ),
    ];
    let invalid = (
        "cubic_vs_indicator",
        MonotoneGraph::cubic(),
        MonotoneGraph::indicator(-1.0, 1.0).unwrap(),
        CompatibilityWitness { rho: 1.0, c0: 0.0 },
    );
    (valid, invalid)
}

const EPS_LADDER: [f64; 3] = [1.0, 0.1, 0.01];

/// Runs the regularization property sweep (monotonicity, Lipschitz bound,
/// vanishing at the origin, envelope sandwich, resolvent-equation residual)
/// and the compatibility sweep on the shipped pairings.
pub fn run_property_suite(seed: u64, samples: usize) -> PropsReport {
    let mut lines = Vec::new();
    let mut rng = StdRng::seed_from_u64(seed);

    for (name, g) in shipped_graphs() {
        for eps in EPS_LADDER {
            let mut worst_monotone = f64::INFINITY;
            let mut worst_lipschitz = f64::INFINITY;
            let mut worst_sandwich = f64::INFINITY;
            let mut worst_residual = 0.0f64;
            let mut ok = true;
            let es = eps * g.resolvent_scale;
            for _ in 0..samples {
                let r = rng.random_range(-4.0..4.0);
                let s = rng.random_range(-4.0..4.0);
                let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
                let (Ok(ylo), Ok(yhi)) = (g.yosida(eps, lo), g.yosida(eps, hi)) else {
                    ok = false;
                    break;
                };
                worst_monotone = worst_monotone.min(yhi - ylo + 1e-12);
                worst_lipschitz =
                    worst_lipschitz.min((hi - lo) / es + 1e-12 - (yhi - ylo).abs());

                // Envelope sandwich on a domain point.
                let span = if g.has_bounded_domain() {
                    (g.domain_lo, g.domain_hi)
                } else {
                    (-2.0, 2.0)
                };
                let rd = rng.random_range(span.0.max(-0.999999)..span.1.min(0.999999));
                let env = g.moreau_yosida(eps, rd).unwrap();
                worst_sandwich = worst_sandwich.min(env).min(g.primitive(rd) + 1e-12 - env);

                // Resolvent-equation residual wherever the resolvent lands a
                // safe distance inside the domain (the logarithmic section
                // is too steep at the endpoints for the re-evaluation to
                // resolve anything sharper).
                let j = g.resolvent(eps, r).unwrap();
                if g.domain_contains(j)
                    && (j - g.domain_lo).abs() > 1e-6
                    && (j - g.domain_hi).abs() > 1e-6
                {
                    let section = g.minimal_section(j).unwrap();
                    worst_residual = worst_residual.max((j + es * section - r).abs());
                }
            }
            let zero = g.yosida(eps, 0.0).unwrap();
            let pass = ok
                && worst_monotone >= 0.0
                && worst_lipschitz >= 0.0
                && zero == 0.0
                && worst_sandwich >= 0.0
                && worst_residual <= 1e-10;
            lines.push(PropLine {
                name: format!("yosida/{name}/eps={eps}"),
                pass,
                detail: format!(
                    "monotone slack {worst_monotone:.2e}, lipschitz slack {worst_lipschitz:.2e}, \
                     origin {zero:.1e}, sandwich slack {worst_sandwich:.2e}, residual {worst_residual:.2e}"
                ),
            });
        }
    }

    let (valid, invalid) = shipped_pairings();
    let sample_set: Vec<f64> = (0..samples).map(|_| rng.random_range(-4.0..4.0)).collect();
    for (name, bulk, surf, witness) in &valid {
        let surf = surf.clone().with_scale(witness.rho).unwrap();
        let rep = check_compatibility(bulk, &surf, witness, &sample_set, &EPS_LADDER);
        lines.push(PropLine {
            name: format!("compatibility/{name}"),
            pass: rep.holds,
            detail: format!("worst margin {:.3e}", rep.worst_margin),
        });
    }
    {
        let (name, bulk, surf, witness) = &invalid;
        let surf = surf.clone().with_scale(witness.rho).unwrap();
        let probe: Vec<f64> = (0..200).map(|k| -0.999 + 1.998 * k as f64 / 199.0).collect();
        let rep = check_compatibility(bulk, &surf, witness, &probe, &[1e-3]);
        lines.push(PropLine {
            name: format!("compatibility/{name}/rejected"),
            pass: !rep.holds,
            detail: format!("worst margin {:.3e} (must be negative)", rep.worst_margin),
        });
    }

    PropsReport {
        lines,
        samples,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_with_modest_budget() {
        let report = run_property_suite(11, 300);
        for line in &report.lines {
            assert!(line.pass, "{}: {}", line.name, line.detail);
        }
    }

    #[test]
    fn suite_is_deterministic_per_seed() {
        let a = run_property_suite(5, 100);
        let b = run_property_suite(5, 100);
        for (x, y) in a.lines.iter().zip(b.lines.iter()) {
            assert_eq!(x.detail, y.detail);
        }
    }
}
