//! Run configuration: a structured-text (TOML) description of the domain,
//! potentials, perturbations, forcing, schedule and tolerances, with every
//! documented precondition validated before a problem is assembled.
//!
//! Violations are reported with the labels used throughout the README:
//! A1 (periodic forcing), A2 (Lipschitz perturbations), A3 (normalized
//! convex potentials), A4 (bulk/boundary compatibility), A5 (bounded
//! potential domains outside prototype mode) and M0 (interior prescribed
//! mean).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{CoupledDomain, CoupledField, DomainKind};
use crate::error::{Error, Result};
use crate::evolution::{NewtonOptions, PerturbationMode, PotentialSystem};
use crate::graphs::{check_compatibility, CompatibilityWitness, MonotoneGraph};
use crate::periodic::{Forcing, PeriodicProblem, ProblemTolerances, ProfileKind};
use crate::perturbation::{CutoffPerturbation, LipschitzPerturbation};
use crate::spaces::SpaceOps;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub potential: PotentialConfig,
    pub compatibility: CompatibilityConfig,
    pub perturbation: PerturbationPairConfig,
    pub problem: ProblemConfig,
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    pub output: OutputConfig,
    /// Seed for the randomized property suite only; the solver pipeline is
    /// deterministic and seed-free.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval1d {
        n_cells: usize,
        kappa1: f64,
        kappa2: f64,
    },
    DiscPolar2d {
        n_radial: usize,
        n_angular: usize,
        kappa1: f64,
        kappa2: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub bulk: GraphConfig,
    pub surface: GraphConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    Logarithmic { gain: f64 },
    Indicator { lo: f64, hi: f64 },
    IndicatorCubic { lo: f64, hi: f64 },
    Cubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompatibilityConfig {
    pub rho: f64,
    pub c0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationPairConfig {
    pub bulk: PerturbationConfig,
    pub surface: PerturbationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationConfig {
    Zero,
    Linear { slope: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m0: f64,
    pub period: f64,
    pub steps_per_period: usize,
    /// Strictly decreasing, positive. A single entry means one plain solve.
    pub eps_schedule: Vec<f64>,
    /// Cubic potentials with the raw (uncut) perturbation; lifts the
    /// bounded-domain requirement A5.
    #[serde(default)]
    pub prototype_mode: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    Zero,
    Sinusoid {
        amplitude: f64,
        profile: ProfileConfig,
        #[serde(default)]
        phase: f64,
    },
    /// CSV with columns `time,node_id,region,value`, sorted by time, one
    /// full field per sample time, spanning exactly one period.
    Tabulated { path: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileConfig {
    Uniform,
    Linear,
    Cosine,
}

impl From<ProfileConfig> for ProfileKind {
    fn from(p: ProfileConfig) -> Self {
        match p {
            ProfileConfig::Uniform => ProfileKind::Uniform,
            ProfileConfig::Linear => ProfileKind::Linear,
            ProfileConfig::Cosine => ProfileKind::Cosine,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub periodicity: f64,
    pub max_picard_iters: usize,
    pub relaxation: f64,
    pub anderson_depth: usize,
    pub newton: f64,
    pub newton_max_iters: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            periodicity: 1e-10,
            max_picard_iters: 200,
            relaxation: 1.0,
            anderson_depth: 0,
            newton: 1e-11,
            newton_max_iters: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Emit per-slice snapshots of the final orbit every this many steps;
    /// 0 keeps only the final-time profiles.
    #[serde(default)]
    pub snapshot_every: usize,
}

/// Parses the structured-text configuration. Assumption checks run in
/// [`RunConfig::build`], which needs the filesystem for tabulated forcing.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))
}

/// Serializes a configuration back to structured text; parsing the output
/// reproduces the value exactly.
pub fn emit_config(config: &RunConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(format!("emit error: {e}")))
}

impl GraphConfig {
    fn build(&self) -> Result<MonotoneGraph> {
        match *self {
            GraphConfig::Logarithmic { gain } => MonotoneGraph::logarithmic(gain),
            GraphConfig::Indicator { lo, hi } => MonotoneGraph::indicator(lo, hi),
            GraphConfig::IndicatorCubic { lo, hi } => MonotoneGraph::indicator_plus_cubic(lo, hi),
            GraphConfig::Cubic => Ok(MonotoneGraph::cubic()),
        }
    }

    fn is_cubic(&self) -> bool {
        matches!(self, GraphConfig::Cubic)
    }
}

impl PerturbationConfig {
    fn build(&self) -> Result<LipschitzPerturbation> {
        match *self {
            PerturbationConfig::Zero => LipschitzPerturbation::linear(0.0),
            PerturbationConfig::Linear { slope } => LipschitzPerturbation::linear(slope),
        }
    }
}

impl RunConfig {
    /// Validates every documented precondition and assembles the problem.
    /// All violations are collected so a bad config reports everything
    /// wrong with it at once.
    pub fn validate(&self, base: &Path) -> std::result::Result<PeriodicProblem, Vec<Error>> {
        let mut violations: Vec<Error> = Vec::new();

        let dom = match self.build_domain() {
            Ok(d) => Some(Arc::new(d)),
            Err(e) => {
                violations.push(e);
                None
            }
        };

        // Potentials and A5/A3 checks.
        let prototype = self.problem.prototype_mode;
        let mut bulk_graph = None;
        let mut surf_graph = None;
        match self.potential.bulk.build() {
            Ok(g) => bulk_graph = Some(g),
            Err(e) => violations.push(e),
        }
        match self.potential.surface.build() {
            Ok(g) => surf_graph = Some(g),
            Err(e) => violations.push(e),
        }
        if prototype {
            if !(self.potential.bulk.is_cubic() && self.potential.surface.is_cubic()) {
                violations.push(Error::assumption(
                    "A5",
                    "prototype mode supports only the cubic potential pair; bounded-domain \
                     potentials must run with prototype_mode = false",
                ));
            }
        } else {
            for (side, g) in [("bulk", &bulk_graph), ("surface", &surf_graph)] {
                if let Some(g) = g {
                    if !g.has_bounded_domain() {
                        violations.push(Error::assumption(
                            "A5",
                            format!(
                                "{side} potential has an unbounded domain; enable prototype_mode \
                                 or choose a bounded-domain potential"
                            ),
                        ));
                    }
                }
            }
        }

        // Compatibility witness and the A4 sweep.
        let witness = CompatibilityWitness {
            rho: self.compatibility.rho,
            c0: self.compatibility.c0,
        };
        if !(witness.rho > 0.0 && witness.rho.is_finite()) {
            violations.push(Error::assumption(
                "A4",
                format!("rho must be positive, got {}", witness.rho),
            ));
        }
        if !(witness.c0 >= 0.0 && witness.c0.is_finite()) {
            violations.push(Error::assumption(
                "A4",
                format!("c0 must be nonnegative, got {}", witness.c0),
            ));
        }
        if let (Some(bg), Some(sg)) = (&bulk_graph, &surf_graph) {
            if sg.domain_lo < bg.domain_lo || sg.domain_hi > bg.domain_hi {
                violations.push(Error::assumption(
                    "A4",
                    format!(
                        "the boundary potential domain [{}, {}] must be contained in the bulk \
                         one [{}, {}]",
                        sg.domain_lo, sg.domain_hi, bg.domain_lo, bg.domain_hi
                    ),
                ));
            } else if witness.rho > 0.0 {
                let sg_scaled = sg.clone().with_scale(witness.rho).expect("positive rho");
                let samples = compatibility_samples(sg);
                let mut eps_values = vec![1.0, 0.3, 0.1, 0.01];
                eps_values.extend(self.problem.eps_schedule.iter().copied().filter(|e| *e > 0.0));
                let rep = check_compatibility(bg, &sg_scaled, &witness, &samples, &eps_values);
                if !rep.holds {
                    violations.push(Error::assumption(
                        "A4",
                        format!(
                            "compatibility inequality fails on {} sample(s); worst margin {:.3e}",
                            rep.failures.len(),
                            rep.worst_margin
                        ),
                    ));
                }
            }
        }

        // Perturbations and A2.
        let mut bulk_pert = None;
        let mut surf_pert = None;
        match self.perturbation.bulk.build() {
            Ok(p) => bulk_pert = Some(p),
            Err(e) => violations.push(e),
        }
        match self.perturbation.surface.build() {
            Ok(p) => surf_pert = Some(p),
            Err(e) => violations.push(e),
        }
        for p in [&bulk_pert, &surf_pert].into_iter().flatten() {
            if let Err(e) = p.validate_on(-3.0, 3.0, 41) {
                violations.push(e);
            }
        }

        // Prescribed mean interiority (M0).
        if let Some(sg) = &surf_graph {
            if !(self.problem.m0 > sg.domain_lo && self.problem.m0 < sg.domain_hi) {
                violations.push(Error::assumption(
                    "M0",
                    format!(
                        "m0 = {} is not strictly inside the boundary potential domain ({}, {}); \
                         the periodic solve requires an interior prescribed mean",
                        self.problem.m0, sg.domain_lo, sg.domain_hi
                    ),
                ));
            }
        }

        // Schedule and tolerances.
        if self.problem.eps_schedule.is_empty() {
            violations.push(Error::Config("eps_schedule must not be empty".into()));
        }
        for w in self.problem.eps_schedule.windows(2) {
            if !(w[1] < w[0]) {
                violations.push(Error::Config(format!(
                    "eps_schedule must be strictly decreasing, got {} before {}",
                    w[0], w[1]
                )));
            }
        }
        if self.problem.eps_schedule.iter().any(|e| !(*e > 0.0)) {
            violations.push(Error::Config("eps_schedule entries must be positive".into()));
        }
        if !(self.tolerances.periodicity > 0.0 && self.tolerances.newton > 0.0) {
            violations.push(Error::Config("tolerances must be positive".into()));
        }

        // Forcing (A1) needs the domain.
        let forcing = match &dom {
            Some(dom) => match self.build_forcing(dom, base) {
                Ok(f) => Some(f),
                Err(e) => {
                    violations.push(e);
                    None
                }
            },
            None => None,
        };

        let (Some(dom), Some(bulk_graph), Some(surf_graph), Some(bulk_pert), Some(surf_pert), Some(forcing)) =
            (dom, bulk_graph, surf_graph, bulk_pert, surf_pert, forcing)
        else {
            return Err(violations);
        };
        if !violations.is_empty() {
            return Err(violations);
        }

        let surf_graph = surf_graph.with_scale(witness.rho).expect("validated rho");
        let (bulk_mode, surf_mode) = if prototype {
            (
                PerturbationMode::Raw(bulk_pert),
                PerturbationMode::Raw(surf_pert),
            )
        } else {
            let b = CutoffPerturbation::new(bulk_pert, bulk_graph.domain_lo, bulk_graph.domain_hi)
                .map_err(|e| vec![e])?;
            let s = CutoffPerturbation::new(surf_pert, surf_graph.domain_lo, surf_graph.domain_hi)
                .map_err(|e| vec![e])?;
            (PerturbationMode::Cutoff(b), PerturbationMode::Cutoff(s))
        };

        let spaces = SpaceOps::new(dom).map_err(|e| vec![e])?;
        let problem = PeriodicProblem {
            spaces: Arc::new(spaces),
            system: PotentialSystem {
                bulk_graph,
                surf_graph,
                witness,
                bulk_pert: bulk_mode,
                surf_pert: surf_mode,
            },
            forcing,
            m0: self.problem.m0,
            period: self.problem.period,
            steps_per_period: self.problem.steps_per_period,
            tol: ProblemTolerances {
                periodicity: self.tolerances.periodicity,
                max_picard: self.tolerances.max_picard_iters,
                relaxation: self.tolerances.relaxation,
                anderson_depth: self.tolerances.anderson_depth,
                newton: NewtonOptions {
                    tol: self.tolerances.newton,
                    max_iters: self.tolerances.newton_max_iters,
                },
            },
        };
        // Structural checks that need the assembled problem (A1 among them).
        if let Err(e) = problem.validate() {
            return Err(vec![e]);
        }
        Ok(problem)
    }

    /// Like [`RunConfig::validate`] but folds all violations into one error.
    pub fn build(&self, base: &Path) -> Result<PeriodicProblem> {
        self.validate(base).map_err(|errs| {
            let joined = errs
                .iter()
                .map(|e| format!("  - {e}"))
                .collect::<Vec<_>>()
                .join("\n");
            Error::Config(format!("configuration rejected:\n{joined}"))
        })
    }

    pub fn build_domain(&self) -> Result<CoupledDomain> {
        match self.domain {
            DomainConfig::Interval1d {
                n_cells,
                kappa1,
                kappa2,
            } => CoupledDomain::build(DomainKind::Interval1D { n_cells }, kappa1, kappa2),
            DomainConfig::DiscPolar2d {
                n_radial,
                n_angular,
                kappa1,
                kappa2,
            } => CoupledDomain::build(
                DomainKind::DiscPolar2D { n_radial, n_angular },
                kappa1,
                kappa2,
            ),
        }
    }

    fn build_forcing(&self, dom: &CoupledDomain, base: &Path) -> Result<Forcing> {
        match &self.forcing {
            ForcingConfig::Zero => Ok(Forcing::Zero),
            ForcingConfig::Sinusoid {
                amplitude,
                profile,
                phase,
            } => Ok(Forcing::Sinusoid {
                amplitude: *amplitude,
                profile: (*profile).into(),
                phase: *phase,
            }),
            ForcingConfig::Tabulated { path } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    Error::Config(format!("cannot read forcing table {}: {e}", full.display()))
                })?;
                load_forcing_table(&text, dom, self.problem.period)
            }
        }
    }
}

/// Sample set for the compatibility sweep: the closure of the boundary
/// potential domain densely, plus a margin outside it for the regularized
/// form (which is defined on the whole line).
fn compatibility_samples(surf_graph: &MonotoneGraph) -> Vec<f64> {
    let (lo, hi) = if surf_graph.has_bounded_domain() {
        (surf_graph.domain_lo, surf_graph.domain_hi)
    } else {
        (-2.0, 2.0)
    };
    let pad = 0.5 * (hi - lo);
    let (a, b) = (lo - pad, hi + pad);
    (0..=400).map(|k| a + (b - a) * k as f64 / 400.0).collect()
}

/// Parses a tabulated forcing CSV (`time,node_id,region,value`) into full
/// field samples over one period.
fn load_forcing_table(text: &str, dom: &CoupledDomain, period: f64) -> Result<Forcing> {
    use std::collections::BTreeMap;
    let mut by_time: BTreeMap<u64, CoupledField> = BTreeMap::new();
    let mut times: Vec<f64> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("time")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Config(format!(
                "forcing table line {} has {} columns, expected 4",
                lineno + 1,
                cols.len()
            )));
        }
        let t: f64 = cols[0].trim().parse().map_err(|_| {
            Error::Config(format!("forcing table line {}: bad time", lineno + 1))
        })?;
        let id: usize = cols[1].trim().parse().map_err(|_| {
            Error::Config(format!("forcing table line {}: bad node_id", lineno + 1))
        })?;
        let value: f64 = cols[3].trim().parse().map_err(|_| {
            Error::Config(format!("forcing table line {}: bad value", lineno + 1))
        })?;
        let key = t.to_bits();
        let entry = by_time.entry(key).or_insert_with(|| {
            times.push(t);
            CoupledField::zeros(dom)
        });
        match cols[2].trim() {
            "bulk" => {
                if id >= dom.n_bulk {
                    return Err(Error::Config(format!(
                        "forcing table line {}: bulk node {} out of range",
                        lineno + 1,
                        id
                    )));
                }
                entry.bulk[id] = value;
            }
            "surf" => {
                if id >= dom.n_surf {
                    return Err(Error::Config(format!(
                        "forcing table line {}: surf node {} out of range",
                        lineno + 1,
                        id
                    )));
                }
                entry.surf[id] = value;
            }
            other => {
                return Err(Error::Config(format!(
                    "forcing table line {}: unknown region {other:?}",
                    lineno + 1
                )));
            }
        }
    }
    let mut times: Vec<f64> = times;
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let fields: Vec<CoupledField> = times
        .iter()
        .map(|t| by_time.remove(&t.to_bits()).expect("collected above"))
        .collect();
    if times.len() < 2 {
        return Err(Error::Config(
            "tabulated forcing needs at least two sample times".into(),
        ));
    }
    if times[0] != 0.0 || (times[times.len() - 1] - period).abs() > 1e-14 {
        return Err(Error::assumption(
            "A1",
            format!(
                "tabulated forcing must span [0, {period}], got [{}, {}]",
                times[0],
                times[times.len() - 1]
            ),
        ));
    }
    let wrap_gap = fields[0].sub(&fields[fields.len() - 1]).linf();
    if wrap_gap > crate::periodic::FORCING_PERIOD_TOL {
        return Err(Error::assumption(
            "A1",
            format!("tabulated forcing is not periodic: endpoint gap {wrap_gap:.3e}"),
        ));
    }
    Ok(Forcing::Tabulated { times, fields })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> String {
        r#"
seed = 7

[domain]
kind = "interval1d"
n_cells = 8
kappa1 = 1.0
kappa2 = 1.0

[potential.bulk]
kind = "logarithmic"
gain = 1.0

[potential.surface]
kind = "logarithmic"
gain = 1.0

[compatibility]
rho = 1.0
c0 = 0.0

[perturbation.bulk]
kind = "linear"
slope = -2.0

[perturbation.surface]
kind = "linear"
slope = -2.0

[problem]
m0 = 0.0
period = 1.0
steps_per_period = 16
eps_schedule = [0.1]

[forcing]
kind = "sinusoid"
amplitude = 0.2
profile = "cosine"

[output]
dir = "runs/minimal"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = parse_config(&minimal_config()).unwrap();
        let problem = cfg.build(Path::new(".")).unwrap();
        assert_eq!(problem.steps_per_period, 16);
        assert_eq!(problem.spaces.domain().n_bulk, 9);
    }

    #[test]
    fn roundtrip_is_identity() {
        let cfg = parse_config(&minimal_config()).unwrap();
        let emitted = emit_config(&cfg).unwrap();
        let reparsed = parse_config(&emitted).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn boundary_mean_is_rejected() {
        let mut cfg = parse_config(&minimal_config()).unwrap();
        cfg.problem.m0 = 1.0;
        let errs = cfg.validate(Path::new(".")).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| matches!(e, Error::Assumption { label: "M0", .. })));
    }

    #[test]
    fn cubic_without_prototype_is_rejected() {
        let mut cfg = parse_config(&minimal_config()).unwrap();
        cfg.potential.bulk = GraphConfig::Cubic;
        cfg.potential.surface = GraphConfig::Cubic;
        let errs = cfg.validate(Path::new(".")).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| matches!(e, Error::Assumption { label: "A5", .. })));
        cfg.problem.prototype_mode = true;
        assert!(cfg.validate(Path::new(".")).is_ok());
    }

    #[test]
    fn incompatible_pair_is_rejected() {
        let mut cfg = parse_config(&minimal_config()).unwrap();
        // Bulk cubic against bounded boundary fails both the domain
        // inclusion and prototype checks.
        cfg.potential.bulk = GraphConfig::Cubic;
        let errs = cfg.validate(Path::new(".")).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| matches!(e, Error::Assumption { label, .. } if *label == "A4" || *label == "A5")));
    }

    #[test]
    fn compatibility_sweep_rejects_tight_witness() {
        let mut cfg = parse_config(&minimal_config()).unwrap();
        // Indicator-plus-cubic bulk against an indicator boundary needs a
        // positive offset; c0 = 0 must fail the sweep.
        cfg.potential.bulk = GraphConfig::IndicatorCubic { lo: -1.0, hi: 1.0 };
        cfg.potential.surface = GraphConfig::Indicator { lo: -1.0, hi: 1.0 };
        let errs = cfg.validate(Path::new(".")).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| matches!(e, Error::Assumption { label: "A4", .. })));
        cfg.compatibility.c0 = 1.0;
        assert!(cfg.validate(Path::new(".")).is_ok());
    }

    #[test]
    fn nonperiodic_forcing_is_rejected() {
        let tmp = std::env::temp_dir().join(format!("chp_cfg_forcing_{}", std::process::id()));
        std::fs::create_dir_all(&tmp).unwrap();
        // A table whose endpoint samples disagree is not periodic.
        let mut table = String::from("time,node_id,region,value\n");
        let dom = parse_config(&minimal_config()).unwrap().build_domain().unwrap();
        for (t, scale) in [(0.0, 1.0), (1.0, 2.0)] {
            for i in 0..dom.n_bulk {
                table.push_str(&format!("{t},{i},bulk,{scale}\n"));
            }
            for j in 0..dom.n_surf {
                table.push_str(&format!("{t},{j},surf,{scale}\n"));
            }
        }
        std::fs::write(tmp.join("forcing.csv"), table).unwrap();
        let mut cfg = parse_config(&minimal_config()).unwrap();
        cfg.forcing = ForcingConfig::Tabulated { path: "forcing.csv".into() };
        let errs = cfg.validate(&tmp).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| matches!(e, Error::Assumption { label: "A1", .. })));
        let _ = std::fs::remove_dir_all(&tmp);
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let mut cfg = parse_config(&minimal_config()).unwrap();
        cfg.problem.eps_schedule = vec![0.1, 0.3];
        assert!(cfg.validate(Path::new(".")).is_err());
        cfg.problem.eps_schedule = vec![];
        assert!(cfg.validate(Path::new(".")).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_config().replace("[output]", "[output]\nbogus = 1\n");
        // deny_unknown_fields makes typos loud instead of silently ignored.
        let with_typo = text.replace("dir = ", "dir2 = ");
        assert!(parse_config(&with_typo).is_err());
    }

    #[test]
    fn tabulated_forcing_roundtrip() {
        let dom =
            CoupledDomain::build(DomainKind::Interval1D { n_cells: 4 }, 1.0, 1.0).unwrap();
        let mut text = String::from("time,node_id,region,value\n");
        for (t, scale) in [(0.0, 1.0), (0.5, 2.0), (1.0, 1.0)] {
            for i in 0..dom.n_bulk {
                text.push_str(&format!("{t},{i},bulk,{}\n", scale * i as f64));
            }
            for j in 0..dom.n_surf {
                text.push_str(&format!("{t},{j},surf,{}\n", scale * 10.0 * j as f64));
            }
        }
        let forcing = load_forcing_table(&text, &dom, 1.0).unwrap();
        let mid = forcing.eval(&dom, 1.0, 0.25);
        assert!((mid.bulk[2] - 3.0).abs() < 1e-14);
        assert!((mid.surf[1] - 15.0).abs() < 1e-14);
    }
}
