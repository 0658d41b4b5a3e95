//! Run artifacts on disk: the per-step estimate log, the fixed-point
//! iteration log, per-`eps` summaries, field snapshots, a structured
//! summary file, and gnuplot-ready columnar exports. All numeric output is
//! written with a fixed format so reruns of the same configuration are
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::diagnostics::{uniformity_report, EstimateLog, EstimateTotals, UniformityReport};
use crate::domain::{CoupledDomain, CoupledField};
use crate::error::{Error, Result};
use crate::periodic::{ContinuationOutcome, PeriodicSolution};

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub const RUN_CSV_HEADER: &str = "t,mass,mass_drift,grad_sq,visc_rate_sq,dual_rate_sq,env_bulk,env_surf,\
yosida_l1_bulk,yosida_l1_surf,yosida_hsq_bulk,yosida_hsq_surf,mu_v_sq,lap_sq,normal_sq,\
surf_lap_sq,pert_prim_bulk,pert_prim_surf,mean_yosida,l1_domination_margin,mean_bound_margin,\
newton_iters,residual,phi_eps,energy_margin";

pub fn render_run_csv(log: &EstimateLog) -> String {
    let mut out = String::new();
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        let cols = [
            fmt(r.t),
            fmt(r.mass),
            fmt(r.mass_drift),
            fmt(r.grad_sq),
            fmt(r.visc_rate_sq),
            fmt(r.dual_rate_sq),
            fmt(r.env_bulk),
            fmt(r.env_surf),
            fmt(r.yosida_l1_bulk),
            fmt(r.yosida_l1_surf),
            fmt(r.yosida_hsq_bulk),
            fmt(r.yosida_hsq_surf),
            fmt(r.mu_v_sq),
            fmt(r.lap_sq),
            fmt(r.normal_sq),
            fmt(r.surf_lap_sq),
            fmt(r.pert_prim_bulk),
            fmt(r.pert_prim_surf),
            fmt(r.mean_yosida),
            fmt(r.l1_domination_margin),
            fmt(r.mean_bound_margin),
            r.newton_iters.to_string(),
            fmt(r.residual),
            fmt(r.phi_eps),
            fmt(r.energy_margin),
        ];
        let _ = writeln!(out, "{}", cols.join(","));
    }
    out
}

pub fn render_picard_csv(histories: &[(f64, &[crate::periodic::PicardRecord])]) -> String {
    let mut out = String::from("eps,iter,residual,phi_eps\n");
    for (eps, records) in histories {
        for r in *records {
            let _ = writeln!(out, "{},{},{},{}", fmt(*eps), r.iter, fmt(r.residual), fmt(r.energy));
        }
    }
    out
}

pub fn render_snapshot_csv(dom: &CoupledDomain, field: &CoupledField) -> String {
    let mut out = String::from("node_id,region,coord1,coord2,value\n");
    for i in 0..dom.n_bulk {
        let [x, y] = dom.bulk_coords[i];
        let _ = writeln!(out, "{i},bulk,{},{},{}", fmt(x), fmt(y), fmt(field.bulk[i]));
    }
    for j in 0..dom.n_surf {
        let [x, y] = dom.surf_coords[j];
        let _ = writeln!(out, "{j},surf,{},{},{}", fmt(x), fmt(y), fmt(field.surf[j]));
    }
    out
}

/// Reads a snapshot back into a field on the given domain.
pub fn read_snapshot_csv(dom: &CoupledDomain, path: &Path) -> Result<CoupledField> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("missing artifact {}: {e}", path.display())))?;
    let mut field = CoupledField::zeros(dom);
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Config(format!(
                "snapshot {} line {}: expected 5 columns",
                path.display(),
                lineno + 1
            )));
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| Error::Config(format!("snapshot line {}: bad node_id", lineno + 1)))?;
        let value: f64 = cols[4]
            .parse()
            .map_err(|_| Error::Config(format!("snapshot line {}: bad value", lineno + 1)))?;
        match cols[1] {
            "bulk" => field.bulk[id] = value,
            "surf" => field.surf[id] = value,
            other => {
                return Err(Error::Config(format!(
                    "snapshot line {}: unknown region {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(field)
}

#[derive(Debug, Serialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub converged: bool,
    pub residual: f64,
    pub picard_iters: usize,
    pub sup_energy: f64,
    pub worst_energy_margin: f64,
    pub max_abs_mass: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub all_converged: bool,
    pub poincare_constant: f64,
    pub cauchy_diffs: Vec<f64>,
    pub uniformity_pass: Option<bool>,
    pub failures: Vec<String>,
    pub eps: Vec<EpsSummary>,
}

pub fn render_eps_summary_csv(rows: &[(f64, bool, f64, usize, EstimateTotals)]) -> String {
    let mut out = String::from(
        "eps,converged,residual,picard_iters,grad_env_time_int,rate_time_int,mu_v_time_int,\
yosida_h_time_int,laplacian_time_int,surf_yosida_time_int,sup_energy,worst_energy_margin,\
max_abs_mass\n",
    );
    for (eps, conv, res, iters, t) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt(*eps),
            conv,
            fmt(*res),
            iters,
            fmt(t.grad_env_time_int),
            fmt(t.rate_time_int),
            fmt(t.mu_v_time_int),
            fmt(t.yosida_h_time_int),
            fmt(t.laplacian_time_int),
            fmt(t.surf_yosida_time_int),
            fmt(t.sup_energy),
            fmt(t.worst_energy_margin),
            fmt(t.max_abs_mass),
        );
    }
    out
}

/// Everything `run` leaves on disk, plus the in-memory outcome the caller
/// needs for exit-code decisions.
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub all_converged: bool,
    pub had_failures: bool,
    pub uniformity: Option<UniformityReport>,
}

/// Executes a validated configuration end to end and writes the artifact
/// set: `run.csv`, `picard.csv`, `eps_summary.csv`, `snapshots/*.csv` and
/// `summary.toml`.
pub fn execute_run(
    config: &RunConfig,
    base: &Path,
    out_root: Option<&Path>,
) -> Result<RunArtifacts> {
    let problem = config.build(base)?;
    let out_dir = resolve_out_dir(&config.output.dir, base, out_root);
    fs::create_dir_all(out_dir.join("snapshots"))?;
    // A canonical copy of the config rides along with the artifacts, which
    // is what `plotdata` reconstructs the domain from.
    fs::write(out_dir.join("config.toml"), crate::config::emit_config(config)?)?;

    let outcome: ContinuationOutcome =
        problem.epsilon_continuation(&config.problem.eps_schedule)?;
    if outcome.solutions.is_empty() {
        return Err(Error::numeric(
            "run",
            "no schedule entry completed; see the recorded failures",
        ));
    }

    // Per-step log of the final (smallest completed eps) orbit.
    let last = outcome.solutions.last().unwrap();
    fs::write(out_dir.join("run.csv"), render_run_csv(&last.orbit.log))?;

    let histories: Vec<(f64, &[crate::periodic::PicardRecord])> = outcome
        .solutions
        .iter()
        .map(|s| (s.eps, s.history.as_slice()))
        .collect();
    fs::write(out_dir.join("picard.csv"), render_picard_csv(&histories))?;

    let rows: Vec<(f64, bool, f64, usize, EstimateTotals)> = outcome
        .solutions
        .iter()
        .map(|s| (s.eps, s.converged, s.residual, s.picard_iters, s.orbit.log.totals()))
        .collect();
    fs::write(out_dir.join("eps_summary.csv"), render_eps_summary_csv(&rows))?;

    write_orbit_snapshots(&problem.spaces, last, config.output.snapshot_every, &out_dir)?;

    let uniformity = if outcome.solutions.len() >= 2 {
        let totals: Vec<(f64, EstimateTotals)> = rows.iter().map(|r| (r.0, r.4)).collect();
        Some(uniformity_report(&totals, 2.0))
    } else {
        None
    };

    let all_converged = outcome.failures.is_empty()
        && outcome.solutions.iter().all(|s| s.converged);
    let summary = RunSummary {
        all_converged,
        poincare_constant: problem.spaces.poincare_constant(),
        cauchy_diffs: outcome.cauchy_diffs.clone(),
        uniformity_pass: uniformity.as_ref().map(|u| u.pass),
        failures: outcome.failures.iter().map(|(e, m)| format!("eps {e}: {m}")).collect(),
        eps: outcome
            .solutions
            .iter()
            .map(|s| {
                let t = s.orbit.log.totals();
                EpsSummary {
                    eps: s.eps,
                    converged: s.converged,
                    residual: s.residual,
                    picard_iters: s.picard_iters,
                    sup_energy: t.sup_energy,
                    worst_energy_margin: t.worst_energy_margin,
                    max_abs_mass: t.max_abs_mass,
                }
            })
            .collect(),
    };
    let summary_text = toml::to_string(&summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    fs::write(out_dir.join("summary.toml"), summary_text)?;

    Ok(RunArtifacts {
        out_dir,
        all_converged,
        had_failures: !outcome.failures.is_empty(),
        uniformity,
    })
}

pub fn resolve_out_dir(dir: &str, base: &Path, out_root: Option<&Path>) -> PathBuf {
    let dir_path = Path::new(dir);
    match out_root {
        Some(root) => root.join(dir_path),
        None if dir_path.is_absolute() => dir_path.to_path_buf(),
        None => base.join(dir_path),
    }
}

fn write_orbit_snapshots(
    spaces: &crate::spaces::SpaceOps,
    sol: &PeriodicSolution,
    snapshot_every: usize,
    out_dir: &Path,
) -> Result<()> {
    let dom = spaces.domain();
    let m0 = sol.orbit.states[0].m0;
    let final_state = sol.orbit.states.last().unwrap();
    let u_final = dom.lift(final_state.v.bulk.add_scalar(m0));
    fs::write(
        out_dir.join("snapshots/u_final.csv"),
        render_snapshot_csv(dom, &u_final),
    )?;
    if let Some(report) = sol.orbit.reports.last() {
        fs::write(
            out_dir.join("snapshots/mu_final.csv"),
            render_snapshot_csv(dom, &report.mu),
        )?;
    }
    if snapshot_every > 0 {
        for (k, state) in sol.orbit.states.iter().enumerate().step_by(snapshot_every) {
            let u = dom.lift(state.v.bulk.add_scalar(m0));
            fs::write(
                out_dir.join(format!("snapshots/u_step_{k:05}.csv")),
                render_snapshot_csv(dom, &u),
            )?;
        }
    }
    Ok(())
}

/// Columns of a headered CSV by name.
fn csv_columns(path: &Path, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("missing artifact {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .collect();
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            header
                .iter()
                .position(|h| h == w)
                .ok_or_else(|| Error::Config(format!("{} lacks column {w}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); wanted.len()];
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        for (slot, &i) in idx.iter().enumerate() {
            let v: f64 = cols
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad numeric cell in {}", path.display())))?;
            out[slot].push(v);
        }
    }
    Ok(out)
}

/// Derives space-separated, gnuplot-ready files from a completed run
/// directory: `(t, mass)`, `(t, phi_eps)`, `(iter, residual)` for the final
/// schedule entry, and the final profile `(x, y, u, mu)`.
pub fn emit_plot_data(run_dir: &Path, dom: &CoupledDomain) -> Result<()> {
    let cols = csv_columns(&run_dir.join("run.csv"), &["t", "mass", "phi_eps"])?;
    let mut mass = String::new();
    let mut energy = String::new();
    for ((t, m), e) in cols[0].iter().zip(&cols[1]).zip(&cols[2]) {
        let _ = writeln!(mass, "{} {}", fmt(*t), fmt(*m));
        let _ = writeln!(energy, "{} {}", fmt(*t), fmt(*e));
    }
    fs::write(run_dir.join("mass.dat"), mass)?;
    fs::write(run_dir.join("energy.dat"), energy)?;

    let pic = csv_columns(&run_dir.join("picard.csv"), &["eps", "iter", "residual"])?;
    let mut residual = String::new();
    if let Some(&last_eps) = pic[0].last() {
        for ((e, it), r) in pic[0].iter().zip(&pic[1]).zip(&pic[2]) {
            if *e == last_eps {
                let _ = writeln!(residual, "{} {}", it, fmt(*r));
            }
        }
    }
    fs::write(run_dir.join("residual.dat"), residual)?;

    let u = read_snapshot_csv(dom, &run_dir.join("snapshots/u_final.csv"))?;
    let mu = read_snapshot_csv(dom, &run_dir.join("snapshots/mu_final.csv"))?;
    let mut profile = String::new();
    for i in 0..dom.n_bulk {
        let [x, y] = dom.bulk_coords[i];
        let _ = writeln!(
            profile,
            "{} {} {} {}",
            fmt(x),
            fmt(y),
            fmt(u.bulk[i]),
            fmt(mu.bulk[i])
        );
    }
    fs::write(run_dir.join("profile.dat"), profile)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::domain::DomainKind;

    fn test_config(dir: &Path) -> RunConfig {
        let text = format!(
            r#"
[domain]
kind = "interval1d"
n_cells = 8
kappa1 = 1.0
kappa2 = 1.0

[potential.bulk]
kind = "cubic"

[potential.surface]
kind = "cubic"

[compatibility]
rho = 1.0
c0 = 0.0

[perturbation.bulk]
kind = "linear"
slope = -1.0

[perturbation.surface]
kind = "linear"
slope = -1.0

[problem]
m0 = 0.0
period = 1.0
steps_per_period = 8
eps_schedule = [0.5, 0.2]
prototype_mode = true

[forcing]
kind = "sinusoid"
amplitude = 0.1
profile = "cosine"

[tolerances]
periodicity = 1e-9

[output]
dir = "{}"
"#,
            dir.join("out").display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn run_writes_complete_artifact_set() {
        let tmp = std::env::temp_dir().join(format!("chp_report_{}", std::process::id()));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir_all(&tmp).unwrap();
        let cfg = test_config(&tmp);
        let artifacts = execute_run(&cfg, &tmp, None).unwrap();
        assert!(artifacts.all_converged);
        for name in ["run.csv", "picard.csv", "eps_summary.csv", "summary.toml"] {
            assert!(artifacts.out_dir.join(name).exists(), "{name} missing");
        }
        assert!(artifacts.out_dir.join("snapshots/u_final.csv").exists());
        assert!(artifacts.out_dir.join("snapshots/mu_final.csv").exists());

        // Byte-identical on rerun.
        let first = fs::read(artifacts.out_dir.join("run.csv")).unwrap();
        let again = execute_run(&cfg, &tmp, None).unwrap();
        let second = fs::read(again.out_dir.join("run.csv")).unwrap();
        assert_eq!(first, second);

        // Plot data is a pure reformatting of the CSV sources.
        let dom = cfg.build_domain().unwrap();
        emit_plot_data(&artifacts.out_dir, &dom).unwrap();
        let cols = csv_columns(&artifacts.out_dir.join("run.csv"), &["t", "mass"]).unwrap();
        let mass_text = fs::read_to_string(artifacts.out_dir.join("mass.dat")).unwrap();
        let first_row: Vec<f64> = mass_text
            .lines()
            .next()
            .unwrap()
            .split(' ')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(first_row[0], cols[0][0]);
        assert_eq!(first_row[1], cols[1][0]);

        let _ = fs::remove_dir_all(&tmp);
    }

    #[test]
    fn unforced_run_has_flat_mass_line_at_m0() {
        let tmp = std::env::temp_dir().join(format!("chp_mass_{}", std::process::id()));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir_all(&tmp).unwrap();
        let mut cfg = test_config(&tmp);
        cfg.problem.m0 = 0.125;
        cfg.forcing = crate::config::ForcingConfig::Zero;
        cfg.problem.eps_schedule = vec![0.5];
        let artifacts = execute_run(&cfg, &tmp, None).unwrap();
        let cols = csv_columns(&artifacts.out_dir.join("run.csv"), &["mass", "mass_drift"]).unwrap();
        for (&m, &d) in cols[0].iter().zip(&cols[1]) {
            assert!((m - 0.125).abs() < 1e-14, "mass {m}");
            assert!(d.abs() < 1e-14, "drift {d}");
        }
        let _ = fs::remove_dir_all(&tmp);
    }

    #[test]
    fn snapshot_roundtrip_preserves_norm() {
        let dom =
            CoupledDomain::build(DomainKind::Interval1D { n_cells: 8 }, 1.0, 1.0).unwrap();
        let field = dom.field_from_fn(|x, _| (3.0 * x).sin());
        let text = render_snapshot_csv(&dom, &field);
        let tmp = std::env::temp_dir().join(format!("chp_snap_{}.csv", std::process::id()));
        fs::write(&tmp, text).unwrap();
        let back = read_snapshot_csv(&dom, &tmp).unwrap();
        assert!(back.sub(&field).linf() < 1e-15);
        let _ = fs::remove_file(&tmp);
    }

    #[test]
    fn plotdata_fails_on_missing_artifacts() {
        let dom =
            CoupledDomain::build(DomainKind::Interval1D { n_cells: 8 }, 1.0, 1.0).unwrap();
        let empty = std::env::temp_dir().join(format!("chp_empty_{}", std::process::id()));
        let _ = fs::remove_dir_all(&empty);
        fs::create_dir_all(&empty).unwrap();
        assert!(emit_plot_data(&empty, &dom).is_err());
        let _ = fs::remove_dir_all(&empty);
    }
}
