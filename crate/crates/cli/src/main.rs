//! Batch entry point. One process runs one pipeline: a single config
//! (`run`), a directory of configs on a worker pool (`sweep`), the
//! randomized property suite (`props`), or plot-data extraction from a
//! completed run directory (`plotdata`).
//!
//! Exit codes: 0 converged / all checks passed, 2 completed without
//! reaching the periodicity tolerance, 1 error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chp_core::config::{parse_config, RunConfig};
use chp_core::props::run_property_suite;
use chp_core::report::{emit_plot_data, execute_run};

/// Environment variable that reroots all run output directories.
const OUT_ROOT_ENV: &str = "CHP_OUT_ROOT";

#[derive(Parser)]
#[command(name = "chp", version, about = "Time-periodic phase-separation solver with dynamic boundary conditions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a config and run its continuation schedule end to end.
    Run { config: PathBuf },
    /// Run every *.toml config in a directory on a small worker pool.
    Sweep {
        dir: PathBuf,
        /// Worker count; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Randomized property suite over the shipped potentials and pairings.
    Props {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Derive gnuplot-ready columnar files from a completed run directory.
    Plotdata { rundir: PathBuf },
}

fn out_root() -> Option<PathBuf> {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from)
}

fn load_config(path: &Path) -> anyhow::Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let cfg = parse_config(&text)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, base))
}

/// Runs one config; returns the process exit code for it.
fn run_one(path: &Path) -> u8 {
    let (cfg, base) = match load_config(path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return 1;
        }
    };
    if let Err(violations) = cfg.validate(&base) {
        eprintln!("{}: configuration rejected", path.display());
        for v in violations {
            eprintln!("  - {v}");
        }
        return 1;
    }
    match execute_run(&cfg, &base, out_root().as_deref()) {
        Ok(artifacts) => {
            println!(
                "{}: {} -> {}",
                path.display(),
                if artifacts.all_converged {
                    "converged"
                } else {
                    "completed without convergence"
                },
                artifacts.out_dir.display()
            );
            if let Some(u) = &artifacts.uniformity {
                for entry in &u.checked {
                    println!(
                        "  bounded[{}]: max growth {:.3} {}",
                        entry.name,
                        entry.max_growth,
                        if entry.within_bound { "(ok)" } else { "(exceeded)" }
                    );
                }
            }
            if artifacts.all_converged {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            1
        }
    }
}

fn sweep(dir: &Path, jobs: Option<usize>) -> u8 {
    let mut configs: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "toml").unwrap_or(false))
            .collect(),
        Err(e) => {
            eprintln!("{}: {e}", dir.display());
            return 1;
        }
    };
    configs.sort();
    if configs.is_empty() {
        eprintln!("{}: no *.toml configs found", dir.display());
        return 1;
    }
    let workers = jobs
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let codes = std::sync::Mutex::new(vec![0u8; configs.len()]);
    std::thread::scope(|scope| {
        let configs_ref = &configs;
        let next_ref = &next;
        let codes_ref = &codes;
        for _ in 0..workers.min(configs.len()) {
            scope.spawn(move || loop {
                let i = next_ref.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= configs_ref.len() {
                    break;
                }
                let code = run_one(&configs_ref[i]);
                codes_ref.lock().unwrap()[i] = code;
            });
        }
    });
    let codes = codes.into_inner().unwrap();
    let worst_err = codes.contains(&1);
    let any_unconverged = codes.contains(&2);
    if worst_err {
        1
    } else if any_unconverged {
        2
    } else {
        0
    }
}

fn props(seed: u64, samples: usize) -> u8 {
    let report = run_property_suite(seed, samples);
    for line in &report.lines {
        println!(
            "[{}] {} - {}",
            if line.pass { "ok" } else { "FAIL" },
            line.name,
            line.detail
        );
    }
    println!(
        "property suite: {} checks, seed {}, {} samples each",
        report.lines.len(),
        report.seed,
        report.samples
    );
    if report.pass() {
        0
    } else {
        1
    }
}

fn plotdata(rundir: &Path) -> u8 {
    let cfg_path = rundir.join("config.toml");
    let (cfg, _) = match load_config(&cfg_path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    let dom = match cfg.build_domain() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    match emit_plot_data(rundir, &dom) {
        Ok(()) => {
            println!(
                "{}: wrote mass.dat, energy.dat, residual.dat, profile.dat",
                rundir.display()
            );
            0
        }
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { config } => run_one(&config),
        Cmd::Sweep { dir, jobs } => sweep(&dir, jobs),
        Cmd::Props { seed, samples } => props(seed, samples),
        Cmd::Plotdata { rundir } => plotdata(&rundir),
    };
    ExitCode::from(code)
}
