//! The `ddsplit` command line: `run`, `verify` and `orders`.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid config,
//! 3 step restriction violated, 4 solver failure, 5 divergence, 6 I/O.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_split, splitting_defect};
use crate::config::{parse_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::harness::{run_experiment, run_orders, write_csv, ExperimentResult, Problem};
use crate::partition::verify_partition;
use crate::schemes::{check_restriction, SchemeKind};
use crate::solver::factorize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RESTRICTION: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;
pub const EXIT_IO: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "ddsplit", version, about = "Domain-decomposition operator splitting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the step-size sweep of the configured scheme and write a CSV table.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; overrides `output.csv`. Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate and print the plan without integrating.
        #[arg(long)]
        dry_run: bool,
    },
    /// Check the partition of unity, splitting exactness and solver residuals.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, hide = true)]
        corrupt_partition: bool,
    },
    /// Run order studies for several schemes against one reference solution.
    Orders {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated scheme names, e.g. `Additive,FSCN`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        schemes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps an error to its exit code category.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::Validation { .. }
        | Error::InvalidGrid(_)
        | Error::InvalidPartition(_)
        | Error::InvalidArgument(_)
        | Error::Ellipticity { .. } => EXIT_CONFIG,
        Error::StepRestrictionViolated(_) => EXIT_RESTRICTION,
        Error::SingularSystem { .. }
        | Error::NoConvergence { .. }
        | Error::NewtonFailed { .. }
        | Error::TooLargeForDense { .. }
        | Error::AccuracyNotReached { .. }
        | Error::DegenerateErrors(_) => EXIT_SOLVER,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
    }
}

/// Runs a parsed command, writing reports to `out` and errors to stderr.
pub fn execute(cli: Cli, out: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Run { config, out: csv, dry_run } => cmd_run(&config, csv.as_deref(), dry_run, out),
        Command::Verify {
            config,
            corrupt_partition,
        } => cmd_verify(&config, corrupt_partition, out),
        Command::Orders {
            config,
            schemes,
            out: csv,
        } => cmd_orders(&config, &schemes, csv.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    parse_config(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn emit_csv(results: &[ExperimentResult], path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_csv(results, File::create(p)?),
        None => write_csv(results, &mut *out),
    }
}

fn order_line(r: &ExperimentResult) -> String {
    match r.observed_order {
        Some(o) => format!("{}: observed order {o:.3} (expected {})", r.scheme, r.scheme.order()),
        None => format!("{}: fewer than 3 levels, no order estimate", r.scheme),
    }
}

pub fn cmd_run(path: &Path, csv: Option<&Path>, dry_run: bool, out: &mut dyn Write) -> Result<i32> {
    let cfg = load(path)?;
    if dry_run {
        print_plan(&cfg, out)?;
        return Ok(EXIT_OK);
    }
    let result = run_experiment(&cfg)?;
    let target = csv.map(Path::to_path_buf).or_else(|| cfg.output.csv.clone());
    emit_csv(std::slice::from_ref(&result), target.as_deref(), out)?;
    if target.is_some() {
        writeln!(out, "{}", order_line(&result))?;
    } else {
        eprintln!("{}", order_line(&result));
    }
    Ok(EXIT_OK)
}

fn print_plan(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let problem = Problem::from_config(cfg)?;
    let g = &problem.grid;
    let kind = cfg.scheme.kind;
    writeln!(out, "plan for {kind}")?;
    writeln!(
        out,
        "  grid: dim {}, {} nodes, {:?} boundary",
        g.dim(),
        g.node_count(),
        g.bc()
    )?;
    writeln!(
        out,
        "  cover: {:?}, q = {}, delta = {}",
        cfg.cover.kind,
        problem.partition.q,
        problem.partition.delta
    )?;
    writeln!(out, "  final time: {}", cfg.scheme.final_time())?;
    let shifts: Vec<f64> = problem.split.parts.iter().map(|p| p.shift()).collect();
    let m_f = problem.potential.map(|p| p.m_f());
    for (h, m) in cfg.scheme.sweep() {
        let sc = crate::harness::scheme_config(cfg, kind, h, m);
        let status = match check_restriction(&sc, &shifts, m_f)? {
            None => "restriction ok".to_string(),
            Some(v) => format!("lax: {v}"),
        };
        writeln!(out, "  h = {h:e}, m = {m}: {status}")?;
    }
    Ok(())
}

struct Check {
    name: &'static str,
    value: f64,
    limit: f64,
    pass: bool,
}

pub fn cmd_verify(path: &Path, corrupt: bool, out: &mut dyn Write) -> Result<i32> {
    let cfg = load(path)?;
    let mut problem = Problem::from_config(&cfg)?;
    if corrupt {
        let part = &mut problem.partition;
        let mid = part.chi_nodes[0].len() / 2;
        part.chi_nodes[0][mid] += 1e-3;
        let faces = &mut part.chi_faces[0][0];
        let f = faces.len() / 2;
        faces[f] += 1e-3;
        problem.split = assemble_split(&problem.grid, &problem.coeff, &problem.partition);
    }
    let q = problem.partition.q;
    let report = verify_partition(&problem.partition, &problem.grid, 1e-14);
    let defect = splitting_defect(&problem.split, 10, cfg.seed)?;
    let (entry_defect, scale) = problem.split.entrywise_defect();
    let entry_limit = 8.0 * q as f64 * f64::EPSILON * scale;
    let defect_limit = if q == 1 { 0.0 } else { 1e-13 };

    let mut checks = vec![
        Check {
            name: "partition sum",
            value: report.max_sum_deviation,
            limit: 1e-14,
            pass: report.max_sum_deviation <= 1e-14,
        },
        Check {
            name: "partition bounds",
            value: report.bounds_violations as f64,
            limit: 0.0,
            pass: report.bounds_violations == 0,
        },
        Check {
            name: "partition supports",
            value: report.support_violations as f64,
            limit: 0.0,
            pass: report.support_violations == 0,
        },
        Check {
            name: "component separation",
            value: report.adjacency_violations as f64,
            limit: 0.0,
            pass: report.adjacency_violations == 0,
        },
        Check {
            name: "splitting defect",
            value: defect,
            limit: defect_limit,
            pass: defect <= defect_limit,
        },
        Check {
            name: "entrywise additivity",
            value: entry_defect,
            limit: entry_limit,
            pass: entry_defect <= entry_limit,
        },
    ];

    let tau = cfg.scheme.kind.resolvent_scale(cfg.scheme.h, q);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let n = problem.grid.node_count();
    let mut worst = 0.0_f64;
    let mut solver_ok = true;
    for part in &problem.split.parts {
        match factorize(part, tau, &cfg.solver) {
            Ok(f) => {
                let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let scale = rhs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                match f.solve(&rhs) {
                    Ok(w) => worst = worst.max(f.residual(&w, &rhs) / scale),
                    Err(e) => {
                        log::warn!("solve failed: {e}");
                        solver_ok = false;
                    }
                }
            }
            Err(e) => {
                log::warn!("factorization failed: {e}");
                solver_ok = false;
            }
        }
    }
    checks.push(Check {
        name: "resolvent residual",
        value: worst,
        limit: 1e-10,
        pass: solver_ok && worst <= 1e-10,
    });

    writeln!(out, "{:<22} {:>12} {:>12}  result", "check", "value", "limit")?;
    for c in &checks {
        writeln!(
            out,
            "{:<22} {:>12.3e} {:>12.3e}  {}",
            c.name,
            c.value,
            c.limit,
            if c.pass { "PASS" } else { "FAIL" }
        )?;
    }
    if report.under_resolved {
        writeln!(out, "note: delta is below two grid spacings")?;
    }
    Ok(if checks.iter().all(|c| c.pass) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

/// Parses a scheme list and checks each entry against the config.
pub fn parse_scheme_list(names: &[String], cfg: &ExperimentConfig) -> Result<Vec<SchemeKind>> {
    let names: Vec<&str> = names.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::validation("schemes", "scheme list is empty"));
    }
    let q = cfg.cover.q();
    let nonlinear = cfg.nonlinearity.potential()?.is_some();
    names
        .iter()
        .map(|name| {
            let kind = SchemeKind::parse(name)
                .ok_or_else(|| Error::validation("schemes", format!("unknown scheme `{name}`")))?;
            if kind.requires_two_parts() && q != 2 {
                return Err(Error::validation(
                    "schemes",
                    format!("{kind} is only defined for two operators, cover gives q = {q}"),
                ));
            }
            if nonlinear && !kind.is_semilinear() {
                return Err(Error::validation(
                    "schemes",
                    format!("{kind} is linear but a nonlinearity is configured"),
                ));
            }
            Ok(kind)
        })
        .collect()
}

pub fn cmd_orders(path: &Path, schemes: &[String], csv: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let cfg = load(path)?;
    let kinds = parse_scheme_list(schemes, &cfg)?;
    let results = run_orders(&cfg, &kinds)?;
    let target = csv.map(Path::to_path_buf).or_else(|| cfg.output.csv.clone());
    emit_csv(&results, target.as_deref(), out)?;
    for r in &results {
        if target.is_some() {
            writeln!(out, "{}", order_line(r))?;
        } else {
            eprintln!("{}", order_line(r));
        }
    }
    Ok(EXIT_OK)
}
