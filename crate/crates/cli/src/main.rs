use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tpdesign::af::af_solve;
use tpdesign::criterion::{efficiency_bound, equivalence_check, evaluate_t, FitOptions};
use tpdesign::io::{
    af_table, af_trajectory_csv, format_design, iteration_table, parse_design, psi_curve_csv,
};
use tpdesign::solver::solve;
use tpdesign::spec::{self, ProblemSpec};
use tpdesign::{Design, DiscriminationProblem};

/// T_p-optimal discriminating designs.
#[derive(Parser)]
#[command(name = "tpdesign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-part iteration and print the iteration table.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run the Atkinson-Fedorov exchange baseline.
    Af {
        problem: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Check a design against the equivalence theorem.
    Check {
        problem: PathBuf,
        design: PathBuf,
        #[command(flatten)]
        flags: EvalFlags,
        /// Relative tolerance for `max ψ ≤ T`.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Write ψ(x) samples for a design as CSV.
    Curve {
        problem: PathBuf,
        design: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        flags: EvalFlags,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    eff_target: Option<f64>,
    /// Grid size for sup norms and extreme points.
    #[arg(long)]
    grid: Option<usize>,
    /// Seed for Gauss-Newton restarts.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long, default_value_t = 2001)]
    grid: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

enum Outcome {
    Success,
    NotConverged,
}

fn load(path: &Path) -> Result<(ProblemSpec, DiscriminationProblem)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = spec::parse_spec(&text).with_context(|| format!("{}", path.display()))?;
    let problem = spec::build_problem(&spec).with_context(|| format!("{}", path.display()))?;
    Ok((spec, problem))
}

fn load_design(path: &Path, problem: &DiscriminationProblem) -> Result<Design> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let design = parse_design(&text).with_context(|| format!("{}", path.display()))?;
    let violations = design.validate(problem.interval());
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        bail!("{}: {}", path.display(), list.join("; "));
    }
    Ok(design)
}

fn output_path(dir: &Option<PathBuf>, problem: &Path, suffix: &str) -> Result<PathBuf> {
    let dir = dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = problem
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("problem");
    Ok(dir.join(format!("{stem}.{suffix}")))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_solve(path: &Path, flags: &RunFlags) -> Result<Outcome> {
    let (spec, problem) = load(path)?;
    let mut opts = spec::solver_options(&spec);
    opts.max_iter = flags.max_iter.unwrap_or(opts.max_iter);
    opts.eff_target = flags.eff_target.unwrap_or(opts.eff_target);
    opts.grid_size = flags.grid.unwrap_or(opts.grid_size);
    opts.fit.seed = flags.seed.unwrap_or(opts.fit.seed);
    let init = spec::solver_init(&spec, &problem)?;
    let result = solve(&problem, &opts, &init)?;

    let table = iteration_table(&result.log);
    let design = format_design(&result.design);
    if !flags.quiet {
        print!("{table}");
        println!();
        print!("{design}");
        println!("T = {}", result.t);
        println!("sup |eps|^2 = {}", result.sup_err_sq);
        println!("efficiency bound = {:.6}", result.eff_bound);
        println!("converged = {}", result.converged);
    }
    write(&output_path(&flags.out_dir, path, "design.txt")?, &design)?;
    write(
        &output_path(&flags.out_dir, path, "iterations.txt")?,
        &table,
    )?;
    Ok(if result.converged {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

fn cmd_af(path: &Path, flags: &RunFlags) -> Result<Outcome> {
    let (spec, problem) = load(path)?;
    let mut opts = spec::af_options(&spec);
    opts.max_iter = flags.max_iter.unwrap_or(opts.max_iter);
    opts.eff_target = flags.eff_target.unwrap_or(opts.eff_target);
    opts.grid_size = flags.grid.unwrap_or(opts.grid_size);
    opts.fit.seed = flags.seed.unwrap_or(opts.fit.seed);
    let seed = spec::seed_theta(&spec, &problem)?;
    let result = af_solve(&problem, &opts, spec::af_init_design(&spec)?, &seed)?;

    let design = format_design(&result.design);
    if !flags.quiet {
        print!("{}", af_table(&result.trajectory));
        println!();
        println!("# best design (bound {:.6})", result.eff_bound);
        print!("{design}");
        println!("converged = {}", result.converged);
    }
    write(
        &output_path(&flags.out_dir, path, "af.csv")?,
        &af_trajectory_csv(&result.trajectory),
    )?;
    write(
        &output_path(&flags.out_dir, path, "af-design.txt")?,
        &design,
    )?;
    Ok(if result.converged {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

fn fit_options(seed: Option<u64>) -> FitOptions {
    let mut fit = FitOptions::default();
    fit.seed = seed.unwrap_or(fit.seed);
    fit
}

fn cmd_check(
    problem_path: &Path,
    design_path: &Path,
    flags: &EvalFlags,
    tol: f64,
) -> Result<Outcome> {
    let (spec, problem) = load(problem_path)?;
    let design = load_design(design_path, &problem)?;
    let seed = spec::seed_theta(&spec, &problem)?;
    let report = equivalence_check(
        &problem,
        &design,
        &seed,
        flags.grid,
        tol,
        &fit_options(flags.seed),
    )?;
    if !flags.quiet {
        println!("T = {}", report.t);
        println!("max psi = {} at x = {}", report.max_psi, report.argmax);
        println!(
            "efficiency bound = {:.6}",
            efficiency_bound(report.t, report.max_psi)
        );
        println!("support slack = {:e}", report.support_slack);
        println!("optimal = {}", report.is_optimal);
    }
    Ok(if report.is_optimal {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

fn cmd_curve(
    problem_path: &Path,
    design_path: &Path,
    out: &Path,
    flags: &EvalFlags,
) -> Result<Outcome> {
    let (spec, problem) = load(problem_path)?;
    let design = load_design(design_path, &problem)?;
    let seed = spec::seed_theta(&spec, &problem)?;
    let value = evaluate_t(&problem, &design, &seed, &fit_options(flags.seed))?;
    write(
        out,
        &psi_curve_csv(&problem, &value.theta_star, flags.grid)?,
    )?;
    if !flags.quiet {
        println!("T = {}", value.t);
        println!("wrote {} samples to {}", flags.grid, out.display());
    }
    Ok(Outcome::Success)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let quiet = match &cli.command {
        Command::Solve { flags, .. } | Command::Af { flags, .. } => flags.quiet,
        Command::Check { flags, .. } | Command::Curve { flags, .. } => flags.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet {
        "error"
    } else {
        "warn"
    }))
    .init();

    let outcome = match &cli.command {
        Command::Solve { problem, flags } => cmd_solve(problem, flags),
        Command::Af { problem, flags } => cmd_af(problem, flags),
        Command::Check {
            problem,
            design,
            flags,
            tol,
        } => cmd_check(problem, design, flags, *tol),
        Command::Curve {
            problem,
            design,
            out,
            flags,
        } => cmd_curve(problem, design, out, flags),
    };
    match outcome {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
