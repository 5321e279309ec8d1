use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dikf::eval::{self, reflection_allowed};
use dikf::experiment::{self, ExperimentConfig, Preset};
use dikf::io::{self, EvaluationReport, Provenance, SolutionFile};
use dikf::synth::{Dataset, NoiseModel, NoiseSpec};
use dikf::{solve, OrderingStrategy, SolveConfig};

#[derive(Parser)]
#[command(name = "dikf", version, about = "Coordinates and covariances from noisy geometric constraints")]
struct Cli {
    /// Directory for outputs when -o is not given.
    #[arg(long, global = true, env = "DIKF_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a random chain (or a given target).
    Generate(GenerateArgs),
    /// Solve a dataset; writes a solution file and a cycle trace.
    Solve(SolveArgs),
    /// Error histogram, RMSD, covariance map and ellipsoids for a solution.
    Evaluate(EvaluateArgs),
    /// Run every preset over a seed list and check the acceptance thresholds.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, value_parser = ["exact", "gaussian", "bias"])]
    noise: Option<String>,
    /// Exact: variance. Gaussian: maximum variance. Bias: mean shift.
    #[arg(long)]
    noise_param: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Target coordinates file (`x y z` per line) instead of a random chain.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    dataset: PathBuf,
    /// Take the ordering from a preset.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long, value_parser = parse_order)]
    order: Option<OrderingStrategy>,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long)]
    avg_tol: Option<f64>,
    #[arg(long)]
    max_tol: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    inner_iters: Option<usize>,
    /// Seed of the random start; defaults to the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Target coordinates for RMSD, overriding the one stored in the dataset.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Trace CSV; defaults to the solution path with a `.trace.csv` suffix.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    solution: PathBuf,
    dataset: PathBuf,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = eval::DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    /// Ellipsoid size in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    k_sd: f64,
    /// Output directory for the report tables.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, value_delimiter = ',', default_values_t = experiment::DEFAULT_SEEDS)]
    seeds: Vec<u64>,
    /// Output directory for summary.txt and replicates.csv.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: dikf::Error| e.to_string())
}

fn parse_order(s: &str) -> Result<OrderingStrategy, String> {
    s.parse().map_err(|e: dikf::Error| e.to_string())
}

fn out_path(explicit: &Option<PathBuf>, dir: &Path, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| dir.join(default))
}

fn ensure_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn generate(args: &GenerateArgs, dir: &Path) -> anyhow::Result<()> {
    let base = ExperimentConfig::preset(args.preset.unwrap_or(Preset::Custom));
    let model = match (&args.noise, args.noise_param) {
        (Some(name), p) => NoiseModel::from_parts(name, p)?,
        (None, Some(p)) => NoiseModel::from_parts(base.noise.name(), Some(p))?,
        (None, None) => base.noise,
    };
    let noise = NoiseSpec::new(model, args.seed)?;
    let fraction = args.fraction.unwrap_or(base.fraction);
    let ds = match &args.target {
        Some(path) => {
            let target = io::load_coordinates(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(n) = args.atoms {
                if n != target.len() {
                    bail!("--atoms {n} disagrees with {} atoms in {}", target.len(), path.display());
                }
            }
            Dataset::from_target(target, fraction, noise, args.seed)?
        }
        None => Dataset::generate(args.atoms.unwrap_or(base.n_atoms), fraction, noise, args.seed)?,
    };
    let path = out_path(&args.output, dir, "dataset.json");
    io::save_dataset(&path, &ds).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} ({} atoms, {} constraints)", path.display(), ds.n_atoms, ds.constraints.len());
    Ok(())
}

fn solve_config(args: &SolveArgs, ds: &Dataset) -> anyhow::Result<SolveConfig> {
    let mut cfg = args.preset.map(|p| ExperimentConfig::preset(p).solve).unwrap_or_default();
    if let Some(o) = args.order {
        cfg.ordering = o;
    }
    if let Some(v) = args.max_cycles {
        cfg.max_outer_cycles = v;
    }
    if let Some(v) = args.avg_tol {
        cfg.avg_stop = v;
    }
    if let Some(v) = args.max_tol {
        cfg.max_stop = v;
    }
    if let Some(v) = args.inner_tol {
        cfg.inner_tol = v;
    }
    if let Some(v) = args.inner_iters {
        cfg.inner_max_iters = v;
    }
    cfg.seed = args.seed.unwrap_or(ds.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn target_for(explicit: &Option<PathBuf>, ds: &Dataset) -> anyhow::Result<Option<Vec<[f64; 3]>>> {
    let target = match explicit {
        Some(path) => Some(io::load_coordinates(path).with_context(|| format!("reading {}", path.display()))?),
        None => ds.target.clone(),
    };
    if let Some(t) = &target {
        if t.len() != ds.n_atoms {
            bail!("target has {} atoms, dataset has {}", t.len(), ds.n_atoms);
        }
    }
    Ok(target)
}

fn solve_cmd(args: &SolveArgs, dir: &Path) -> anyhow::Result<()> {
    let ds = io::load_dataset(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let cfg = solve_config(args, &ds)?;
    let target = target_for(&args.target, &ds)?;
    let sol_path = out_path(&args.output, dir, "solution.json");
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut name = sol_path.file_stem().unwrap_or_default().to_os_string();
        name.push(".trace.csv");
        sol_path.with_file_name(name)
    });
    let provenance = Provenance::from(&ds);
    match solve(&ds, &cfg, target.as_deref()) {
        Ok(sol) => {
            io::write_atomic(&trace_path, io::trace_csv(&sol.trace, &cfg, &provenance)?.as_bytes())?;
            io::save_solution(&sol_path, &SolutionFile::new(&sol, &cfg, &ds)?)?;
            let best = &sol.trace[sol.best_cycle - 1];
            println!(
                "{} after {} cycle(s); best cycle {}: avg {:.4} SD, max {:.4} SD{}",
                if sol.converged { "converged" } else { "not converged" },
                sol.cycles_run,
                sol.best_cycle,
                best.avg_error,
                best.max_error,
                best.rmsd_to_target.map(|r| format!(", rmsd {r:.4} Å")).unwrap_or_default()
            );
            println!("wrote {} and {}", sol_path.display(), trace_path.display());
            Ok(())
        }
        Err(aborted) => {
            io::write_atomic(&trace_path, io::trace_csv(&aborted.trace, &cfg, &provenance)?.as_bytes())?;
            eprintln!("partial trace written to {}", trace_path.display());
            Err(aborted.into())
        }
    }
}

fn evaluate_cmd(args: &EvaluateArgs, dir: &Path) -> anyhow::Result<()> {
    let sol = io::load_solution(&args.solution).with_context(|| format!("loading {}", args.solution.display()))?;
    let ds = io::load_dataset(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    if sol.n_atoms != ds.n_atoms {
        bail!("solution has {} atoms, dataset has {}", sol.n_atoms, ds.n_atoms);
    }
    let sol_ids: Vec<u64> = sol.errors.iter().map(|e| e.id).collect();
    let ds_ids: Vec<u64> = ds.constraints.iter().map(|c| c.id()).collect();
    if sol_ids != ds_ids {
        bail!("solution was not computed from this dataset (constraint ids differ)");
    }
    let x = sol.state()?;
    let cov = sol.covariance_matrix()?;
    let stats = eval::error_stats(&ds.constraints, &x, args.bin_width)?;
    let superposition = match target_for(&args.target, &ds)? {
        Some(t) => Some(eval::superpose_rmsd(&x.to_points(), &t, reflection_allowed(&ds.constraints))?),
        None => None,
    };
    let ellipsoids = eval::uncertainty_ellipsoids(&x, &cov, args.k_sd)?;
    let report = EvaluationReport {
        schema: io::EVALUATION_SCHEMA.to_string(),
        avg_error: stats.avg,
        max_error: stats.max,
        evaluated: stats.evaluated,
        skipped: stats.skipped,
        superposition,
        config: sol.config.clone(),
        provenance: sol.provenance.clone(),
    };
    let out = out_path(&args.output, dir, "evaluation");
    ensure_dir(&out)?;
    io::write_atomic(&out.join("report.json"), &io::evaluation_to_json(&report)?)?;
    io::write_atomic(&out.join("histogram.csv"), io::histogram_csv(&stats).as_bytes())?;
    io::write_atomic(&out.join("covariance_map.csv"), io::covariance_map_csv(&eval::covariance_map(&cov)).as_bytes())?;
    io::write_atomic(&out.join("ellipsoids.csv"), io::ellipsoids_csv(&ellipsoids, args.k_sd).as_bytes())?;
    println!(
        "avg {:.4} SD, max {:.4} SD over {} constraint(s){}",
        stats.avg,
        stats.max,
        stats.evaluated,
        report.superposition.as_ref().map(|s| format!(", rmsd {:.4} Å", s.rmsd)).unwrap_or_default()
    );
    println!("wrote report tables to {}", out.display());
    Ok(())
}

fn reproduce_cmd(args: &ReproduceArgs, dir: &Path) -> anyhow::Result<bool> {
    if args.seeds.is_empty() {
        bail!("need at least one seed");
    }
    let rep = experiment::reproduce(&args.seeds);
    let summary = experiment::summary_table(&rep);
    let out = out_path(&args.output, dir, "reproduce");
    ensure_dir(&out)?;
    io::write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
    io::write_atomic(&out.join("replicates.csv"), experiment::replicates_csv(&rep).as_bytes())?;
    print!("{summary}");
    Ok(rep.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli.output_dir.as_path();
    let result = match &cli.command {
        Command::Generate(a) => generate(a, dir).map(|_| true),
        Command::Solve(a) => solve_cmd(a, dir).map(|_| true),
        Command::Evaluate(a) => evaluate_cmd(a, dir).map(|_| true),
        Command::Reproduce(a) => reproduce_cmd(a, dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
