//! `hqtp`: solve, check and benchmark half-quadratic transportation problems.
//!
//! Exit codes: 0 success, 1 bad input or solver failure, 2 iteration limit
//! reached without convergence, 3 solver and reference disagree (a local
//! minimum for non-convex costs) or the sparsity ordering did not hold.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hqtp_core::genbench::{self, Distribution, GenSpec};
use hqtp_core::io::{self as fileio, ProblemFile, SolutionFile};
use hqtp_core::oracle::{self, DEFAULT_GRID_POINTS};
use hqtp_core::{
    objective, solve_hqtp, CostKind, CostModel, MemoryMode, Problem, Solution, SolverOptions,
};

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_FLAGGED: u8 = 3;

/// Relative objective gap accepted by `compare`.
const COMPARE_GAP: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "hqtp", version, about = "Half-quadratic transportation solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a problem file and write the solution JSON.
    Solve(SolveArgs),
    /// Check a problem file, and optionally re-evaluate a written solution.
    Validate(ValidateArgs),
    /// Write a random balanced instance over the |i-j|+1 cost matrix.
    Generate(GenerateArgs),
    /// Compare the solver against the brute-force oracle on a tiny instance.
    Compare(CompareArgs),
    /// Solve one random instance under the sqt, l1 and l0 models and compare
    /// how many routes each plan uses.
    #[command(name = "reproduce-fig3")]
    ReproduceFig3(ReproduceArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Override the cost model of the input file.
    #[arg(long, value_parser = parse_kind)]
    model: Option<CostKind>,
    /// Override beta^2 for the l1/l0 surrogates.
    #[arg(long)]
    beta2: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 5)]
    inner_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    outer_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_outer: usize,
    #[arg(long, default_value = "standard", value_parser = parse_memory)]
    memory: MemoryMode,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            inner_iters: self.inner_iters,
            outer_tol: self.outer_tol,
            max_outer: self.max_outer,
            memory_mode: self.memory,
            ..SolverOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    input: PathBuf,
    /// Solution JSON destination (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Solution JSON to re-evaluate against the problem.
    #[arg(long)]
    solution: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total supply; defaults to m.
    #[arg(long)]
    total_mass: Option<f64>,
    #[arg(long, default_value = "l1", value_parser = parse_kind)]
    model: CostKind,
    #[arg(long)]
    beta2: Option<f64>,
    /// Problem JSON destination (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// Directory for p.csv, q.csv, x_<model>.csv and summary.csv.
    #[arg(long, default_value = "fig3")]
    output: PathBuf,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = genbench::L1_BETA2)]
    beta2_l1: f64,
    #[arg(long, default_value_t = genbench::L0_BETA2)]
    beta2_l0: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_kind(s: &str) -> std::result::Result<CostKind, String> {
    s.parse().map_err(|e: hqtp_core::Error| e.to_string())
}

fn parse_memory(s: &str) -> std::result::Result<MemoryMode, String> {
    s.parse().map_err(|e: hqtp_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::ReproduceFig3(a) => cmd_reproduce(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", one_line(&err));
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn one_line(err: &anyhow::Error) -> String {
    err.chain()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(": ")
        .replace('\n', " ")
}

fn load_problem(path: &Path, overrides: &ModelArgs) -> Result<Problem> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut file = ProblemFile::from_json(&text)?;
    if let Some(kind) = overrides.model {
        file.cost.model = kind;
    }
    if let Some(beta2) = overrides.beta2 {
        file.cost.beta2 = Some(beta2);
    }
    if matches!(file.cost.model, CostKind::L1Approx | CostKind::L0Approx) && file.cost.beta2.is_none() {
        file.cost.beta2 = Some(default_beta2(file.cost.model));
    }
    Ok(file.to_problem()?)
}

fn default_beta2(kind: CostKind) -> f64 {
    match kind {
        CostKind::L0Approx => genbench::L0_BETA2,
        _ => genbench::L1_BETA2,
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_solve(args: SolveArgs) -> Result<u8> {
    let problem = load_problem(&args.input, &args.model)?;
    let sol = solve_hqtp(&problem, &args.solver.options())?;
    let json = serde_json::to_string_pretty(&SolutionFile::from(&sol))?;
    write_text(args.output.as_deref(), &json)?;
    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        fileio::write_trace_csv(&sol.trace, &mut w)?;
        w.flush()?;
    }
    if sol.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: not converged after {} outer iterations ({} sweeps)",
            sol.outer_iterations, sol.inner_sweeps
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<u8> {
    let problem = load_problem(&args.input, &args.model)?;
    let mut report = serde_json::json!({
        "valid": true,
        "m": problem.m(),
        "n": problem.n(),
        "model": problem.cost().kind().name(),
        "mass": problem.mass(),
    });
    if let Some(path) = &args.solution {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let sol = SolutionFile::from_json(&text)?;
        let x = sol.plan()?;
        let f = objective(&problem, &x)?;
        let (row, col) = hqtp_core::model::marginal_residuals(problem.p(), problem.q(), &x);
        let primal_feas = x.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
        report["solution"] = serde_json::json!({
            "objective": f,
            "row": row,
            "col": col,
            "primal_feas": primal_feas,
            "reported_objective": sol.objective,
            "reported_row": sol.residuals.row,
            "reported_col": sol.residuals.col,
        });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(EXIT_OK)
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let spec = GenSpec {
        m: args.m,
        n: args.n,
        seed: args.seed,
        distribution: Distribution::UniformPositive,
        total_mass: args.total_mass.unwrap_or(args.m as f64),
    };
    let (p, q) = genbench::generate_instance(&spec)?;
    let cost = genbench::distance_cost_model(args.m, args.n, args.model, args.beta2)?;
    let problem = hqtp_core::validate_problem(p, q, cost)?;
    let json = serde_json::to_string(&ProblemFile::from_problem(&problem))?;
    write_text(args.output.as_deref(), &json)?;
    Ok(EXIT_OK)
}

fn cmd_compare(args: CompareArgs) -> Result<u8> {
    let problem = load_problem(&args.input, &args.model)?;
    let reference = oracle::oracle_solve(&problem, args.grid_points)?;
    let sol = solve_hqtp(&problem, &args.solver.options())?;
    let gap = (sol.objective - reference.objective_star) / reference.objective_star.abs().max(1e-12);
    println!("model            {}", problem.cost().kind());
    println!("dof              {}", reference.dof);
    println!("solver_objective {}", fileio::fmt_f64(sol.objective));
    println!("oracle_objective {}", fileio::fmt_f64(reference.objective_star));
    println!("relative_gap     {}", fileio::fmt_f64(gap));
    println!("converged        {}", sol.converged);

    let convex = oracle::is_convex(problem.cost().kind());
    if convex {
        if gap.abs() <= COMPARE_GAP {
            return Ok(EXIT_OK);
        }
        eprintln!("solver and oracle disagree on a convex instance");
        return Ok(EXIT_FLAGGED);
    }
    if gap <= COMPARE_GAP {
        Ok(EXIT_OK)
    } else {
        eprintln!("solver stopped at a local minimum above the oracle's objective");
        Ok(EXIT_FLAGGED)
    }
}

struct ModelRun {
    kind: CostKind,
    sol: Solution,
    seconds: f64,
    active: usize,
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<u8> {
    if args.size == 0 {
        bail!("--size must be >= 1");
    }
    let spec = GenSpec::square(args.size, args.seed);
    let (p, q) = genbench::generate_instance(&spec)?;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;

    let write_vec = |name: &str, v: &[f64]| -> Result<()> {
        let mut w = create(&args.output.join(name))?;
        fileio::write_vector_csv(v, &mut w)?;
        Ok(w.flush()?)
    };
    write_vec("p.csv", &p)?;
    write_vec("q.csv", &q)?;

    let opts = args.solver.options();
    let mut runs = Vec::new();
    for (kind, beta2) in [
        (CostKind::Sqt, None),
        (CostKind::L1Approx, Some(args.beta2_l1)),
        (CostKind::L0Approx, Some(args.beta2_l0)),
    ] {
        let cost: CostModel = genbench::distance_cost_model(args.size, args.size, kind, beta2)?;
        let problem = hqtp_core::validate_problem(p.clone(), q.clone(), cost)?;
        let start = Instant::now();
        let sol = solve_hqtp(&problem, &opts).with_context(|| format!("solving {kind}"))?;
        let seconds = start.elapsed().as_secs_f64();
        let mut w = create(&args.output.join(format!("x_{kind}.csv")))?;
        fileio::write_matrix_csv(&sol.x, &mut w)?;
        w.flush()?;
        let active = genbench::sparsity(&sol.x, genbench::SPARSITY_TAU);
        runs.push(ModelRun {
            kind,
            sol,
            seconds,
            active,
        });
    }

    let mut summary = create(&args.output.join("summary.csv"))?;
    writeln!(summary, "model,objective,active_routes,outer_iterations,inner_sweeps,converged,seconds")?;
    println!(
        "{:<6} {:>24} {:>8} {:>6} {:>9} {:>10}",
        "model", "objective", "active", "outer", "sweeps", "seconds"
    );
    for r in &runs {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            r.kind,
            fileio::fmt_f64(r.sol.objective),
            r.active,
            r.sol.outer_iterations,
            r.sol.inner_sweeps,
            r.sol.converged,
            fileio::fmt_f64(r.seconds),
        )?;
        println!(
            "{:<6} {:>24} {:>8} {:>6} {:>9} {:>10.3}",
            r.kind.name(),
            fileio::fmt_f64(r.sol.objective),
            r.active,
            r.sol.outer_iterations,
            r.sol.inner_sweeps,
            r.seconds
        );
    }
    summary.flush()?;

    let (sqt, l1, l0) = (runs[0].active, runs[1].active, runs[2].active);
    if l0 <= l1 && l1 <= sqt {
        println!("sparsity ordering holds: l0 {l0} <= l1 {l1} <= sqt {sqt}");
        Ok(EXIT_OK)
    } else {
        println!("sparsity ordering violated: l0 {l0}, l1 {l1}, sqt {sqt}");
        Ok(EXIT_FLAGGED)
    }
}
