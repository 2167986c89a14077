use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use comdp_core::alp::{assemble_fh_stage_problem, assemble_ih_problem};
use comdp_core::envs::{build_random_comdp, build_spiders_and_flies, GridMode, GridSpec, RandomMode, RandomSpec};
use comdp_core::io::{from_json, to_json};
use comdp_core::lp::solve_lp_with_dump;
use comdp_core::{
    build_features, run_suite, AgentOrder, BasisKind, CoMdp, JointPolicy, StateWeights, Suite, ValueFunction,
};

mod bench;
mod run;

use run::{default_basis, Method, RunConfig};

#[derive(Parser)]
#[command(name = "comdp", version, about = "Cooperative multi-agent MDP solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model file.
    GenEnv(GenEnvArgs),
    /// Solve a model.
    Solve(SolveArgs),
    /// Run a benchmark config and write a CSV table.
    Bench(BenchArgs),
    /// Run a randomized improvement-bound suite.
    VerifyBounds(VerifyArgs),
}

#[derive(Clone, Copy, Debug)]
enum ModeArg {
    Finite(usize),
    Infinite(f64),
}

fn parse_mode(s: &str) -> std::result::Result<ModeArg, String> {
    let (kind, value) = s.split_once(':').ok_or("expected fh:N or ih:alpha")?;
    match kind {
        "fh" => match value.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(ModeArg::Finite(n)),
            _ => Err(format!("horizon {value:?} must be an integer >= 1")),
        },
        "ih" => match value.parse::<f64>() {
            Ok(a) if a > 0.0 && a < 1.0 => Ok(ModeArg::Infinite(a)),
            _ => Err(format!("discount {value:?} must lie in (0, 1)")),
        },
        _ => Err(format!("unknown mode {kind:?}; expected fh or ih")),
    }
}

fn parse_slip(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(p) if p > 0.0 && p <= 1.0 => Ok(p),
        _ => Err(format!("slip probability {s:?} must lie in (0, 1]")),
    }
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated values")?;
    let p = |t: &str| t.trim().parse::<T>().map_err(|_| format!("bad value {t:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_basis(s: &str) -> std::result::Result<BasisKind, String> {
    s.parse().map_err(|e: comdp_core::Error| e.to_string())
}

#[derive(Args)]
struct GenEnvArgs {
    /// Spiders-and-flies grid side length.
    #[arg(long, conflicts_with = "random")]
    grid: Option<usize>,
    /// Random model instead of a grid.
    #[arg(long)]
    random: bool,
    /// Fly cells `a,b` (grid only).
    #[arg(long, value_parser = parse_pair::<usize>)]
    flies: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_slip, default_value_t = 0.7)]
    slip: f64,
    /// `fh:N` or `ih:alpha`.
    #[arg(long, value_parser = parse_mode)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    collision_penalty: f64,
    #[arg(long, default_value_t = 1.0)]
    wall_penalty: f64,
    #[arg(long, default_value_t = 1.0)]
    stage_cost: f64,
    /// States of a random model.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Agents of a random model.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Actions per agent of a random model.
    #[arg(long, default_value_t = 2)]
    actions: usize,
    /// Successors per row of a random model.
    #[arg(long, default_value_t = 3)]
    branching: usize,
    /// Cost range `lo,hi` of a random model.
    #[arg(long, value_parser = parse_pair::<f64>, default_value = "0,1")]
    cost_range: (f64, f64),
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    /// dpi-alp, pi-joint, vi or dp-fh.
    #[arg(long)]
    method: Method,
    /// identity, aggregation:k, grid-distance, poly:degree or random:d:seed.
    #[arg(long, value_parser = parse_basis)]
    basis: Option<BasisKind>,
    /// Shuffles the agent order of every sweep with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Exact evaluation of every iterate.
    #[arg(long)]
    verify: bool,
    /// JSON array of state-relevance weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Writes the simplex tableaus of the first approximate evaluation.
    #[arg(long)]
    lp_dump: Option<PathBuf>,
    /// Iteration cap (per stage for finite horizon).
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    stop_eps: f64,
    #[arg(long, default_value_t = 1e-10)]
    vi_tol: f64,
    /// Directory for policy.json, trace.jsonl and summary.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trials per row; the median wall time is reported.
    #[arg(long)]
    trials: Option<usize>,
    /// Adds exact costs to the table.
    #[arg(long)]
    verify: bool,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SuiteArg {
    Ih,
    Fh,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Raises every approximate value by one before checking.
    #[arg(long)]
    inject_bug: bool,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for model files of failing instances.
    #[arg(long)]
    replay_dir: Option<PathBuf>,
}

/// Errors that should exit like a usage error.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<CoMdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mdp = from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let violations = mdp.validate();
    if let Some(v) = violations.first() {
        return Err(anyhow!("{} is not a valid model ({} violations), first: {v}", path.display(), violations.len()));
    }
    Ok(mdp)
}

fn gen_env(args: GenEnvArgs) -> Result<()> {
    let mdp = match (args.grid, args.random) {
        (Some(h), false) => {
            let mode = match args.mode {
                ModeArg::Finite(stages) => GridMode::Finite { stages },
                ModeArg::Infinite(alpha) => GridMode::Infinite { alpha },
            };
            let mut spec = GridSpec::new(h, mode);
            if let Some((a, b)) = args.flies {
                spec.fly_cells = [a, b];
            }
            spec.slip_p = args.slip;
            spec.collision_penalty = args.collision_penalty;
            spec.wall_penalty = args.wall_penalty;
            spec.stage_cost = args.stage_cost;
            spec.validate().map_err(|e| usage(e.to_string()))?;
            build_spiders_and_flies(&spec)?
        }
        (None, true) => {
            let mode = match args.mode {
                ModeArg::Finite(stages) => RandomMode::Finite { stages },
                ModeArg::Infinite(alpha) => RandomMode::Infinite { alpha },
            };
            build_random_comdp(&RandomSpec {
                seed: args.seed,
                n: args.n,
                m: args.m,
                actions_per_agent: args.actions,
                branching: args.branching,
                cost_range: args.cost_range,
                mode,
            })
            .map_err(|e| usage(e.to_string()))?
        }
        _ => return Err(usage("pass exactly one of --grid H or --random")),
    };
    write_file(&args.out, &to_json(&mdp)?)?;
    println!("n={} m={} joint_actions={}", mdp.n(), mdp.m(), mdp.num_joint_actions(0));
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let mdp = load_model(&args.model)?;
    if !args.method.supports(mdp.horizon()) {
        return Err(usage(format!("method {} does not apply to this model's horizon", args.method)));
    }
    let basis = args.basis.unwrap_or_else(|| default_basis(&mdp));
    let mut cfg = RunConfig::new(args.method, basis);
    cfg.verify = args.verify;
    cfg.stop_eps = args.stop_eps;
    cfg.vi_tol = args.vi_tol;
    cfg.max_iters = args.max_iters.unwrap_or(0);
    if let Some(seed) = args.seed {
        cfg.order = AgentOrder::Shuffled { seed };
    }
    if let Some(path) = &args.weights {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let w: Vec<f64> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if w.len() != mdp.n() {
            return Err(usage(format!("{} weights for {} states", w.len(), mdp.n())));
        }
        cfg.weights = Some(StateWeights::new(w).map_err(|e| usage(e.to_string()))?);
    }
    if let Some(path) = &args.lp_dump {
        if args.method != Method::DpiAlp {
            return Err(usage("--lp-dump only applies to dpi-alp"));
        }
        let phi = build_features(basis, &mdp)?;
        let c = cfg.weights.clone().unwrap_or_else(|| StateWeights::uniform(mdp.n()));
        let mu0 = JointPolicy::first_actions(&mdp);
        let problem = match mdp.finite() {
            Ok((_, terminal)) => assemble_fh_stage_problem(&mdp, &mu0, &ValueFunction::exact(terminal.to_vec()), &phi, &c)?,
            Err(_) => assemble_ih_problem(&mdp, &mu0, &phi, &c)?,
        };
        let mut buf = Vec::new();
        solve_lp_with_dump(&problem, &mut buf)?;
        write_file(path, &String::from_utf8_lossy(&buf))?;
    }
    let out = run::run(&mdp, &cfg)?;
    let summary = serde_json::to_string_pretty(&out.summary)?;
    if let Some(dir) = &args.out_dir {
        write_file(&dir.join("policy.json"), &serde_json::to_string(&out.policy)?)?;
        write_file(&dir.join("summary.json"), &summary)?;
        let trace = match &out.trace {
            Some(t) => t.to_jsonl()?,
            None => String::new(),
        };
        write_file(&dir.join("trace.jsonl"), &trace)?;
    }
    println!("{summary}");
    Ok(())
}

fn verify_bounds(args: VerifyArgs) -> Result<bool> {
    let suite = match args.suite {
        SuiteArg::Ih => Suite::Ih,
        SuiteArg::Fh => Suite::Fh,
    };
    let report = run_suite(suite, args.seeds, args.inject_bug)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.report {
        write_file(path, &text)?;
    }
    if let Some(dir) = &args.replay_dir {
        for f in &report.failures {
            let mdp = build_random_comdp(&f.instance.model)?;
            write_file(&dir.join(format!("failure-seed{}.model.json", f.instance.seed)), &to_json(&mdp)?)?;
            write_file(
                &dir.join(format!("failure-seed{}.instance.json", f.instance.seed)),
                &serde_json::to_string_pretty(f)?,
            )?;
        }
    }
    println!(
        "suite={} seeds={} checks={} worst_slack={:.3e} max_beta={:.3e} failures={} result={}",
        serde_json::to_value(suite)?.as_str().unwrap_or_default(),
        report.seeds,
        report.checks,
        report.worst_slack,
        report.max_beta,
        report.failures.len(),
        if report.all_hold { "PASS" } else { "FAIL" }
    );
    if args.report.is_none() && !report.all_hold {
        eprintln!("{text}");
    }
    Ok(report.all_hold)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenEnv(a) => gen_env(a).map(|_| true),
        Command::Solve(a) => solve(a).map(|_| true),
        Command::Bench(a) => bench::bench(a.config, a.trials, a.verify, a.out).map(|_| true),
        Command::VerifyBounds(a) => verify_bounds(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
