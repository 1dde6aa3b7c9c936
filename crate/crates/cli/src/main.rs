use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use vmr_core::datasets::{generate_cluster, save_mapping, GeneratorConfig};
use vmr_core::exact::MnlSplit;
use vmr_core::{rollout_plan, ClusterState, MigrationPlan, Scalar};
use vmr_policy::ppo::{evaluate_greedy, Trainer};
use vmr_policy::{best_of_k, default_grid, load_checkpoint, save_checkpoint, train_from, tune_quantiles, Policy, TrainData};
use vmr_bench::{
    emit_timeline, load_mappings, AlgoParams, parse_objective, run_bench, solve, timeline_text, write_timeline_csv, Algorithm, BenchConfig,
    BenchError, RunConfig, SolveContext,
};

#[derive(Parser, Debug)]
#[command(name = "vmr", version, about = "VM rescheduling: datasets, solvers, training and benchmarks")]
struct Cli {
    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Migration number limit.
    #[arg(long, global = true)]
    mnl: Option<usize>,
    /// `xcore:X`, `mem:B`, inline JSON or a JSON file.
    #[arg(long, global = true)]
    objective: Option<String>,
    /// Per-solve latency budget in seconds.
    #[arg(long, global = true)]
    budget_secs: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic mappings.
    Generate(GenerateArgs),
    /// Check mapping files, and optionally a plan against one mapping.
    Validate(ValidateArgs),
    /// Run one algorithm on one mapping.
    Solve(SolveArgs),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Greedy, best-of-k and tuned best-of-k results of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Benchmark algorithms over mappings and migration limits.
    Bench(BenchArgs),
    /// Step-by-step view of a plan.
    Timeline(TimelineArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Default,
    Toy,
    Medium,
    MultiResource,
}

impl Preset {
    fn config(self) -> GeneratorConfig {
        match self {
            Preset::Default => GeneratorConfig::default(),
            Preset::Toy => GeneratorConfig::toy(),
            Preset::Medium => GeneratorConfig::medium(),
            Preset::MultiResource => GeneratorConfig::multi_resource(),
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator preset; ignored when the run configuration has a generator.
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(required = true)]
    mappings: Vec<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
}

/// Overrides for the parameters embedded in algorithm names.
#[derive(Args, Debug)]
struct AlgoFlags {
    /// VMs lifted per vbpp stage.
    #[arg(long)]
    alpha: Option<usize>,
    /// MCTS simulations per step.
    #[arg(long)]
    budget: Option<usize>,
    /// POP subproblem count.
    #[arg(long)]
    partitions: Option<usize>,
    /// Exact and POP time limit in seconds; defaults to --budget-secs.
    #[arg(long)]
    time_limit: Option<f64>,
    /// How POP shares the migration limit between subproblems.
    #[arg(long, value_enum, default_value = "even")]
    mnl_split: Split,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Even,
    Proportional,
}

impl AlgoFlags {
    fn params(&self) -> AlgoParams {
        AlgoParams { alpha: self.alpha, budget: self.budget, partitions: self.partitions }
    }

    fn algorithm(&self, name: &str) -> Result<Algorithm, BenchError> {
        name.parse::<Algorithm>()?.with_params(&self.params())
    }

    fn apply(&self, ctx: &mut SolveContext) -> Result<(), BenchError> {
        if let Some(t) = self.time_limit {
            if !(t.is_finite() && t > 0.0) {
                return Err(BenchError::Config("--time-limit must be a positive number of seconds".into()));
            }
            ctx.time_limit = Some(Duration::from_secs_f64(t));
        }
        ctx.split = match self.mnl_split {
            Split::Even => MnlSplit::Even,
            Split::Proportional => MnlSplit::Proportional,
        };
        Ok(())
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    mapping: PathBuf,
    #[arg(long, visible_alias = "algo", default_value = "ha")]
    algorithm: String,
    #[command(flatten)]
    params: AlgoFlags,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the plan as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail with exit code 3 when over budget.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training mappings (files or directories); generated when absent.
    #[arg(long)]
    train: Vec<PathBuf>,
    #[arg(long)]
    validation: Vec<PathBuf>,
    /// Preset used to generate mappings when none are given.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    #[arg(long, default_value_t = 400)]
    train_count: usize,
    #[arg(long, default_value_t = 20)]
    validation_count: usize,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    time_limit_secs: Option<f64>,
    /// Best checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Trainer state file; resumed from when it exists, rewritten at the end.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(required = true)]
    mappings: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Validation mappings for quantile tuning.
    #[arg(long)]
    tune: Vec<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(required = true)]
    mappings: Vec<PathBuf>,
    /// Comma-separated algorithm names.
    #[arg(long, visible_alias = "algo", value_delimiter = ',', default_value = "ha,random")]
    algorithms: Vec<String>,
    #[command(flatten)]
    params: AlgoFlags,
    /// Comma-separated migration limits; defaults to --mnl.
    #[arg(long, value_delimiter = ',')]
    mnls: Vec<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Run cells one at a time for interference-free timing.
    #[arg(long)]
    serial: bool,
    /// Abort with exit code 3 on the first cell over budget.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct TimelineArgs {
    mapping: PathBuf,
    /// Plan JSON; computed with --algorithm when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, visible_alias = "algo", default_value = "ha")]
    algorithm: String,
    #[command(flatten)]
    params: AlgoFlags,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Aligned text output; printed to stdout when absent.
    #[arg(long)]
    text: Option<PathBuf>,
}

struct Globals {
    run: RunConfig,
}

impl Globals {
    fn from(cli: &Cli) -> Result<Self, BenchError> {
        let mut run = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            run.seed = s;
        }
        if let Some(m) = cli.mnl {
            run.mnl = m;
        }
        if let Some(o) = &cli.objective {
            run.objective = parse_objective(o)?;
        }
        if let Some(b) = cli.budget_secs {
            run.budget_secs = b;
        }
        if !(run.budget_secs.is_finite() && run.budget_secs > 0.0) {
            return Err(BenchError::Config("budget must be a positive number of seconds".into()));
        }
        run.objective.validate()?;
        Ok(Globals { run })
    }

    fn budget(&self) -> Duration {
        Duration::from_secs_f64(self.run.budget_secs)
    }

    fn context(&self, checkpoint: Option<&Path>) -> Result<SolveContext, BenchError> {
        let mut ctx = SolveContext::new(self.run.objective.clone(), self.run.seed, self.budget());
        if let Some(p) = checkpoint {
            ctx.policy = Some(Arc::new(load_checkpoint::<f32>(p)?));
        }
        Ok(ctx)
    }
}

fn f64_of(x: vmr_core::Exact) -> f64 {
    <f64 as Scalar>::from_exact(x)
}

fn read_plan(path: &Path) -> Result<MigrationPlan, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io { path: path.into(), source: e })?;
    Ok(serde_json::from_str(&text)?)
}

fn single_mapping(path: &Path) -> Result<ClusterState, BenchError> {
    Ok(load_mappings(&[path.to_path_buf()])?.remove(0).1)
}

fn generate(g: &Globals, a: &GenerateArgs, from_file: bool) -> Result<(), BenchError> {
    std::fs::create_dir_all(&a.out).map_err(|e| BenchError::Io { path: a.out.clone(), source: e })?;
    let base = if from_file { g.run.generator.clone() } else { a.preset.config() };
    for i in 0..a.count {
        let cfg = GeneratorConfig { seed: g.run.seed + i as u64, ..base.clone() };
        let state = generate_cluster(&cfg)?;
        let path = a.out.join(format!("mapping-{:05}.json", cfg.seed));
        save_mapping(&state, &path)?;
        println!("{}: {} PMs, {} VMs, objective {:.4}", path.display(), state.num_pms(), state.num_vms(), f64_of(g.run.objective.value(&state)));
    }
    Ok(())
}

fn validate(g: &Globals, a: &ValidateArgs) -> Result<(), BenchError> {
    let mut failures = Vec::new();
    let mut loaded = Vec::new();
    for p in &a.mappings {
        match load_mappings(std::slice::from_ref(p)) {
            Ok(ms) => {
                for (name, m) in ms {
                    println!("ok  {name}: {} PMs, {} VMs", m.num_pms(), m.num_vms());
                    loaded.push(m);
                }
            }
            Err(e) => {
                println!("bad {}: {e}", p.display());
                failures.push(e.to_string());
            }
        }
    }
    if let Some(plan_path) = &a.plan {
        if loaded.len() != 1 {
            return Err(BenchError::Config("--plan needs exactly one mapping".into()));
        }
        let plan = read_plan(plan_path)?;
        if plan.distinct_vms() > g.run.mnl {
            failures.push(format!("plan moves {} VMs, over the limit {}", plan.distinct_vms(), g.run.mnl));
        }
        match rollout_plan(&loaded[0], &plan, &g.run.objective) {
            Ok(r) => println!("plan ok: {} steps, objective {:.4}", plan.len(), f64_of(r.final_objective)),
            Err(e) => failures.push(format!("plan: {e}")),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(BenchError::Validation(failures.join("; ")))
    }
}

fn solve_cmd(g: &Globals, a: &SolveArgs) -> Result<(), BenchError> {
    let algorithm = a.params.algorithm(&a.algorithm)?;
    let mapping = single_mapping(&a.mapping)?;
    let mut ctx = g.context(a.checkpoint.as_deref())?;
    a.params.apply(&mut ctx)?;
    let start = Instant::now();
    let sol = solve(&algorithm, &mapping, g.run.mnl, &ctx)?;
    let wall = start.elapsed();
    let replay = rollout_plan(&mapping, &sol.plan, &g.run.objective)?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&sol.plan)?).map_err(|e| BenchError::Io { path: out.clone(), source: e })?;
    }
    let met = wall <= g.budget();
    println!(
        "{algorithm}: objective {:.4} -> {:.4} ({}) with {} migrations in {:.3}s, budget {}",
        f64_of(g.run.objective.value(&mapping)),
        f64_of(replay.final_objective),
        replay.final_objective,
        sol.plan.len(),
        wall.as_secs_f64(),
        if met { "met" } else { "exceeded" }
    );
    if sol.infeasible {
        return Err(BenchError::Infeasible(format!("{algorithm} could not order its assignment into legal migrations")));
    }
    if a.strict && !met {
        return Err(BenchError::Budget {
            algorithm: algorithm.to_string(),
            mapping: a.mapping.display().to_string(),
            mnl: g.run.mnl,
            secs: wall.as_secs_f64(),
            budget: g.run.budget_secs,
        });
    }
    Ok(())
}

fn mappings_or_generated(paths: &[PathBuf], preset: Preset, count: usize, seed: u64) -> Result<Vec<ClusterState>, BenchError> {
    if !paths.is_empty() {
        return Ok(load_mappings(paths)?.into_iter().map(|(_, m)| m).collect());
    }
    (0..count)
        .map(|i| Ok(generate_cluster(&GeneratorConfig { seed: seed + i as u64, ..preset.config() })?))
        .collect()
}

fn train_cmd(g: &Globals, a: &TrainArgs) -> Result<(), BenchError> {
    let mut cfg = g.run.train.clone();
    cfg.mnl = g.run.mnl;
    cfg.objective = g.run.objective.clone();
    cfg.seed = g.run.seed;
    if let Some(u) = a.updates {
        cfg.updates = u;
    }
    if let Some(t) = a.time_limit_secs {
        cfg.time_limit = Some(Duration::from_secs_f64(t));
    }
    cfg.checkpoint = Some(a.out.clone());
    cfg.curves = a.curves.clone();
    let train = mappings_or_generated(&a.train, a.preset, a.train_count, 1_000_000 + g.run.seed * 10_000)?;
    let validation = mappings_or_generated(&a.validation, a.preset, a.validation_count, 2_000_000 + g.run.seed * 10_000)?;
    let data = TrainData::single(train, validation);
    let trainer = match &a.state {
        Some(p) if p.exists() => {
            let t = Trainer::<f32>::load(p)?;
            println!("resuming from update {}", t.update);
            t
        }
        _ => Trainer::new(&cfg, &data),
    };
    let report = train_from(trainer, &cfg, &data)?;
    if let Some(p) = &a.state {
        report.trainer.save(p)?;
    }
    save_checkpoint(&report.best, &a.out)?;
    println!(
        "{} updates, stop {:?}, best validation objective {:.4}, checkpoint {}",
        report.trainer.update,
        report.stop,
        report.best_validation,
        a.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalSummary {
    mappings: usize,
    greedy: f64,
    k: usize,
    best_of_k: f64,
    tuned_quantiles: Option<(f64, f64)>,
    tuned_best_of_k: Option<f64>,
}

fn mean_best_of_k(net: &Policy, maps: &[ClusterState], g: &Globals, k: usize, q: (f64, f64)) -> Result<f64, BenchError> {
    let mut total = 0.0;
    for (i, m) in maps.iter().enumerate() {
        total += f64_of(best_of_k(m, net, g.run.mnl, &g.run.objective, k, q, g.run.seed + i as u64)?.objective);
    }
    Ok(total / maps.len().max(1) as f64)
}

fn evaluate_cmd(g: &Globals, a: &EvaluateArgs) -> Result<(), BenchError> {
    let net: Policy = load_checkpoint(&a.checkpoint)?;
    let maps: Vec<ClusterState> = load_mappings(&a.mappings)?.into_iter().map(|(_, m)| m).collect();
    let greedy = evaluate_greedy(&net, &maps, g.run.mnl, &g.run.objective)?;
    let bok = mean_best_of_k(&net, &maps, g, a.k, (0.0, 0.0))?;
    let (mut tq, mut tb) = (None, None);
    if !a.tune.is_empty() {
        let val: Vec<ClusterState> = load_mappings(&a.tune)?.into_iter().map(|(_, m)| m).collect();
        let (pair, _) = tune_quantiles(&net, &val, g.run.mnl, &g.run.objective, &default_grid(), a.k, g.run.seed)?;
        tq = Some(pair);
        tb = Some(mean_best_of_k(&net, &maps, g, a.k, pair)?);
    }
    let summary = EvalSummary {
        mappings: maps.len(),
        greedy,
        k: a.k,
        best_of_k: bok,
        tuned_quantiles: tq,
        tuned_best_of_k: tb,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&summary)?).map_err(|e| BenchError::Io { path: p.clone(), source: e })?;
    }
    Ok(())
}

fn bench_cmd(g: &Globals, a: &BenchArgs) -> Result<(), BenchError> {
    let algorithms: Vec<Algorithm> = a.algorithms.iter().map(|s| a.params.algorithm(s)).collect::<Result<_, _>>()?;
    let mappings = load_mappings(&a.mappings)?;
    let cfg = BenchConfig {
        algorithms,
        mnls: if a.mnls.is_empty() { vec![g.run.mnl] } else { a.mnls.clone() },
        budget: g.budget(),
        serial: a.serial,
        strict: a.strict,
    };
    let mut ctx = g.context(a.checkpoint.as_deref())?;
    a.params.apply(&mut ctx)?;
    let report = run_bench(&mappings, &cfg, &ctx)?;
    if let Some(p) = &a.csv {
        report.write_csv(p)?;
    }
    if let Some(p) = &a.json {
        report.write_json(p)?;
    }
    println!("{:<20} {:>5} {:>8} {:>12} {:>10} {:>10} {:>8}", "algorithm", "mnl", "mappings", "objective", "mean s", "max s", "in budget");
    for s in &report.summary {
        println!(
            "{:<20} {:>5} {:>8} {:>12.4} {:>10.4} {:>10.4} {:>8}",
            s.algorithm, s.mnl, s.mappings, s.mean_final_objective, s.mean_wall_secs, s.max_wall_secs, s.budget_met
        );
    }
    Ok(())
}

fn timeline_cmd(g: &Globals, a: &TimelineArgs) -> Result<(), BenchError> {
    let mapping = single_mapping(&a.mapping)?;
    let plan = match &a.plan {
        Some(p) => read_plan(p)?,
        None => {
            let mut ctx = g.context(a.checkpoint.as_deref())?;
            a.params.apply(&mut ctx)?;
            solve(&a.params.algorithm(&a.algorithm)?, &mapping, g.run.mnl, &ctx)?.plan
        }
    };
    let rows = emit_timeline(&mapping, &plan, &g.run.objective)?;
    if let Some(p) = &a.csv {
        write_timeline_csv(&rows, p)?;
    }
    let text = timeline_text(&rows);
    match &a.text {
        Some(p) => std::fs::write(p, text).map_err(|e| BenchError::Io { path: p.clone(), source: e })?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), BenchError> {
    let g = Globals::from(cli)?;
    match &cli.command {
        Command::Generate(a) => generate(&g, a, cli.config.is_some()),
        Command::Validate(a) => validate(&g, a),
        Command::Solve(a) => solve_cmd(&g, a),
        Command::Train(a) => train_cmd(&g, a),
        Command::Evaluate(a) => evaluate_cmd(&g, a),
        Command::Bench(a) => bench_cmd(&g, a),
        Command::Timeline(a) => timeline_cmd(&g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
