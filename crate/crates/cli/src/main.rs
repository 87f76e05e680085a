mod io;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pns_core::featurize::featurize;
use pns_core::gnn::{entropy_bound, train, GnnModel, TrainConfig};
use pns_core::harness::{collect, compute_bks, evaluate, perturb_experiment, EvalConfig, Method, PerturbConfig, PerturbScope};
use pns_core::instgen::{write_dataset, Family, GenSpec, DEFAULT_AFFINITY, DEFAULT_CA_BIDS, DEFAULT_CA_ITEMS, DEFAULT_IS_NODES};
use pns_core::search::{restricted_problem, search_with_probs, Formulation, Mode, SearchConfig};
use pns_core::solver::{brute_force, solve_milp, BruteForce, ClockMode, SolveParams, SolveStats, Status};
use pns_core::{write_mps, MilpInstance};

use crate::io::{create, read_instance, read_instances, read_json, stem, write_json, write_text};

#[derive(Parser)]
#[command(name = "pns", version, about = "Predict-and-search for binary MILPs")]
struct Cli {
    /// Seed for every randomized step; overrides the seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// -v for info, -vv for debug logging on stderr.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded instance family as MPS files plus manifest.json.
    Generate(GenerateArgs),
    /// Solve one instance; prints a JSON report.
    Solve(SolveCmd),
    /// Solve instances with a solution pool and write marginal labels.
    Collect(CollectArgs),
    /// Dump the bipartite graph encoding of an instance as JSON.
    Featurize(FeaturizeArgs),
    /// Train the graph network on collected labels.
    Train(TrainArgs),
    /// Predicted marginals of the binaries as CSV.
    Predict(PredictArgs),
    /// Predict, then solve the trust-region (or fixed) restricted problem.
    Search(SearchArgs),
    /// Compare the plain solver with predict-and-search.
    Evaluate(EvaluateArgs),
    /// Flip k binaries of the optimum, fix them all, and count infeasible trials.
    Perturb(PerturbArgs),
    /// Check the solver against exhaustive enumeration.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SolveOpts {
    /// Time limit in seconds on the solve clock.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Time on the wall clock instead of the deterministic work clock.
    #[arg(long)]
    wall_clock: bool,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    node_limit: Option<u64>,
}

impl SolveOpts {
    fn apply(&self, mut p: SolveParams, seed: Option<u64>) -> SolveParams {
        if let Some(t) = self.time_limit {
            p.time_limit = t;
        }
        if self.wall_clock {
            p.clock = ClockMode::Wall;
        }
        if let Some(n) = self.pool_size {
            p.pool_size = n;
        }
        if self.node_limit.is_some() {
            p.node_limit = self.node_limit;
        }
        if let Some(s) = seed {
            p.seed = s;
        }
        p
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    IndependentSet,
    CombinatorialAuction,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "independent-set")]
    family: FamilyArg,
    #[arg(long, default_value_t = DEFAULT_IS_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = DEFAULT_AFFINITY)]
    affinity: usize,
    #[arg(long, default_value_t = DEFAULT_CA_ITEMS)]
    items: usize,
    #[arg(long, default_value_t = DEFAULT_CA_BIDS)]
    bids: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// JSON generator spec; replaces the family flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveCmd {
    instance: PathBuf,
    /// JSON solver parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    solve: SolveOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    /// MPS files or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    solve: SolveOpts,
    /// Receives `<stem>.json` per instance and `collect.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    instance: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// MPS files or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory written by `collect`.
    #[arg(long)]
    labels: PathBuf,
    /// JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Layer-normalize every neighbour sum in the network.
    #[arg(long)]
    aggregate_norm: bool,
    /// Share of instances (the last ones, by file name) held out for validation.
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch losses as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    instance: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Search,
    Fix,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Indicator,
    Compact,
}

#[derive(Args)]
struct SearchArgs {
    instance: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// JSON search config; family defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    formulation: Option<FormulationArg>,
    #[command(flatten)]
    solve: SolveOpts,
    /// Also write the restricted problem as MPS.
    #[arg(long)]
    export_mps: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Solver,
    PsSearch,
    PsFix,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Needed for the predict-and-search methods.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON evaluation config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Vec<MethodArg>,
    #[command(flatten)]
    solve: SolveOpts,
    /// Best known objectives (JSON map, original sense); skips the reference solves.
    #[arg(long)]
    bks: Option<PathBuf>,
    /// Budget of the reference solve per instance; 0 keeps only the best method result.
    #[arg(long, default_value_t = 60.0)]
    bks_time_limit: f64,
    /// Receives records.csv, summary.csv, curves.csv and bks.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
    k: Vec<usize>,
    /// Fix a random `k0,k1` subset of the optimum instead of all binaries.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    partial: Option<Vec<usize>>,
    #[command(flatten)]
    solve: SolveOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    instance: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Generate(a) => generate(a, seed),
        Cmd::Solve(a) => solve(a, seed),
        Cmd::Collect(a) => collect_labels(a, seed),
        Cmd::Featurize(a) => write_json(&featurize(&read_instance(&a.instance)?), a.out.as_deref()),
        Cmd::Train(a) => train_model(a, seed),
        Cmd::Predict(a) => predict(a),
        Cmd::Search(a) => search(a, seed),
        Cmd::Evaluate(a) => evaluate_cmd(a, seed),
        Cmd::Perturb(a) => perturb(a, seed),
        Cmd::Oracle(a) => oracle(a),
    }
}

fn solve_params(config: Option<&Path>, opts: &SolveOpts, seed: Option<u64>) -> Result<SolveParams> {
    let base = match config {
        Some(p) => read_json(p)?,
        None => SolveParams::default(),
    };
    Ok(opts.apply(base, seed))
}

fn generate(a: GenerateArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: GenSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => {
            let family = match a.family {
                FamilyArg::IndependentSet => Family::IndependentSet { nodes: a.nodes, affinity: a.affinity },
                FamilyArg::CombinatorialAuction => Family::CombinatorialAuction { items: a.items, bids: a.bids },
            };
            GenSpec { family, seed: 0, count: a.count }
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = write_dataset(&spec, &a.out)?;
    log::info!("wrote {} instances to {}", manifest.files.len(), a.out.display());
    Ok(())
}

fn solve(a: SolveCmd, seed: Option<u64>) -> Result<()> {
    let inst = read_instance(&a.instance)?;
    let params = solve_params(a.config.as_deref(), &a.solve, seed)?;
    let res = solve_milp(&inst, &params);
    write_json(&res.report(&inst), a.out.as_deref())
}

#[derive(Serialize)]
struct CollectRow {
    file: String,
    instance: String,
    status: Status,
    pool: usize,
    objective: f64,
    pool_digest: String,
}

fn collect_labels(a: CollectArgs, seed: Option<u64>) -> Result<()> {
    let params = solve_params(a.config.as_deref(), &a.solve, seed)?;
    std::fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for (path, inst) in read_instances(&a.inputs)? {
        let (res, label) = collect(&inst, &params, a.temperature)?;
        let file = stem(&path);
        write_json(&label, Some(&a.out.join(format!("{file}.json"))))?;
        rows.push(CollectRow {
            file,
            instance: inst.name.clone(),
            status: res.status,
            pool: res.pool.len(),
            objective: inst.to_original(label.bks_objective),
            pool_digest: label.pool_digest,
        });
    }
    let mut w = csv::Writer::from_writer(create(&a.out.join("collect.csv"))?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn train_model(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if a.aggregate_norm {
        cfg.aggregate_norm = true;
    }
    ensure!((0.0..1.0).contains(&a.valid_fraction), "valid fraction must be in [0, 1)");

    let mut data = Vec::new();
    for (path, inst) in read_instances(&a.inputs)? {
        let label_path = a.labels.join(format!("{}.json", stem(&path)));
        let label: pns_core::labels::LabeledSample =
            read_json(&label_path).with_context(|| format!("labels for {}", path.display()))?;
        ensure!(label.marginals.len() == inst.num_binary(), "{}: label length mismatch", path.display());
        data.push((featurize(&inst), label.marginals));
    }
    let n_valid = ((data.len() as f64) * a.valid_fraction).round() as usize;
    let n_valid = n_valid.min(data.len() - 1);
    let valid = data.split_off(data.len() - n_valid);
    log::info!("training on {} instances, validating on {}", data.len(), valid.len());
    let outcome = train(&data, &valid, &cfg)?;
    let bound: f64 = data.iter().map(|(_, t)| entropy_bound(t)).sum::<f64>() / data.len() as f64;
    log::info!("best epoch {} (loss {:.6}, entropy bound {bound:.6})", outcome.meta.best_epoch, outcome.meta.best_loss);
    outcome.model.save(&a.out, Some(outcome.meta.clone()))?;
    if let Some(h) = &a.history {
        outcome.write_history_csv(create(h)?)?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let inst = read_instance(&a.instance)?;
    let model = GnnModel::load(&a.model)?;
    let probs = model.predict(&featurize(&inst))?;
    let mut text = String::from("index,name,prob\n");
    for (d, p) in probs.iter().enumerate() {
        text.push_str(&format!("{d},{},{p}\n", inst.var_names[d]));
    }
    write_text(&text, a.out.as_deref())
}

#[derive(Serialize)]
struct SearchReport {
    instance: String,
    config: SearchConfig,
    i0: Vec<usize>,
    i1: Vec<usize>,
    status: Status,
    objective: Option<f64>,
    /// Number of selected binaries whose value differs from the prediction.
    deviations: Option<usize>,
    stats: SolveStats,
    solution: Option<Vec<f64>>,
}

fn search_config(inst: &MilpInstance, a: &SearchArgs, seed: Option<u64>) -> Result<SearchConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => {
            let family = inst.metadata.get("family").map(String::as_str).unwrap_or("independent_set");
            SearchConfig::for_family(family, inst.num_binary())?
        }
    };
    if let Some(k0) = a.k0 {
        cfg.k0 = k0;
    }
    if let Some(k1) = a.k1 {
        cfg.k1 = k1;
    }
    if let Some(d) = a.delta {
        cfg.delta = d;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Search => Mode::Search,
            ModeArg::Fix => Mode::Fix,
        };
    }
    if let Some(f) = a.formulation {
        cfg.formulation = match f {
            FormulationArg::Indicator => Formulation::Indicator,
            FormulationArg::Compact => Formulation::Compact,
        };
    }
    cfg.solve = a.solve.apply(cfg.solve, seed);
    cfg.validate(inst.num_binary())?;
    Ok(cfg)
}

fn search(a: SearchArgs, seed: Option<u64>) -> Result<()> {
    let inst = read_instance(&a.instance)?;
    let cfg = search_config(&inst, &a, seed)?;
    let model = GnnModel::load(&a.model)?;
    let probs = model.predict(&featurize(&inst))?;
    let out = search_with_probs(&inst, &probs, &cfg)?;
    if let Some(path) = &a.export_mps {
        let (restricted, _) = restricted_problem(&inst, &out.partial, &cfg);
        write_text(&write_mps(&restricted), Some(path))?;
    }
    let res = out.result;
    let report = SearchReport {
        instance: inst.name.clone(),
        i0: out.partial.i0.clone(),
        i1: out.partial.i1.clone(),
        status: res.status,
        objective: res.objective().map(|o| inst.to_original(o)),
        deviations: res.incumbent.as_ref().map(|s| out.partial.distance(&s.values)),
        stats: res.stats,
        solution: res.incumbent.map(|s| s.values),
        config: cfg,
    };
    write_json(&report, a.out.as_deref())
}

fn evaluate_cmd(a: EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: EvalConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => EvalConfig::new(vec![Method::Solver, Method::PsSearch, Method::PsFix], SolveParams::default().with_time_limit(10.0)),
    };
    if !a.methods.is_empty() {
        cfg.methods = a
            .methods
            .iter()
            .map(|m| match m {
                MethodArg::Solver => Method::Solver,
                MethodArg::PsSearch => Method::PsSearch,
                MethodArg::PsFix => Method::PsFix,
            })
            .collect();
    }
    cfg.solve = a.solve.apply(cfg.solve, seed);
    let instances: Vec<MilpInstance> = read_instances(&a.inputs)?.into_iter().map(|(_, i)| i).collect();
    let model = a.model.as_deref().map(GnnModel::load).transpose()?;

    let bks: BTreeMap<String, f64> = match &a.bks {
        Some(p) => {
            let original: BTreeMap<String, f64> = read_json(p)?;
            instances
                .iter()
                .filter_map(|i| original.get(&i.name).map(|&v| (i.name.clone(), i.from_original(v))))
                .collect()
        }
        None if a.bks_time_limit > 0.0 => compute_bks(&instances, &cfg.solve.clone().with_time_limit(a.bks_time_limit)),
        None => BTreeMap::new(),
    };
    let report = evaluate(&instances, model.as_ref(), &bks, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    report.write_records_csv(create(&a.out.join("records.csv"))?)?;
    report.write_summary_csv(create(&a.out.join("summary.csv"))?)?;
    report.write_curves_csv(create(&a.out.join("curves.csv"))?)?;
    write_json(&report.bks, Some(&a.out.join("bks.json")))?;
    Ok(())
}

fn perturb(a: PerturbArgs, seed: Option<u64>) -> Result<()> {
    let scope = match a.partial.as_deref() {
        None => PerturbScope::All,
        Some([k0, k1]) => PerturbScope::Partial { k0: *k0, k1: *k1 },
        Some(_) => bail!("--partial takes k0,k1"),
    };
    let params = a.solve.apply(SolveParams::default(), seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    for (path, inst) in read_instances(&a.inputs)? {
        let res = solve_milp(&inst, &params);
        ensure!(res.status == Status::Optimal, "{}: not solved to optimality ({:?})", path.display(), res.status);
        let sol = res.incumbent.expect("optimal solve has an incumbent");
        for &k in &a.k {
            let cfg = PerturbConfig { trials: a.trials, k, scope, seed: seed.unwrap_or(0), solve: params.clone() };
            w.serialize(perturb_experiment(&inst, &sol.values, sol.objective, &cfg)?)?;
        }
    }
    let text = String::from_utf8(w.into_inner()?)?;
    write_text(&text, a.out.as_deref())
}

#[derive(Serialize)]
struct OracleReport {
    instance: String,
    brute_force: Option<f64>,
    optimal_assignments: Option<u64>,
    solver_status: Status,
    solver: Option<f64>,
    agree: bool,
}

fn oracle(a: OracleArgs) -> Result<()> {
    let inst = read_instance(&a.instance)?;
    let brute = brute_force(&inst)?;
    let res = solve_milp(&inst, &SolveParams::default());
    let (bf, count) = match brute {
        BruteForce::Optimal { objective, num_optimal, .. } => (Some(objective), Some(num_optimal)),
        BruteForce::Infeasible => (None, None),
    };
    let agree = match (bf, res.objective()) {
        (Some(b), Some(s)) => res.status == Status::Optimal && (b - s).abs() <= 1e-6,
        (None, None) => res.status == Status::Infeasible,
        _ => false,
    };
    let report = OracleReport {
        instance: inst.name.clone(),
        brute_force: bf.map(|v| inst.to_original(v)),
        optimal_assignments: count,
        solver_status: res.status,
        solver: res.objective().map(|v| inst.to_original(v)),
        agree,
    };
    write_json(&report, a.out.as_deref())?;
    ensure!(agree, "solver and enumeration disagree");
    Ok(())
}
