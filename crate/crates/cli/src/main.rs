use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use morbdd::bdd::{compile_exact_with_budget, compile_restricted_width, DEFAULT_NODE_BUDGET};
use morbdd::features::{instance_rows, read_dataset, write_dataset};
use morbdd::instance::{derive_seed, generate_instance, read_instance, write_instance, Instance};
use morbdd::metrics::{
    aggregate, aggregate_csv, aggregate_table, evaluate_run, select_tau, tau_sweep, EvalReport, HvMethod,
    DEFAULT_TAU_GRID,
};
use morbdd::oracle::brute_force_frontier;
use morbdd::pareto::{enumerate_frontier, keepset_from_counts, pareto_node_fraction, pareto_path_counts};
use morbdd::sparsifier::{grid_search, train, GbdtParams, LogisticParams, TrainParams};
use morbdd::stitch::{deploy, deploy_many, run_exact, run_restricted, DeployOptions, RunOutput, Stitcher};
use morbdd::{Row, Sparsifier};

const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Parser)]
#[command(name = "morbdd", version, about = "Exact and learned-sparsified decision diagrams for multiobjective knapsack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances into <out>/<K>_<N>/{train,valid,test}/
    Generate(GenerateArgs),
    /// Compile a diagram and write its text dump
    Compile(CompileArgs),
    /// Compute a frontier with the exact, width-restricted or learned method
    Frontier(FrontierArgs),
    /// Brute-force frontier over all item subsets (at most 20 items)
    Oracle(OracleArgs),
    /// Mark the Pareto nodes of an instance's exact diagram
    Label(LabelArgs),
    /// Build a balanced training dataset from one split
    Dataset(DatasetArgs),
    /// Train a node classifier
    Train(TrainArgs),
    /// Compare methods on a split and print the aggregate table
    Evaluate(EvaluateArgs),
    /// Sweep the learned method's threshold on a split and pick one
    Tune(TuneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Size {
    k: usize,
    n: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (k, n) = s
            .trim_matches(|c| c == '(' || c == ')')
            .split_once(',')
            .ok_or_else(|| format!("expected K,N, got {s:?}"))?;
        let k: usize = k.trim().parse().map_err(|_| format!("bad K in {s:?}"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad N in {s:?}"))?;
        if k == 0 || n == 0 {
            return Err("K and N must be positive".into());
        }
        Ok(Size { k, n })
    }
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.k, self.n)
    }
}

impl Serialize for Size {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{},{}", self.k, self.n))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Counts {
    train: usize,
    valid: usize,
    test: usize,
}

impl FromStr for Counts {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad count in {s:?}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [train, valid, test] => Ok(Counts { train, valid, test }),
            _ => Err(format!("expected TRAIN,VALID,TEST, got {s:?}")),
        }
    }
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    /// Instance size as K,N; repeatable
    #[arg(long = "size", required = true)]
    sizes: Vec<Size>,
    /// Instances per split as TRAIN,VALID,TEST
    #[arg(long, default_value = "100,20,20")]
    counts: Counts,
    /// Use 1000,100,100 instances per split
    #[arg(long)]
    paper: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "MORBDD_DATA_DIR", default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompileArgs {
    instance: PathBuf,
    /// Restrict layer widths to BETA percent of the exact maximum width
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    budget_nodes: usize,
    /// Dump file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Exact,
    Rbdd,
    Morbdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StitcherArg {
    Mip,
    Mr,
    None,
}

fn stitcher_of(arg: StitcherArg, alpha: usize) -> Result<Stitcher> {
    Ok(match arg {
        StitcherArg::Mip => Stitcher::Mip,
        StitcherArg::None => Stitcher::None,
        StitcherArg::Mr => {
            if alpha == 0 {
                bail!(morbdd::Error::Validation("--alpha must be at least 1".into()));
            }
            Stitcher::MinResistance(alpha)
        }
    })
}

#[derive(Args, Serialize)]
struct FrontierArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    method: Method,
    /// Width percentage for rbdd
    #[arg(long, default_value_t = 60)]
    beta: u32,
    /// Trained model for morbdd
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value = "mr")]
    stitcher: StitcherArg,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    budget_nodes: usize,
    /// Output directory for frontier.csv and report.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    instance: PathBuf,
    /// Frontier CSV; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LabelArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    budget_nodes: usize,
    /// Per-node CSV; only the summary is printed when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DatasetArgs {
    #[arg(long, env = "MORBDD_DATA_DIR", default_value = "data")]
    data: PathBuf,
    #[arg(long)]
    size: Size,
    #[arg(long, default_value = "train")]
    split: String,
    /// Only use the first LIMIT instances
    #[arg(long)]
    limit: Option<usize>,
    /// Seed of the negative undersampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Family {
    Gbdt,
    Logistic,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gbdt")]
    family: Family,
    #[arg(long, default_value_t = 200)]
    rounds: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Search depth {4,6,8} x rounds {100,200,400} on validation loss
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long, env = "MORBDD_DATA_DIR", default_value = "data")]
    data: PathBuf,
    #[arg(long)]
    size: Size,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    limit: Option<usize>,
    /// Trained model; the learned method is skipped when absent
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value = "mr")]
    stitcher: StitcherArg,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    /// Width-restricted baselines to include; repeatable
    #[arg(long)]
    beta: Vec<u32>,
    /// Seed for Monte Carlo hypervolume (used beyond three objectives)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TuneArgs {
    #[arg(long, env = "MORBDD_DATA_DIR", default_value = "data")]
    data: PathBuf,
    #[arg(long)]
    size: Size,
    #[arg(long, default_value = "valid")]
    split: String,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    model: PathBuf,
    /// Thresholds to try, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAU_GRID)]
    taus: Vec<f64>,
    /// Required mean cardinality recovery on the swept split, in percent
    #[arg(long, default_value_t = 50.0)]
    min_card: f64,
    #[arg(long, value_enum, default_value = "mr")]
    stitcher: StitcherArg,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory for sweep.csv and selected.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    params: &'a T,
}

fn write_config<T: Serialize>(path: &Path, command: &'static str, params: &T) -> Result<()> {
    let cfg = RunConfig {
        tool: "morbdd",
        version: env!("CARGO_PKG_VERSION"),
        command,
        params,
    };
    write_file(path, &(serde_json::to_string_pretty(&cfg)? + "\n"))
}

/// `<file>.config.json` next to a file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| morbdd::Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| morbdd::Error::io(path, e))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| morbdd::Error::io(path, e))?;
    Ok(())
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")
}

/// Instance files of one split, ordered by index.
fn split_instances(data: &Path, size: Size, split: &str, limit: Option<usize>) -> Result<Vec<(u64, PathBuf)>> {
    if !SPLITS.contains(&split) {
        bail!(morbdd::Error::Validation(format!(
            "unknown split {split:?}, expected one of {SPLITS:?}"
        )));
    }
    let dir = data.join(size.to_string()).join(split);
    let entries = fs::read_dir(&dir).map_err(|e| morbdd::Error::io(&dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| morbdd::Error::io(&dir, e))?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("inst_"))
            .and_then(|n| n.strip_suffix(".txt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(i) = index {
            found.push((i, path));
        }
    }
    found.sort();
    if let Some(l) = limit {
        found.truncate(l);
    }
    if found.is_empty() {
        bail!(morbdd::Error::Validation(format!(
            "no inst_<i>.txt files in {}",
            dir.display()
        )));
    }
    Ok(found)
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    size: Size,
    split: &'static str,
    index: usize,
    seed: u64,
    hash: String,
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let counts = if args.paper {
        Counts {
            train: 1000,
            valid: 100,
            test: 100,
        }
    } else {
        args.counts
    };
    let mut entries = Vec::new();
    for size in &args.sizes {
        for (split_idx, (split, count)) in SPLITS
            .iter()
            .zip([counts.train, counts.valid, counts.test])
            .enumerate()
        {
            let dir = args.out.join(size.to_string()).join(split);
            create_dir(&dir)?;
            for i in 0..count {
                let seed = derive_seed(args.seed, &[size.k as u64, size.n as u64, split_idx as u64, i as u64]);
                let inst = generate_instance(size.k, size.n, seed);
                let rel = PathBuf::from(size.to_string())
                    .join(split)
                    .join(format!("inst_{i}.txt"));
                write_instance(&inst, args.out.join(&rel))?;
                entries.push(ManifestEntry {
                    path: rel.to_string_lossy().into_owned(),
                    size: *size,
                    split,
                    index: i,
                    seed,
                    hash: inst.content_hash(),
                });
            }
        }
    }
    let manifest = serde_json::json!({
        "seed": args.seed,
        "counts": counts,
        "instances": entries,
    });
    write_file(
        &args.out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    write_config(&args.out.join("run_config.json"), "generate", args)?;
    println!("wrote {} instances under {}", entries.len(), args.out.display());
    Ok(())
}

fn load(path: &Path) -> Result<Instance> {
    Ok(read_instance(path)?)
}

fn cmd_compile(args: &CompileArgs) -> Result<()> {
    let inst = load(&args.instance)?;
    let bdd = match args.beta {
        Some(beta) => compile_restricted_width(&inst, beta)?,
        None => compile_exact_with_budget(&inst, args.budget_nodes)?,
    };
    let stats = bdd.stats();
    match &args.out {
        Some(out) => {
            write_file(out, &bdd.to_dump())?;
            write_config(&sidecar(out), "compile", args)?;
        }
        None => print!("{}", bdd.to_dump()),
    }
    eprintln!(
        "nodes {} arcs {} max width {}",
        stats.node_count,
        bdd.arc_count(),
        stats.max_width
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Sparsifier> {
    Ok(Sparsifier::load(path)?)
}

fn cmd_frontier(args: &FrontierArgs) -> Result<()> {
    let inst = load(&args.instance)?;
    let run = match args.method {
        Method::Exact => run_exact(&inst, args.budget_nodes)?,
        Method::Rbdd => run_restricted(&inst, args.beta)?,
        Method::Morbdd => {
            let path = args.model.as_ref().ok_or_else(|| {
                morbdd::Error::Validation("--model is required for the morbdd method".into())
            })?;
            let model = load_model(path)?;
            let opts = DeployOptions {
                stitcher: stitcher_of(args.stitcher, args.alpha)?,
                node_budget: args.budget_nodes,
            };
            deploy(&inst, &model, args.tau, &opts)?
        }
    };
    create_dir(&args.out)?;
    run.frontier.write_csv(
        args.out.join("frontier.csv"),
        inst.num_objectives(),
        inst.num_items(),
    )?;
    write_file(&args.out.join("report.json"), &(run.report.to_json() + "\n"))?;
    write_config(&args.out.join("run_config.json"), "frontier", args)?;
    println!("{}", run.report.to_json());
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let inst = load(&args.instance)?;
    let frontier = brute_force_frontier(&inst)?;
    let csv = frontier.to_csv(inst.num_objectives(), inst.num_items());
    match &args.out {
        Some(out) => {
            write_file(out, &csv)?;
            write_config(&sidecar(out), "oracle", args)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_label(args: &LabelArgs) -> Result<()> {
    let inst = load(&args.instance)?;
    let bdd = compile_exact_with_budget(&inst, args.budget_nodes)?;
    let (frontier, labels) = enumerate_frontier(&bdd)?;
    let counts = pareto_path_counts(&bdd, &labels, &frontier)?;
    let marks = keepset_from_counts(&bdd, &counts);
    if let Some(out) = &args.out {
        let mut csv = String::from("node_id,layer,state,pareto,path_count\n");
        for id in bdd.node_ids() {
            let node = bdd.node(id);
            let _ = writeln!(
                csv,
                "{id},{},{},{},{}",
                node.layer,
                node.state,
                marks.contains(id) as u8,
                counts[id as usize]
            );
        }
        write_file(out, &csv)?;
        write_config(&sidecar(out), "label", args)?;
    }
    println!(
        "pareto nodes {} of {} ({:.2}% of interior), frontier size {}",
        marks.len(),
        bdd.node_count(),
        100.0 * pareto_node_fraction(&bdd, &marks),
        frontier.len()
    );
    Ok(())
}

fn cmd_dataset(args: &DatasetArgs) -> Result<()> {
    let files = split_instances(&args.data, args.size, &args.split, args.limit)?;
    let pool = thread_pool(args.workers)?;
    let per_instance: Vec<Vec<Row>> = pool.install(|| {
        files
            .par_iter()
            .map(|(id, path)| -> Result<Vec<Row>> {
                let inst = load(path)?;
                let rows = instance_rows(&inst, *id, args.seed)?;
                log::info!("{}: {} rows", path.display(), rows.len());
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<Row> = per_instance.into_iter().flatten().collect();
    let positives = rows.iter().filter(|r| r.label == 1).count();
    write_dataset(&rows, &args.out)?;
    write_config(&sidecar(&args.out), "dataset", args)?;
    println!(
        "{} rows ({} positive, {} negative) from {} instances",
        rows.len(),
        positives,
        rows.len() - positives,
        files.len()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let rows: Vec<Row> = read_dataset(&args.train)?;
    let valid: Vec<Row> = match &args.valid {
        Some(p) => read_dataset(p)?,
        None => Vec::new(),
    };
    let (model, report, params) = if args.grid {
        if args.family != Family::Gbdt {
            bail!(morbdd::Error::Validation("--grid applies to the gbdt family".into()));
        }
        let grid: Vec<TrainParams> = GbdtParams::default_grid()
            .into_iter()
            .map(TrainParams::Gbdt)
            .collect();
        let (model, report, best) = grid_search(&rows, &valid, &grid, args.seed)?;
        (model, report, grid[best].clone())
    } else {
        let params = match args.family {
            Family::Gbdt => TrainParams::Gbdt(GbdtParams {
                rounds: args.rounds,
                max_depth: args.depth,
                learning_rate: args.learning_rate,
                ..GbdtParams::default()
            }),
            Family::Logistic => TrainParams::Logistic(LogisticParams::default()),
        };
        let (model, report) = train(&rows, &valid, &params, args.seed)?;
        (model, report, params)
    };
    model.save(&args.out)?;
    let summary = serde_json::json!({
        "params": format!("{params:?}"),
        "train_rows": rows.len(),
        "valid_rows": valid.len(),
        "train_loss": report.train_loss,
        "train_accuracy": report.train_accuracy,
        "valid_loss": report.valid_loss,
        "valid_accuracy": report.valid_accuracy,
    });
    let mut report_path = args.out.clone().into_os_string();
    report_path.push(".report.json");
    write_file(
        Path::new(&report_path),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    write_config(&sidecar(&args.out), "train", args)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

struct InstanceEval {
    index: u64,
    num_objectives: usize,
    runs: Vec<(RunOutput, EvalReport)>,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let files = split_instances(&args.data, args.size, &args.split, args.limit)?;
    let model = args.model.as_deref().map(load_model).transpose()?;
    let opts = DeployOptions {
        stitcher: stitcher_of(args.stitcher, args.alpha)?,
        ..DeployOptions::default()
    };
    let hv = HvMethod::Auto { seed: args.seed };
    let pool = thread_pool(args.workers)?;
    let evals: Vec<InstanceEval> = pool.install(|| {
        files
            .par_iter()
            .map(|(index, path)| -> Result<InstanceEval> {
                let inst = load(path)?;
                let reference = vec![0.0; inst.num_objectives()];
                let exact = run_exact(&inst, DEFAULT_NODE_BUDGET)?;
                let mut runs = Vec::new();
                if let Some(m) = &model {
                    runs.push(deploy(&inst, m, args.tau, &opts)?);
                }
                for &beta in &args.beta {
                    runs.push(run_restricted(&inst, beta)?);
                }
                let mut out = vec![(exact.clone(), evaluate_run(&exact, &exact, &reference, hv)?)];
                for run in runs {
                    let e = evaluate_run(&exact, &run, &reference, hv)?;
                    out.push((run, e));
                }
                log::info!("{}: done", path.display());
                Ok(InstanceEval {
                    index: *index,
                    num_objectives: inst.num_objectives(),
                    runs: out,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    create_dir(&args.out)?;
    let size_label = format!("({},{})", args.size.k, args.size.n);
    let mut rows = Vec::new();
    let mut per_run = String::from(
        "instance,method,inc,rnc,comp,time_ms,stitch_iterations,frontier_size,connected,inc_pct,rnc_pct,comp_pct,cardinality_pct,hv_norm\n",
    );
    for ev in &evals {
        for (run, e) in &ev.runs {
            let r = &run.report;
            let _ = writeln!(
                per_run,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                ev.index,
                r.method,
                r.inc,
                r.rnc,
                r.comp,
                r.time_ms,
                r.stitch_iterations,
                r.frontier_size,
                r.connected,
                e.inc_pct,
                e.rnc_pct,
                e.comp_pct,
                e.cardinality_pct,
                e.hv_norm
            );
            let dir = args.out.join("frontiers").join(&r.method);
            create_dir(&dir)?;
            run.frontier.write_csv(
                dir.join(format!("inst_{}.csv", ev.index)),
                ev.num_objectives,
                args.size.n,
            )?;
            rows.push((size_label.clone(), e.clone()));
        }
    }
    let agg = aggregate(&rows);
    let table = aggregate_table(&agg);
    write_file(&args.out.join("runs.csv"), &per_run)?;
    write_file(&args.out.join("table.txt"), &table)?;
    write_file(&args.out.join("table.csv"), &aggregate_csv(&agg))?;
    write_config(&args.out.join("run_config.json"), "evaluate", args)?;
    print!("{table}");
    Ok(())
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    if args.taus.is_empty() || args.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
        bail!(morbdd::Error::Validation("thresholds must lie in [0, 1]".into()));
    }
    let files = split_instances(&args.data, args.size, &args.split, args.limit)?;
    let model = load_model(&args.model)?;
    let opts = DeployOptions {
        stitcher: stitcher_of(args.stitcher, args.alpha)?,
        ..DeployOptions::default()
    };
    let hv = HvMethod::Auto { seed: args.seed };
    let pool = thread_pool(args.workers)?;
    let per_instance: Vec<Vec<EvalReport>> = pool.install(|| {
        files
            .par_iter()
            .map(|(_, path)| -> Result<Vec<EvalReport>> {
                let inst = load(path)?;
                let reference = vec![0.0; inst.num_objectives()];
                let exact = run_exact(&inst, DEFAULT_NODE_BUDGET)?;
                let runs = deploy_many(&inst, &model, &args.taus, &opts)?;
                let evals = runs
                    .iter()
                    .map(|run| evaluate_run(&exact, run, &reference, hv))
                    .collect::<morbdd::Result<Vec<_>>>()?;
                log::info!("{}: done", path.display());
                Ok(evals)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let by_tau: Vec<Vec<EvalReport>> = (0..args.taus.len())
        .map(|t| per_instance.iter().map(|evals| evals[t].clone()).collect())
        .collect();
    let rows = tau_sweep(&args.taus, &by_tau)?;
    let selected = select_tau(&rows, args.min_card);

    create_dir(&args.out)?;
    let mut csv = String::from("tau,instances,cardinality_pct,comp_pct,rnc_pct,hv_norm\n");
    let mut table = String::from("   tau  Card. (%)  Comp. (%)  RNC (%)     HV\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.tau, r.instances, r.cardinality_pct, r.comp_pct, r.rnc_pct, r.hv_norm
        );
        let _ = writeln!(
            table,
            "{:>6.2}  {:>9.1}  {:>9.1}  {:>7.1}  {:>5.3}",
            r.tau, r.cardinality_pct, r.comp_pct, r.rnc_pct, r.hv_norm
        );
    }
    write_file(&args.out.join("sweep.csv"), &csv)?;
    let chosen = serde_json::json!({ "tau": selected, "min_card": args.min_card });
    write_file(
        &args.out.join("selected.json"),
        &serde_json::to_string_pretty(&chosen)?,
    )?;
    write_config(&args.out.join("run_config.json"), "tune", args)?;
    print!("{table}");
    if let Some(t) = selected {
        println!("selected tau: {t}");
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<morbdd::Error>() {
            return match e {
                morbdd::Error::Parse { .. }
                | morbdd::Error::Validation(_)
                | morbdd::Error::Version { .. }
                | morbdd::Error::Unsupported(_)
                | morbdd::Error::Contract(_) => 2,
                morbdd::Error::Resource(_) => 3,
                morbdd::Error::Io { .. } => 4,
                morbdd::Error::Training(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Compile(a) => cmd_compile(a),
        Command::Frontier(a) => cmd_frontier(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Label(a) => cmd_label(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tune(a) => cmd_tune(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
