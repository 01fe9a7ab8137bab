use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use metastress::bench::{
    adaptation_sweep, emit_report, grid_search, init_ablation, stress_test, train, transfer_experiment, GridSpec,
    Report, ResultTable, RunConfig, RunRecord, Workspace,
};
use metastress::metalearners::{evaluate, Checkpoint, MetaModel, Strategy};
use metastress::tasks::{derive_seed, sample_episode};
use metastress::Error;

#[derive(Parser)]
#[command(name = "metastress", version, about = "Stress-testing meta-learning strategies on few-shot tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    query: Option<usize>,
    /// Adaptation steps at meta-test time (defaults to the trained inner steps).
    #[arg(long)]
    steps: Option<usize>,
    /// Meta-training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// `synthetic` or a directory of class subdirectories holding PNG files.
    #[arg(long)]
    data: Option<String>,
}

#[derive(Args)]
struct GridArgs {
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 30)]
    configs: usize,
    /// Iterations per sampled configuration.
    #[arg(long, default_value_t = 5000)]
    budget: usize,
    /// JSON grid spec; overrides --configs and --budget.
    #[arg(long)]
    grid_spec: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one strategy and evaluate it on meta-test.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on meta-test tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of meta-test tasks (defaults to the config's eval_tasks).
        #[arg(long)]
        tasks: Option<usize>,
        /// Write the evaluated episodes to this JSON file.
        #[arg(long)]
        dump_episodes: Option<PathBuf>,
    },
    /// Random search over hyperparameters for one strategy.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Accuracy against the number of classes per task.
    Stress {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
        ways_list: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        /// Grid-search each strategy separately at every way count.
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        grid_args: GridArgs,
    },
    /// Train at one shot count, test at another.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        shots_list: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
    },
    /// Accuracy against the number of adaptation steps at meta-test time.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10,20")]
        steps_list: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
    },
    /// Swap learned initialisations and update rules.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Learning rate of the Adam update rule.
        #[arg(long, default_value_t = 0.01)]
        adam_lr: f64,
    },
    /// Rewrite CSV and charts from an existing results.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Invalid(_)
            | Error::Json(_)
            | Error::NotEnoughClasses { .. }
            | Error::NotEnoughInstances { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        return report_failure(f);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    match f {
        Failure::Config(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Failure::Run(msg) => {
            eprintln!("run failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("METASTRESS_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("METASTRESS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Run(e.to_string()))
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_json_file(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.strategy {
        cfg = cfg.for_strategy(s);
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.ways {
        cfg.ways = v;
    }
    if let Some(v) = c.shots {
        cfg.shots = v;
    }
    if let Some(v) = c.query {
        cfg.query = v;
    }
    if let Some(v) = c.steps {
        cfg.test_steps = Some(v);
    }
    if let Some(v) = c.iters {
        cfg.max_iters = v;
    }
    if let Some(v) = &c.data {
        cfg.data = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid_spec(g: &GridArgs) -> CliResult<GridSpec> {
    let spec = match &g.grid_spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => GridSpec { num_configs: g.configs, budget_iters: g.budget, ..GridSpec::default() },
    };
    spec.validate()?;
    Ok(spec)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

/// Timings vary run to run, so they live outside results.json.
fn write_timings(out: &Path, timings: &[(String, f64)]) -> CliResult<()> {
    let map: serde_json::Map<String, serde_json::Value> =
        timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    write_json(&out.join("timings.json"), &serde_json::Value::Object(map))
}

fn finish(report: &Report, out: &Path) -> CliResult<()> {
    emit_report(report, out)?;
    for r in &report.runs {
        println!("{} {}: {}", r.config.strategy, r.config.setting_label(), summarize(r));
    }
    for t in &report.tables {
        for row in &t.rows {
            if row.failed {
                println!("[{}] {} {}: failed", t.name, row.strategy, row.setting);
            } else {
                println!("[{}] {} {}: {:.4} ± {:.4}", t.name, row.strategy, row.setting, row.mean, row.ci);
            }
        }
    }
    println!("wrote {}", out.join("results.json").display());
    Ok(())
}

fn summarize(r: &RunRecord) -> String {
    if r.failed() {
        format!("failed ({:?})", r.status)
    } else {
        format!("{:.4} ± {:.4} (95%), ± {:.4} (99.9%)", r.test.mean, r.test.ci95, r.test.ci999)
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let ws = Workspace::load(&cfg)?;
            let out = train(&cfg, &ws, Some(&common.out.join("checkpoints")))?;
            let mut report = Report::new("train");
            let mut curve = ResultTable::new("training_curve", "iteration", 0.0);
            for p in &out.record.curve {
                curve.push(cfg.strategy.as_str(), format!("iter={}", p.iteration), p.iteration as f64, p.val_accuracy, 0.0);
            }
            let mut test = ResultTable::new("meta_test", "ways", 0.95);
            if !out.record.failed() {
                test.push(cfg.strategy.as_str(), cfg.setting_label(), cfg.ways as f64, out.record.test.mean, out.record.test.ci95);
            }
            report.tables = vec![curve, test];
            let failed = out.record.failed();
            report.runs.push(out.record);
            finish(&report, &common.out)?;
            write_timings(&common.out, &[(cfg.strategy.to_string(), out.wall_seconds)])?;
            if failed {
                return Err(Failure::Run("meta-training diverged".into()));
            }
            Ok(())
        }
        Command::Eval { common, checkpoint, tasks, dump_episodes } => {
            let mut cfg = load_config(&common)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            cfg = cfg.for_strategy(ckpt.model.strategy());
            if let MetaModel::Taml(t) = &ckpt.model {
                cfg.lambda = Some(t.lambda);
            }
            if let Some(n) = tasks {
                cfg.eval_tasks = n;
            }
            cfg.validate()?;
            let ws = Workspace::load(&cfg)?;
            let spec = ws.learner_spec(&cfg);
            if spec.num_params() != ckpt.model.init_params().len() {
                return Err(Failure::Config(format!(
                    "checkpoint has {} base parameters but the config's learner has {}",
                    ckpt.model.init_params().len(),
                    spec.num_params()
                )));
            }
            let protocol = ws.test_protocol(&spec, &cfg);
            let result = evaluate(&ckpt.model, &protocol, cfg.adapt_steps())?;
            if let Some(path) = dump_episodes {
                let eps = (0..protocol.num_tasks as u64)
                    .map(|i| {
                        sample_episode(&ws.pool, &ws.split, protocol.part, protocol.n, protocol.k, protocol.q, derive_seed(protocol.seed, i))
                            .map(|e| e.to_dump_json())
                    })
                    .collect::<metastress::Result<Vec<_>>>()?;
                write_json(&path, &serde_json::Value::Array(eps))?;
            }
            let mut table = ResultTable::new("eval", "ways", 0.95);
            table.push(cfg.strategy.as_str(), cfg.setting_label(), cfg.ways as f64, result.mean, result.ci95);
            let mut t999 = ResultTable::new("eval_999", "ways", 0.999);
            t999.push(cfg.strategy.as_str(), cfg.setting_label(), cfg.ways as f64, result.mean, result.ci999);
            let report = Report { experiment: "eval".into(), tables: vec![table, t999], runs: Vec::new() };
            finish(&report, &common.out)?;
            write_json(
                &common.out.join("eval.json"),
                &json!({ "checkpoint_config_hash": ckpt.config_hash, "config": cfg, "result": result }),
            )
        }
        Command::Gridsearch { common, grid } => {
            let cfg = load_config(&common)?;
            let spec = grid_spec(&grid)?;
            let ws = Workspace::load(&cfg)?;
            let res = grid_search(&cfg, &ws, &spec, cfg.seed)?;
            let mut table = ResultTable::new("gridsearch", "candidate", 0.0);
            for (i, r) in res.runs.iter().enumerate() {
                if r.failed() {
                    table.push_failed(cfg.strategy.as_str(), format!("candidate {i}"), i as f64);
                } else {
                    table.push(cfg.strategy.as_str(), format!("candidate {i}"), i as f64, r.best_val_accuracy.unwrap_or(0.0), 0.0);
                }
            }
            let report = Report { experiment: "gridsearch".into(), tables: vec![table], runs: res.runs.clone() };
            finish(&report, &common.out)?;
            write_json(&common.out.join("best_config.json"), &serde_json::to_value(&res.best_config).map_err(Error::from)?)?;
            println!("best candidate {} written to {}", res.best_index, common.out.join("best_config.json").display());
            Ok(())
        }
        Command::Stress { common, ways_list, strategies, grid, grid_args } => {
            let cfg = load_config(&common)?;
            let ws = Workspace::load(&cfg)?;
            let strategies = strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
            let report = if grid {
                let spec = grid_spec(&grid_args)?;
                let mut table = ResultTable::new("stress_test", "ways", 0.999);
                let mut runs = Vec::new();
                for &n in &ways_list {
                    for &s in &strategies {
                        let base = RunConfig { ways: n, ..cfg.for_strategy(s) };
                        let best = grid_search(&base, &ws, &spec, derive_seed(cfg.seed, n as u64))?.best_config;
                        let (t, r) = stress_test(&best, &ws, &[s], &[n])?;
                        table.rows.extend(t.rows);
                        runs.extend(r);
                    }
                }
                Report { experiment: "stress".into(), tables: vec![table], runs }
            } else {
                let (table, runs) = stress_test(&cfg, &ws, &strategies, &ways_list)?;
                Report { experiment: "stress".into(), tables: vec![table], runs }
            };
            finish(&report, &common.out)
        }
        Command::Transfer { common, shots_list, strategies } => {
            let cfg = load_config(&common)?;
            let ws = Workspace::load(&cfg)?;
            let strategies = strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
            let (table, runs) = transfer_experiment(&cfg, &ws, &strategies, &shots_list)?;
            finish(&Report { experiment: "transfer".into(), tables: vec![table], runs }, &common.out)
        }
        Command::Sweep { common, steps_list, strategies } => {
            let cfg = load_config(&common)?;
            let ws = Workspace::load(&cfg)?;
            let strategies = strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
            let (models, runs) = train_all(&cfg, &ws, &strategies, &common.out)?;
            let table = adaptation_sweep(&models, &ws, &cfg, &steps_list)?;
            finish(&Report { experiment: "sweep".into(), tables: vec![table], runs }, &common.out)
        }
        Command::Ablate { common, adam_lr } => {
            let mut cfg = load_config(&common)?;
            if common.shots.is_none() && common.config.is_none() {
                cfg.shots = 5;
            }
            let ws = Workspace::load(&cfg)?;
            let strategies = [Strategy::Maml, Strategy::MetaLstm, Strategy::MetaLstmPlusPlus];
            let (models, runs) = train_all(&cfg, &ws, &strategies, &common.out)?;
            let table = init_ablation(&models, &ws, &cfg, cfg.test_steps.unwrap_or(cfg.inner_steps), adam_lr)?;
            finish(&Report { experiment: "ablate".into(), tables: vec![table], runs }, &common.out)
        }
        Command::Report { input, out } => {
            let report = Report::load(&input)?;
            finish(&report, &out)
        }
    }
}

/// Trains each strategy, checkpointing under `out/checkpoints`; any
/// divergence fails the whole command.
fn train_all(
    cfg: &RunConfig,
    ws: &Workspace,
    strategies: &[Strategy],
    out: &Path,
) -> CliResult<(Vec<MetaModel>, Vec<RunRecord>)> {
    let mut models = Vec::new();
    let mut runs = Vec::new();
    for &s in strategies {
        let o = train(&cfg.for_strategy(s), ws, Some(&out.join("checkpoints")))?;
        if o.record.failed() {
            return Err(Failure::Run(format!("{s} diverged: {:?}", o.record.status)));
        }
        models.push(o.model);
        runs.push(o.record);
    }
    Ok((models, runs))
}
