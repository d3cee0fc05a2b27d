use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use shadowgnn::grammar::roundtrip;
use shadowgnn::harness::{
    self, data, diagnose_abstraction, evaluate, load_dataset, subsample, synthetic, write_grid_csv, Model,
    ModelPredictor, OraclePredictor, RunConfig,
};
use shadowgnn::schema::{load_tables, SchemaGraph};

#[derive(Parser)]
#[command(name = "shadowgnn", version, about = "Schema-abstracting text-to-SQL parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small overfit settings instead of the defaults.
    #[arg(long)]
    overfit: bool,
    /// Config override, `key=value` (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let base = match (&self.config, self.overfit) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, true) => RunConfig::overfit(),
            (None, false) => RunConfig::default(),
        };
        let config = base.with_overrides(&self.overrides)?;
        if config.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build_global()
                .context("configuring worker threads")?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint and the loss log.
    Train(Common),
    /// Evaluate a checkpoint (or the gold actions) on the dev corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Score the gold action sequences instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Round-trip SQL lines from stdin through the grammar.
    Transpile {
        #[command(flatten)]
        common: Common,
        /// Database for every line; otherwise lines are `db_id<TAB>sql`.
        #[arg(long)]
        db: Option<String>,
    },
    /// Cosine grid between the abstracted representations of two questions.
    DiagnoseAbstraction {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: String,
        #[arg(long)]
        first: String,
        #[arg(long)]
        second: String,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a reproducible random subset of the training file.
    Subsample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(common) => train(&common.load()?),
        Command::Eval { common, oracle } => eval(&common.load()?, oracle),
        Command::Transpile { common, db } => transpile(&common.load()?, db.as_deref()),
        Command::DiagnoseAbstraction {
            common,
            db,
            first,
            second,
            output,
        } => diagnose(&common.load()?, &db, &first, &second, output.as_deref()),
        Command::Subsample {
            common,
            fraction,
            seed,
            output,
        } => subsample_cmd(&common.load()?, fraction, seed, &output),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(config: &RunConfig) -> Result<ExitCode> {
    let data = load_dataset(config)?;
    let (model, report) = harness::train(config, &data)?;
    model.save(&config.checkpoint)?;
    write_json(&config.run_dir.join("loss_log.json"), &report.losses)?;
    write_json(&config.run_dir.join("train_report.json"), &report)?;
    write_json(&config.run_dir.join("config.json"), config)?;
    let summary = json!({
        "checkpoint": config.checkpoint,
        "steps": report.losses.len(),
        "epochs": report.epochs.len(),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss(),
        "best_exact_match": report.best_exact_match,
        "best_epoch": report.best_epoch,
        "stop": report.stop,
        "skipped": report.skipped,
        "elapsed_secs": report.elapsed_secs,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn eval(config: &RunConfig, oracle: bool) -> Result<ExitCode> {
    let data = load_dataset(config)?;
    let examples = if config.eval_on_train || data.dev.is_empty() {
        &data.train
    } else {
        &data.dev
    };
    let report = if oracle {
        let vocab = data::build_vocab(&data, config.hash_buckets);
        let prepared = data::prepare_all(examples, &data, &vocab)?;
        evaluate(&prepared, &data.schemas, &OraclePredictor, config.value_sensitive)?
    } else {
        let model = Model::load(config, &config.checkpoint)?;
        let prepared = data::prepare_all(examples, &data, &model.vocab)?;
        evaluate(&prepared, &data.schemas, &ModelPredictor(&model), config.value_sensitive)?
    };
    write_json(&config.run_dir.join("eval_report.json"), &report)?;
    let summary = json!({
        "total": report.total,
        "exact_match": report.exact_match,
        "recover_rate": report.recover_rate,
        "by_hardness": report.by_hardness,
        "components": report.components,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn schemas(config: &RunConfig) -> Result<HashMap<String, SchemaGraph>> {
    let graphs = match &config.tables {
        Some(p) => load_tables(p)?,
        None => synthetic::bundled_schemas(),
    };
    Ok(graphs.into_iter().map(|g| (g.db_id.clone(), g)).collect())
}

fn transpile(config: &RunConfig, db: Option<&str>) -> Result<ExitCode> {
    let graphs = schemas(config)?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    let mut failed = false;
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line.context("reading stdin")?;
        if line.trim().is_empty() {
            continue;
        }
        let (db_id, sql) = match db {
            Some(d) => (d, line.as_str()),
            None => match line.split_once('\t') {
                Some((d, s)) => (d, s),
                None => {
                    failed = true;
                    eprintln!("{}", json!({"line": i + 1, "error": "expected db_id<TAB>sql"}));
                    continue;
                }
            },
        };
        let result = match graphs.get(db_id) {
            Some(g) => roundtrip(sql, g).map(|(out, _)| out).map_err(|e| e.to_string()),
            None => Err(format!("unknown database {db_id}")),
        };
        match result {
            Ok(out) => writeln!(stdout, "{out}")?,
            Err(e) => {
                failed = true;
                eprintln!("{}", json!({"line": i + 1, "sql": sql, "error": e}));
            }
        }
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn diagnose(config: &RunConfig, db: &str, first: &str, second: &str, output: Option<&Path>) -> Result<ExitCode> {
    let graphs = schemas(config)?;
    let Some(graph) = graphs.get(db) else {
        bail!("unknown database {db}");
    };
    let model = Model::load(config, &config.checkpoint)?;
    let grid = diagnose_abstraction(&model, graph, first, second)?;
    match output {
        Some(p) => {
            let file = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_grid_csv(&grid, file)?;
        }
        None => write_grid_csv(&grid, std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn subsample_cmd(config: &RunConfig, fraction: f64, seed: u64, output: &Path) -> Result<ExitCode> {
    let Some(train) = &config.train else {
        bail!("`train` must name the examples file to subsample");
    };
    let text = std::fs::read_to_string(train).with_context(|| format!("reading {}", train.display()))?;
    let records: Vec<Value> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", train.display()))?;
    let subset = subsample(&records, fraction, seed)?;
    write_json(output, &subset)?;
    println!(
        "{}",
        json!({"input": records.len(), "output": subset.len(), "fraction": fraction, "seed": seed, "path": output})
    );
    Ok(ExitCode::SUCCESS)
}
