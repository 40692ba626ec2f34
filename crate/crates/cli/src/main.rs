use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tensor_rnn::config::RunConfig;
use tensor_rnn::data::{load_dataset, PianoRollDataset, Split};
use tensor_rnn::metrics::{emit_table, evaluate, plot_csv, ConstantModel, Evaluation};
use tensor_rnn::model::{GruModel, ModelSpec};
use tensor_rnn::train::{search, SearchReport, TrainConfig};
use tensor_rnn::{Error, Kind, Result};

/// Environment variable that overrides the output directory of the config file.
const OUT_ENV: &str = "TENSOR_RNN_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "tensor-rnn",
    version,
    about = "Train and audit tensor-factorized GRUs on piano-roll data"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration. Flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dataset JSON file.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// dense | cp | tucker | tt
    #[arg(long, global = true)]
    model_kind: Option<Kind>,

    /// Comma-separated rank specification, e.g. `30` or `1,5,5,1`.
    #[arg(long, global = true, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default `runs`, or $TENSOR_RNN_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    input_size: Option<usize>,

    #[arg(long, global = true)]
    hidden_size: Option<usize>,

    #[arg(long, global = true, value_delimiter = ',')]
    m_dims: Option<Vec<usize>>,

    #[arg(long, global = true, value_delimiter = ',')]
    n_dims: Option<Vec<usize>>,

    #[arg(long, global = true, value_delimiter = ',')]
    lr: Option<Vec<f64>>,

    #[arg(long, global = true, value_delimiter = ',')]
    dropout: Option<Vec<f64>>,

    #[arg(long, global = true)]
    max_epochs: Option<usize>,

    /// Use only the first N training sequences.
    #[arg(long, global = true)]
    train_limit: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Grid-search one model configuration and save the selected model and its report.
    Train,
    /// Run `train` for every entry of the config's rank grid and write a result table.
    Gridsearch,
    /// Score a saved model on one split.
    Eval {
        /// Model JSON written by `train`.
        #[arg(long, conflicts_with = "constant", required_unless_present = "constant")]
        model: Option<PathBuf>,
        /// Score a model that predicts this probability for every note instead.
        #[arg(long)]
        constant: Option<f64>,
        /// train | valid | test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the parameter audit of the configured model.
    Params,
    /// Collect `report.json` files under a directory into NLL-vs-parameter CSVs.
    Plotdata {
        /// Directory to scan (default: the output directory).
        #[arg(long)]
        reports: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Range { .. } => 1,
        Error::Data { .. } | Error::Io { .. } | Error::Serde(_) => 2,
        Error::Numerical(_) => 3,
    }
}

/// Input 256, hidden 512 with (8,4,4,4)/(4,4,4,4) modes, used when no config file is given.
fn default_config() -> RunConfig {
    RunConfig {
        dataset: None,
        out_dir: PathBuf::from("runs"),
        train_limit: None,
        rank_grid: Vec::new(),
        model: ModelSpec {
            kind: Kind::Dense,
            input_size: 256,
            hidden_size: 512,
            m_dims: vec![8, 4, 4, 4],
            n_dims: vec![4, 4, 4, 4],
            ranks: Vec::new(),
            leaky_slope: 0.01,
        },
        train: TrainConfig::default(),
    }
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => default_config(),
    };
    if let Ok(dir) = std::env::var(OUT_ENV) {
        cfg.out_dir = dir.into();
    }
    if let Some(v) = &c.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &c.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = c.model_kind {
        cfg.model.kind = v;
        if c.ranks.is_none() && v == Kind::Dense {
            cfg.model.ranks.clear();
        }
    }
    if let Some(v) = &c.ranks {
        cfg.model.ranks = v.clone();
        cfg.rank_grid.clear();
    }
    if let Some(v) = c.input_size {
        cfg.model.input_size = v;
    }
    if let Some(v) = c.hidden_size {
        cfg.model.hidden_size = v;
    }
    if let Some(v) = &c.m_dims {
        cfg.model.m_dims = v.clone();
    }
    if let Some(v) = &c.n_dims {
        cfg.model.n_dims = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = &c.lr {
        cfg.train.learning_rates = v.clone();
    }
    if let Some(v) = &c.dropout {
        cfg.train.dropouts = v.clone();
    }
    if let Some(v) = c.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = c.train_limit {
        cfg.train_limit = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dataset(cfg: &RunConfig) -> Result<PianoRollDataset> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (use --dataset or `dataset` in the config)".into()))?;
    let mut data = load_dataset(path)?;
    if let Some(n) = cfg.train_limit {
        data.truncate_train(n);
    }
    Ok(data)
}

fn train_one(spec: &ModelSpec, data: &PianoRollDataset, cfg: &RunConfig, dir: &Path) -> Result<SearchReport> {
    info!("training {} ranks {:?} into {}", spec.kind, spec.ranks, dir.display());
    let (model, report) = search(spec, data, &cfg.train)?;
    write(&dir.join("model.json"), &model.to_json()?)?;
    write(&dir.join("report.json"), &report.to_json()?)?;
    write(&dir.join("report.csv"), &report.to_csv()?)?;
    let resolved = RunConfig {
        model: spec.clone(),
        rank_grid: Vec::new(),
        ..cfg.clone()
    };
    write(&dir.join("config.toml"), &resolved.to_toml_string()?)?;
    let w = report.winner();
    println!(
        "{} {}: params {}  lr {}  dropout {}  valid NLL {:.4}  test NLL {:.4}  test ACC {:.4}",
        report.model_kind,
        report.rank_config,
        report.param_count,
        w.lr,
        w.dropout,
        w.valid_nll.unwrap_or(f64::NAN),
        w.test_nll.unwrap_or(f64::NAN),
        w.test_acc.unwrap_or(f64::NAN),
    );
    Ok(report)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg)?;
    train_one(&cfg.model, &data, cfg, &cfg.out_dir)?;
    Ok(())
}

fn cmd_gridsearch(cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg)?;
    let mut winners = Vec::new();
    for spec in cfg.grid_specs() {
        let label = tensor_rnn::train::rank_label(&spec);
        let dir = cfg.out_dir.join(format!("{}-{label}", spec.kind));
        winners.push(train_one(&spec, &data, cfg, &dir)?.winner().clone());
    }
    let (csv, json) = emit_table(&winners)?;
    write(&cfg.out_dir.join("table.csv"), &csv)?;
    write(&cfg.out_dir.join("table.json"), &json)?;
    print!("{csv}");
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, model: Option<&Path>, constant: Option<f64>, split: &str) -> Result<()> {
    let split: Split = split.parse()?;
    let data = dataset(cfg)?;
    let seqs = data.split(split);
    let (label, ev): (String, Evaluation) = match (model, constant) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Data {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
            let m = GruModel::from_json(&text).map_err(|e| Error::Data {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
            (path.display().to_string(), evaluate(&m, seqs)?)
        }
        (None, Some(p)) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("--constant must be in [0, 1], got {p}")));
            }
            (format!("constant:{p}"), evaluate(&ConstantModel(p), seqs)?)
        }
        (None, None) => return Err(Error::Config("give --model or --constant".into())),
    };
    let doc = serde_json::json!({
        "model": label,
        "dataset": data.name,
        "split": split.as_str(),
        "nll": ev.nll,
        "acc": ev.acc,
        "timesteps": ev.timesteps,
    });
    write(
        &cfg.out_dir.join(format!("eval_{split}.json")),
        &serde_json::to_string_pretty(&doc)?,
    )?;
    println!(
        "{split}: NLL {:.4}  ACC {:.4}  ({} timesteps)",
        ev.nll, ev.acc, ev.timesteps
    );
    Ok(())
}

fn cmd_params(cfg: &RunConfig) -> Result<()> {
    let model = GruModel::init(&cfg.model, cfg.train.seed)?;
    let audit = model.audit();
    println!(
        "{:<8} {:<7} {:>11} {:<18} {:>10} {:>6}",
        "operator", "kind", "shape", "ranks", "weights", "bias"
    );
    for op in &audit.operators {
        println!(
            "{:<8} {:<7} {:>11} {:<18} {:>10} {:>6}",
            op.name,
            op.kind,
            format!("{}x{}", op.rows, op.cols),
            format!("{:?}", op.ranks),
            op.weights,
            op.bias
        );
    }
    println!("GRU weights (no bias):     {}", audit.cell_weights);
    println!("GRU total (with biases):   {}", audit.cell_total);
    println!("dense GRU total:           {}", audit.dense_cell_total);
    println!("compression ratio:         {:.2}", audit.compression_ratio);
    println!("model total (with in/out): {}", audit.model_total);
    write(&cfg.out_dir.join("params.json"), &serde_json::to_string_pretty(&audit)?)?;
    Ok(())
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn cmd_plotdata(cfg: &RunConfig, reports: Option<&Path>) -> Result<()> {
    let dir = reports.unwrap_or(&cfg.out_dir);
    let mut files = Vec::new();
    find_reports(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::Data {
            path: dir.to_path_buf(),
            msg: "no report.json files found".into(),
        });
    }
    let mut by_dataset: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        let report = SearchReport::from_json(&text).map_err(|e| Error::Data {
            path: f.clone(),
            msg: e.to_string(),
        })?;
        by_dataset
            .entry(report.dataset.clone())
            .or_default()
            .push(report.winner().clone());
    }
    for (name, rows) in &by_dataset {
        let path = cfg.out_dir.join(format!("plot_{name}.csv"));
        write(&path, &plot_csv(rows)?)?;
        println!("{}: {} points", path.display(), rows.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    match &cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Gridsearch => cmd_gridsearch(&cfg),
        Command::Eval { model, constant, split } => cmd_eval(&cfg, model.as_deref(), *constant, split),
        Command::Params => cmd_params(&cfg),
        Command::Plotdata { reports } => cmd_plotdata(&cfg, reports.as_deref()),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
