use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tensor_rnn::config::RunConfig;
use tensor_rnn::data::load_dataset;
use tensor_rnn::metrics::evaluate;
use tensor_rnn::model::{GruModel, ModelSpec};
use tensor_rnn::train::SearchReport;
use tensor_rnn::Kind;

fn jsb_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/jsb_chorales.json")
}

fn cli(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tensor-rnn"));
    cmd.args(args).env_remove("TENSOR_RNN_OUT").env("RUST_LOG", "off");
    cmd
}

fn run(args: &[&str]) -> Output {
    cli(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Operator audit rows by name from `params.json`.
fn audit_rows(dir: &Path) -> Vec<(String, u64, u64)> {
    read_json(&dir.join("params.json"))["operators"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            (
                o["name"].as_str().unwrap().to_string(),
                o["weights"].as_u64().unwrap(),
                o["bias"].as_u64().unwrap(),
            )
        })
        .collect()
}

/// Scalars per operator in a saved model file, counted from the JSON arrays.
fn stored_scalars(model_json: &str) -> Vec<(String, u64, u64)> {
    let doc: Value = serde_json::from_str(model_json).unwrap();
    doc["operators"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(name, op)| {
            let weights = op["arrays"]
                .as_array()
                .unwrap()
                .iter()
                .map(|a| a.as_array().unwrap().len() as u64)
                .sum();
            let bias = op["bias"].as_array().map_or(0, |b| b.len() as u64);
            (name.clone(), weights, bias)
        })
        .collect()
}

#[test]
fn params_of_the_large_dense_gru() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["params", "--out", s(dir.path())]);
    assert!(stdout.contains("GRU total (with biases):   1181184"), "{stdout}");
    let audit = read_json(&dir.path().join("params.json"));
    assert_eq!(audit["cell_total"], 1_181_184);
    assert_eq!(audit["dense_cell_total"], 1_181_184);
    assert_eq!(audit["compression_ratio"], 1.0);
}

#[test]
fn params_of_compressed_input_operators() {
    for (kind, ranks, want) in [("cp", "10", 360), ("tt", "1,3,3,3,1", 432)] {
        let dir = TempDir::new().unwrap();
        ok(&["params", "--model-kind", kind, "--ranks", ranks, "--out", s(dir.path())]);
        let rows = audit_rows(dir.path());
        for name in ["xr", "xz", "xh"] {
            let row = rows.iter().find(|r| r.0 == name).unwrap();
            assert_eq!((row.1, row.2), (want, 512), "{kind} {name}");
        }
    }
}

#[test]
fn params_totals_match_the_serialized_operators() {
    for (kind, ranks) in [
        (Kind::Dense, vec![]),
        (Kind::Cp, vec![10]),
        (Kind::Tucker, vec![2, 3, 2, 2]),
        (Kind::Tt, vec![1, 3, 3, 3, 1]),
    ] {
        let dir = TempDir::new().unwrap();
        let mut args = vec![
            "params",
            "--model-kind",
            kind.as_str(),
            "--seed",
            "4",
            "--out",
            s(dir.path()),
        ];
        let ranks_arg = ranks.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        if !ranks.is_empty() {
            args.extend(["--ranks", &ranks_arg]);
        }
        ok(&args);
        let audit = read_json(&dir.path().join("params.json"));
        let spec = ModelSpec {
            kind,
            input_size: 256,
            hidden_size: 512,
            m_dims: vec![8, 4, 4, 4],
            n_dims: vec![4, 4, 4, 4],
            ranks,
            leaky_slope: 0.01,
        };
        let stored = stored_scalars(&GruModel::init(&spec, 4).unwrap().to_json().unwrap());
        let mut printed = audit_rows(dir.path());
        let mut stored_sorted = stored.clone();
        printed.sort();
        stored_sorted.sort();
        assert_eq!(printed, stored_sorted, "{kind}");
        let cell: u64 = stored
            .iter()
            .filter(|r| r.0 != "input" && r.0 != "output")
            .map(|r| r.1 + r.2)
            .sum();
        let all: u64 = stored.iter().map(|r| r.1 + r.2).sum();
        assert_eq!(audit["cell_total"].as_u64(), Some(cell), "{kind}");
        assert_eq!(audit["model_total"].as_u64(), Some(all), "{kind}");
    }
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["params", "--m-dims", "4,4,4,4", "--out", out])), 1);
    assert_eq!(
        code(&run(&[
            "params",
            "--model-kind",
            "tt",
            "--ranks",
            "2,3,3,3,1",
            "--out",
            out
        ])),
        1
    );
    assert_eq!(code(&run(&["params", "--model-kind", "wavelet"])), 1);
    assert_eq!(code(&run(&["train", "--out", out])), 1, "no dataset");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nkind = \"cp\"\nunknown = 1\n").unwrap();
    assert_eq!(code(&run(&["params", "--config", s(&bad)])), 1);
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&["params", "--config", s(&missing)])), 1);
    let jsb = jsb_path();
    assert_eq!(
        code(&run(&[
            "eval",
            "--dataset",
            s(&jsb),
            "--constant",
            "0.5",
            "--split",
            "holdout",
            "--out",
            out
        ])),
        1
    );
    assert_eq!(
        code(&run(&["eval", "--dataset", s(&jsb), "--constant", "0.5", "--split"])),
        1
    );
    assert_eq!(
        code(&run(&["eval", "--dataset", s(&jsb), "--constant", "1.5", "--out", out])),
        1
    );
    assert_eq!(
        code(&run(&["eval", "--dataset", s(&jsb)])),
        1,
        "needs --model or --constant"
    );
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = s(dir.path());
    let missing = dir.path().join("none.json");
    assert_eq!(
        code(&run(&[
            "eval",
            "--dataset",
            s(&missing),
            "--constant",
            "0.5",
            "--out",
            out
        ])),
        2
    );
    let corrupt = dir.path().join("model.json");
    fs::write(&corrupt, "{\"spec\": 3}").unwrap();
    let jsb = jsb_path();
    assert_eq!(
        code(&run(&[
            "eval",
            "--dataset",
            s(&jsb),
            "--model",
            s(&corrupt),
            "--out",
            out
        ])),
        2
    );
    assert_eq!(code(&run(&["plotdata", "--out", out])), 2, "no reports");
}

#[test]
fn constant_half_scores_88_ln2() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&[
        "eval",
        "--dataset",
        s(&jsb_path()),
        "--constant",
        "0.5",
        "--out",
        s(dir.path()),
    ]);
    assert!(stdout.starts_with("test: NLL 60.9970  ACC 0.0000"), "{stdout}");
    let doc = read_json(&dir.path().join("eval_test.json"));
    assert!((doc["nll"].as_f64().unwrap() - 88.0 * 2f64.ln()).abs() < 1e-9);
    assert_eq!(doc["acc"], 0.0);
    assert_eq!(doc["split"], "test");
}

const SMALL: [&str; 10] = [
    "--model-kind",
    "tt",
    "--ranks",
    "1,3,1",
    "--input-size",
    "16",
    "--hidden-size",
    "16",
    "--m-dims",
    "4,4",
];

fn small_train(out: &Path, seed: &str) {
    let jsb = jsb_path();
    let mut args = vec!["train", "--dataset", s(&jsb), "--n-dims", "4,4", "--train-limit", "12"];
    args.extend(SMALL);
    args.extend([
        "--lr",
        "0.01,0.005",
        "--dropout",
        "0.2",
        "--max-epochs",
        "2",
        "--seed",
        seed,
        "--out",
        s(out),
    ]);
    ok(&args);
}

#[test]
fn training_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    small_train(&a, "3");
    small_train(&b, "3");
    small_train(&c, "4");
    for file in ["report.json", "report.csv", "model.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let config = |dir: &Path| RunConfig {
        out_dir: PathBuf::new(),
        ..RunConfig::load(dir.join("config.toml")).unwrap()
    };
    assert_eq!(config(&a), config(&b), "configs differ only in out_dir");
    assert_ne!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(c.join("model.json")).unwrap()
    );
    let report = SearchReport::from_json(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows.iter().filter(|r| r.test_nll.is_some()).count(), 1);
    assert!(report.rows.iter().all(|r| r.wall_time_s.is_none()));
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    small_train(&first, "9");
    let text = fs::read_to_string(first.join("config.toml")).unwrap();
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg.to_toml_string().unwrap(), text);
    assert_eq!(
        (cfg.train.seed, cfg.train_limit, cfg.model.kind),
        (9, Some(12), Kind::Tt)
    );
    assert_eq!(cfg.out_dir, first);

    let again = dir.path().join("again");
    let config = first.join("config.toml");
    ok(&["train", "--config", s(&config), "--out", s(&again)]);
    assert_eq!(
        fs::read(first.join("model.json")).unwrap(),
        fs::read(again.join("model.json")).unwrap()
    );
}

#[test]
fn output_directory_comes_from_flag_then_env_then_config() {
    let dir = TempDir::new().unwrap();
    let (from_cfg, from_env, from_flag) = (dir.path().join("cfg"), dir.path().join("env"), dir.path().join("flag"));
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "out_dir = {:?}\n[model]\nkind = \"cp\"\ninput_size = 16\nhidden_size = 16\nm_dims = [4, 4]\nn_dims = [4, 4]\nranks = [3]\n",
            s(&from_cfg)
        ),
    )
    .unwrap();
    ok(&["params", "--config", s(&config)]);
    assert!(from_cfg.join("params.json").exists());

    let out = cli(&["params", "--config", s(&config)])
        .env("TENSOR_RNN_OUT", &from_env)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(from_env.join("params.json").exists());

    let out = cli(&["params", "--config", s(&config), "--out", s(&from_flag), "--ranks", "5"])
        .env("TENSOR_RNN_OUT", &from_env)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let rows = audit_rows(&from_flag);
    assert_eq!(
        rows.iter().find(|r| r.0 == "xr").unwrap().1,
        5 * 16,
        "flag overrides the config ranks"
    );
}

#[test]
fn dense_training_lowers_the_train_nll() {
    let dir = TempDir::new().unwrap();
    let jsb = jsb_path();
    ok(&[
        "train",
        "--dataset",
        s(&jsb),
        "--train-limit",
        "10",
        "--model-kind",
        "dense",
        "--input-size",
        "32",
        "--hidden-size",
        "32",
        "--m-dims",
        "32",
        "--n-dims",
        "32",
        "--lr",
        "0.005",
        "--dropout",
        "0.2",
        "--max-epochs",
        "50",
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    let report = SearchReport::from_json(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let mut data = load_dataset(&jsb).unwrap();
    data.truncate_train(10);
    let spec = ModelSpec {
        kind: Kind::Dense,
        input_size: 32,
        hidden_size: 32,
        m_dims: vec![32],
        n_dims: vec![32],
        ranks: vec![],
        leaky_slope: 0.01,
    };
    let initial = evaluate(&GruModel::init(&spec, 1).unwrap(), &data.train).unwrap().nll;
    let trained = report.winner().train_nll.unwrap();
    assert!(trained < initial, "train NLL {trained} vs initial {initial}");
    let model = GruModel::from_json(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(evaluate(&model, &data.train).unwrap().nll, trained);
}

#[test]
fn overfit_model_scores_high_accuracy_on_its_sequence() {
    let dir = TempDir::new().unwrap();
    let seq = load_dataset(jsb_path()).unwrap().train.swap_remove(0);
    let splits = serde_json::json!({"name": "one", "splits": {"train": [seq], "valid": [seq], "test": [seq]}});
    let one = dir.path().join("one.json");
    fs::write(&one, splits.to_string()).unwrap();
    ok(&[
        "train",
        "--dataset",
        s(&one),
        "--model-kind",
        "dense",
        "--input-size",
        "64",
        "--hidden-size",
        "64",
        "--m-dims",
        "64",
        "--n-dims",
        "64",
        "--lr",
        "0.005",
        "--dropout",
        "0",
        "--max-epochs",
        "1000",
        "--out",
        s(dir.path()),
    ]);
    let model = dir.path().join("model.json");
    ok(&[
        "eval",
        "--dataset",
        s(&one),
        "--model",
        s(&model),
        "--split",
        "train",
        "--out",
        s(dir.path()),
    ]);
    let acc = read_json(&dir.path().join("eval_train.json"))["acc"].as_f64().unwrap();
    assert!(acc > 0.9, "ACC {acc}");
}

#[test]
fn gridsearch_and_plotdata() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("grid.toml");
    fs::write(
        &config,
        format!(
            "dataset = {:?}\nout_dir = {:?}\ntrain_limit = 8\nrank_grid = [[3], [1], [2]]\n\
             [model]\nkind = \"cp\"\ninput_size = 16\nhidden_size = 16\nm_dims = [4, 4]\nn_dims = [4, 4]\nranks = [1]\n\
             [train]\nlearning_rates = [0.01]\ndropouts = [0.2]\nmax_epochs = 1\n",
            s(&jsb_path()),
            s(dir.path())
        ),
    )
    .unwrap();
    ok(&["gridsearch", "--config", s(&config)]);
    let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    for r in ["cp-3", "cp-1", "cp-2"] {
        assert!(dir.path().join(r).join("report.json").exists(), "{r}");
    }
    let table_json = read_json(&dir.path().join("table.json"));
    assert_eq!(table_json.as_array().map(Vec::len), Some(3));

    ok(&["plotdata", "--config", s(&config)]);
    let csv = fs::read_to_string(dir.path().join("plot_jsb_chorales.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let counts: Vec<usize> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{csv}");

    let single = TempDir::new().unwrap();
    fs::create_dir(single.path().join("only")).unwrap();
    fs::copy(
        dir.path().join("cp-2/report.json"),
        single.path().join("only/report.json"),
    )
    .unwrap();
    ok(&["plotdata", "--reports", s(single.path()), "--out", s(single.path())]);
    let csv = fs::read_to_string(single.path().join("plot_jsb_chorales.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
