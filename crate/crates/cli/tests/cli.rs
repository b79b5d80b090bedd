use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tcan_core::trainer::{ConfusionMatrix, EpochStats, TrainReport};

const TINY: &str = r#"
seed = 4
[corpus]
n_train = 10
n_test = 5
[model]
channels = 8
attention_reduced_dim = 2
classifier_hidden = 8
dilations = [1, 2]
[train]
epochs = 2
batch_size = 4
"#;

fn tcanlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcanlab"))
        .args(args)
        .env_remove("TCANLAB_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Report text without the wall-clock line.
fn stable_report(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("wall_clock_s"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn gen_data_writes_corpus_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = tcanlab(&["gen-data", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(out.join("clips")).unwrap().count(), 600);
    let first = fs::read(out.join("manifest.tsv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().filter(|l| !l.starts_with('#')).count(), 600);
    let o = tcanlab(&["gen-data", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(out.join("manifest.tsv")).unwrap(), first);
}

#[test]
fn gen_data_rejects_empty_split_before_io() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = tcanlab(&["gen-data", "--out", out.to_str().unwrap(), "--n-train", "0"]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("file");
    fs::write(&file, "x").unwrap();
    let o = tcanlab(&["gen-data", "--out", file.join("sub").to_str().unwrap(), "--n-train", "1", "--n-test", "1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = |name: &str, attention: &str| {
        let out = dir.path().join(name);
        let o = tcanlab(&["train", "--config", &cfg, "--snr", "10", "--attention", attention, "--out", out.to_str().unwrap(), "-q"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", "on");
    let b = run("b", "on");
    for f in ["model.ckpt", "report.txt", "confusion.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert_eq!(stable_report(&a.join("report.txt")), stable_report(&b.join("report.txt")));
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());

    let report = TrainReport::from_text(&fs::read_to_string(a.join("report.txt")).unwrap()).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert_eq!(report.seed, 4);
    assert_eq!(report.labels["attention"], "on");
    assert_eq!(report.confusion.total(), 5);

    let off = run("off", "off");
    let plain = TrainReport::from_text(&fs::read_to_string(off.join("report.txt")).unwrap()).unwrap();
    assert_eq!(plain.labels["attention"], "off");
    let ckpt = tcan_core::model::load_checkpoint(&off.join("model.ckpt")).unwrap();
    assert!(!ckpt.config.attention_enabled);
    assert!(ckpt.params.names().iter().all(|n| !n.contains("attn")));
    let with = tcan_core::model::load_checkpoint(&a.join("model.ckpt")).unwrap();
    assert_eq!(tcan_core::model::TcanConfig { attention_enabled: false, ..with.config }, ckpt.config);
}

#[test]
fn seed_precedence_cli_file_env() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = TINY.replace("seed = 4\n", "");
    let cfg = write_config(dir.path(), &no_seed);
    let seed_of = |extra: &[&str], env: Option<&str>| {
        let out = dir.path().join("run");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tcanlab"));
        cmd.args(["train", "--config", &cfg, "--snr", "10", "--epochs", "1", "-q", "--out", out.to_str().unwrap()]).args(extra);
        match env {
            Some(v) => cmd.env("TCANLAB_SEED", v),
            None => cmd.env_remove("TCANLAB_SEED"),
        };
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        TrainReport::from_text(&fs::read_to_string(out.join("report.txt")).unwrap()).unwrap().seed
    };
    assert_eq!(seed_of(&[], None), 0);
    assert_eq!(seed_of(&[], Some("12")), 12);
    assert_eq!(seed_of(&["--seed", "5"], Some("12")), 5);
    let cfg_with = write_config(dir.path(), &format!("seed = 8\n{no_seed}"));
    assert_eq!(cfg_with, cfg);
    assert_eq!(seed_of(&[], Some("12")), 8);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["[model]\nchanels = 4\n", "[corpus]\nn_train = 0\n", "not toml ["] {
        let cfg = write_config(dir.path(), bad);
        let o = tcanlab(&["train", "--config", &cfg, "--snr", "5", "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{bad}");
    }
    let o = tcanlab(&["train", "--snr", "nan", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = tcanlab(&["gradcheck", "--corrupt-op", "nonsense"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unusable_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.tsv"), "# tcanlab corpus manifest v1\nx\ttrain\tfile:missing.wav\t3\t16000\n").unwrap();
    let silent = tcan_core::audio::AudioClip::new(vec![0.0; 48_000], 16_000).unwrap();
    tcan_core::data_io::write_wav(&silent, &dir.path().join("silent.wav")).unwrap();
    fs::write(
        dir.path().join("s.tsv"),
        "# tcanlab corpus manifest v1\na\ttrain\tfile:silent.wav\t3\t16000\nb\ttest\tsynth:1\t3\t16000\n",
    )
    .unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}\n[corpus]\nmanifest = \"s.tsv\"\n").replacen("[corpus]\nn_train = 10\nn_test = 5\n", "", 1));
    let o = tcanlab(&["train", "--config", &cfg, "--snr", "5", "-q", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(dir.path().join("bad_report.txt"), "seed = 1\n[epochs]\n").unwrap();
    let o = tcanlab(&["plot-confusion", "--report", dir.path().join("bad_report.txt").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("[train]\n", "[train]\ninitial_lr = 1e300\n"));
    let o = tcanlab(&["train", "--config", &cfg, "--snr", "5", "-q", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn gradcheck_exit_codes() {
    let started = std::time::Instant::now();
    let o = tcanlab(&["gradcheck", "--size", "tiny"]);
    assert_eq!(code(&o), 0);
    assert!(started.elapsed().as_secs_f64() < 10.0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    for op in tcan_core::tensor::OpKind::DIFFERENTIABLE {
        assert!(stdout.contains(op.name()), "{op}");
    }
    let o = tcanlab(&["gradcheck", "--size", "tiny", "--corrupt-op", "softmax_rows"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("softmax_rows"));
}

fn report_with(cm: ConfusionMatrix) -> TrainReport {
    TrainReport {
        seed: 1,
        config_hash: "00".into(),
        wall_clock_s: 0.0,
        epochs: vec![EpochStats { epoch: 0, lr: 0.001, train_loss: 1.0, train_accuracy: 0.5, test_accuracy: Some(0.5) }],
        confusion: cm,
        labels: Default::default(),
    }
}

#[test]
fn plot_confusion_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut counts = vec![0u64; 25];
    for i in 0..5 {
        counts[i * 6] = 20;
    }
    counts[1] = 3;
    let cm = ConfusionMatrix::from_counts(5, counts).unwrap();
    let report = dir.path().join("report.txt");
    fs::write(&report, report_with(cm.clone()).to_text()).unwrap();
    let out = dir.path().join("fig");
    let o = tcanlab(&["plot-confusion", "--report", report.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = ConfusionMatrix::from_csv(&fs::read_to_string(out.join("confusion.csv")).unwrap()).unwrap();
    assert_eq!(csv, cm);
    assert_eq!(csv.row_sums(), vec![23, 20, 20, 20, 20]);

    let svg = fs::read_to_string(out.join("confusion.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let cells: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).collect();
    assert_eq!(cells.len(), 25);
    // Diagonal cells are the darkest in each row.
    let darkness = |n: &roxmltree::Node| 255 - u8::from_str_radix(&n.attribute("fill").unwrap()[1..3], 16).unwrap();
    for r in 0..5 {
        let diag = darkness(&cells[r * 6]);
        assert!((0..5).filter(|&c| c != r).all(|c| darkness(&cells[r * 5 + c]) < diag));
    }
    for label in ["C1", "C2", "C3", "C4", "C5"] {
        assert!(doc.descendants().any(|n| n.is_text() && n.text() == Some(label)), "{label}");
    }
}

#[test]
fn sweep_matches_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let sweep = dir.path().join("sweep");
    let o = tcanlab(&["sweep-snr", "--config", &cfg, "--snrs", "5,20", "-q", "--out", sweep.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(sweep.join("accuracy_vs_snr.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("5,") && rows[1].starts_with("20,"));
    let svg = fs::read_to_string(sweep.join("accuracy_vs_snr.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();

    let single = dir.path().join("single");
    let o = tcanlab(&["train", "--config", &cfg, "--snr", "20", "-q", "--out", single.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stable_report(&sweep.join("snr_20/report.txt")), stable_report(&single.join("report.txt")));
}

#[test]
fn sweep_with_a_failing_level_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("[train]\n", "[train]\ninitial_lr = 1e300\n"));
    let out = dir.path().join("sweep");
    let o = tcanlab(&["sweep-snr", "--config", &cfg, "--snrs", "5", "-q", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let csv = fs::read_to_string(out.join("accuracy_vs_snr.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("failed"));
    roxmltree::Document::parse(&fs::read_to_string(out.join("accuracy_vs_snr.svg")).unwrap()).unwrap();
}
