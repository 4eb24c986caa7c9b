use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dualsup::data::{generate_synthetic_with, load_dataset, save_dataset, Dataset, SyntheticConfig};
use dualsup::eval::{hard_label_purity, knn_probe, linear_probe, ProbeConfig};
use dualsup::model::{load_checkpoint, save_checkpoint};
use dualsup::protocol::{
    ensemble_outputs, hard_fraction, labels_from_outputs, run_fussl, write_labels_jsonl, write_metrics_jsonl,
    LabelMode, MetricRecord, Progressive, ProtocolConfig,
};
use dualsup::seed::stream_seed;
use serde_json::json;

use crate::config::RunConfig;
use crate::{AblateArgs, CliError, ConfigArgs, EvaluateArgs, GenerateArgs, PseudolabelArgs, StageExt};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).stage("output")
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(dualsup::Error::from)
        .stage("output")?;
    writeln!(w).stage("output")?;
    w.flush().stage("output")
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| usage("an output directory is required (config key `out` or --out)"))?;
    fs::create_dir_all(&dir).stage("output")?;
    Ok(dir)
}

pub fn generate_data(a: &GenerateArgs) -> Result<(), CliError> {
    let cfg = SyntheticConfig {
        n_super: a.supers,
        classes_per_super: a.classes_per_super,
        dim: a.dim,
        n_per_class: a.per_class,
        separation: a.separation,
        class_separation: a.class_separation,
    };
    println!("# generate-data\n{cfg:?}\nseed = {}\nout = {}", a.seed, a.out.display());
    let ds = generate_synthetic_with(&cfg, a.seed).stage("generate")?;
    save_dataset(&ds, &a.out).stage("output")?;
    println!(
        "wrote {} samples ({} classes, {} superclasses, dim {})",
        ds.len(),
        ds.n_class(),
        ds.n_super(),
        ds.dim()
    );
    Ok(())
}

/// File config, then flags, then `--set` overrides; resolved and echoed.
fn build_config(a: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let flags: [(&str, Option<String>); 10] = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("data", a.data.as_ref().map(|p| p.display().to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ("m", a.m.map(|v| v.to_string())),
        ("loss_kind", a.loss.clone()),
        ("phase1_epochs", a.phase1_epochs.map(|v| v.to_string())),
        ("phase2_epochs", a.phase2_epochs.map(|v| v.to_string())),
        ("phase2_full_epochs", a.phase2_full_epochs.map(|v| v.to_string())),
        ("label_mode", a.label_mode.clone()),
        ("freeze_boundary", a.freeze_boundary.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for pair in &a.set {
        cfg.set_pair(pair)?;
    }
    let cfg = cfg.resolve()?;
    print!("# effective configuration\n{}", cfg.render());
    Ok(cfg)
}

/// Train/test split of the configured dataset (loaded or generated).
fn train_test(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let seed = cfg.protocol.seed;
    let ds = match &cfg.data {
        Some(p) => load_dataset(p).stage("data")?,
        None => generate_synthetic_with(&cfg.synthetic, seed).stage("data")?,
    };
    ds.split(cfg.test_fraction, stream_seed(seed, "split")).stage("data")
}

pub fn run(a: &ConfigArgs) -> Result<(), CliError> {
    let cfg = build_config(a)?;
    let dir = out_dir(&cfg)?;
    fs::write(dir.join("config.cfg"), cfg.render()).stage("output")?;
    let (train, test) = train_test(&cfg)?;

    let run = run_fussl(&train, &cfg.protocol).stage("train")?;
    let mut metrics = run.metrics.clone();

    let base = linear_probe(&run.base, &train, &test, &cfg.probe).stage("evaluate")?;
    let fin = linear_probe(&run.encoder, &train, &test, &cfg.probe).stage("evaluate")?;
    let k = cfg.knn_k.min(train.len());
    let base_knn = knn_probe(&run.base, &train, &test, k).stage("evaluate")?;
    let fin_knn = knn_probe(&run.encoder, &train, &test, k).stage("evaluate")?;
    for (tag, r) in [("base/linear", &base), ("final/linear", &fin), ("base/knn", &base_knn), ("final/knn", &fin_knn)] {
        metrics.push(MetricRecord::eval(tag, r.top1));
    }
    let (purity, n_hard) = hard_label_purity(&run.labels, train.class_labels(), train.n_class());

    write_metrics_jsonl(create_file(&dir.join("metrics.jsonl"))?, &metrics).stage("output")?;
    write_labels_jsonl(create_file(&dir.join("labels.jsonl"))?, &run.labels).stage("output")?;
    save_checkpoint(&run.encoder, dir.join("encoder.ckpt")).stage("output")?;
    save_checkpoint(&run.base, dir.join("base.ckpt")).stage("output")?;
    for (i, b) in run.ensemble.blocks.iter().enumerate() {
        save_checkpoint(&b.params, dir.join(format!("block{i}.ckpt"))).stage("output")?;
    }
    let summary = json!({
        "seed": cfg.protocol.seed,
        "n_train": train.len(),
        "n_test": test.len(),
        "selected_block": run.selected,
        "hard_fraction": hard_fraction(&run.labels),
        "hard_labels": n_hard,
        "hard_label_purity": purity,
        "base_linear_top1": base.top1,
        "linear_top1": fin.top1,
        "base_knn_top1": base_knn.top1,
        "knn_top1": fin_knn.top1,
        "linear_delta": fin.top1 - base.top1,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "selected block {}; hard labels {:.3} (purity {:.3}); linear top-1 {:.4} (phase 1: {:.4}); kNN top-1 {:.4} (phase 1: {:.4})",
        run.selected,
        hard_fraction(&run.labels),
        purity,
        fin.top1,
        base.top1,
        fin_knn.top1,
        base_knn.top1
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn pseudolabel(a: &PseudolabelArgs) -> Result<(), CliError> {
    let mode: LabelMode = a.mode.parse().map_err(|e| usage(format!("--mode: {e}")))?;
    println!(
        "# pseudolabel\ndata = {}\nblocks = {}\nmode = {mode}\nout = {}",
        a.data.display(),
        a.blocks.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        a.out.display()
    );
    let ds = load_dataset(&a.data).stage("data")?;
    let blocks = a
        .blocks
        .iter()
        .map(|p| load_checkpoint(p).stage("data"))
        .collect::<Result<Vec<_>, _>>()?;
    for (p, b) in a.blocks.iter().zip(&blocks) {
        if b.spec().input_dim() != ds.dim() {
            return Err(usage(format!(
                "{} expects input dimension {}, data has {}",
                p.display(),
                b.spec().input_dim(),
                ds.dim()
            )));
        }
    }
    let refs: Vec<_> = blocks.iter().collect();
    let outputs = ensemble_outputs(&refs, &ds).stage("pseudolabel")?;
    let labels = labels_from_outputs(&outputs, mode).stage("pseudolabel")?;
    write_labels_jsonl(create_file(&a.out)?, &labels).stage("output")?;
    println!("{} labels, hard fraction {:.4}", labels.len(), hard_fraction(&labels));
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(usage("--test-fraction must lie in (0, 1)"));
    }
    println!(
        "# evaluate\ncheckpoint = {}\ndata = {}\nseed = {}\ntest_fraction = {}\nprobe.epochs = {}\nprobe.lr = {}\nknn_k = {}",
        a.checkpoint.display(),
        a.data.display(),
        a.seed,
        a.test_fraction,
        a.probe_epochs,
        a.probe_lr,
        a.knn
    );
    let enc = load_checkpoint(&a.checkpoint).stage("data")?;
    let ds = load_dataset(&a.data).stage("data")?;
    if enc.spec().input_dim() != ds.dim() {
        return Err(usage(format!(
            "checkpoint expects input dimension {}, data has {}",
            enc.spec().input_dim(),
            ds.dim()
        )));
    }
    let (train, test) = ds.split(a.test_fraction, stream_seed(a.seed, "split")).stage("data")?;
    let probe = ProbeConfig {
        epochs: a.probe_epochs,
        lr: a.probe_lr,
        seed: a.seed,
        ..ProbeConfig::default()
    };
    let lin = linear_probe(&enc, &train, &test, &probe).stage("evaluate")?;
    let knn = knn_probe(&enc, &train, &test, a.knn).stage("evaluate")?;
    println!(
        "{}",
        json!({"linear_top1": lin.top1, "knn_top1": knn.top1, "n_test": lin.n_test})
    );
    if let Some(path) = &a.metrics {
        let f = OpenOptions::new().create(true).append(true).open(path).stage("output")?;
        let recs = [MetricRecord::eval("evaluate/linear", lin.top1), MetricRecord::eval("evaluate/knn", knn.top1)];
        write_metrics_jsonl(BufWriter::new(f), &recs).stage("output")?;
    }
    Ok(())
}

/// Protocol variants along one axis: `(value, config)` in table order.
pub fn ablation_cells(axis: &str, base: &ProtocolConfig) -> Result<Vec<(String, ProtocolConfig)>, CliError> {
    let with = |f: &dyn Fn(&mut ProtocolConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let cells = match axis {
        "ensemble-size" => (1..=5).map(|m| (m.to_string(), with(&|c| c.m = m))).collect(),
        "label-mode" => [LabelMode::Fuzzy, LabelMode::HardOnly, LabelMode::SoftOnly]
            .into_iter()
            .map(|mode| (mode.to_string(), with(&|c| c.label_mode = mode)))
            .collect(),
        "progressive" => {
            let periods = Progressive {
                phase1_period: (base.phase1_epochs / 4).max(1),
                phase2_period: (base.phase2_epochs / 4).max(1),
            };
            vec![
                ("off".to_string(), with(&|c| c.progressive = None)),
                (
                    format!("{},{}", periods.phase1_period, periods.phase2_period),
                    with(&|c| c.progressive = Some(periods)),
                ),
            ]
        }
        "freeze" => {
            let b = base.freeze_boundary.max(1);
            vec![
                (b.to_string(), with(&|c| c.freeze_boundary = b)),
                ("0".to_string(), with(&|c| c.freeze_boundary = 0)),
            ]
        }
        _ => {
            return Err(usage(format!(
                "unknown axis {axis:?} (expected ensemble-size, label-mode, progressive or freeze)"
            )))
        }
    };
    Ok(cells)
}

pub fn ablate(a: &AblateArgs) -> Result<(), CliError> {
    let cfg = build_config(&a.config)?;
    let cells = ablation_cells(&a.axis, &cfg.protocol)?;
    println!("axis = {}", a.axis);
    let dir = out_dir(&cfg)?;
    fs::write(dir.join("config.cfg"), cfg.render()).stage("output")?;
    let (train, test) = train_test(&cfg)?;

    let mut metrics = Vec::new();
    let mut table = String::from("axis\tvalue\tbase_top1\ttop1\tdelta\n");
    for (value, pcfg) in &cells {
        pcfg.validate().map_err(|e| usage(e.to_string()))?;
        let tag = format!("{}={value}", a.axis);
        let run = run_fussl(&train, pcfg).stage("train")?;
        let base = linear_probe(&run.base, &train, &test, &cfg.probe).stage("evaluate")?;
        let fin = linear_probe(&run.encoder, &train, &test, &cfg.probe).stage("evaluate")?;
        metrics.extend(run.metrics.into_iter().map(|mut r| {
            r.tag = Some(tag.clone());
            r
        }));
        metrics.push(MetricRecord::eval(&format!("{tag}/base"), base.top1));
        metrics.push(MetricRecord::eval(&format!("{tag}/final"), fin.top1));
        let row = format!("{}\t{value}\t{}\t{}\t{}\n", a.axis, base.top1, fin.top1, fin.top1 - base.top1);
        print!("{row}");
        table.push_str(&row);
    }
    write_metrics_jsonl(create_file(&dir.join("metrics.jsonl"))?, &metrics).stage("output")?;
    fs::write(dir.join("summary.tsv"), table).stage("output")?;
    println!("wrote {}", dir.display());
    Ok(())
}
