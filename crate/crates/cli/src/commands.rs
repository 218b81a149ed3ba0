use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use stxpn::baselines::{estimate_percentages, ClassPercentages, Metric};
use stxpn::eval::{average_precision, run_benchmark, standard_workloads, BenchReport, Workload};
use stxpn::exec::set_threads;
use stxpn::gtgen::{generate_gt, parse_thresholds, sweep_t_ov, SweepCriterion};
use stxpn::infer::{infer_dataset, Method, PipelineParams, Segmenter};
use stxpn::ingest::{
    load_checkpoint, load_dataset, load_labelings, load_masks, save_checkpoint, save_dataset, save_masks,
    save_predictions, InstanceMask, MaskEncoding,
};
use stxpn::pointnet::{loss_log_csv, training_examples, Trainer};
use stxpn::render::render_svg;
use stxpn::synth::{generate_dataset, generate_masks, SceneConfig};
use stxpn::{Execution, StixelFrame};

use crate::config::ExperimentConfig;
use crate::{BenchArgs, Cli, Command, EvalArgs, InferArgs, MakeGtArgs, Preset, RenderArgs, SynthArgs, TrainArgs};

/// Invalid command-line input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flag value, else the configured path, else a usage error.
fn path_arg(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| usage(format!("{name} is required")))
}

/// Provenance written next to every output.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    inputs: BTreeMap<&'a str, String>,
    config: &'a ExperimentConfig,
}

fn write_run_manifest(path: &Path, command: &str, cfg: &ExperimentConfig, inputs: &[(&'static str, &Path)]) -> Result<()> {
    let manifest = RunManifest {
        command,
        seed: cfg.seed,
        inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect(),
        config: cfg,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sidecar(path: &Path) -> PathBuf {
    PathBuf::from(format!("{}.run.json", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        set_threads(n);
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    cfg.train.execution = exec;
    match cli.command {
        Command::Synth(a) => synth(a, cfg, exec),
        Command::MakeGt(a) => make_gt(a, cfg, exec),
        Command::Train(a) => train(a, cfg, exec),
        Command::Infer(a) => infer(a, cfg, exec),
        Command::Eval(a) => eval(a, cfg, exec),
        Command::Bench(a) => bench(a, cfg),
        Command::Render(a) => render(a, cfg),
    }
}

fn synth(a: SynthArgs, mut cfg: ExperimentConfig, exec: Execution) -> Result<()> {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(p) = a.preset {
        cfg.scene = match p {
            Preset::Default => SceneConfig::default(),
            Preset::Exact => SceneConfig::exact(),
            Preset::Noisy => SceneConfig::noisy(),
            Preset::Empty => SceneConfig::empty(),
        };
    }
    let out = path_arg(a.out, &cfg.paths.out, "--out")?;
    let encoding: MaskEncoding = a.mask_encoding.parse().map_err(|e| usage(format!("{e}")))?;
    let mut dataset = generate_dataset(&cfg.scene, &cfg.detector, a.frames, cfg.seed, &a.split, exec)?;
    if !a.no_masks {
        let masks = generate_masks(&cfg.scene, a.frames, cfg.seed, exec);
        save_masks(&mut dataset, &out, &masks, encoding)?;
    }
    save_dataset(&dataset, &out)?;
    let stixels: usize = dataset.samples.iter().map(|s| s.frame.len()).sum();
    let boxes: usize = dataset.samples.iter().map(|s| s.detections.len()).sum();
    println!(
        "{}: split {}, {} frames, {} stixels, {} boxes, seed {}, masks {}",
        out.display(),
        dataset.split,
        dataset.len(),
        stixels,
        boxes,
        cfg.seed,
        if a.no_masks { "none".to_string() } else { encoding.to_string() }
    );
    Ok(())
}

fn make_gt(a: MakeGtArgs, cfg: ExperimentConfig, exec: Execution) -> Result<()> {
    let data = path_arg(a.data, &cfg.paths.data, "--data")?;
    let criterion: SweepCriterion = a.criterion.parse()?;
    if a.tov.is_none() && a.sweep.is_none() {
        return Err(usage("one of --tov or --sweep is required"));
    }
    let dataset = load_dataset(&data)?;
    let masks = load_masks(&dataset, &data)?;
    let mut cfg = cfg;
    if let Some(seed) = dataset.seed {
        cfg.seed = seed;
    }

    if let Some(t_ov) = a.tov {
        let out = path_arg(a.out, &cfg.paths.out, "--out")?;
        let labels = exec.map_indexed(dataset.len(), |i| {
            generate_gt(&dataset.samples[i].frame, &masks[i], t_ov, &dataset.classes)
        });
        let mut generated = dataset.clone();
        generated.masks = None;
        for (s, l) in generated.samples.iter_mut().zip(labels) {
            s.gt = l?;
        }
        save_dataset(&generated, &out)?;
        write_run_manifest(&out.join("run.json"), "make-gt", &cfg, &[("data", &data)])?;
        let instances: usize = generated.samples.iter().map(|s| s.gt.instances().len()).sum();
        println!("{}: {} frames, {} instances at t_ov {t_ov}", out.display(), generated.len(), instances);
        return Ok(());
    }

    let thresholds = parse_thresholds(a.sweep.as_deref().expect("checked above"))?;
    let items: Vec<(&StixelFrame, &InstanceMask)> = dataset.samples.iter().map(|s| &s.frame).zip(&masks).collect();
    let table = sweep_t_ov(&items, &thresholds, &dataset.classes, exec)?;
    let best = table.argmax(criterion);
    match a.out.or(cfg.paths.out.clone()) {
        Some(out) => {
            write_file(&out, &table.to_csv())?;
            write_run_manifest(&sidecar(&out), "make-gt", &cfg, &[("data", &data)])?;
            println!("{}: {} thresholds, best t_ov {best}", out.display(), table.rows.len());
        }
        None => {
            print!("{}", table.to_csv());
            eprintln!("best t_ov {best}");
        }
    }
    Ok(())
}

fn train(a: TrainArgs, mut cfg: ExperimentConfig, exec: Execution) -> Result<()> {
    let data = path_arg(a.data, &cfg.paths.data, "--data")?;
    let out = path_arg(a.out, &cfg.paths.checkpoint, "--out")?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.train.validate()?;
    let dataset = load_dataset(&data)?;
    let examples = training_examples(&dataset, &cfg.filter, cfg.train.keep_negatives, exec)?;
    if examples.is_empty() {
        anyhow::bail!("{}: no training RoIs", data.display());
    }
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(&load_checkpoint(p)?, cfg.train.clone())?,
        None => Trainer::new(&cfg.arch, cfg.train.clone(), &examples)?,
    };
    let mut logs = Vec::new();
    while trainer.epoch < cfg.train.epochs {
        let log = trainer.run_epoch(&examples)?;
        eprintln!("epoch {:>3}  loss {:.6}  {:.1}s", log.epoch, log.mean_loss, log.wall_time_s);
        logs.push(log);
    }
    save_checkpoint(&trainer.checkpoint(), &out)?;
    let loss_csv = a.loss_csv.unwrap_or_else(|| out.with_extension("loss.csv"));
    write_file(&loss_csv, &loss_log_csv(&logs))?;
    let mut inputs = vec![("data", data.as_path())];
    if let Some(p) = &a.resume {
        inputs.push(("resume", p.as_path()));
    }
    write_run_manifest(&sidecar(&out), "train", &cfg, &inputs)?;
    println!(
        "{}: {} examples, epoch {}, loss log {}",
        out.display(),
        examples.len(),
        trainer.epoch,
        loss_csv.display()
    );
    Ok(())
}

fn infer(a: InferArgs, mut cfg: ExperimentConfig, exec: Execution) -> Result<()> {
    let method: Method = a.method.parse()?;
    let data = path_arg(a.data, &cfg.paths.data, "--data")?;
    let out = path_arg(a.out, &cfg.paths.predictions, "--out")?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let dataset = load_dataset(&data)?;
    let mut inputs = vec![("data", data.clone())];
    let segmenter = match method {
        Method::Stxpn => {
            let ckpt = a
                .checkpoint
                .or(cfg.paths.checkpoint.clone())
                .ok_or_else(|| usage("--checkpoint is required for stxpn"))?;
            let model = load_checkpoint(&ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?
                .model()?;
            inputs.push(("checkpoint", ckpt));
            Segmenter::Network(model)
        }
        Method::Statistical => {
            let metric: Metric = a.metric.parse()?;
            let percentages = if let Some(p) = a.percentages {
                let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                inputs.push(("percentages", p));
                ClassPercentages::from_csv(&text, &dataset.classes)?
            } else {
                let train = a
                    .train_data
                    .or(cfg.paths.train_data.clone())
                    .ok_or_else(|| usage("--train-data or --percentages is required for statistical"))?;
                let p = estimate_percentages(&load_dataset(&train)?, &cfg.filter, exec)?;
                inputs.push(("train_data", train));
                p
            };
            Segmenter::Statistical { percentages, metric }
        }
        Method::HacRoi => Segmenter::HacRoi(cfg.hac.clone()),
        Method::HacImg => Segmenter::HacImg(cfg.hac.clone()),
        Method::Oracle => Segmenter::Oracle,
    };
    let params = PipelineParams {
        filter: cfg.filter,
        bps: cfg.bps,
    };
    let predictions = infer_dataset(&segmenter, &dataset, &params, exec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_predictions(&out, &predictions)?;
    let inputs: Vec<(&'static str, &Path)> = inputs.iter().map(|(k, p)| (*k, p.as_path())).collect();
    write_run_manifest(&sidecar(&out), &format!("infer {method}"), &cfg, &inputs)?;
    let instances: usize = predictions.iter().map(|p| p.labeling.instances().len()).sum();
    println!("{}: {method}, {} frames, {} instances", out.display(), predictions.len(), instances);
    Ok(())
}

fn eval(a: EvalArgs, mut cfg: ExperimentConfig, exec: Execution) -> Result<()> {
    let data = path_arg(a.data, &cfg.paths.data, "--data")?;
    let pred = path_arg(a.predictions, &cfg.paths.predictions, "--predictions")?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let dataset = load_dataset(&data)?;
    let predictions = load_labelings(&pred)?;
    let report = average_precision(&dataset, &predictions, exec)?;
    print!("{report}");
    if let Some(out) = a.out.or(cfg.paths.out.clone()) {
        write_file(&out, &report.to_csv())?;
        write_run_manifest(&sidecar(&out), "eval", &cfg, &[("data", &data), ("predictions", &pred)])?;
    }
    if let Some(counts) = a.counts {
        write_file(&counts, &report.counts_csv())?;
    }
    Ok(())
}

fn bench(a: BenchArgs, mut cfg: ExperimentConfig) -> Result<()> {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let workloads = if a.all {
        standard_workloads()
    } else {
        vec![Workload::new(a.stixels, a.boxes, a.features)]
    };
    let mut csv = String::from(BenchReport::CSV_HEADER);
    for w in workloads {
        let report = run_benchmark(w, a.runs, a.warmup, cfg.seed)?;
        print!("{report}");
        csv.push_str(&report.csv_rows());
    }
    if let Some(out) = a.out.or(cfg.paths.out.clone()) {
        write_file(&out, &csv)?;
        write_run_manifest(&sidecar(&out), "bench", &cfg, &[])?;
    }
    Ok(())
}

fn render(a: RenderArgs, cfg: ExperimentConfig) -> Result<()> {
    let data = path_arg(a.data, &cfg.paths.data, "--data")?;
    let out = path_arg(a.out, &cfg.paths.out, "--out")?;
    let dataset = load_dataset(&data)?;
    let mut labels: BTreeMap<u64, _> = match &a.labels {
        Some(p) => load_labelings(p)?
            .into_iter()
            .map(|p| (p.labeling.frame_id, p.labeling))
            .collect(),
        None => dataset
            .samples
            .iter()
            .map(|s| (s.frame.frame_id, s.gt.clone()))
            .collect(),
    };
    for id in &a.frames {
        if !dataset.samples.iter().any(|s| s.frame.frame_id == *id) {
            return Err(usage(format!("unknown frame {id}")));
        }
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = 0;
    for s in &dataset.samples {
        let id = s.frame.frame_id;
        if !a.frames.is_empty() && !a.frames.contains(&id) {
            continue;
        }
        let labeling = labels
            .remove(&id)
            .unwrap_or_else(|| stxpn::InstanceLabeling::background(&s.frame));
        let path = out.join(format!("frame_{id:06}.svg"));
        fs::write(&path, render_svg(&s.frame, &labeling)).with_context(|| format!("writing {}", path.display()))?;
        written += 1;
    }
    println!("{}: {written} SVG files", out.display());
    Ok(())
}
