mod dataset;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vcmlab::checkpoint::Checkpoint;
use vcmlab::codec::{compress, decompress, ModelParameters};
use vcmlab::entropy::Bitstream;
use vcmlab::eval::{
    aggregate, bd_report, emit_report, evaluate_model_lenient, evaluate_uncompressed, read_records, write_records,
    Metric, RDCurve, RDPoint,
};
use vcmlab::shapes::{generate, ShapesConfig};
use vcmlab::task::{fit_task_net, FrozenNetworkHandle, TaskNetConfig};
use vcmlab::train::{finetune, pretrain, FrameMode, Strategy, TrainingConfig};
use vcmlab::{Error, Result};

use dataset::{DatasetDescriptor, Layout};
use manifest::{io, ExperimentManifest, RunDir};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "vcmlab", version, about = "Train, run and evaluate task-aware learned image codecs")]
struct Cli {
    /// Where run directories are created.
    #[arg(long, env = "VCMLAB_OUTPUT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a configuration file with every field at its default.
    ConfigInit {
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        preset: Preset,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the synthetic moving-shapes dataset as PNG sequence folders.
    ShapesDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        sequences: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 19)]
        labeled_index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the segmentation network on the labeled frames of a dataset.
    TrainTaskNet {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 3e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// MSE pretraining from random initialisation.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the dataset root of the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "pretrain")]
        name: String,
    },
    /// One finetuned codec per λ, with the task network frozen.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        task_net: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Comma-separated, e.g. 16,8,4,2.
        #[arg(long, value_delimiter = ',')]
        lambda_ladder: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        frame_mode: Option<FrameModeArg>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Encode a PNG into a bitstream file.
    Compress {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a bitstream file into a PNG.
    Decompress {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Evaluate checkpoints through real bitstreams and write the RD curve
    /// and report.
    Evaluate {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        task_net: Option<PathBuf>,
        /// Curve file to compare against.
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// Curve id; defaults to "evaluate".
        #[arg(long, default_value = "evaluate")]
        name: String,
    },
    /// Rebuild the report of an evaluate run from its per-image records.
    Report {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bjøntegaard deltas of test curves against an anchor curve.
    BdReport {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(required = true)]
        tests: Vec<PathBuf>,
        /// psnr, ms_ssim or a task metric name; all available by default.
        #[arg(long)]
        metric: Vec<String>,
        #[arg(long, default_value = "bd-report")]
        name: String,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = LayoutArg::SequenceFolders)]
    layout: LayoutArg,
    #[arg(long, default_value = "_labeled")]
    labeled_pattern: String,
}

impl DataArgs {
    fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            layout: match self.layout {
                LayoutArg::SequenceFolders => Layout::SequenceFolders,
                LayoutArg::FlatImages => Layout::FlatImages,
            },
            labeled_pattern: self.labeled_pattern.clone(),
            ..DatasetDescriptor::with_root(&self.dataset)
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    SequenceFolders,
    FlatImages,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameModeArg {
    LabeledOnly,
    RandomFrame,
}

/// The configuration file: where the data is and how to train.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentConfig {
    dataset: DatasetDescriptor,
    training: TrainingConfig,
}

impl ExperimentConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.training.validate()?;
        Ok(config)
    }

    fn dataset_with(&self, root: Option<&Path>) -> DatasetDescriptor {
        match root {
            Some(r) => DatasetDescriptor {
                root: r.to_path_buf(),
                ..self.dataset.clone()
            },
            None => self.dataset.clone(),
        }
    }
}

/// Exit status per error class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Image { source, .. } => exit_code(source),
        Error::Config(_) | Error::NonPositiveLambda(_) | Error::UnknownCutPoint(_) => 2,
        Error::Io { .. }
        | Error::EmptyDataset
        | Error::EmptySequence
        | Error::MissingAnnotation(_)
        | Error::DimensionTooSmall { .. }
        | Error::SchemaMismatch(_)
        | Error::NoValidPixels
        | Error::EmptyGroundTruth => 3,
        Error::FrozenViolation { .. } => 4,
        Error::CorruptStream(_)
        | Error::VersionMismatch(_)
        | Error::CorruptCheckpoint(_)
        | Error::SymbolOutOfAlphabet { .. } => 5,
        _ => 1,
    }
}

fn checkpoint_lambda(ck: &Checkpoint) -> Option<f64> {
    ck.metadata.get("lambda").and_then(|v| v.as_f64())
}

fn load_codec(path: &Path) -> Result<(ModelParameters, Option<f64>)> {
    let ck = Checkpoint::load(path)?;
    Ok((ModelParameters::from_checkpoint(&ck)?, checkpoint_lambda(&ck)))
}

/// A curve file, or the manifest of any run that recorded RD points, e.g.
/// one imported from an external codec.
fn load_curve(path: &Path) -> Result<RDCurve> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        let m: ExperimentManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return RDCurve::new(m.experiment_id, m.rd_points);
    }
    RDCurve::load(path)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn config_init(preset: Preset, out: Option<PathBuf>) -> Result<()> {
    let config = ExperimentConfig {
        dataset: DatasetDescriptor::default(),
        training: match preset {
            Preset::Toy => TrainingConfig::toy(),
            Preset::Full => TrainingConfig::default(),
        },
    };
    let text = toml::to_string(&config).expect("config serializes");
    match out {
        Some(p) => std::fs::write(&p, text).map_err(|e| io(&p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn shapes_dataset(out: &Path, config: ShapesConfig) -> Result<()> {
    for (i, seq) in generate(&config).into_iter().enumerate() {
        let dir = out.join(format!("seq_{i:03}"));
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for (j, frame) in seq.frames.iter().enumerate() {
            let name = if j == seq.labeled_index {
                format!("frame_{j:04}_labeled")
            } else {
                format!("frame_{j:04}")
            };
            dataset::write_image(&dir.join(format!("{name}.png")), frame)?;
            if j == seq.labeled_index {
                dataset::write_labels(&dir.join(format!("{name}_labels.png")), &seq.labels[j])?;
            }
        }
    }
    println!("wrote {} sequences to {}", config.sequences, out.display());
    Ok(())
}

fn train_task_net(data: &DataArgs, out: &Path, iterations: usize, batch: usize, lr: f64, seed: u64) -> Result<()> {
    let samples = data.descriptor().eval_samples()?;
    let pairs: Vec<_> = samples
        .into_iter()
        .map(|s| {
            let map = s
                .labels
                .as_ref()
                .and_then(|a| a.label_map().cloned())
                .ok_or_else(|| Error::MissingAnnotation(0))
                .map_err(|e| Error::Image {
                    id: s.id.clone(),
                    source: Box::new(e),
                })?;
            Ok((s.image, map))
        })
        .collect::<Result<_>>()?;
    let (net, losses) = fit_task_net(TaskNetConfig::default(), &pairs, iterations, batch, lr, seed)?;
    net.save(out)?;
    println!(
        "task network: {} parameters, final loss {:.4}, saved to {}",
        net.parameter_count(),
        losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(root: &Path, config: &Path, dataset: Option<&Path>, name: &str) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let desc = cfg.dataset_with(dataset);
    let data = desc.load()?;
    let fingerprint = desc.fingerprint()?;
    let run = RunDir::create(root, name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let init = ModelParameters::init(cfg.training.network.clone(), &mut rng);
    let model = pretrain(init, &data, &cfg.training, Some(&run.path))?;
    let last = model.final_record().cloned();
    let manifest = ExperimentManifest {
        experiment_id: run.id.clone(),
        command: "pretrain".into(),
        tool_version: VERSION.into(),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        dataset_fingerprint: Some(fingerprint),
        checkpoints: vec!["pretrain.ckpt".into()],
        outputs: vec!["pretrain_log.jsonl".into()],
        rd_points: Vec::new(),
    };
    run.seal(&manifest)?;
    if let Some(r) = last {
        println!("step {}: rate {:.4} bpp, distortion {:.6}, loss {:.6}", r.step, r.rate, r.distortion, r.total);
    }
    println!("{}", run.path.join("pretrain.ckpt").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(
    root: &Path,
    config: &Path,
    pretrained: &Path,
    task_net: &Path,
    strategy: Option<Strategy>,
    ladder: Option<Vec<f64>>,
    frame_mode: Option<FrameModeArg>,
    dataset: Option<&Path>,
    name: Option<String>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = strategy {
        cfg.training.strategy = s;
    }
    if let Some(l) = ladder {
        cfg.training.lambda_ladder = l;
    }
    if let Some(m) = frame_mode {
        cfg.training.frame_mode = match m {
            FrameModeArg::LabeledOnly => FrameMode::LabeledOnly,
            FrameModeArg::RandomFrame => FrameMode::RandomFrame,
        };
    }
    cfg.training.validate()?;
    let (params, _) = load_codec(pretrained)?;
    if params.config != cfg.training.network {
        return Err(Error::Config("pretrained checkpoint does not match the network in the config".into()));
    }
    let net = FrozenNetworkHandle::load(task_net)?;
    let desc = cfg.dataset_with(dataset);
    let data = desc.load()?;
    let fingerprint = desc.fingerprint()?;
    let name = name.unwrap_or_else(|| format!("finetune_{}", cfg.training.strategy));
    let run = RunDir::create(root, &name)?;
    let models = finetune(&params, &data, &net, &cfg.training, Some(&run.path))?;
    let tag = |l: f64| format!("{l}").replace('.', "p");
    let mut checkpoints = Vec::new();
    let mut outputs = Vec::new();
    for m in &models {
        checkpoints.push(PathBuf::from(format!("{}_lambda_{}.ckpt", m.strategy, tag(m.lambda))));
        outputs.push(PathBuf::from(format!("{}_lambda_{}_log.jsonl", m.strategy, tag(m.lambda))));
        if let Some(r) = m.final_record() {
            println!(
                "lambda {}: {} steps, rate {:.4} bpp, distortion {:.6}",
                m.lambda, m.iterations, r.rate, r.distortion
            );
        }
    }
    let manifest = ExperimentManifest {
        experiment_id: run.id.clone(),
        command: "finetune".into(),
        tool_version: VERSION.into(),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        dataset_fingerprint: Some(fingerprint),
        checkpoints: checkpoints.clone(),
        outputs,
        rd_points: Vec::new(),
    };
    run.seal(&manifest)?;
    for c in &checkpoints {
        println!("{}", run.path.join(c).display());
    }
    Ok(())
}

fn cmd_compress(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let (params, lambda) = load_codec(checkpoint)?;
    let img = dataset::read_image(input)?;
    let bs = compress(&img, &params, lambda.unwrap_or(0.0))?;
    let bytes = bs.to_bytes();
    std::fs::write(output, &bytes).map_err(|e| io(output, e))?;
    let pixels = (img.height() * img.width()) as f64;
    println!(
        "{} bytes, {:.4} bpp (payload {:.4} bpp)",
        bytes.len(),
        8.0 * bytes.len() as f64 / pixels,
        bs.payload_bits() as f64 / pixels
    );
    Ok(())
}

fn cmd_decompress(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let (params, _) = load_codec(checkpoint)?;
    let bytes = std::fs::read(input).map_err(|e| io(input, e))?;
    let bs = Bitstream::from_bytes(&bytes)?;
    let img = decompress(&bs, &params)?;
    dataset::write_image(output, &img)?;
    println!(
        "{}x{}, {:.4} bpp",
        img.width(),
        img.height(),
        8.0 * bytes.len() as f64 / (img.height() * img.width()) as f64
    );
    Ok(())
}

/// Stored next to the records so `report` can rebuild everything.
#[derive(Serialize, Deserialize)]
struct EvaluationIndex {
    name: String,
    num_classes: usize,
    models: Vec<(String, Option<f64>)>,
    /// Curve id and JSONL text.
    anchor: Option<(String, String)>,
}

fn cmd_evaluate(
    root: &Path,
    checkpoints: &[PathBuf],
    data: &DataArgs,
    task_net: Option<&Path>,
    anchor: Option<&Path>,
    name: &str,
) -> Result<bool> {
    let desc = data.descriptor();
    let samples = desc.eval_samples()?;
    let net = task_net.map(FrozenNetworkHandle::load).transpose()?;
    let anchor = anchor.map(load_curve).transpose()?;
    let mut codecs = Vec::new();
    for c in checkpoints {
        let (params, lambda) = load_codec(c)?;
        codecs.push((stem(c), params, lambda));
    }
    let fingerprint = desc.fingerprint()?;
    let num_classes = net.as_ref().map_or(0, |n| n.config().num_classes);

    let run = RunDir::create(root, name)?;
    let records_dir = run.path.join("records");
    std::fs::create_dir_all(&records_dir).map_err(|e| io(&records_dir, e))?;
    let mut outputs = Vec::new();
    let mut points = Vec::new();
    let mut failures = 0;
    for (model, params, lambda) in &codecs {
        let (records, errors) = evaluate_model_lenient(model, params, *lambda, &samples, net.as_ref());
        for e in &errors {
            eprintln!("warning: {model}: {e}");
        }
        failures += errors.len();
        let path = records_dir.join(format!("{model}.jsonl"));
        write_records(&path, &records)?;
        outputs.push(run.relative(&path));
        if records.is_empty() {
            continue;
        }
        let p = aggregate(model, *lambda, &records, num_classes)?;
        println!(
            "{model}: {:.4} bpp, PSNR {:.2} dB, MS-SSIM {:.4}{}",
            p.bpp,
            p.psnr_db.unwrap_or(f64::NAN),
            p.ms_ssim.unwrap_or(f64::NAN),
            p.task_metric
                .as_ref()
                .map_or(String::new(), |t| format!(", {} {:.4}", t.name, t.value))
        );
        points.push(p);
    }
    let base = evaluate_uncompressed(&samples, net.as_ref())?;
    let base_path = records_dir.join("uncompressed.jsonl");
    write_records(&base_path, &base.records)?;
    outputs.push(run.relative(&base_path));
    if let Some(t) = &base.point.task_metric {
        println!("uncompressed: {} {:.4}", t.name, t.value);
    }

    let index = EvaluationIndex {
        name: name.to_string(),
        num_classes,
        models: codecs.iter().map(|(m, _, l)| (m.clone(), *l)).collect(),
        anchor: anchor.as_ref().map(|a| (a.id.clone(), a.to_jsonl())),
    };
    let index_path = run.path.join("evaluation.json");
    std::fs::write(&index_path, serde_json::to_string_pretty(&index).expect("index serializes"))
        .map_err(|e| io(&index_path, e))?;
    outputs.push(run.relative(&index_path));

    let curve = RDCurve::new(name, points.clone())?;
    let curve_path = run.path.join(format!("{name}.jsonl"));
    curve.save(&curve_path)?;
    outputs.push(run.relative(&curve_path));
    for p in emit_report(&run.path, &[curve], anchor.as_ref(), Some(&base.point))? {
        outputs.push(run.relative(&p));
    }
    let manifest = ExperimentManifest {
        experiment_id: run.id.clone(),
        command: "evaluate".into(),
        tool_version: VERSION.into(),
        config: serde_json::json!({
            "checkpoints": checkpoints,
            "dataset": desc,
            "task_net": task_net,
        }),
        dataset_fingerprint: Some(fingerprint),
        checkpoints: Vec::new(),
        outputs,
        rd_points: points,
    };
    run.seal(&manifest)?;
    println!("{}", curve_path.display());
    if failures > 0 {
        eprintln!("{failures} image evaluations failed");
    }
    Ok(failures == 0)
}

fn cmd_report(run: &Path, out: &Path) -> Result<()> {
    let index_path = run.join("evaluation.json");
    let text = std::fs::read_to_string(&index_path).map_err(|e| io(&index_path, e))?;
    let index: EvaluationIndex =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", index_path.display())))?;
    let mut points = Vec::new();
    for (model, lambda) in &index.models {
        let records = read_records(run.join("records").join(format!("{model}.jsonl")))?;
        if !records.is_empty() {
            points.push(aggregate(model, *lambda, &records, index.num_classes)?);
        }
    }
    let base_records = read_records(run.join("records").join("uncompressed.jsonl"))?;
    let base: RDPoint = aggregate("uncompressed", None, &base_records, index.num_classes)?;
    let anchor = index
        .anchor
        .as_ref()
        .map(|(id, t)| RDCurve::from_jsonl(id.clone(), t))
        .transpose()?;
    let curve = RDCurve::new(index.name.clone(), points)?;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    curve.save(out.join(format!("{}.jsonl", index.name)))?;
    for p in emit_report(out, &[curve], anchor.as_ref(), Some(&base))? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_bd_report(root: &Path, anchor: &Path, tests: &[PathBuf], metrics: &[String], name: &str) -> Result<bool> {
    let anchor = load_curve(anchor)?;
    let tests = tests.iter().map(|t| load_curve(t)).collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metric> = if metrics.is_empty() {
        let mut names: Vec<String> = Vec::new();
        for p in anchor.points().iter().chain(tests.iter().flat_map(|t| t.points())) {
            if let Some(t) = &p.task_metric {
                if !names.contains(&t.name) {
                    names.push(t.name.clone());
                }
            }
        }
        names
            .into_iter()
            .map(Metric::Task)
            .chain([Metric::Psnr, Metric::MsSsim])
            .collect()
    } else {
        metrics.iter().map(|m| Metric::parse(m)).collect()
    };
    let mut table = String::from("test,anchor,metric,bd_quality,bd_rate_percent,error\n");
    println!("{:<24} {:<10} {:>12} {:>10}", "test", "metric", "BD quality", "BD rate");
    for t in &tests {
        for m in &metrics {
            let r = bd_report(&anchor, t, m);
            let unit = if *m == Metric::Psnr { "dB" } else { "pp" };
            match (&r.bd_quality, &r.bd_rate, &r.error) {
                (Some(q), Some(b), None) => println!("{:<24} {:<10} {:>9.2} {unit} {:>9.1}%", t.id, r.metric, q, b),
                _ => {
                    // missing metrics are skipped quietly, real failures reported
                    let e = r.error.clone().unwrap_or_default();
                    if !e.contains("at least two points") {
                        println!("{:<24} {:<10} {e}", t.id, r.metric);
                    } else {
                        continue;
                    }
                }
            }
            table += &format!(
                "{},{},{},{},{},{}\n",
                t.id,
                anchor.id,
                r.metric,
                r.bd_quality.map_or(String::new(), |v| format!("{v:.4}")),
                r.bd_rate.map_or(String::new(), |v| format!("{v:.4}")),
                r.error.unwrap_or_default().replace(',', " ")
            );
        }
    }
    let run = RunDir::create(root, name)?;
    let path = run.path.join("bd.csv");
    std::fs::write(&path, table).map_err(|e| io(&path, e))?;
    let manifest = ExperimentManifest {
        experiment_id: run.id.clone(),
        command: "bd-report".into(),
        tool_version: VERSION.into(),
        config: serde_json::json!({ "anchor": anchor.id, "tests": tests.iter().map(|t| &t.id).collect::<Vec<_>>() }),
        dataset_fingerprint: None,
        checkpoints: Vec::new(),
        outputs: vec!["bd.csv".into()],
        rd_points: Vec::new(),
    };
    run.seal(&manifest)?;
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    let root = cli.output_root.as_path();
    match cli.command {
        Command::ConfigInit { preset, out } => config_init(preset, out)?,
        Command::ShapesDataset {
            out,
            sequences,
            frames,
            size,
            labeled_index,
            seed,
        } => shapes_dataset(
            &out,
            ShapesConfig {
                sequences,
                frames,
                height: size,
                width: size,
                labeled_index,
                seed,
                ..ShapesConfig::default()
            },
        )?,
        Command::TrainTaskNet {
            data,
            out,
            iterations,
            batch_size,
            learning_rate,
            seed,
        } => train_task_net(&data, &out, iterations, batch_size, learning_rate, seed)?,
        Command::Pretrain { config, dataset, name } => cmd_pretrain(root, &config, dataset.as_deref(), &name)?,
        Command::Finetune {
            config,
            pretrained,
            task_net,
            strategy,
            lambda_ladder,
            frame_mode,
            dataset,
            name,
        } => cmd_finetune(
            root,
            &config,
            &pretrained,
            &task_net,
            strategy,
            lambda_ladder,
            frame_mode,
            dataset.as_deref(),
            name,
        )?,
        Command::Compress {
            checkpoint,
            input,
            output,
        } => cmd_compress(&checkpoint, &input, &output)?,
        Command::Decompress {
            checkpoint,
            input,
            output,
        } => cmd_decompress(&checkpoint, &input, &output)?,
        Command::Evaluate {
            checkpoints,
            data,
            task_net,
            anchor,
            name,
        } => return cmd_evaluate(root, &checkpoints, &data, task_net.as_deref(), anchor.as_deref(), &name),
        Command::Report { run, out } => cmd_report(&run, &out)?,
        Command::BdReport {
            anchor,
            tests,
            metric,
            name,
        } => return cmd_bd_report(root, &anchor, &tests, &metric, &name),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
