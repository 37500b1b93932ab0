use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use charprop::annotations::{ground_truth, load_annotations, load_dataset, load_rgb};
use charprop::config::{format_pairs, resolve, ConfigFile};
use charprop::evaluation::{group_proposals, recall, recall_curves, write_curves_csv, CurveConfig};
use charprop::inference::{generate_proposals, read_proposals_csv, write_proposals_csv, ProposalRecord, PyramidConfig};
use charprop::network::{builtin_spec, Init, LayerSpec, Model};
use charprop::raster::rgb_to_tensor;
use charprop::synth::{synth_generate, SynthConfig};
use charprop::templates::{cluster_templates, TemplateSizing};
use charprop::training::{image_rng, samples_for_image, train, IterationLog, TrainConfig};

const THREADS_ENV: &str = "CHARPROP_THREADS";

#[derive(Parser)]
#[command(
    name = "charprop",
    version,
    about = "Character proposal network: synthesize, train, infer, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic glyph-scene dataset
    Synth(SynthArgs),
    /// Train a model on an annotated dataset
    Train(TrainArgs),
    /// Generate proposals for images
    Infer(InferArgs),
    /// Score a proposal CSV against annotations
    Eval(EvalArgs),
    /// Describe a model file
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (images, annotations.txt, synth_config.txt)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_texture: bool,
    #[arg(long)]
    no_illumination: bool,
    /// Probability of an abutting glyph pair
    #[arg(long)]
    touching_pairs: Option<f64>,
    /// Probability of a glyph split into parts
    #[arg(long)]
    broken_glyphs: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Annotation file of the training set
    #[arg(long)]
    data: PathBuf,
    /// Output directory (model.cpnm, init.cpnm, training_log.csv, train_config.txt)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// cpn-eng, cpn-chs, cpn-eng-small or cpn-eng-tiny
    #[arg(long)]
    arch: Option<String>,
    /// Total classes K, background included
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Decay the learning rate every N iterations
    #[arg(long)]
    lr_step: Option<usize>,
    #[arg(long)]
    lr_gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// he, zeros or gaussian:<std>
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// aspect or half-complement
    #[arg(long)]
    template_sizing: Option<String>,
    #[arg(long)]
    negatives_per_image: Option<usize>,
}

#[derive(Args)]
struct PyramidArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pyramid_ratio: Option<f64>,
    #[arg(long)]
    max_scale: Option<f64>,
    #[arg(long)]
    min_scale: Option<f64>,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    max_proposals: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Annotation file listing the images to process
    #[arg(long, conflicts_with = "images")]
    annotations: Option<PathBuf>,
    /// Image files to process
    #[arg(long, num_args = 1..)]
    images: Vec<PathBuf>,
    /// Proposal CSV to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pyramid: PyramidArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    proposals: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Proposal budget per image (all proposals if omitted)
    #[arg(long)]
    top_n: Option<usize>,
    /// Write recall curves to this CSV
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    model: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => Ok(ConfigFile::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let mut known = SynthConfig::KEYS.to_vec();
    known.push("count");
    file.check_keys(&known)?;
    let mut config = SynthConfig::default();
    config.apply(&file)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.no_texture {
        config.texture = false;
    }
    if args.no_illumination {
        config.illumination = false;
    }
    if let Some(p) = args.touching_pairs {
        config.touching_pairs = p;
    }
    if let Some(p) = args.broken_glyphs {
        config.broken_glyphs = p;
    }
    let count = resolve(args.count, &file, "count", 100usize)?;
    synth_generate(&config, count, &args.out)?;
    let mut pairs = config.to_pairs();
    pairs.push(("count".into(), count.to_string()));
    write_text(&args.out.join("synth_config.txt"), &format_pairs(&pairs))?;
    println!("wrote {count} scenes to {}", args.out.display());
    Ok(())
}

const TRAIN_KEYS: [&str; 15] = [
    "arch",
    "classes",
    "iterations",
    "batch_size",
    "lr",
    "lr_step",
    "lr_gamma",
    "alpha",
    "weight_decay",
    "init",
    "seed",
    "template_sizing",
    "negatives_per_image",
    "shift_count",
    "max_offset",
];

fn train_cmd(args: TrainArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    file.check_keys(&TRAIN_KEYS)?;
    let arch = resolve(args.arch, &file, "arch", "cpn-eng".to_string())?;
    let classes = resolve(args.classes, &file, "classes", 4usize)?;
    let init = Init::parse(&resolve(args.init, &file, "init", Init::default().describe())?)?;
    let sizing = TemplateSizing::parse(&resolve(
        args.template_sizing,
        &file,
        "template_sizing",
        TemplateSizing::default().as_str().to_string(),
    )?)?;

    let mut config = TrainConfig::default();
    config.iterations = resolve(args.iterations, &file, "iterations", config.iterations)?;
    config.batch_size = resolve(args.batch_size, &file, "batch_size", config.batch_size)?;
    config.seed = resolve(args.seed, &file, "seed", config.seed)?;
    let lr = &mut config.learning_rate;
    lr.initial = resolve(args.lr, &file, "lr", lr.initial)?;
    lr.gamma = resolve(args.lr_gamma, &file, "lr_gamma", lr.gamma)?;
    lr.step = match args.lr_step {
        Some(s) => Some(s),
        None => match file.get_str("lr_step") {
            None | Some("none") => lr.step,
            Some(_) => file.get("lr_step")?,
        },
    };
    config.loss.alpha = resolve(args.alpha, &file, "alpha", config.loss.alpha)?;
    config.loss.weight_decay = resolve(args.weight_decay, &file, "weight_decay", config.loss.weight_decay)?;
    let s = &mut config.sampling;
    s.negatives_per_image = resolve(
        args.negatives_per_image,
        &file,
        "negatives_per_image",
        s.negatives_per_image,
    )?;
    s.shift_count = resolve(None, &file, "shift_count", s.shift_count)?;
    s.max_offset = resolve(None, &file, "max_offset", s.max_offset)?;
    config.validate()?;

    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        bail!("{} lists no images", args.data.display());
    }
    let spec = builtin_spec(&arch, classes)?;
    let field = spec.input_size;
    let all_boxes: Vec<_> = dataset.iter().flat_map(|d| d.bboxes()).collect();
    let templates = cluster_templates(&all_boxes, classes, (field.0 as f64, field.1 as f64), sizing)?;
    info!("templates: ratios {:?}", templates.ratios());

    let per_image: Vec<_> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let tensor = rgb_to_tensor(&img.pixels);
            let mut rng = image_rng(config.seed, i);
            samples_for_image(&tensor, &img.bboxes(), &templates, field, &config.sampling, &mut rng)
        })
        .collect::<charprop::Result<_>>()?;
    let samples: Vec<_> = per_image.into_iter().flatten().collect();
    info!("{} training samples from {} images", samples.len(), dataset.len());

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let model = Model::new(spec, templates, init, config.seed)?;
    model.save(args.out.join("init.cpnm"))?;

    let log_path = args.out.join("training_log.csv");
    let mut log_text = format!("{}\n", IterationLog::CSV_HEADER);
    let (model, _) = train(model, &samples, &config, |entry| {
        let mut row = Vec::new();
        let _ = entry.write_csv(&mut row);
        log_text.push_str(&String::from_utf8_lossy(&row));
        if entry.iteration % 100 == 0 {
            info!("iter {} loss {:.5}", entry.iteration, entry.loss.total);
        }
    })?;
    write_text(&log_path, &log_text)?;
    model.save(args.out.join("model.cpnm"))?;

    let mut pairs = vec![
        ("arch".to_string(), arch),
        ("classes".to_string(), classes.to_string()),
        ("init".to_string(), init.describe()),
        ("template_sizing".to_string(), sizing.as_str().to_string()),
    ];
    pairs.extend(config.to_pairs());
    write_text(&args.out.join("train_config.txt"), &format_pairs(&pairs))?;
    println!(
        "trained {} iterations, model written to {}",
        config.iterations,
        args.out.join("model.cpnm").display()
    );
    Ok(())
}

fn pyramid_config(args: &PyramidArgs) -> Result<PyramidConfig> {
    let file = load_config(args.config.as_deref())?;
    file.check_keys(&[
        "pyramid_ratio",
        "max_scale",
        "min_scale",
        "score_threshold",
        "nms_iou",
        "max_proposals",
        "pre_nms_limit",
    ])?;
    let d = PyramidConfig::default();
    let config = PyramidConfig {
        ratio: resolve(args.pyramid_ratio, &file, "pyramid_ratio", d.ratio)?,
        max_scale: resolve(args.max_scale, &file, "max_scale", d.max_scale)?,
        min_scale: resolve(args.min_scale, &file, "min_scale", d.min_scale)?,
        score_threshold: resolve(args.score_threshold, &file, "score_threshold", d.score_threshold)?,
        nms_iou: resolve(args.nms_iou, &file, "nms_iou", d.nms_iou)?,
        max_proposals: resolve(args.max_proposals, &file, "max_proposals", d.max_proposals)?,
        pre_nms_limit: resolve(None, &file, "pre_nms_limit", d.pre_nms_limit)?,
    };
    config.validate()?;
    Ok(config)
}

fn pyramid_pairs(c: &PyramidConfig) -> Vec<(String, String)> {
    vec![
        ("pyramid_ratio".into(), c.ratio.to_string()),
        ("max_scale".into(), c.max_scale.to_string()),
        ("min_scale".into(), c.min_scale.to_string()),
        ("score_threshold".into(), c.score_threshold.to_string()),
        ("nms_iou".into(), c.nms_iou.to_string()),
        ("max_proposals".into(), c.max_proposals.to_string()),
        ("pre_nms_limit".into(), c.pre_nms_limit.to_string()),
    ]
}

fn infer(args: InferArgs) -> Result<()> {
    let config = pyramid_config(&args.pyramid)?;
    let model = Model::load(&args.model)?;
    // (image id, path)
    let inputs: Vec<(String, PathBuf)> = match &args.annotations {
        Some(ann) => {
            let base = ann.parent().unwrap_or(Path::new("."));
            load_annotations(ann)?
                .into_iter()
                .map(|g| {
                    let path = base.join(&g.image_file);
                    (g.image_file, path)
                })
                .collect()
        }
        None if !args.images.is_empty() => args
            .images
            .iter()
            .map(|p| (p.display().to_string(), p.clone()))
            .collect(),
        None => bail!("give either --annotations or --images"),
    };
    let results: Vec<Vec<ProposalRecord>> = inputs
        .par_iter()
        .map(|(id, path)| -> Result<Vec<ProposalRecord>> {
            let image = rgb_to_tensor(&load_rgb(path)?);
            let proposals = generate_proposals(&model, &image, &config)
                .with_context(|| format!("processing {}", path.display()))?;
            Ok(proposals
                .into_iter()
                .map(|proposal| ProposalRecord {
                    image_id: id.clone(),
                    proposal,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let records: Vec<ProposalRecord> = results.into_iter().flatten().collect();

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_proposals_csv(BufWriter::new(file), &records)?;
    let echo = args.out.with_file_name("infer_config.txt");
    write_text(&echo, &format_pairs(&pyramid_pairs(&config)))?;
    println!(
        "{} proposals for {} images written to {}",
        records.len(),
        inputs.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let records = read_proposals_csv(&args.proposals)?;
    let truths = ground_truth(&load_annotations(&args.annotations)?);
    let ranked = group_proposals(&records);
    let r = recall(&ranked, &truths, args.iou, args.top_n)?;
    let budget = args.top_n.map_or("all".to_string(), |n| n.to_string());
    println!(
        "recall {:.6} ({}/{}) at IoU > {} with {budget} proposals per image",
        r.recall, r.matched, r.total, args.iou
    );
    if let Some(path) = &args.curves {
        let points = recall_curves(&ranked, &truths, &CurveConfig::default())?;
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_curves_csv(BufWriter::new(file), &points)?;
        println!("curves written to {}", path.display());
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let spec = model.spec();
    let (rw, rh) = model.receptive_field();
    println!("architecture: {}", spec.name);
    println!("layers: {}", spec.describe());
    println!(
        "classes (K): {} ({} templates + background)",
        model.classes(),
        model.templates().len()
    );
    println!("receptive field: {rw}x{rh}");
    println!("stride: {}", model.stride());
    let trace = model.geometry().trace(rh).unwrap_or_default();
    let trace: Vec<String> = trace.iter().map(|v| v.to_string()).collect();
    println!("extent trace: {}", trace.join(" -> "));
    let convs = spec
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count();
    println!("parameters: {} in {convs} convolutions", model.parameter_count());
    println!("template sizing: {}", model.templates().sizing().as_str());
    for (i, (ratio, (w, h))) in model
        .templates()
        .ratios()
        .iter()
        .zip(model.templates().sizes())
        .enumerate()
    {
        println!("template {}: aspect {ratio:.4}, size {w:.2}x{h:.2}", i + 1);
    }
    for (k, v) in &model.metadata {
        println!("meta {k} = {v}");
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
