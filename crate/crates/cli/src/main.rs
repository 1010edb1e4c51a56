//! `ramnet`: synthesize data, train, evaluate, predict, render regression
//! activation maps, and inspect architectures.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ramnet::dataio::{
    generate_synthetic, load_manifest, load_rgb, prepare_rgb, prepare_unit, AugmentSpec, Dataset, SyntheticConfig,
};
use ramnet::metrics::{discretize, evaluate};
use ramnet::network::{builtin_spec, transfer_from_checkpoint, Checkpoint, Network, NetworkSpec};
use ramnet::ram::{compute_ram, fuse, render};
use ramnet::trainer::{train, LrSchedule, TrainConfig};

use config::{pick, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "ramnet", version, about = "GAP-headed regression CNNs with regression activation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic lesion dataset (images, masks, manifest).
    Synth(SynthArgs),
    /// Train a network and write its checkpoint and history.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest and print the kappa report.
    Eval(EvalArgs),
    /// Predict the severity of one image.
    Predict(PredictArgs),
    /// Compute, fuse and render regression activation maps for one image.
    Ram(RamArgs),
    /// Print the layer table and parameter counts.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of images (at least 5).
    #[arg(long)]
    count: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture: net5, net4, net5_ram128, net5_ram256, net_small.
    #[arg(long)]
    arch: Option<String>,
    /// Dataset root holding the images.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Manifest CSV (default: <data>/manifest.csv).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Input resolution (default: the architecture's own).
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Base learning rate for the default step schedule.
    #[arg(long)]
    lr: Option<f64>,
    /// Explicit schedule `epoch:lr,epoch:lr,...`; overrides --lr.
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Maximum translation in pixels.
    #[arg(long)]
    translate: Option<f32>,
    #[arg(long)]
    scale_min: Option<f32>,
    #[arg(long)]
    scale_max: Option<f32>,
    /// Maximum rotation in degrees.
    #[arg(long)]
    rotation: Option<f32>,
    #[arg(long)]
    flip_horizontal: Option<bool>,
    #[arg(long)]
    flip_vertical: Option<bool>,
    #[arg(long)]
    color_scale_min: Option<f32>,
    #[arg(long)]
    color_scale_max: Option<f32>,
    #[arg(long)]
    color_shift: Option<f32>,
    /// Class-balanced resampling per epoch.
    #[arg(long)]
    resample: Option<bool>,
    /// Checkpoint whose matching parameters initialize the network.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Image root (default: the manifest's directory).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for kappa.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args, Debug)]
struct RamArgs {
    /// One or more checkpoints, comma separated; maps are fused when several.
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    /// Directory for ram.png and ram.grid.
    #[arg(long)]
    out: PathBuf,
    /// Heatmap opacity in [0,1].
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long, conflicts_with = "arch")]
    checkpoint: Option<PathBuf>,
    /// Built-in architecture to describe without a checkpoint.
    #[arg(long, required_unless_present = "checkpoint")]
    arch: Option<String>,
    /// Input resolution for --arch.
    #[arg(long, requires = "arch")]
    resolution: Option<u32>,
}

/// Exit status 2 for usage problems, 1 for runtime failures.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ramnet::Error> for Failure {
    fn from(e: ramnet::Error) -> Self {
        match e {
            ramnet::Error::Usage(_) | ramnet::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn file_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    match path {
        Some(p) => FileConfig::load(p).map_err(Failure::Usage),
        None => Ok(FileConfig::default()),
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    out.ok_or_else(|| Failure::Usage("--out is required (flag or config file)".into()))
}

fn cmd_synth(args: SynthArgs) -> Outcome {
    let file = file_config(args.config.as_deref())?;
    let defaults = SyntheticConfig::default();
    let config = SyntheticConfig {
        count: pick(args.count, file.count, defaults.count),
        resolution: pick(args.resolution, file.resolution, defaults.resolution),
        seed: pick(args.seed, file.seed, defaults.seed),
        ..defaults
    };
    let out = require_out(args.out.or(file.out))?;
    let ds = generate_synthetic(&config, &out)?;
    println!("wrote {} images to {}", ds.records.len(), out.display());
    println!("manifest {}", ds.manifest.display());
    Ok(())
}

fn resolve_arch(name: &str, resolution: Option<u32>) -> Result<NetworkSpec, Failure> {
    let spec = builtin_spec(name).ok_or_else(|| {
        Failure::Usage(format!("unknown architecture {name:?}; choose net5, net4, net5_ram128, net5_ram256 or net_small"))
    })?;
    match resolution {
        Some(r) if r as usize != spec.input_size => spec.with_input_size(r as usize).map_err(|e| {
            Failure::Usage(format!("architecture {name} cannot take {r}-pixel inputs: {e}"))
        }),
        _ => Ok(spec),
    }
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let file = file_config(args.config.as_deref())?;
    let defaults = TrainConfig::default();
    let arch = pick(args.arch, file.arch, defaults.arch.clone());
    let spec = resolve_arch(&arch, args.resolution.or(file.resolution))?;
    let data = args.data.or(file.data).ok_or_else(|| Failure::Usage("--data is required".into()))?;
    let manifest = args.manifest.or(file.manifest).unwrap_or_else(|| data.join("manifest.csv"));
    let out = require_out(args.out.or(file.out))?;
    let base = AugmentSpec::default();
    let augment = AugmentSpec {
        translate: pick(args.translate, file.translate, base.translate),
        scale_min: pick(args.scale_min, file.scale_min, base.scale_min),
        scale_max: pick(args.scale_max, file.scale_max, base.scale_max),
        rotation_deg: pick(args.rotation, file.rotation, base.rotation_deg),
        flip_horizontal: pick(args.flip_horizontal, file.flip_horizontal, base.flip_horizontal),
        flip_vertical: pick(args.flip_vertical, file.flip_vertical, base.flip_vertical),
        color_scale_min: pick(args.color_scale_min, file.color_scale_min, base.color_scale_min),
        color_scale_max: pick(args.color_scale_max, file.color_scale_max, base.color_scale_max),
        color_shift: pick(args.color_shift, file.color_shift, base.color_shift),
    };
    let schedule = match args.lr_schedule.or(file.lr_schedule) {
        Some(text) => Some(LrSchedule::parse(&text)?),
        None => None,
    };
    let config = TrainConfig {
        arch: arch.clone(),
        resolution: spec.input_size as u32,
        epochs: pick(args.epochs, file.epochs, defaults.epochs),
        batch_size: pick(args.batch_size, file.batch_size, defaults.batch_size),
        seed: pick(args.seed, file.seed, defaults.seed),
        validation_fraction: pick(args.validation_fraction, file.validation_fraction, defaults.validation_fraction),
        schedule,
        learning_rate: pick(args.lr, file.lr, defaults.learning_rate),
        momentum: pick(args.momentum, file.momentum, defaults.momentum),
        weight_decay: pick(args.weight_decay, file.weight_decay, defaults.weight_decay),
        augment,
        resample: pick(args.resample, file.resample, defaults.resample),
        init_from: args.init_from.or(file.init_from),
    };
    config.validate()?;

    let records = load_manifest(&manifest)?;
    if records.is_empty() {
        return Err(Failure::Runtime(format!("{}: manifest has no records", manifest.display())));
    }
    let dataset = Dataset::load(&records, &data, config.resolution)?;
    let mut network = Network::<f32>::build_initialized(&spec, config.seed)?;
    if let Some(path) = &config.init_from {
        let source = Checkpoint::load(path)?;
        let report = transfer_from_checkpoint(&source, &mut network)?;
        println!("transfer from {}:\n{report}", path.display());
    }
    let outcome = train(&config, &dataset, &mut network)?;

    fs::create_dir_all(&out)?;
    outcome.best.save(out.join("model.ramn"))?;
    outcome.last.save(out.join("last.ramn"))?;
    fs::write(out.join("history.txt"), outcome.history_text())?;
    outcome.stats.save(out.join("stats.txt"))?;
    print!("{}", outcome.history_text());
    if let Some(why) = outcome.diverged {
        return Err(Failure::Runtime(format!("training diverged: {why}; last good parameters saved to last.ramn")));
    }
    let best = &outcome.history[outcome.best_epoch];
    println!("best epoch {} validation kappa {:.6}", best.epoch, best.val_kappa);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Outcome {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let records = load_manifest(&args.manifest)?;
    let root = args
        .data
        .unwrap_or_else(|| args.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let report = evaluate(&checkpoint, &records, &root)?;
    print!("{report}");
    if let Some(out) = args.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("kappa.txt"), report.to_string())?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Outcome {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let network = checkpoint.to_network::<f32>()?;
    let (mut image, _) = prepare_unit(&load_rgb(&args.image)?, network.input_size() as u32)?;
    checkpoint.meta.stats.standardize(&mut image);
    let score = network.predict(&image)?;
    println!("score {score:.6}");
    println!("level {}", discretize(score as f64)?);
    Ok(())
}

fn cmd_ram(args: RamArgs) -> Outcome {
    let source = load_rgb(&args.image)?;
    let mut maps = Vec::new();
    for path in &args.checkpoints {
        let checkpoint = Checkpoint::load(path)?;
        let network = checkpoint.to_network::<f32>()?;
        let (mut image, _) = prepare_unit(&source, network.input_size() as u32)?;
        checkpoint.meta.stats.standardize(&mut image);
        let map = compute_ram(&network, &image)?;
        println!(
            "{} resolution {} map {}x{} score {:.6} bias {:.6} sum {:.6}",
            path.display(),
            map.resolution,
            map.grid.height,
            map.grid.width,
            map.prediction,
            map.bias,
            map.grid.sum()
        );
        maps.push(map);
    }
    let side = maps.iter().map(|m| m.resolution).max().expect("at least one checkpoint");
    let grids: Vec<_> = maps.iter().map(|m| &m.grid).collect();
    let fused = fuse(&grids, side as usize, side as usize)?;
    let background = prepare_rgb(&source, side)?;
    let heatmap = render(&fused, &background, args.alpha)?;
    fs::create_dir_all(&args.out)?;
    heatmap.save(args.out.join("ram.png"))?;
    fused.save(args.out.join("ram.grid"))?;
    println!("wrote {} ({} map{})", args.out.join("ram.png").display(), maps.len(), if maps.len() == 1 { "" } else { "s fused" });
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Outcome {
    let (network, meta) = match (&args.checkpoint, &args.arch) {
        (Some(path), _) => {
            let c = Checkpoint::load(path)?;
            (c.to_network::<f32>()?, Some(c.meta))
        }
        (None, Some(name)) => (Network::<f32>::build(&resolve_arch(name, args.resolution)?)?, None),
        (None, None) => return Err(Failure::Usage("give --checkpoint or --arch".into())),
    };
    let spec = network.spec();
    println!("network {} input {}x{}x{}", spec.name, spec.input_size, spec.input_size, spec.input_channels);
    if let Some(m) = meta {
        println!("trained epochs {} seed {} resolution {}", m.epochs, m.seed, m.resolution);
    }
    println!("{:>3}  {:<10} {:>5} {:>6} {:>6} {:>5}  {:<32} {:>10}", "row", "kind", "units", "filter", "stride", "size", "shapes", "params");
    for row in network.layer_table() {
        let shapes: Vec<String> = row.shapes.iter().map(|s| format!("{s:?}")).collect();
        println!(
            "{:>3}  {:<10} {:>5} {:>6} {:>6} {:>5}  {:<32} {:>10}",
            row.row,
            row.kind.name(),
            row.units,
            row.filter,
            row.stride,
            row.out_size,
            shapes.join(" "),
            row.params
        );
    }
    println!("conv_bias_params {}", network.count_conv_bias());
    println!("total_params {}", network.count_parameters());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ram(a) => cmd_ram(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
