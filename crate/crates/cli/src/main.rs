use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use depthcast::config::RunConfig;
use depthcast::data::formats::{disparity_preview, write_pfm, write_pgm};
use depthcast::data::{
    dataset::load_context_frames, generate_dataset, Dataset, SceneOptions, HORIZONS,
};
use depthcast::eval::{evaluate, predict_frames};
use depthcast::network::Model;
use depthcast::train::{load_weights, Trainer, CONFIG_ARCHIVE};
use depthcast::Error;

#[derive(Parser)]
#[command(
    name = "depthcast",
    version,
    about = "Depth-sequence forecasting from four context frames"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset of clips with ground-truth depth and poses.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Number of clips, at least 1.
        #[arg(long)]
        clips: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
        moving_objects: bool,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
    },
    /// Train the depth and pose networks.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out set and write metrics.csv.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Forecast depth for one clip directory.
    Infer(InferArgs),
    /// Alias of `infer`.
    RenderDepth(InferArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration. Defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted `key=value` override, e.g. `train.lr=1e-3`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Clip directory holding frame_0.ppm … frame_3.ppm and intrinsics.json.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

impl ConfigArgs {
    fn resolve(&self) -> depthcast::Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides),
            None => RunConfig::from_overrides(&self.overrides),
        }
    }

    /// Like `resolve`, but falls back to the config archived next to a
    /// checkpoint when no file is given.
    fn resolve_for(&self, checkpoint: &Path) -> depthcast::Result<RunConfig> {
        if self.config.is_none() {
            for dir in checkpoint.ancestors().skip(1).take(3) {
                let p = dir.join(CONFIG_ARCHIVE);
                if p.is_file() {
                    return RunConfig::load(&p, &self.overrides);
                }
            }
        }
        self.resolve()
    }
}

fn echo(cfg: &RunConfig) {
    println!("resolved config:\n{}", cfg.to_json());
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> depthcast::Result<Model> {
    let model = Model::new(&cfg.model, cfg.seed)?;
    load_weights(&model, checkpoint)?;
    Ok(model)
}

fn gen_data(
    out: &Path,
    clips: u64,
    seed: u64,
    moving: bool,
    width: usize,
    height: usize,
) -> depthcast::Result<()> {
    let opts = SceneOptions {
        width,
        height,
        moving_objects: moving,
        ..SceneOptions::default()
    };
    let m = generate_dataset(out, clips as usize, seed, &opts)?;
    println!("wrote {} clips to {}", m.clips.len(), out.display());
    Ok(())
}

fn train(args: &ConfigArgs, resume: Option<&Path>) -> depthcast::Result<()> {
    let cfg = args.resolve()?;
    let data = cfg.train_dataset()?.to_path_buf();
    echo(&cfg);
    let clips = Dataset::open(&data)?.load_all()?;
    let mut trainer = Trainer::new(cfg)?;
    if let Some(ckpt) = resume {
        trainer.load_checkpoint(ckpt)?;
        println!("resumed from {} at step {}", ckpt.display(), trainer.step);
    }
    let total = trainer.config.train.steps;
    let start = Instant::now();
    let first = trainer.step;
    let last = trainer.run(&clips, |step, bd| {
        let rate = start.elapsed().as_secs_f64() / (step - first) as f64;
        eprintln!(
            "step {step}/{total} total {:.5} photometric {:.5} smoothness {:.6} kept {:.3} ({rate:.2}s/step)",
            bd.total, bd.photometric, bd.smoothness, bd.masked_fraction
        );
    })?;
    println!("final checkpoint: {}", last.display());
    Ok(())
}

fn eval(args: &ConfigArgs, checkpoint: &Path) -> depthcast::Result<()> {
    let cfg = args.resolve_for(checkpoint)?;
    let data = cfg.eval_dataset()?.to_path_buf();
    echo(&cfg);
    let model = load_model(&cfg, checkpoint)?;
    let report = evaluate(&model.depth, &Dataset::open(&data)?, cfg.eval.batch_size)?;
    let dir = cfg
        .eval
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.train.out_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    let csv = dir.join("metrics.csv");
    report.write_csv(&csv)?;
    print!("{}", report.summary());
    println!("wrote {}", csv.display());
    Ok(())
}

fn infer(a: &InferArgs) -> depthcast::Result<()> {
    let cfg = a.config.resolve_for(&a.checkpoint)?;
    echo(&cfg);
    let model = load_model(&cfg, &a.checkpoint)?;
    let (frames, _k) = load_context_frames(&a.clip)?;
    let (w, h) = (frames[0].width, frames[0].height);
    if (h, w) != (cfg.model.height, cfg.model.width) {
        return Err(Error::Invalid(format!(
            "clip frames are {w}x{h} but the model expects {}x{}",
            cfg.model.width, cfg.model.height
        )));
    }
    let depths = predict_frames(&model.depth, &frames)?;
    for (hz, d) in HORIZONS.iter().zip(&depths) {
        write_pfm(&a.out.join(format!("depth_{hz}.pfm")), d)?;
        write_pgm(
            &a.out.join(format!("depth_{hz}.pgm")),
            d.width,
            d.height,
            &disparity_preview(d),
        )?;
    }
    println!("wrote depth_{{0,1,3,5}}.pfm/pgm to {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::GenData { clips: 0, .. } = cli.command {
        let mut cmd = Cli::command();
        let usage = cmd
            .find_subcommand_mut("gen-data")
            .expect("subcommand")
            .render_usage();
        eprintln!("error: --clips must be at least 1\n\n{usage}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::GenData {
            out,
            clips,
            seed,
            moving_objects,
            width,
            height,
        } => gen_data(out, *clips, *seed, *moving_objects, *width, *height),
        Command::Train { config, resume } => train(config, resume.as_deref()),
        Command::Eval { config, checkpoint } => eval(config, checkpoint),
        Command::Infer(a) | Command::RenderDepth(a) => infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
