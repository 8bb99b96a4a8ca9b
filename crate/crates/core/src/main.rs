use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use radfield::cli::{
    cmd_ablate, cmd_eval, cmd_render, cmd_synth, cmd_train, load_run, AblationSpec, EmbeddingSource, NoiseAxis,
    RenderSpec, CHECKPOINT, CONFIG_REFERENCE,
};
use radfield::config::ExperimentConfig;
use radfield::dataset::{SceneDataset, Split};
use radfield::{Error, Result};

/// Radiance-field reconstruction with per-image appearance embeddings and
/// pose corrections.
#[derive(Parser)]
#[command(name = "radfield", version)]
struct Cli {
    /// Experiment config file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the small desk-scale preset instead of the full defaults
    /// (ignored when --config is given).
    #[arg(long, global = true)]
    desk: bool,
    /// Seed for initialization, batch sampling and label noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct SynthArgs {
    /// Number of orbit views.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Number of lighting conditions (1-4).
    #[arg(long)]
    light_variants: Option<usize>,
    /// Label rotation noise scale (degrees).
    #[arg(long)]
    noise_rot: Option<f64>,
    /// Label translation noise scale (meters).
    #[arg(long)]
    noise_trans: Option<f64>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    /// Rays per batch.
    #[arg(long)]
    rays: Option<usize>,
    /// Disable appearance embeddings.
    #[arg(long)]
    no_appearance: bool,
    /// Disable pose corrections.
    #[arg(long)]
    no_pose_correction: bool,
    /// Learning-rate factor of the rotation corrections (at most 0.01).
    #[arg(long)]
    beta_dq: Option<f64>,
    /// Learning-rate factor of the translation corrections (at most 0.01).
    #[arg(long)]
    beta_dt: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render an oracle dataset (images, masks, manifest).
    Synth {
        /// Output directory (default: the config's dataset).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train a field; writes checkpoint, metrics log and correction table.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run directory (default: the config's output).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Render an orbit trajectory from a checkpoint to a PNG sequence.
    Render {
        /// Checkpoint (default: <output>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory (default: <output>/render).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 36)]
        frames: usize,
        /// zero | image:<k> | fitted:<frame>.
        #[arg(long, default_value = "zero")]
        embedding: EmbeddingSource,
        /// Dataset holding the frame of a fitted embedding (default: the run's dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Score a checkpoint with the half-pixel embedding protocol.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset to score on (default: the run's dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory (default: <output>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
        /// train | test.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        /// Skip the reference | render | error PNG panels.
        #[arg(long)]
        no_panels: bool,
    },
    /// Sweep label noise with and without pose correction (resumable).
    Ablate {
        /// rotation (levels in degrees) | translation (levels in % of scene diameter).
        #[arg(long, default_value = "rotation")]
        axis: NoiseAxis,
        /// Comma-separated noise levels (default: 0,0.5,1).
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Use the full grid (rotation 0..1.6 deg, translation 0..2 %).
        #[arg(long)]
        full: bool,
        /// Sweep directory (default: <output>/ablation).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        synth: SynthArgs,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?}")),
    }
}

fn apply_synth(cfg: &mut ExperimentConfig, a: &SynthArgs) {
    let s = &mut cfg.synth;
    s.views = a.views.unwrap_or(s.views);
    s.width = a.width.unwrap_or(s.width);
    s.height = a.height.unwrap_or(s.height);
    s.light_variants = a.light_variants.unwrap_or(s.light_variants);
    s.noise.sigma_rot_deg = a.noise_rot.unwrap_or(s.noise.sigma_rot_deg);
    s.noise.sigma_trans = a.noise_trans.unwrap_or(s.noise.sigma_trans);
}

fn apply_train(cfg: &mut ExperimentConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.rays_per_batch = a.rays.unwrap_or(t.rays_per_batch);
    t.beta_dq = a.beta_dq.unwrap_or(t.beta_dq);
    t.beta_dt = a.beta_dt.unwrap_or(t.beta_dt);
    t.enable_appearance &= !a.no_appearance;
    t.enable_pose_correction &= !a.no_pose_correction;
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match (&cli.config, cli.desk) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, true) => ExperimentConfig::desk(),
        (None, false) => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.synth.noise.seed = s;
    }
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.workers = w;
    }
    let checkpoint_of = |cfg: &ExperimentConfig, p: &Option<PathBuf>| p.clone().unwrap_or_else(|| cfg.output.join(CHECKPOINT));
    let mut stderr = std::io::stderr();
    match cli.cmd {
        Cmd::Synth { out, synth } => {
            apply_synth(&mut cfg, &synth);
            cfg.validate()?;
            let out = out.unwrap_or(cfg.dataset.clone());
            let ds = cmd_synth(&cfg.synth, &out)?;
            eprintln!("wrote {} views to {}", ds.frames.len(), out.display());
        }
        Cmd::Train { dataset, out, train } => {
            apply_train(&mut cfg, &train);
            cfg.dataset = dataset.unwrap_or(cfg.dataset);
            cfg.output = out.unwrap_or(cfg.output);
            let o = cmd_train(&cfg, Some(&mut stderr))?;
            eprintln!("final loss {:.5}; checkpoint {}", o.final_loss, o.checkpoint.display());
        }
        Cmd::Render { checkpoint, out, frames, embedding, dataset, width, height } => {
            let run = load_run(&checkpoint_of(&cfg, &checkpoint))?;
            let out = out.unwrap_or_else(|| cfg.output.join("render"));
            let mut spec = RenderSpec::from_config(&run.config, frames);
            spec.source = embedding;
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            let ds = match (embedding, dataset) {
                (EmbeddingSource::Fitted(_), d) => Some(SceneDataset::load(&d.unwrap_or(run.config.dataset.clone()))?),
                _ => None,
            };
            let files = cmd_render(&run, ds.as_ref(), &spec, &out)?;
            eprintln!("wrote {} frames to {}", files.len(), out.display());
        }
        Cmd::Eval { checkpoint, dataset, out, split, no_panels } => {
            let run = load_run(&checkpoint_of(&cfg, &checkpoint))?;
            let ds = SceneDataset::load(&dataset.unwrap_or(run.config.dataset.clone()))?;
            let out = out.unwrap_or_else(|| cfg.output.join("eval"));
            let mut eval = run.config.eval.clone();
            eval.split = split.unwrap_or(eval.split);
            let r = cmd_eval(&run, &ds, &eval, Some(&out), !no_panels)?;
            print_json(&r)?;
        }
        Cmd::Ablate { axis, levels, full, out, train, synth } => {
            apply_train(&mut cfg, &train);
            apply_synth(&mut cfg, &synth);
            let mut spec = if full { AblationSpec::full(axis) } else { AblationSpec::reduced(axis) };
            if let Some(l) = levels {
                spec.levels = l;
            }
            let out = out.unwrap_or_else(|| cfg.output.join("ablation"));
            let r = cmd_ablate(&cfg, &spec, &out, Some(&mut stderr))?;
            print_json(&r)?;
        }
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    use std::io::Write;
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_long_help(CONFIG_REFERENCE);
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
