//! Command-line toolkit around the core library: model training, attack
//! batches, evaluation reports, parameter sweeps, and saliency ablations.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 model-gate
//! failure, 4 internal attack error.

pub mod ablate;
pub mod attack;
pub mod config;
pub mod evaluate;
pub mod models_io;
pub mod plots;
pub mod pngio;
pub mod rundir;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::saliency::SaliencyMethod;

use crate::config::Config;
use crate::models_io::LoadedModels;
use crate::sweep::SweepParam;

#[derive(Parser)]
#[command(
    name = "scoreadv",
    version,
    about = "Diffusion-guided unrestricted adversarial example toolkit"
)]
struct Cli {
    /// Configuration file (TOML); built-in defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Tag appended to the run-directory name.
    #[arg(long, global = true)]
    tag: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dataset models and write gated checkpoints.
    Train,
    /// Generate adversarial examples with a trained model set.
    Attack(AttackArgs),
    /// Score attack runs: transfer matrix plus quality metrics.
    Evaluate(EvaluateArgs),
    /// Rerun the attack batch across a grid of one guidance parameter.
    Sweep(SweepArgs),
    /// Compare saliency methods on paired seeds.
    AblateSaliency(AblateArgs),
}

#[derive(Args)]
struct AttackArgs {
    /// Train-run directory holding the checkpoints.
    #[arg(long)]
    models: Option<PathBuf>,

    /// Number of attack instances.
    #[arg(long)]
    count: Option<usize>,

    /// Worker threads for the attack batch.
    #[arg(long)]
    workers: Option<usize>,

    /// Adversarial guidance acts on steps t <= this.
    #[arg(long = "t-star")]
    t_star: Option<usize>,

    /// Sampling cycles per attack.
    #[arg(long)]
    cycles: Option<usize>,

    /// Adversarial guidance scale.
    #[arg(long = "s-a")]
    s_a: Option<f64>,

    /// Class guidance scale.
    #[arg(long = "s-c")]
    s_c: Option<f64>,

    /// Noise-optimization step scale.
    #[arg(long = "s-n")]
    s_n: Option<f64>,

    /// Base seed for the batch.
    #[arg(long)]
    seed: Option<u64>,

    /// Surrogate classifier id (conv or mlp).
    #[arg(long)]
    surrogate: Option<String>,

    /// Reference image (PNG) for saliency-masked inpainting.
    #[arg(long)]
    reference: Option<PathBuf>,

    /// Saliency method: score_cam, grad_cam, or grad_cam_pp.
    #[arg(long)]
    saliency: Option<String>,

    /// Target identity image (PNG); attacks the embedder instead of a
    /// classifier.
    #[arg(long = "target-image")]
    target_image: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Attack run directories to score (first one receives the report).
    #[arg(required = true)]
    runs: Vec<PathBuf>,

    /// Train-run directory; defaults to the one recorded in the manifest.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Parameter to sweep: t_star, n_cycles, s_a, or s_n.
    #[arg(long)]
    param: String,

    /// Grid values, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,

    /// Train-run directory holding the checkpoints.
    #[arg(long)]
    models: Option<PathBuf>,

    /// Number of attack instances per grid point.
    #[arg(long)]
    count: Option<usize>,

    /// Worker threads for each attack batch.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    /// Train-run directory holding the checkpoints.
    #[arg(long)]
    models: Option<PathBuf>,

    /// Number of attack instances per method.
    #[arg(long)]
    count: Option<usize>,

    /// Worker threads for each attack batch.
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_saliency(s: &str) -> Result<SaliencyMethod> {
    match s {
        "score_cam" => Ok(SaliencyMethod::ScoreCam),
        "grad_cam" => Ok(SaliencyMethod::GradCam),
        "grad_cam_pp" => Ok(SaliencyMethod::GradCamPp),
        other => Err(Error::parameter(format!(
            "unknown saliency method {other}; expected score_cam, grad_cam, or grad_cam_pp"
        ))),
    }
}

fn apply_attack_overrides(cfg: &mut Config, a: &AttackArgs) -> Result<()> {
    if let Some(v) = a.count {
        cfg.attack.count = v;
    }
    if let Some(v) = a.workers {
        cfg.attack.workers = v;
    }
    if let Some(v) = a.t_star {
        cfg.guidance.adv_window = Some(v);
    }
    if let Some(v) = a.cycles {
        cfg.guidance.cycles = v;
    }
    if let Some(v) = a.s_a {
        cfg.guidance.adv_scale = v;
    }
    if let Some(v) = a.s_c {
        cfg.guidance.class_scale = v;
    }
    if let Some(v) = a.s_n {
        cfg.guidance.noise_scale = v;
    }
    if let Some(v) = a.seed {
        cfg.guidance.seed = v;
    }
    if let Some(v) = &a.surrogate {
        cfg.attack.surrogate = v.clone();
    }
    if let Some(v) = &a.reference {
        cfg.attack.reference = Some(v.display().to_string());
    }
    if let Some(v) = &a.saliency {
        cfg.attack.saliency_method = parse_saliency(v)?;
    }
    if let Some(v) = &a.target_image {
        cfg.attack.target_image = Some(v.display().to_string());
    }
    Ok(())
}

/// Flag wins over the config's `models.dir`.
fn load_models_arg(cfg: &Config, flag: Option<&Path>) -> Result<LoadedModels> {
    let dir = match flag {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from(cfg.models.dir.clone().ok_or_else(|| {
            Error::parameter("no models directory; pass --models or set models.dir in the config")
        })?),
    };
    models_io::load_models(&dir)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(tag) = cli.tag {
        cfg.output.tag = Some(tag);
    }
    match cli.command {
        Command::Train => {
            train::run(&cfg)?;
            Ok(())
        }
        Command::Attack(a) => {
            apply_attack_overrides(&mut cfg, &a)?;
            let models = load_models_arg(&cfg, a.models.as_deref())?;
            attack::run(&cfg, &models)?;
            Ok(())
        }
        Command::Evaluate(a) => evaluate::run(&a.runs, a.models.as_deref()),
        Command::Sweep(a) => {
            if let Some(v) = a.count {
                cfg.attack.count = v;
            }
            if let Some(v) = a.workers {
                cfg.attack.workers = v;
            }
            let param: SweepParam = a.param.parse()?;
            let models = load_models_arg(&cfg, a.models.as_deref())?;
            sweep::run(&cfg, &models, param, &a.grid)
        }
        Command::AblateSaliency(a) => {
            if let Some(v) = a.count {
                cfg.attack.count = v;
            }
            if let Some(v) = a.workers {
                cfg.attack.workers = v;
            }
            let models = load_models_arg(&cfg, a.models.as_deref())?;
            ablate::run(&cfg, &models)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_)
        | Error::Shape(_)
        | Error::Ingestion(_)
        | Error::Io(_)
        | Error::Json(_) => 2,
        Error::Gate(_) => 3,
        Error::Attack { .. } | Error::Capability(_) => 4,
    }
}

/// Parses arguments and runs the selected subcommand; returns the process
/// exit code. Argument-syntax errors exit through clap with code 2.
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_reach_the_config() {
        let cli = Cli::parse_from([
            "scoreadv", "attack", "--count", "3", "--t-star", "7", "--s-a", "0.5",
            "--surrogate", "mlp", "--saliency", "grad_cam",
        ]);
        let mut cfg = Config::default();
        match cli.command {
            Command::Attack(a) => apply_attack_overrides(&mut cfg, &a).unwrap(),
            _ => unreachable!(),
        }
        assert_eq!(cfg.attack.count, 3);
        assert_eq!(cfg.guidance.adv_window, Some(7));
        assert_eq!(cfg.guidance.adv_scale, 0.5);
        assert_eq!(cfg.attack.surrogate, "mlp");
        assert_eq!(cfg.attack.saliency_method, SaliencyMethod::GradCam);
    }

    #[test]
    fn unknown_saliency_is_an_input_error() {
        let err = parse_saliency("cam").unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        assert_eq!(exit_code(&Error::parameter("x")), 2);
        assert_eq!(exit_code(&Error::gate("x")), 3);
        assert_eq!(exit_code(&Error::capability("x")), 4);
        assert_eq!(exit_code(&Error::parameter("x").at_step(1, 2)), 4);
    }
}
