use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use glca_core::conditions::{ImageKind, Modality};
use glca_core::wardrobe::{CoverageClass, Labels};
use glca_pipeline::dataset::{cmd_dataset, load_split};
use glca_pipeline::eval::{cmd_eval, cmd_eval_mask, EvalOptions};
use glca_pipeline::generate::{cmd_render, cmd_sample, SampleRequest};
use glca_pipeline::train::{cmd_train_compressor, cmd_train_diffusion};
use glca_pipeline::{gradcheck, Layout, RunConfig, Split};

const PROGRESS_EVERY: u64 = 50;

#[derive(Parser)]
#[command(name = "glca", version, about = "Synthetic Gaussian avatar generation with visibility-aware training")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// JSON config; defaults to the run's config.json, else the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training ablation; repeat to combine.
    #[arg(long, global = true, value_enum)]
    ablation: Vec<AblationArg>,
    /// Replace existing outputs instead of resuming or refusing.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    NoMask,
    ZeroPlaceholder,
    CapturedOnly,
}

impl AblationArg {
    fn name(self) -> &'static str {
        match self {
            AblationArg::NoMask => "no-mask",
            AblationArg::ZeroPlaceholder => "zero-placeholder",
            AblationArg::CapturedOnly => "captured-only",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Text,
    Image,
    TextImage,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageKindArg {
    Scribble,
    BodyParts,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic identity dataset.
    Dataset,
    /// Train the point-cloud compressor and cache latents.
    TrainCompressor,
    /// Train the denoiser for the selected ablation.
    TrainDiffusion,
    /// Sample one avatar and render it.
    Sample {
        #[arg(long, conflicts_with = "palette")]
        caption: Option<String>,
        /// Five palette indices: skin, hair, top, pants, shoes.
        #[arg(long, value_delimiter = ',')]
        palette: Option<Vec<u8>>,
        #[arg(long, value_enum, default_value = "text")]
        modality: ModalityArg,
        #[arg(long, value_enum, default_value = "scribble")]
        image_kind: ImageKindArg,
        #[arg(long)]
        cfg_scale: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        random_poses: usize,
        #[arg(long, default_value = "sample")]
        name: String,
    },
    /// Render a stored identity.
    Render {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, conflicts_with = "id")]
        index: Option<usize>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 0)]
        random_poses: usize,
    },
    /// Write per-identity visibility statistics.
    EvalMask {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score the compressor and every trained denoiser variant.
    Eval {
        /// Test identities checked against the brute-force mask.
        #[arg(long)]
        oracle_identities: Option<usize>,
        /// Test identities sampled per variant.
        #[arg(long)]
        sample_identities: Option<usize>,
        /// Variant tag to score; repeat for several. All present by default.
        #[arg(long)]
        variant: Vec<String>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        points: u64,
    },
}

fn resolve(common: &Common, layout: &Layout) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&common.config, layout.config().exists(), common.preset) {
        (None, false, Preset::Tiny) => RunConfig::tiny(),
        _ => layout.resolve_config(common.config.as_deref())?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for a in &common.ablation {
        cfg.ablation.set(a.name())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let layout = Layout::new(&cli.common.out);
    let cfg = resolve(&cli.common, &layout)?;
    let force = cli.common.force;
    match cli.command {
        Command::Dataset => {
            let m = cmd_dataset(&cfg, &layout, force)?;
            for s in &m.splits {
                println!("{}: {} identities in {} shards {:?}", s.name, s.count, s.shards.len(), s.classes);
            }
        }
        Command::TrainCompressor => {
            let s = cmd_train_compressor(&cfg, &layout, force, |st| {
                if st.step % PROGRESS_EVERY == 0 || st.step + 1 == cfg.compressor.steps {
                    eprintln!("step {} loss {:.5} l1 {:.5} kl {:.4} lr {:.2e}", st.step, st.loss, st.l1, st.kl, st.lr);
                }
            })?;
            println!("compressor steps {}..{} last loss {:.5}", s.start_step, s.end_step, s.last_loss);
        }
        Command::TrainDiffusion => {
            let s = cmd_train_diffusion(&cfg, &layout, force, |st| {
                if st.step % PROGRESS_EVERY == 0 || st.step + 1 == cfg.diffusion.steps {
                    eprintln!("step {} loss {:.5} lr {:.2e} used {}", st.step, st.loss, st.lr, st.used);
                }
            })?;
            println!(
                "denoiser [{}] steps {}..{} last loss {:.5}",
                cfg.ablation.tag(),
                s.start_step,
                s.end_step,
                s.last_loss
            );
        }
        Command::Sample {
            caption,
            palette,
            modality,
            image_kind,
            cfg_scale,
            steps,
            random_poses,
            name,
        } => {
            let labels = match (caption, palette) {
                (Some(c), _) => Labels::from_caption(&c, CoverageClass::FullTurn)?,
                (None, Some(p)) => {
                    let p: [u8; 5] = p.try_into().map_err(|_| anyhow!("--palette takes five indices"))?;
                    Labels::new(p, CoverageClass::FullTurn)?
                }
                (None, None) => return Err(anyhow!("give --caption or --palette")),
            };
            let mut req = SampleRequest::new(labels, &cfg);
            req.modality = match modality {
                ModalityArg::Text => Modality::TextOnly,
                ModalityArg::Image => Modality::ImageOnly,
                ModalityArg::TextImage => Modality::TextPlusImage,
            };
            req.image_kind = match image_kind {
                ImageKindArg::Scribble => ImageKind::Scribble,
                ImageKindArg::BodyParts => ImageKind::BodyParts,
            };
            req.cfg_scale = cfg_scale.unwrap_or(req.cfg_scale);
            req.steps = steps.unwrap_or(req.steps);
            req.random_poses = random_poses;
            req.name = name;
            println!("{}", req.labels.caption);
            let out = cmd_sample(&cfg, &layout, &req)?;
            for p in out.pngs {
                println!("{}", p.display());
            }
        }
        Command::Render {
            split,
            index,
            id,
            random_poses,
        } => {
            let records = load_split(&layout, Split::parse(&split)?)?;
            let record = match (index, id) {
                (_, Some(id)) => records.iter().find(|r| r.id == id).with_context(|| format!("no identity {id}"))?,
                (i, None) => {
                    let i = i.unwrap_or(0);
                    records.get(i).with_context(|| format!("{split} has {} identities", records.len()))?
                }
            };
            for p in cmd_render(&cfg, &layout, record, random_poses)? {
                println!("{}", p.display());
            }
        }
        Command::EvalMask { split } => {
            let split = Split::parse(&split)?;
            let rows = cmd_eval_mask(&layout, split)?;
            let mean = rows.iter().map(|r| r.valid_fraction).sum::<f64>() / rows.len().max(1) as f64;
            println!("{} identities, mean valid fraction {mean:.4} -> {}", rows.len(), layout.eval_mask(split).display());
        }
        Command::Eval {
            oracle_identities,
            sample_identities,
            variant,
        } => {
            let defaults = EvalOptions::default();
            let opts = EvalOptions {
                oracle_identities: oracle_identities.unwrap_or(defaults.oracle_identities),
                sample_identities: sample_identities.unwrap_or(defaults.sample_identities),
                variants: variant,
            };
            for m in cmd_eval(&cfg, &layout, &opts)? {
                println!("{:<28} {:<28} {:<16} {:>10.5} ({})", m.variant, m.metric, m.class, m.value, m.count);
            }
        }
        Command::Gradcheck { points } => {
            let rows = gradcheck::run(points, cfg.seed)?;
            let mut ok = true;
            for r in &rows {
                println!(
                    "{} {:<9} {:<24} {:.3e} (< {:.0e})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.scope,
                    r.name,
                    r.relative_error,
                    r.tolerance
                );
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("GLCA_THREADS") {
        match n.parse::<usize>() {
            Ok(n) => {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
            }
            Err(_) => eprintln!("ignoring GLCA_THREADS={n:?}"),
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
