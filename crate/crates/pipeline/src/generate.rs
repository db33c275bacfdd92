//! Sampling avatars from a trained run and rendering token sets.

use std::path::{Path, PathBuf};

use glca_core::compressor::decode;
use glca_core::conditions::{ConditionBundle, ImageKind, Modality};
use glca_core::detok::{render_identity, Detokenizer};
use glca_core::diffusion::sample;
use glca_core::stats::ChannelStats;
use glca_core::wardrobe::{CoverageClass, Labels};
use glca_numerics::{SeedStream, Tensor};
use glca_splat::{BodyPose, Camera, Image, UnitQuaternion, Vector3};
use rand::Rng;

use crate::config::RunConfig;
use crate::dataset::World;
use crate::error::{io_err, Result};
use crate::layout::Layout;
use crate::shard::{write_atomic, Record, Shard};
use crate::train::{load_compressor, load_denoiser, CompressorModel, DenoiserModel};

/// Largest joint rotation drawn by [`random_pose`], in radians.
pub const MAX_JOINT_ANGLE: f64 = 0.6;
/// Camera distance and vertical field of view of every render.
const ORBIT_DISTANCE: f64 = 4.0;
const ORBIT_FOV: f64 = 0.58;

/// Uniform random axis and an angle in `[-MAX_JOINT_ANGLE, MAX_JOINT_ANGLE]`
/// for every joint but the root.
pub fn random_pose<R: Rng>(rng: &mut R, n_joints: usize) -> BodyPose {
    let mut pose = BodyPose::identity(n_joints);
    for q in pose.rotations.iter_mut().skip(1) {
        let axis = loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let angle = rng.random_range(-MAX_JOINT_ANGLE..=MAX_JOINT_ANGLE);
        *q = UnitQuaternion::from_scaled_axis(axis * angle);
    }
    pose
}

pub fn view_camera(yaw_deg: f64, side: usize) -> Result<Camera> {
    Ok(Camera::orbit(Vector3::zeros(), ORBIT_DISTANCE, yaw_deg.to_radians(), 0.0, ORBIT_FOV, side, side)?)
}

/// A run's trained models, ready to sample.
pub struct Models {
    pub world: World,
    pub compressor: CompressorModel,
    pub denoiser: DenoiserModel,
    pub detok: Detokenizer,
}

impl Models {
    pub fn load(cfg: &RunConfig, layout: &Layout, tag: &str) -> Result<Self> {
        let world = World::new(&cfg.dataset)?;
        let detok = Detokenizer::Analytic(world.codec.clone());
        Ok(Self {
            compressor: load_compressor(layout)?,
            denoiser: load_denoiser(layout, tag)?,
            world,
            detok,
        })
    }

    /// Raw tokens decoded from latents in the denoiser's standardized space.
    pub fn decode_latents(&self, z: &Tensor) -> Result<Tensor> {
        let coords = self.world.template.coords();
        let raw = self.denoiser.latent_stats.restore(z)?;
        let x = decode(&self.compressor.params, &self.compressor.config, &raw, &coords)?;
        Ok(self.compressor.token_stats.restore(&x)?)
    }

    /// Samples standardized latents and decodes them to raw tokens.
    pub fn generate(&self, bundle: &ConditionBundle, cfg_scale: f64, steps: usize, seed: SeedStream) -> Result<(Tensor, Tensor)> {
        let coords = self.world.template.coords();
        let z = sample(&self.denoiser.params, &self.denoiser.config, &coords, bundle, cfg_scale, steps, seed)?;
        let tokens = self.decode_latents(&z)?;
        Ok((z, tokens))
    }

    pub fn render(&self, tokens: &Tensor, pose: &BodyPose, camera: &Camera) -> Result<Image> {
        Ok(render_identity(tokens, &self.detok, &self.world.template, pose, camera)?)
    }
}

/// What to sample: labels (from a caption or palette indices) and the
/// condition modality.
#[derive(Clone, Debug)]
pub struct SampleRequest {
    pub labels: Labels,
    pub modality: Modality,
    pub image_kind: ImageKind,
    pub cfg_scale: f64,
    pub steps: usize,
    pub seed: u64,
    pub random_poses: usize,
    pub name: String,
}

impl SampleRequest {
    pub fn from_caption(caption: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self::new(Labels::from_caption(caption, CoverageClass::FullTurn)?, cfg))
    }

    pub fn new(labels: Labels, cfg: &RunConfig) -> Self {
        Self {
            labels,
            modality: Modality::TextOnly,
            image_kind: ImageKind::Scribble,
            cfg_scale: cfg.sample.cfg_scale,
            steps: cfg.sample.steps,
            seed: cfg.seed,
            random_poses: 0,
            name: "sample".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub dir: PathBuf,
    pub pngs: Vec<PathBuf>,
}

/// Renders rest-pose views at every configured yaw, then `random_poses`
/// frontal renders in random poses drawn from `pose_seed`.
pub fn render_views(
    models_world: &World,
    detok: &Detokenizer,
    tokens: &Tensor,
    cfg: &RunConfig,
    random_poses: usize,
    pose_seed: SeedStream,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n_joints = models_world.template.rig.skeleton().len();
    let side = cfg.sample.image_size;
    let mut out = Vec::new();
    for &yaw in &cfg.sample.yaws {
        let img = render_identity(tokens, detok, &models_world.template, &BodyPose::identity(n_joints), &view_camera(yaw, side)?)?;
        let path = dir.join(format!("view_{:03}.png", yaw.round() as i64));
        write_png(&img, &path)?;
        out.push(path);
    }
    for k in 0..random_poses {
        let pose = random_pose(&mut pose_seed.index(k as u64).rng(), n_joints);
        let img = render_identity(tokens, detok, &models_world.template, &pose, &view_camera(0.0, side)?)?;
        let path = dir.join(format!("pose_{k:03}.png"));
        write_png(&img, &path)?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.encode_png(&mut bytes)?;
    write_atomic(path, &bytes)
}

/// Samples one avatar and writes its latents, tokens, and renders under
/// `samples/<name>`.
pub fn cmd_sample(cfg: &RunConfig, layout: &Layout, req: &SampleRequest) -> Result<SampleOutput> {
    let models = Models::load(cfg, layout, &cfg.ablation.tag())?;
    let sources = glca_core::conditions::ConditionSources::new(&req.labels, &models.world.template)?;
    let bundle = sources.bundle(req.modality, req.image_kind);
    let stream = SeedStream::new(req.seed).derive("sample");
    let (z, tokens) = models.generate(&bundle, req.cfg_scale, req.steps, stream)?;
    let dir = layout.samples().join(&req.name);
    let n = models.world.template.len();
    let record = |matrix: Tensor| Record {
        id: req.name.clone(),
        matrix,
        mask: vec![true; n],
        labels: req.labels.clone(),
    };
    Shard {
        n,
        width: tokens.cols(),
        stats: None,
        records: vec![record(tokens.clone())],
    }
    .write(&dir.join("tokens.glca"))?;
    Shard {
        n,
        width: z.cols(),
        stats: Some(ChannelStats::identity(z.cols())),
        records: vec![record(z)],
    }
    .write(&dir.join("latents.glcz"))?;
    let pngs = render_views(&models.world, &models.detok, &tokens, cfg, req.random_poses, stream.derive("poses"), &dir)?;
    Ok(SampleOutput { dir, pngs })
}

/// Renders one stored identity's tokens.
pub fn cmd_render(cfg: &RunConfig, layout: &Layout, record: &Record, random_poses: usize) -> Result<Vec<PathBuf>> {
    let world = World::new(&cfg.dataset)?;
    let detok = Detokenizer::Analytic(world.codec.clone());
    let stream = SeedStream::new(cfg.seed).derive("render").derive(&record.id);
    render_views(&world, &detok, &record.matrix, cfg, random_poses, stream, &layout.renders().join(&record.id))
}
