//! Finite-difference checks of the tape operations and the denoiser loss.

use glca_core::conditions::{ConditionSources, ImageKind, Modality};
use glca_core::diffusion::{loss_gradient_check, DenoiserConfig};
use glca_core::template::make_template;
use glca_core::wardrobe::{CoverageClass, Labels};
use glca_numerics::{gradcheck::op_suite, SeedStream};

use crate::error::Result;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-3;
const H: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    /// `op` or `denoiser`.
    pub scope: &'static str,
    pub name: String,
    pub relative_error: f64,
    pub tolerance: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.relative_error < self.tolerance
    }
}

/// Every tape operation at `points` random probes, then the two-block
/// denoiser's loss under both image condition kinds.
pub fn run(points: u64, seed: u64) -> Result<Vec<GradRow>> {
    let mut rows: Vec<GradRow> = op_suite(points, H)?
        .into_iter()
        .map(|(name, e)| GradRow {
            scope: "op",
            name: name.into(),
            relative_error: e,
            tolerance: OP_TOLERANCE,
        })
        .collect();
    let template = make_template(12, seed)?;
    let labels = Labels::new([1, 2, 3, 4, 5], CoverageClass::FrontalOnly)?;
    let sources = ConditionSources::new(&labels, &template)?;
    let config = DenoiserConfig::micro();
    let stream = SeedStream::new(seed).derive("gradcheck");
    for kind in [ImageKind::Scribble, ImageKind::BodyParts] {
        let bundle = sources.bundle(Modality::TextPlusImage, kind);
        for (name, e) in loss_gradient_check(&config, &template.coords(), &bundle, 3, H, stream.derive(&format!("{kind:?}")))? {
            if rows.iter().any(|r| r.scope == "denoiser" && r.name == name) {
                continue;
            }
            rows.push(GradRow {
                scope: "denoiser",
                name,
                relative_error: e,
                tolerance: LOSS_TOLERANCE,
            });
        }
    }
    Ok(rows)
}
