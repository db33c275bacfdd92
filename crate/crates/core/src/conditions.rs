//! Frozen surrogate embedders for text, scribble, and body-part conditions.

use glca_numerics::{SeedStream, Tensor};
use glca_splat::{rasterize, Camera, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::template::{QueryPointSet, Region};
use crate::tokens::{splats_from_appearance, Appearance, BASE_LOG_SCALE, BASE_OPACITY_LOGIT};
use crate::wardrobe::Labels;

pub const TEXT_DIM: usize = 32;
/// Cells per side of the scribble grid.
pub const SCRIBBLE_GRID: usize = 8;
/// RGBA plus cell center.
pub const SCRIBBLE_DIM: usize = 6;
/// RGB plus region one-hot.
pub const PARTS_DIM: usize = 3 + Region::ALL.len();
const SCRIBBLE_PIXELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    TextOnly,
    ImageOnly,
    TextPlusImage,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::TextOnly, Modality::ImageOnly, Modality::TextPlusImage];

    pub fn has_text(self) -> bool {
        self != Modality::ImageOnly
    }

    pub fn has_image(self) -> bool {
        self != Modality::TextOnly
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageKind {
    Scribble,
    BodyParts,
}

/// Condition sequences handed to the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    pub modality: Modality,
    pub image_kind: Option<ImageKind>,
    /// `L_text x TEXT_DIM`.
    pub text: Option<Tensor>,
    /// `L_img x SCRIBBLE_DIM` or `L_img x PARTS_DIM`.
    pub image: Option<Tensor>,
}

impl ConditionBundle {
    /// Same layout with every token zeroed.
    pub fn null(&self) -> Self {
        let zero = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            modality: self.modality,
            image_kind: self.image_kind,
            text: self.text.as_ref().map(zero),
            image: self.image.as_ref().map(zero),
        }
    }

    pub fn is_null(&self) -> bool {
        let zero = |t: &Option<Tensor>| t.as_ref().is_none_or(|t| t.data().iter().all(|v| *v == 0.0));
        zero(&self.text) && zero(&self.image)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality.has_text() != self.text.is_some() {
            return Err(invalid(format!("{:?} bundle has the wrong text sequence", self.modality)));
        }
        if self.modality.has_image() != self.image.is_some() || self.image.is_some() != self.image_kind.is_some() {
            return Err(invalid(format!("{:?} bundle has the wrong image sequence", self.modality)));
        }
        if let Some(t) = &self.text {
            if t.dims2()?.1 != TEXT_DIM {
                return Err(invalid("text tokens have the wrong width"));
            }
        }
        if let (Some(t), Some(kind)) = (&self.image, self.image_kind) {
            let want = match kind {
                ImageKind::Scribble => SCRIBBLE_DIM,
                ImageKind::BodyParts => PARTS_DIM,
            };
            if t.dims2()?.1 != want {
                return Err(invalid("image tokens have the wrong width"));
            }
        }
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn hashed_vector(key: &str) -> Vec<f64> {
    let mut rng = SeedStream::new(fnv1a(key)).derive("text").rng();
    (0..TEXT_DIM)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// One token per word: hashed unigram plus hashed bigram with the previous
/// word, scaled to unit variance.
pub fn embed_text(caption: &str) -> Result<Tensor> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    if words.is_empty() {
        return Err(invalid("empty caption"));
    }
    let mut rows = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let prev = if i == 0 { "<s>" } else { words[i - 1] };
        let uni = hashed_vector(w);
        let bi = hashed_vector(&format!("{prev} {w}"));
        rows.push(uni.iter().zip(&bi).map(|(a, b)| (a + b) * std::f64::consts::FRAC_1_SQRT_2).collect::<Vec<_>>());
    }
    Ok(Tensor::from_rows(&rows)?)
}

/// One token per body region: its palette color and a one-hot region code.
pub fn embed_body_parts(labels: &Labels) -> Tensor {
    let rows: Vec<Vec<f64>> = Region::ALL
        .iter()
        .map(|&r| {
            let mut row = labels.region_color(r).to_vec();
            row.extend(Region::ALL.iter().map(|&q| if q == r { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    Tensor::from_rows(&rows).expect("fixed layout")
}

/// Frontal render of the template dressed in the palette, pooled to an
/// `8 x 8` grid of premultiplied RGBA cells tagged with their centers.
pub fn embed_scribble(labels: &Labels, template: &QueryPointSet) -> Result<Tensor> {
    let side = SCRIBBLE_GRID * SCRIBBLE_PIXELS;
    let appearance: Vec<Appearance> = template
        .regions
        .iter()
        .map(|&r| Appearance {
            rgb: labels.region_color(r),
            opacity_logit: BASE_OPACITY_LOGIT + 0.5,
            log_scale: BASE_LOG_SCALE,
            offset: 0.0,
        })
        .collect();
    let splats = splats_from_appearance(template, &appearance)?;
    let cam = Camera::orbit(Vector3::zeros(), 4.0, 0.0, 0.0, 0.58, side, side)?;
    let img = rasterize(&splats, &cam).image;
    let mut rows = Vec::with_capacity(SCRIBBLE_GRID * SCRIBBLE_GRID);
    for cy in 0..SCRIBBLE_GRID {
        for cx in 0..SCRIBBLE_GRID {
            let mut acc = [0.0; 4];
            for y in cy * SCRIBBLE_PIXELS..(cy + 1) * SCRIBBLE_PIXELS {
                for x in cx * SCRIBBLE_PIXELS..(cx + 1) * SCRIBBLE_PIXELS {
                    acc.iter_mut().zip(img.pixel(x, y)).for_each(|(a, p)| *a += p);
                }
            }
            let k = (SCRIBBLE_PIXELS * SCRIBBLE_PIXELS) as f64;
            let center = |c: usize| (c as f64 + 0.5) / SCRIBBLE_GRID as f64 * 2.0 - 1.0;
            rows.push([acc[0] / k, acc[1] / k, acc[2] / k, acc[3] / k, center(cx), center(cy)]);
        }
    }
    Ok(Tensor::from_rows(&rows)?)
}

/// Every embedding of one identity's labels, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSources {
    pub text: Tensor,
    pub scribble: Tensor,
    pub body_parts: Tensor,
}

impl ConditionSources {
    pub fn new(labels: &Labels, template: &QueryPointSet) -> Result<Self> {
        Ok(Self {
            text: embed_text(&labels.caption)?,
            scribble: embed_scribble(labels, template)?,
            body_parts: embed_body_parts(labels),
        })
    }

    pub fn bundle(&self, modality: Modality, kind: ImageKind) -> ConditionBundle {
        ConditionBundle {
            modality,
            image_kind: modality.has_image().then_some(kind),
            text: modality.has_text().then(|| self.text.clone()),
            image: modality.has_image().then(|| match kind {
                ImageKind::Scribble => self.scribble.clone(),
                ImageKind::BodyParts => self.body_parts.clone(),
            }),
        }
    }
}

/// Uniform draw of a modality and, independently, of an image kind.
pub fn draw_modality<R: Rng>(rng: &mut R) -> (Modality, ImageKind) {
    let m = Modality::ALL[rng.random_range(0..3)];
    let k = if rng.random_bool(0.5) {
        ImageKind::Scribble
    } else {
        ImageKind::BodyParts
    };
    (m, k)
}

/// Embeds `labels` under `choice`, or under a modality drawn from `seed`.
pub fn embed_conditions(
    labels: &Labels,
    template: &QueryPointSet,
    choice: Option<(Modality, ImageKind)>,
    seed: SeedStream,
) -> Result<ConditionBundle> {
    let (m, k) = choice.unwrap_or_else(|| draw_modality(&mut seed.derive("modality").rng()));
    Ok(ConditionSources::new(labels, template)?.bundle(m, k))
}
