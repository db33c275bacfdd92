//! Procedural identities with profile-dependent token degradation.

use glca_numerics::{SeedStream, Tensor};
use glca_splat::GaussianSplat;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::detok::Detokenizer;
use crate::error::Result;
use crate::profile::ObservabilityProfile;
use crate::template::QueryPointSet;
use crate::tokens::{splats_from_appearance, Appearance, TokenCodec, BASE_LOG_SCALE, BASE_OPACITY_LOGIT};
use crate::visibility::{identity_mask, Tau, K_MIN};
use crate::wardrobe::{CoverageClass, Labels, GARMENT_COLORS, HAIR_COLORS, SKIN_TONES};

/// Fraction of the distance to gray kept by degraded colors.
pub const DEGRADED_COLOR_KEEP: f64 = 0.3;
/// Opacity logit of unseen lower-body points (nearly transparent).
pub const TRANSPARENT_LOGIT: f64 = -4.5;
/// Opacity logit of unseen back-facing points.
pub const FADED_LOGIT: f64 = -1.0;
/// Log-scale increase of unseen back-facing points.
pub const BLUR_GROWTH: f64 = 0.35;

/// One synthetic subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Identity {
    pub id: String,
    /// `N x D_T` tokens as the tokenizer would emit them (degraded where unseen).
    pub tokens: Tensor,
    /// Clean per-point appearance.
    pub appearance: Vec<Appearance>,
    /// Splats of the clean appearance.
    pub ground_truth: Vec<GaussianSplat>,
    /// Points whose tokens were degraded.
    pub corrupted: Vec<bool>,
    /// Visibility mask of `tokens` under the profile's views (default tau).
    pub mask: Vec<bool>,
    pub labels: Labels,
}

fn jittered(base: [f64; 3], rng: &mut impl Rng, sd: f64) -> [f64; 3] {
    let n = Normal::new(0.0, sd).expect("valid std");
    base.map(|c| (c + n.sample(rng)).clamp(0.02, 0.98))
}

/// Degraded appearance for a point the profile's views never covered.
pub fn degrade(a: &Appearance, class: CoverageClass) -> Appearance {
    let gray = |c: f64| 0.5 + DEGRADED_COLOR_KEEP * (c - 0.5);
    let mut out = *a;
    out.rgb = a.rgb.map(gray);
    match class {
        CoverageClass::FullTurn => return *a,
        CoverageClass::FrontalOnly => {
            out.opacity_logit = FADED_LOGIT;
            out.log_scale = a.log_scale + BLUR_GROWTH;
        }
        CoverageClass::UpperBodyOnly => out.opacity_logit = TRANSPARENT_LOGIT,
    }
    out
}

/// Draws palettes and per-point appearance from `style_seed`, encodes it, and
/// degrades every point the profile does not cover.
pub fn synth_identity(
    template: &QueryPointSet,
    codec: &TokenCodec,
    style_seed: u64,
    profile: &ObservabilityProfile,
) -> Result<Identity> {
    let stream = SeedStream::new(style_seed).derive("identity");
    let mut rng = stream.derive("palette").rng();
    let palette = [
        rng.random_range(0..SKIN_TONES.len()) as u8,
        rng.random_range(0..HAIR_COLORS.len()) as u8,
        rng.random_range(0..GARMENT_COLORS.len()) as u8,
        rng.random_range(0..GARMENT_COLORS.len()) as u8,
        rng.random_range(0..GARMENT_COLORS.len()) as u8,
    ];
    let labels = Labels::new(palette, profile.class)?;

    let mut rng = stream.derive("points").rng();
    let opacity = Normal::new(BASE_OPACITY_LOGIT + 0.5, 0.3).expect("valid std");
    let scale = Normal::new(BASE_LOG_SCALE, 0.08).expect("valid std");
    let offset = Normal::new(0.0, 0.004).expect("valid std");
    let appearance: Vec<Appearance> = template
        .regions
        .iter()
        .map(|&r| Appearance {
            rgb: jittered(labels.region_color(r), &mut rng, 0.03),
            opacity_logit: opacity.sample(&mut rng),
            log_scale: scale.sample(&mut rng),
            offset: offset.sample(&mut rng),
        })
        .collect();

    let noise = stream.derive("noise");
    let mut corrupted: Vec<bool> = profile.covered(template).iter().map(|c| !c).collect();
    let detok = Detokenizer::Analytic(codec.clone());
    // Points the degraded render fails to show are unseen as well; grow the
    // corrupted set until the mask agrees with it.
    let (tokens, mask) = loop {
        let observed: Vec<Appearance> = appearance
            .iter()
            .zip(&corrupted)
            .map(|(a, &bad)| if bad { degrade(a, profile.class) } else { *a })
            .collect();
        let tokens = codec.encode(template, &observed, noise.clone())?;
        let mask = identity_mask(&tokens, &detok, template, profile, Tau::default(), K_MIN)?;
        if profile.class == CoverageClass::FullTurn {
            break (tokens, mask);
        }
        let mut grew = false;
        for (bad, &seen) in corrupted.iter_mut().zip(&mask) {
            if !seen && !*bad {
                *bad = true;
                grew = true;
            }
        }
        if !grew {
            break (tokens, mask);
        }
    };
    Ok(Identity {
        id: format!("id-{style_seed:016x}"),
        tokens,
        ground_truth: splats_from_appearance(template, &appearance)?,
        appearance,
        corrupted,
        mask,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::make_template;

    fn setup() -> (QueryPointSet, TokenCodec) {
        (make_template(128, 4).unwrap(), TokenCodec::new(64, 4).unwrap())
    }

    #[test]
    fn full_turn_is_clean_and_deterministic() {
        let (t, c) = setup();
        let p = ObservabilityProfile::for_class(CoverageClass::FullTurn, 8);
        let a = synth_identity(&t, &c, 99, &p).unwrap();
        assert!(a.corrupted.iter().all(|x| !x));
        assert_eq!(a, synth_identity(&t, &c, 99, &p).unwrap());
        assert_eq!(a.ground_truth.len(), 128 * 8);
    }

    #[test]
    fn upper_body_degrades_everything_below_pelvis() {
        let (t, c) = setup();
        let p = ObservabilityProfile::for_class(CoverageClass::UpperBodyOnly, 8);
        let id = synth_identity(&t, &c, 5, &p).unwrap();
        for (pt, bad) in t.points.iter().zip(&id.corrupted) {
            if pt.y < 0.0 {
                assert!(bad);
            }
        }
    }

    #[test]
    fn covered_tokens_match_clean_encoding() {
        let (t, c) = setup();
        let full = synth_identity(&t, &c, 21, &ObservabilityProfile::for_class(CoverageClass::FullTurn, 8)).unwrap();
        for class in [CoverageClass::FrontalOnly, CoverageClass::UpperBodyOnly] {
            let part = synth_identity(&t, &c, 21, &ObservabilityProfile::for_class(class, 8)).unwrap();
            assert!(part.corrupted.iter().any(|x| *x));
            for i in 0..t.len() {
                if !part.corrupted[i] {
                    assert_eq!(part.tokens.row(i), full.tokens.row(i));
                } else {
                    assert_ne!(part.tokens.row(i), full.tokens.row(i));
                }
            }
        }
    }
}
