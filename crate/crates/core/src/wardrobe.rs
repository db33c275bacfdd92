//! Palettes, coverage classes, and the label block attached to identities.

use crate::error::{CoreError, Result};
use crate::template::Region;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Swatch {
    pub name: &'static str,
    pub rgb: [f64; 3],
}

const fn sw(name: &'static str, r: f64, g: f64, b: f64) -> Swatch {
    Swatch { name, rgb: [r, g, b] }
}

pub const SKIN_TONES: [Swatch; 5] = [
    sw("pale", 0.93, 0.80, 0.71),
    sw("fair", 0.87, 0.68, 0.55),
    sw("olive", 0.74, 0.56, 0.40),
    sw("tan", 0.60, 0.42, 0.28),
    sw("dark", 0.36, 0.24, 0.16),
];

pub const HAIR_COLORS: [Swatch; 6] = [
    sw("black", 0.08, 0.07, 0.07),
    sw("brown", 0.36, 0.22, 0.12),
    sw("blonde", 0.88, 0.75, 0.45),
    sw("red", 0.66, 0.24, 0.10),
    sw("gray", 0.62, 0.62, 0.62),
    sw("blue", 0.20, 0.35, 0.80),
];

pub const GARMENT_COLORS: [Swatch; 8] = [
    sw("red", 0.82, 0.12, 0.14),
    sw("blue", 0.14, 0.28, 0.78),
    sw("green", 0.16, 0.60, 0.24),
    sw("yellow", 0.92, 0.82, 0.16),
    sw("white", 0.94, 0.94, 0.92),
    sw("black", 0.10, 0.10, 0.11),
    sw("purple", 0.50, 0.20, 0.62),
    sw("orange", 0.94, 0.50, 0.12),
];

/// Which input views an identity's source footage provided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoverageClass {
    FullTurn,
    FrontalOnly,
    UpperBodyOnly,
}

impl CoverageClass {
    pub const ALL: [CoverageClass; 3] = [
        CoverageClass::FullTurn,
        CoverageClass::FrontalOnly,
        CoverageClass::UpperBodyOnly,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| CoreError::UnknownLabel(format!("coverage class code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            CoverageClass::FullTurn => "full-turn",
            CoverageClass::FrontalOnly => "frontal-only",
            CoverageClass::UpperBodyOnly => "upper-body-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CoreError::UnknownLabel(format!("coverage class {s:?}")))
    }
}

/// Palette choices for one identity plus its caption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub skin: u8,
    pub hair: u8,
    pub upper: u8,
    pub lower: u8,
    pub shoes: u8,
    pub coverage: CoverageClass,
    pub caption: String,
}

fn lookup(table: &[Swatch], idx: u8, what: &str) -> Result<Swatch> {
    table
        .get(idx as usize)
        .copied()
        .ok_or_else(|| CoreError::UnknownLabel(format!("{what} index {idx}")))
}

fn find(table: &[Swatch], word: &str, what: &str) -> Result<u8> {
    table
        .iter()
        .position(|s| s.name == word)
        .map(|i| i as u8)
        .ok_or_else(|| CoreError::UnknownLabel(format!("{what} {word:?}")))
}

impl Labels {
    /// Builds labels from palette indices, validating each and composing the
    /// caption.
    pub fn new(palette: [u8; 5], coverage: CoverageClass) -> Result<Self> {
        let [skin, hair, upper, lower, shoes] = palette;
        let mut labels = Self {
            skin,
            hair,
            upper,
            lower,
            shoes,
            coverage,
            caption: String::new(),
        };
        labels.caption = labels.compose_caption()?;
        Ok(labels)
    }

    pub fn palette(&self) -> [u8; 5] {
        [self.skin, self.hair, self.upper, self.lower, self.shoes]
    }

    fn compose_caption(&self) -> Result<String> {
        Ok(format!(
            "a person with {} skin and {} hair wearing a {} top {} pants and {} shoes",
            lookup(&SKIN_TONES, self.skin, "skin")?.name,
            lookup(&HAIR_COLORS, self.hair, "hair")?.name,
            lookup(&GARMENT_COLORS, self.upper, "top")?.name,
            lookup(&GARMENT_COLORS, self.lower, "pants")?.name,
            lookup(&GARMENT_COLORS, self.shoes, "shoes")?.name,
        ))
    }

    /// Parses a caption of the form produced by [`Labels::new`]. Any word
    /// outside the vocabulary is rejected.
    pub fn from_caption(caption: &str, coverage: CoverageClass) -> Result<Self> {
        let words: Vec<&str> = caption.split_whitespace().collect();
        let expect = [
            "a", "person", "with", "", "skin", "and", "", "hair", "wearing", "a", "", "top", "", "pants", "and", "",
            "shoes",
        ];
        if words.len() != expect.len() {
            return Err(CoreError::UnknownLabel(format!("caption {caption:?}")));
        }
        for (w, e) in words.iter().zip(expect) {
            if !e.is_empty() && *w != e {
                return Err(CoreError::UnknownLabel(format!("word {w:?} in caption")));
            }
        }
        Self::new(
            [
                find(&SKIN_TONES, words[3], "skin tone")?,
                find(&HAIR_COLORS, words[6], "hair color")?,
                find(&GARMENT_COLORS, words[10], "top color")?,
                find(&GARMENT_COLORS, words[12], "pants color")?,
                find(&GARMENT_COLORS, words[15], "shoe color")?,
            ],
            coverage,
        )
    }

    /// The swatch table `region` draws from and the chosen index.
    pub fn region_choice(&self, region: Region) -> (&'static [Swatch], u8) {
        match region {
            Region::Hair => (&HAIR_COLORS, self.hair),
            Region::Skin => (&SKIN_TONES, self.skin),
            Region::Upper => (&GARMENT_COLORS, self.upper),
            Region::Lower => (&GARMENT_COLORS, self.lower),
            Region::Shoes => (&GARMENT_COLORS, self.shoes),
        }
    }

    /// Palette color worn on `region`.
    pub fn region_color(&self, region: Region) -> [f64; 3] {
        let (table, idx) = self.region_choice(region);
        table[idx as usize].rgb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_round_trip() {
        let l = Labels::new([1, 2, 3, 4, 5], CoverageClass::FrontalOnly).unwrap();
        assert_eq!(
            l.caption,
            "a person with fair skin and blonde hair wearing a yellow top white pants and black shoes"
        );
        assert_eq!(Labels::from_caption(&l.caption, CoverageClass::FrontalOnly).unwrap(), l);
    }

    #[test]
    fn unknown_labels_rejected() {
        assert!(Labels::new([9, 0, 0, 0, 0], CoverageClass::FullTurn).is_err());
        let bad = "a person with fair skin and mauve hair wearing a red top red pants and red shoes";
        assert!(Labels::from_caption(bad, CoverageClass::FullTurn).is_err());
        assert!(CoverageClass::from_code(3).is_err());
        assert_eq!(CoverageClass::parse("upper-body-only").unwrap(), CoverageClass::UpperBodyOnly);
    }
}
