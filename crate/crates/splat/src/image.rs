use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// RGBA image with premultiplied color, row-major, `f64` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<f64>,
}

impl Image {
    /// Fully transparent image.
    pub fn transparent(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgba: vec![0.0; width * height * 4],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 4] {
        let i = (y * self.width + x) * 4;
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }

    pub fn alpha(&self, x: usize, y: usize) -> f64 {
        self.rgba[(y * self.width + x) * 4 + 3]
    }

    /// Straight (non-premultiplied) color; black where alpha is zero.
    pub fn color(&self, x: usize, y: usize) -> [f64; 3] {
        let [r, g, b, a] = self.pixel(x, y);
        if a > 0.0 {
            [r / a, g / a, b / a]
        } else {
            [0.0; 3]
        }
    }

    /// 8-bit straight-alpha RGBA.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = Vec::with_capacity(self.rgba.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b] = self.color(x, y);
                out.extend_from_slice(&[q(r), q(g), q(b), q(self.alpha(x, y))]);
            }
        }
        out
    }

    pub fn encode_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_rgba8())?;
        writer.finish()?;
        Ok(())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.encode_png(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
