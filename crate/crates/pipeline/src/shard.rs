//! Binary identity shards. Token shards and latent-cache shards share one
//! layout; latent shards also carry the standardization statistics.
//!
//! ```text
//! magic[4] version:u32 N:u32 width:u32 count:u32
//! (latent shards) mean:f64×width std:f64×width
//! count × { id_len:u32 id  matrix:f32×N×width  mask:⌈N/8⌉ bytes  palette:u8×5 coverage:u8 caption_len:u32 caption }
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use glca_core::stats::ChannelStats;
use glca_core::visibility::{pack_mask, unpack_mask};
use glca_core::wardrobe::{CoverageClass, Labels};
use glca_numerics::Tensor;

use crate::error::{format_err, io_err, Result};

pub const TOKEN_MAGIC: &[u8; 4] = b"GLCA";
pub const LATENT_MAGIC: &[u8; 4] = b"GLCZ";
pub const SHARD_VERSION: u32 = 1;

/// One identity as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    /// `N x width`, stored as f32.
    pub matrix: Tensor,
    pub mask: Vec<bool>,
    pub labels: Labels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub n: usize,
    pub width: usize,
    /// Present on latent shards only.
    pub stats: Option<ChannelStats>,
    pub records: Vec<Record>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len());
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err(path, "string is not UTF-8"))
    }
}

impl Shard {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(if self.stats.is_some() { LATENT_MAGIC } else { TOKEN_MAGIC });
        w.u32(SHARD_VERSION as usize);
        w.u32(self.n);
        w.u32(self.width);
        w.u32(self.records.len());
        if let Some(s) = &self.stats {
            for v in s.mean.iter().chain(&s.std) {
                w.bytes(&v.to_le_bytes());
            }
        }
        for r in &self.records {
            w.string(&r.id);
            for v in r.matrix.data() {
                w.bytes(&(*v as f32).to_le_bytes());
            }
            w.bytes(&pack_mask(&r.mask));
            w.bytes(&r.labels.palette());
            w.bytes(&[r.labels.coverage.code()]);
            w.string(&r.labels.caption);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf, pos: 0, path };
        let magic = r.take(4)?;
        let latent = match magic {
            m if m == TOKEN_MAGIC => false,
            m if m == LATENT_MAGIC => true,
            _ => return Err(format_err(path, "not a shard file")),
        };
        let version = r.u32()?;
        if version != SHARD_VERSION as usize {
            return Err(format_err(path, format!("unsupported shard version {version}")));
        }
        let n = r.u32()?;
        let width = r.u32()?;
        let count = r.u32()?;
        let stats = if latent {
            let mean = r.f64s(width)?;
            let std = r.f64s(width)?;
            Some(ChannelStats { mean, std })
        } else {
            None
        };
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.string()?;
            let data: Vec<f64> = r
                .take(4 * n * width)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let matrix = Tensor::matrix(n, width, data)?;
            let mask = unpack_mask(r.take(n.div_ceil(8))?, n)?;
            let palette: [u8; 5] = r.take(5)?.try_into().expect("5 bytes");
            let coverage = CoverageClass::from_code(r.take(1)?[0])?;
            let caption = r.string()?;
            let labels = Labels::new(palette, coverage)?;
            if labels.caption != caption {
                return Err(format_err(path, format!("caption of {id} does not match its palette")));
            }
            records.push(Record {
                id,
                matrix,
                mask,
                labels,
            });
        }
        if r.pos != buf.len() {
            return Err(format_err(path, "trailing bytes after the last record"));
        }
        Ok(Self {
            n,
            width,
            stats,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&buf, path)
    }
}

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
