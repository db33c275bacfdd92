//! Per-channel standardization.

use glca_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

/// Floor on stored spreads so constant channels stay finite.
pub const MIN_STD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Mean and population standard deviation of every column over all rows
    /// of all matrices.
    pub fn fit(sets: &[Tensor]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| invalid("statistics need at least one matrix"))?;
        let width = first.dims2()?.1;
        let mut sum = vec![0.0; width];
        let mut count = 0usize;
        for t in sets {
            check_width(t, width)?;
            for i in 0..t.rows() {
                sum.iter_mut().zip(t.row(i)).for_each(|(s, v)| *s += v);
            }
            count += t.rows();
        }
        if count == 0 {
            return Err(invalid("statistics need at least one row"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; width];
        for t in sets {
            for i in 0..t.rows() {
                for ((s, v), m) in sq.iter_mut().zip(t.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt().max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, t: &Tensor) -> Result<Tensor> {
        check_width(t, self.width())?;
        let mut out = t.clone();
        let w = self.width();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % w;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }

    pub fn restore(&self, t: &Tensor) -> Result<Tensor> {
        check_width(t, self.width())?;
        let mut out = t.clone();
        let w = self.width();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % w;
            *v = *v * self.std[j] + self.mean[j];
        }
        Ok(out)
    }
}

fn check_width(t: &Tensor, width: usize) -> Result<()> {
    let (_, w) = t.dims2()?;
    if w != width {
        return Err(CoreError::Width {
            what: "standardized columns",
            expected: width,
            got: w,
        });
    }
    Ok(())
}
