use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Per-pixel relative depth (larger is farther) with an annotation mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || valid.len() != height * width {
            return Err(shape_err!(
                "depth map {height}x{width} given {} values and {} flags",
                values.len(),
                valid.len()
            ));
        }
        if let Some(i) = (0..values.len()).find(|&i| valid[i] && !values[i].is_finite()) {
            return Err(Error::Data(format!("non-finite depth at valid pixel {i}")));
        }
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    /// Fully valid map.
    pub fn dense(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(height, width, values, vec![true; height * width])
    }

    /// Dense prediction from a `[h, w]`, `[1, h, w]` or `[1, 1, h, w]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match s.len() {
            2 => (s[0], s[1]),
            3 if s[0] == 1 => (s[1], s[2]),
            4 if s[0] == 1 && s[1] == 1 => (s[2], s[3]),
            _ => return Err(shape_err!("cannot read a depth map from shape {s:?}")),
        };
        Self::dense(h, w, t.data().iter().map(|&v| v as f64).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("depth map shape")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Fraction of annotated pixels.
    pub fn density(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.valid_count() as f64 / self.len() as f64
        }
    }

    pub fn same_size(&self, other: &DepthMap) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape_err!(
                "depth maps differ in size: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }
}
