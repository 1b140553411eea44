use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::Dimension;

/// Channel widths of the convolutional stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchedule {
    /// Output channels of every stem convolution.
    pub stem: usize,
    /// Nominal width of each per-branch inception block (multi-input path).
    pub branch: Vec<usize>,
    /// Nominal width of each shared inception block after concatenation.
    pub shared: Vec<usize>,
    /// Nominal width of each inception block of the single-input path.
    pub baseline: Vec<usize>,
}

impl Default for ChannelSchedule {
    fn default() -> Self {
        Self {
            stem: 8,
            branch: vec![16, 24],
            shared: vec![32, 32, 48, 48],
            baseline: vec![16, 24, 32, 32, 48, 48],
        }
    }
}

impl ChannelSchedule {
    /// Narrow widths for quick training runs on a laptop CPU.
    pub fn compact() -> Self {
        Self {
            stem: 4,
            branch: vec![8, 8],
            shared: vec![16, 16, 16, 16],
            baseline: vec![8, 8, 16, 16, 16, 16],
        }
    }

    /// Minimal widths for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            stem: 2,
            branch: vec![4, 4],
            shared: vec![4, 4, 4, 4],
            baseline: vec![4, 4, 4, 4, 4, 4],
        }
    }
}

/// Input shapes (frequency rows x frames) seen by the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub mel: (usize, usize),
    pub cyclic: (usize, usize),
    pub chroma: (usize, usize),
    /// Chroma rows after zero padding along frequency.
    pub chroma_pad: usize,
    /// Spatial size of every branch output before concatenation.
    pub branch_map: (usize, usize),
}

impl Default for InputGeometry {
    fn default() -> Self {
        Self {
            mel: (128, 256),
            cyclic: (64, 256),
            chroma: (12, 256),
            chroma_pad: 16,
            branch_map: (16, 16),
        }
    }
}

impl InputGeometry {
    pub fn tiny() -> Self {
        Self {
            mel: (8, 8),
            cyclic: (8, 8),
            chroma: (6, 8),
            chroma_pad: 8,
            branch_map: (2, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub num_dims: usize,
    pub multi_input: bool,
    pub channels: ChannelSchedule,
    pub input: InputGeometry,
    pub margin: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_size: 384,
            num_dims: 6,
            multi_input: true,
            channels: ChannelSchedule::default(),
            input: InputGeometry::default(),
            margin: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(embedding_size: usize, num_dims: usize, multi_input: bool) -> Result<Self> {
        let cfg = Self {
            embedding_size,
            num_dims,
            multi_input,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Gradient-check configuration: 8x8 inputs, D = 12, six dimensions.
    pub fn tiny() -> Self {
        Self {
            embedding_size: 12,
            num_dims: 6,
            multi_input: true,
            channels: ChannelSchedule::tiny(),
            input: InputGeometry::tiny(),
            margin: 0.1,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_dims == 0 || self.num_dims > Dimension::ALL.len() {
            return Err(Error::Config(format!(
                "num_dims must be in 1..=6, got {}",
                self.num_dims
            )));
        }
        if self.embedding_size == 0 || self.embedding_size % self.num_dims != 0 {
            return Err(Error::Config(format!(
                "embedding size {} is not divisible by {} dimensions",
                self.embedding_size, self.num_dims
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be nonnegative, got {}",
                self.margin
            )));
        }
        let c = &self.channels;
        if c.stem == 0
            || c.branch
                .iter()
                .chain(&c.shared)
                .chain(&c.baseline)
                .any(|&t| t == 0)
        {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.input.chroma.0 > self.input.chroma_pad {
            return Err(Error::Config(
                "chroma padding smaller than chroma rows".into(),
            ));
        }
        Ok(())
    }

    pub fn mask(&self) -> DimensionMask {
        DimensionMask::new(self.embedding_size, self.num_dims).expect("validated config")
    }

    pub fn dimensions(&self) -> &'static [Dimension] {
        Dimension::first(self.num_dims).expect("validated config")
    }
}

/// Contiguous, equally sized index ranges of the embedding, one per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionMask {
    size: usize,
    dims: usize,
}

impl DimensionMask {
    pub fn new(size: usize, dims: usize) -> Result<Self> {
        if dims == 0 || size == 0 || size % dims != 0 {
            return Err(Error::Config(format!(
                "cannot split {size} entries into {dims} equal masks"
            )));
        }
        Ok(Self { size, dims })
    }

    pub fn embedding_size(&self) -> usize {
        self.size
    }

    pub fn num_dims(&self) -> usize {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.size / self.dims
    }

    pub fn range(&self, s: usize) -> Range<usize> {
        assert!(s < self.dims, "dimension index {s} out of range");
        s * self.width()..(s + 1) * self.width()
    }

    /// Copy of `e` with entries outside the range of dimension `s` zeroed.
    pub fn apply<T: Copy + Default>(&self, e: &[T], s: usize) -> Vec<T> {
        let r = self.range(s);
        e.iter()
            .enumerate()
            .map(|(i, &v)| if r.contains(&i) { v } else { T::default() })
            .collect()
    }

    /// Union of the ranges of several dimensions as a boolean selector.
    pub fn selector(&self, subset: &[usize]) -> Vec<bool> {
        let mut sel = vec![false; self.size];
        for &s in subset {
            sel[self.range(s)].iter_mut().for_each(|b| *b = true);
        }
        sel
    }
}
