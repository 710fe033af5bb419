//! Convolution engines: a reference direct convolution, the three-stage
//! Tucker-format convolution, and a CPU executable model of the tiled core
//! convolution kernel with CRSN kernel layout.

mod crsn;
mod reference;
mod tiled;

pub use crsn::{crsn_to_kernel, kernel_to_crsn};
pub use reference::{conv2d_ref, conv2d_ref_counted, tucker_conv, tucker_conv_counted};
pub use tiled::{tiled_core_conv, Precision, TiledConvOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution problem shape: spatial size `H x W`, `C` input channels, `N`
/// output channels, `R x S` filter, zero padding and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub n: usize,
    pub r: usize,
    pub s: usize,
    pub pad: usize,
    pub stride: usize,
}

impl ConvShape {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: usize,
        w: usize,
        c: usize,
        n: usize,
        r: usize,
        s: usize,
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        let shape = Self {
            h,
            w,
            c,
            n,
            r,
            s,
            pad,
            stride,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// "Same"-padded stride-1 shape, the form the tiled path accepts.
    pub fn same(h: usize, w: usize, c: usize, n: usize, r: usize) -> Result<Self> {
        if r % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "same-padded shapes need an odd filter size, got {r}"
            )));
        }
        Self::new(h, w, c, n, r, r, (r - 1) / 2, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0
            || self.w == 0
            || self.c == 0
            || self.n == 0
            || self.r == 0
            || self.s == 0
            || self.stride == 0
        {
            return Err(Error::InvalidArgument(format!(
                "conv shape fields must be positive: {self:?}"
            )));
        }
        if self.r > self.h + 2 * self.pad || self.s > self.w + 2 * self.pad {
            return Err(Error::InvalidArgument(format!(
                "filter {}x{} larger than padded input {}x{}",
                self.r,
                self.s,
                self.h + 2 * self.pad,
                self.w + 2 * self.pad
            )));
        }
        Ok(())
    }

    /// The tiled kernel models a "same"-output convolution: stride 1, odd
    /// square filter, pad = (R-1)/2.
    pub fn validate_tiled_path(&self) -> Result<()> {
        self.validate()?;
        if self.stride != 1 {
            return Err(Error::InvalidTiling(format!(
                "tiled path requires stride 1, got {}",
                self.stride
            )));
        }
        if self.r != self.s || self.r % 2 == 0 {
            return Err(Error::InvalidTiling(format!(
                "tiled path requires an odd square filter, got {}x{}",
                self.r, self.s
            )));
        }
        if self.pad != (self.r - 1) / 2 {
            return Err(Error::InvalidTiling(format!(
                "tiled path requires same padding {}, got {}",
                (self.r - 1) / 2,
                self.pad
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.r) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.s) / self.stride + 1
    }
}

/// Tile sizes along height, width, and input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TilingConfig {
    pub th: usize,
    pub tw: usize,
    pub tc: usize,
}

impl TilingConfig {
    pub fn new(th: usize, tw: usize, tc: usize) -> Self {
        Self { th, tw, tc }
    }

    pub fn validate(&self, shape: &ConvShape) -> Result<()> {
        if self.th == 0 || self.tw == 0 || self.tc == 0 {
            return Err(Error::InvalidTiling(format!(
                "tile sizes must be positive: {self:?}"
            )));
        }
        if self.th > shape.h || self.tw > shape.w || self.tc > shape.c {
            return Err(Error::InvalidTiling(format!(
                "tile {:?} exceeds shape bounds ({}, {}, {})",
                self, shape.h, shape.w, shape.c
            )));
        }
        Ok(())
    }
}

/// Memory layout of a feature map: channel-major or channel-last.
///
/// Output maps of the tiled kernel use `Hwc` with `c = N` (the "HWN" order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Chw,
    Hwc,
}

/// A single-batch feature map with `c` channels and `h x w` spatial extent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    layout: Layout,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn from_vec(layout: Layout, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "feature map data length {} does not match {c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Self { layout, c, h, w, data })
    }

    pub fn zeros(layout: Layout, c: usize, h: usize, w: usize) -> Self {
        Self {
            layout,
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        match self.layout {
            Layout::Chw => self.data[(c * self.h + i) * self.w + j],
            Layout::Hwc => self.data[(i * self.w + j) * self.c + c],
        }
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        match self.layout {
            Layout::Chw => self.data[(c * self.h + i) * self.w + j] = v,
            Layout::Hwc => self.data[(i * self.w + j) * self.c + c] = v,
        }
    }

    /// Lossless layout permutation; returns a clone when the layout already
    /// matches.
    pub fn convert(&self, target: Layout) -> FeatureMap {
        if self.layout == target {
            return self.clone();
        }
        let mut out = FeatureMap::zeros(target, self.c, self.h, self.w);
        for c in 0..self.c {
            for i in 0..self.h {
                for j in 0..self.w {
                    out.set(c, i, j, self.get(c, i, j));
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> Result<f64> {
        if (self.c, self.h, self.w) != (other.c, other.h, other.w) {
            return Err(Error::ShapeMismatch(format!(
                "feature map dims ({},{},{}) vs ({},{},{})",
                self.c, self.h, self.w, other.c, other.h, other.w
            )));
        }
        let other = other.convert(self.layout);
        Ok(self
            .data
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Relative L2 difference against `other` (`other` is the reference).
    pub fn relative_diff(&self, other: &FeatureMap) -> Result<f64> {
        if (self.c, self.h, self.w) != (other.c, other.h, other.w) {
            return Err(Error::ShapeMismatch(format!(
                "feature map dims ({},{},{}) vs ({},{},{})",
                self.c, self.h, self.w, other.c, other.h, other.w
            )));
        }
        let other_conv = other.convert(self.layout);
        let mut num = 0.0;
        let mut den = 0.0;
        for (&a, &b) in self.data.iter().zip(other_conv.data()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        if den == 0.0 {
            return if num == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::ZeroNormReference)
            };
        }
        Ok((num / den).sqrt())
    }
}

/// Re-tag a feature map into `target` layout. Thin wrapper kept as a free
/// function to mirror the engine API.
pub fn layout_convert(x: &FeatureMap, target: Layout) -> FeatureMap {
    x.convert(target)
}
