//! Tensor and mask types, NPY/manifest I/O, and grid resampling.

mod manifest;
pub mod npy;
mod resample;

pub use manifest::{CaseEntry, CaseInputs, Manifest, QueryPaths, SupportPaths};
pub use npy::{load_features, load_field, load_mask, load_npy, save_features, save_field, save_mask, Loaded};
pub use resample::{downsample_mask, upsample_map};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Sam,
    Dino,
}

/// Dense `(height, width, channels)` row-major feature tensor from one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
    backbone: Backbone,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>, backbone: Backbone) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            backbone,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        self.pixel_at(row * self.width + col)
    }

    /// Pixel vector by row-major pixel index.
    pub fn pixel_at(&self, index: usize) -> &[T] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Copy with every pixel vector scaled to unit L2 norm. Zero vectors stay zero.
    pub fn normalized(&self) -> Self {
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(self.channels) {
            let n = norm(px);
            if n > T::zero() {
                px.iter_mut().for_each(|v| *v = *v / n);
            }
        }
        self.with_data(data)
    }

    /// Number of pixels whose feature vector is exactly zero.
    pub fn zero_pixels(&self) -> usize {
        self.data
            .chunks_exact(self.channels)
            .filter(|px| px.iter().all(|v| v.is_zero()))
            .count()
    }

    pub fn with_backbone(mut self, backbone: Backbone) -> Self {
        self.backbone = backbone;
        self
    }

    /// Converts the element type, e.g. `f32` storage into `f64` compute.
    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            backbone: self.backbone,
        }
    }

    fn with_data(&self, data: Vec<T>) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
            backbone: self.backbone,
        }
    }
}

/// `height x width` binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self::from_vec(height, width, vec![false; height * width]).expect("consistent size")
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} mask values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::from_vec(height, width, data).expect("consistent size")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    /// Row-major `(row, col)` of every foreground pixel.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count())
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "mask dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Real-valued similarity field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> ConfidenceMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} map values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite confidence at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("finite fill")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Applies `f` elementwise, keeping the shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }
}
