//! Image, volume and dataset model plus patch addressing.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major 2D grid of finite intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "empty dimensions {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Constant image. Panics on zero dimensions or a non-finite value.
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("valid constant image")
    }

    /// Builds an image from `f(row, col)`. Panics on zero dimensions or non-finite output.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data).expect("valid generated image")
    }

    /// Skips validation; callers guarantee length and finiteness.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Applies `f` per pixel. Panics if `f` produces a non-finite value.
    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self::new(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
        .expect("map produced non-finite value")
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_count(self.len())
    }

    pub fn is_constant(&self) -> bool {
        let first = self.data[0];
        self.data.iter().all(|&v| v == first)
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }

    /// Square `size`×`size` copy of the window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, size: usize) -> Result<Self> {
        if size == 0 || row + size > self.height || col + size > self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                size,
                height: self.height,
                width: self.width,
            });
        }
        let mut data = Vec::with_capacity(size * size);
        for r in row..row + size {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + size]);
        }
        Ok(Self::from_raw(size, size, data))
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }
}

/// Ordered slices of one patient, all with the same dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    patient_id: String,
    slices: Vec<Image<T>>,
}

impl<T: Scalar> Volume<T> {
    pub fn new(patient_id: impl Into<String>, slices: Vec<Image<T>>) -> Result<Self> {
        let patient_id = patient_id.into();
        let Some(first) = slices.first() else {
            return Err(Error::InvalidVolume(format!("{patient_id}: no slices")));
        };
        let dims = first.dims();
        if let Some(i) = slices.iter().position(|s| s.dims() != dims) {
            return Err(Error::InvalidVolume(format!(
                "{patient_id}: slice {i} is {}x{}, expected {}x{}",
                slices[i].height(),
                slices[i].width(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self { patient_id, slices })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn slices(&self) -> &[Image<T>] {
        &self.slices
    }

    pub fn slice(&self, index: usize) -> &Image<T> {
        &self.slices[index]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    pub fn into_slices(self) -> Vec<Image<T>> {
        self.slices
    }

    /// Pixel-wise mean over slices.
    pub fn mean_image(&self) -> Image<T> {
        let (h, w) = self.dims();
        let mut acc = vec![T::zero(); h * w];
        for s in &self.slices {
            for (a, &v) in acc.iter_mut().zip(s.as_slice()) {
                *a += v;
            }
        }
        let n = T::from_count(self.slices.len());
        for a in &mut acc {
            *a /= n;
        }
        Image::from_raw(h, w, acc)
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            patient_id: self.patient_id.clone(),
            slices: self.slices.iter().map(Image::cast).collect(),
        }
    }
}

/// Which image domain a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DomainLabel {
    Lr,
    Hr,
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainLabel::Lr => f.write_str("LR"),
            DomainLabel::Hr => f.write_str("HR"),
        }
    }
}

/// A set of patient volumes with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    label: DomainLabel,
    volumes: Vec<Volume<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(label: DomainLabel, volumes: Vec<Volume<T>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &volumes {
            if !seen.insert(v.patient_id()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate patient id {:?}",
                    v.patient_id()
                )));
            }
        }
        Ok(Self { label, volumes })
    }

    pub fn label(&self) -> DomainLabel {
        self.label
    }

    pub fn volumes(&self) -> &[Volume<T>] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn volume(&self, patient_id: &str) -> Option<&Volume<T>> {
        self.volumes.iter().find(|v| v.patient_id() == patient_id)
    }

    /// Volumes in ascending patient-id order.
    pub fn sorted_volumes(&self) -> Vec<&Volume<T>> {
        let mut v: Vec<_> = self.volumes.iter().collect();
        v.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
        v
    }

    /// Common slice dimensions, or an error if volumes disagree.
    pub fn uniform_dims(&self) -> Result<(usize, usize)> {
        let Some(first) = self.volumes.first() else {
            return Err(Error::Empty(format!(
                "{} dataset has no volumes",
                self.label
            )));
        };
        let dims = first.dims();
        for v in &self.volumes {
            if v.dims() != dims {
                return Err(Error::InvalidDataset(format!(
                    "{} is {}x{}, expected {}x{}",
                    v.patient_id(),
                    v.dims().0,
                    v.dims().1,
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(dims)
    }

    pub fn with_label(mut self, label: DomainLabel) -> Self {
        self.label = label;
        self
    }

    pub fn into_volumes(self) -> Vec<Volume<T>> {
        self.volumes
    }
}

/// Location of a square patch inside a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRef {
    #[serde(rename = "patient")]
    pub patient_id: String,
    #[serde(rename = "slice")]
    pub slice_index: usize,
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl PatchRef {
    pub fn new(
        patient_id: impl Into<String>,
        slice_index: usize,
        row: usize,
        col: usize,
        size: usize,
    ) -> Self {
        Self {
            patient_id: patient_id.into(),
            slice_index,
            row,
            col,
            size,
        }
    }
}

/// Copies the window addressed by `r` out of `img`.
pub fn extract_patch<T: Scalar>(img: &Image<T>, r: &PatchRef) -> Result<Image<T>> {
    img.window(r.row, r.col, r.size)
}

/// Min-max rescale of the whole volume to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize_volume<T: Scalar>(v: &Volume<T>) -> Volume<T> {
    let (lo, hi) = v
        .slices
        .iter()
        .map(Image::min_max)
        .fold((T::infinity(), T::neg_infinity()), |(a, b), (c, d)| {
            (a.min(c), b.max(d))
        });
    let span = hi - lo;
    let slices = v
        .slices
        .iter()
        .map(|s| {
            if span > T::zero() {
                s.map(|x| ((x - lo) / span).min(T::one()).max(T::zero()))
            } else {
                Image::filled(s.height(), s.width(), T::zero())
            }
        })
        .collect();
    Volume {
        patient_id: v.patient_id.clone(),
        slices,
    }
}
