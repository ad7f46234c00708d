//! Resampling, geometric correction and the HR→LR degradation model.
//!
//! Convolutions are evaluated in anchored form, `x0 + Σ wₖ (xₖ − x0)`, so a
//! constant input is reproduced bit-exactly regardless of rounding in the weights.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::{normalize_volume, Image, Volume};
use crate::scalar::Scalar;

/// Cubic-convolution parameter of the Keys kernel.
pub const KEYS_A: f64 = -0.5;

/// Odd-length symmetric filter whose taps sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel1D<T> {
    taps: Vec<T>,
}

impl<T: Scalar> Kernel1D<T> {
    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeParams<T> {
    pub sigma: T,
    pub scale_factor: usize,
}

impl<T: Scalar> Default for DegradeParams<T> {
    fn default() -> Self {
        Self {
            sigma: T::lit(3.0),
            scale_factor: 4,
        }
    }
}

impl<T: Scalar> DegradeParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.scale_factor == 0 {
            return Err(Error::InvalidParameter("scale factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Why a geometric correction left its input unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectionWarning {
    ConstantImage,
    NoMass,
    Isotropic,
}

impl fmt::Display for CorrectionWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionWarning::ConstantImage => "constant image, centroid undefined",
            CorrectionWarning::NoMass => "non-positive total intensity",
            CorrectionWarning::Isotropic => "nearly isotropic moments, orientation undefined",
        })
    }
}

/// Output of a best-effort correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrected<T> {
    pub image: Image<T>,
    pub warning: Option<CorrectionWarning>,
}

impl<T> Corrected<T> {
    fn ok(image: Image<T>) -> Self {
        Self {
            image,
            warning: None,
        }
    }

    fn unchanged(image: Image<T>, w: CorrectionWarning) -> Self {
        Self {
            image,
            warning: Some(w),
        }
    }
}

/// Truncated Gaussian with radius `ceil(3σ)`, renormalized to unit sum.
pub fn gaussian_kernel<T: Scalar>(sigma: T) -> Result<Kernel1D<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (T::lit(3.0) * sigma).ceil().to_usize().unwrap_or(0);
    let two_var = T::lit(2.0) * sigma * sigma;
    let half: Vec<T> = (0..=radius)
        .map(|i| {
            let d = T::from_count(i);
            (-(d * d) / two_var).exp()
        })
        .collect();
    // center + mirrored pairs, outermost first
    let mut sum = half[0];
    for &t in half[1..].iter().rev() {
        sum += t + t;
    }
    let mut taps = Vec::with_capacity(2 * radius + 1);
    taps.extend(half.iter().rev().map(|&t| t / sum));
    taps.extend(half[1..].iter().map(|&t| t / sum));
    Ok(Kernel1D { taps })
}

/// Mirror index without edge repetition (`-1 → 1`), valid for any offset.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn convolve_rows<T: Scalar>(src: &[T], h: usize, w: usize, k: &[T]) -> Vec<T> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![T::zero(); h * w];
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        for c in 0..w {
            let anchor = line[c];
            let mut acc = T::zero();
            for (t, &kt) in k.iter().enumerate() {
                let j = reflect(c as isize + t as isize - r, w);
                acc += kt * (line[j] - anchor);
            }
            out[row * w + c] = anchor + acc;
        }
    }
    out
}

fn convolve_cols<T: Scalar>(src: &[T], h: usize, w: usize, k: &[T]) -> Vec<T> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![T::zero(); h * w];
    for row in 0..h {
        for c in 0..w {
            let anchor = src[row * w + c];
            let mut acc = T::zero();
            for (t, &kt) in k.iter().enumerate() {
                let i = reflect(row as isize + t as isize - r, h);
                acc += kt * (src[i * w + c] - anchor);
            }
            out[row * w + c] = anchor + acc;
        }
    }
    out
}

/// Separable Gaussian blur, horizontal then vertical, reflect padding.
pub fn gaussian_blur<T: Scalar>(img: &Image<T>, sigma: T) -> Result<Image<T>> {
    let k = gaussian_kernel(sigma)?;
    let (h, w) = img.dims();
    let tmp = convolve_rows(img.as_slice(), h, w, k.taps());
    Ok(Image::from_raw(h, w, convolve_cols(&tmp, h, w, k.taps())))
}

/// Keys cubic-convolution kernel with `a = -0.5`.
pub fn keys_cubic<T: Scalar>(t: T) -> T {
    let a = T::lit(KEYS_A);
    let x = t.abs();
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    if x <= T::one() {
        ((a + two) * x - (a + three)) * x * x + T::one()
    } else if x < two {
        ((a * x - T::lit(5.0) * a) * x + T::lit(8.0) * a) * x - T::lit(4.0) * a
    } else {
        T::zero()
    }
}

/// Per-output-coordinate source taps: 4 clamped indices and unit-sum weights.
fn resample_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<([usize; 4], [T; 4])> {
    let ratio = T::from_count(n_in) / T::from_count(n_out);
    let half = T::lit(0.5);
    (0..n_out)
        .map(|d| {
            let src = (T::from_count(d) + half) * ratio - half;
            let base = src.floor();
            let base_i = base.to_isize().unwrap_or(0);
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [T::zero(); 4];
            let mut sum = T::zero();
            for k in 0..4 {
                let off = k as isize - 1;
                idx[k] = (base_i + off).clamp(0, n_in as isize - 1) as usize;
                wts[k] = keys_cubic(frac - T::lit(off as f64));
                sum += wts[k];
            }
            for wk in &mut wts {
                *wk /= sum;
            }
            (idx, wts)
        })
        .collect()
}

/// Cubic-convolution resize with pixel-center mapping `(d + 0.5)·in/out − 0.5`
/// and clamped borders. Same-size resize returns an exact copy.
pub fn bicubic_resize<T: Scalar>(img: &Image<T>, out_h: usize, out_w: usize) -> Result<Image<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "output size must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w) = img.dims();
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = img.as_slice();

    let col_taps = resample_taps::<T>(w, out_w);
    let mut tmp = vec![T::zero(); h * out_w];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for (c, (idx, wts)) in col_taps.iter().enumerate() {
            let anchor = line[idx[0]];
            let mut acc = T::zero();
            for k in 0..4 {
                acc += wts[k] * (line[idx[k]] - anchor);
            }
            tmp[r * out_w + c] = anchor + acc;
        }
    }

    let row_taps = resample_taps::<T>(h, out_h);
    let mut out = vec![T::zero(); out_h * out_w];
    for (r, (idx, wts)) in row_taps.iter().enumerate() {
        for c in 0..out_w {
            let anchor = tmp[idx[0] * out_w + c];
            let mut acc = T::zero();
            for k in 0..4 {
                acc += wts[k] * (tmp[idx[k] * out_w + c] - anchor);
            }
            out[r * out_w + c] = anchor + acc;
        }
    }
    Ok(Image::from_raw(out_h, out_w, out))
}

/// Gaussian blur, bicubic downsample by the scale factor, bicubic upsample back,
/// clamp to `[0, 1]`.
pub fn degrade<T: Scalar>(img: &Image<T>, p: &DegradeParams<T>) -> Result<Image<T>> {
    p.validate()?;
    let (h, w) = img.dims();
    let f = p.scale_factor;
    if h % f != 0 || w % f != 0 {
        return Err(Error::InvalidParameter(format!(
            "image {h}x{w} not divisible by scale factor {f}"
        )));
    }
    let blurred = gaussian_blur(img, p.sigma)?;
    let small = bicubic_resize(&blurred, h / f, w / f)?;
    let up = bicubic_resize(&small, h, w)?;
    Ok(up.map(|v| v.max(T::zero()).min(T::one())))
}

struct Moments<T> {
    mass: T,
    cy: T,
    cx: T,
    mu20: T,
    mu02: T,
    mu11: T,
}

fn moments<T: Scalar>(img: &Image<T>) -> Option<Moments<T>> {
    let (h, w) = img.dims();
    let mut mass = T::zero();
    let mut sy = T::zero();
    let mut sx = T::zero();
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c);
            mass += v;
            sy += v * T::from_count(r);
            sx += v * T::from_count(c);
        }
    }
    if !(mass > T::zero()) {
        return None;
    }
    let cy = sy / mass;
    let cx = sx / mass;
    let (mut mu20, mut mu02, mut mu11) = (T::zero(), T::zero(), T::zero());
    for r in 0..h {
        let dy = T::from_count(r) - cy;
        for c in 0..w {
            let v = img.get(r, c);
            let dx = T::from_count(c) - cx;
            mu20 += v * dx * dx;
            mu02 += v * dy * dy;
            mu11 += v * dx * dy;
        }
    }
    Some(Moments {
        mass,
        cy,
        cx,
        mu20,
        mu02,
        mu11,
    })
}

/// Intensity centroid `(row, col)`, or `None` when total intensity is not positive.
pub fn centroid<T: Scalar>(img: &Image<T>) -> Option<(T, T)> {
    moments(img).map(|m| (m.cy, m.cx))
}

/// Principal-axis angle `½·atan2(2μ₁₁, μ₂₀ − μ₀₂)` in radians, measured from the
/// column axis towards increasing row index.
pub fn orientation<T: Scalar>(img: &Image<T>) -> Option<T> {
    moments(img).map(|m| T::lit(0.5) * (T::lit(2.0) * m.mu11).atan2(m.mu20 - m.mu02))
}

/// Integer translation moving the intensity centroid onto the geometric center.
pub fn recenter<T: Scalar>(img: &Image<T>) -> Corrected<T> {
    if img.is_constant() {
        return Corrected::unchanged(img.clone(), CorrectionWarning::ConstantImage);
    }
    let Some((cy, cx)) = centroid(img) else {
        return Corrected::unchanged(img.clone(), CorrectionWarning::NoMass);
    };
    let (h, w) = img.dims();
    let half = T::lit(0.5);
    let dr = ((T::from_count(h - 1) * half - cy).round())
        .to_isize()
        .unwrap_or(0);
    let dc = ((T::from_count(w - 1) * half - cx).round())
        .to_isize()
        .unwrap_or(0);
    if dr == 0 && dc == 0 {
        return Corrected::ok(img.clone());
    }
    Corrected::ok(translate(img, dr, dc))
}

/// Shifts content by `(dr, dc)` pixels, zero-filling vacated pixels.
pub fn translate<T: Scalar>(img: &Image<T>, dr: isize, dc: isize) -> Image<T> {
    let (h, w) = img.dims();
    Image::from_fn(h, w, |r, c| {
        let sr = r as isize - dr;
        let sc = c as isize - dc;
        if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w {
            img.get(sr as usize, sc as usize)
        } else {
            T::zero()
        }
    })
}

/// Bicubic sample at a fractional position; samples outside the image read as zero.
fn sample_zero<T: Scalar>(img: &Image<T>, y: T, x: T) -> T {
    let (h, w) = img.dims();
    let by = y.floor();
    let bx = x.floor();
    let fy = y - by;
    let fx = x - bx;
    let (Some(iy), Some(ix)) = (by.to_isize(), bx.to_isize()) else {
        return T::zero();
    };
    let mut acc = T::zero();
    for ky in -1..=2isize {
        let r = iy + ky;
        if r < 0 || r >= h as isize {
            continue;
        }
        let wy = keys_cubic(fy - T::lit(ky as f64));
        if wy == T::zero() {
            continue;
        }
        for kx in -1..=2isize {
            let c = ix + kx;
            if c < 0 || c >= w as isize {
                continue;
            }
            acc += wy * keys_cubic(fx - T::lit(kx as f64)) * img.get(r as usize, c as usize);
        }
    }
    acc
}

/// Rotates `img` by `angle` radians about `(cy, cx)`; a feature at orientation φ
/// ends up at φ + angle. Bicubic resampling with zero fill.
pub fn rotate_about<T: Scalar>(img: &Image<T>, angle: T, cy: T, cx: T) -> Image<T> {
    let (h, w) = img.dims();
    let (s, c) = angle.sin_cos();
    Image::from_fn(h, w, |r, col| {
        let px = T::from_count(col) - cx;
        let py = T::from_count(r) - cy;
        let sx = cx + c * px + s * py;
        let sy = cy - s * px + c * py;
        sample_zero(img, sy, sx)
    })
}

/// Rotates about the centroid so the principal axis of the second central
/// intensity moments is vertical.
pub fn rotation_correct<T: Scalar>(img: &Image<T>) -> Corrected<T> {
    if img.is_constant() {
        return Corrected::unchanged(img.clone(), CorrectionWarning::ConstantImage);
    }
    let Some(m) = moments(img) else {
        return Corrected::unchanged(img.clone(), CorrectionWarning::NoMass);
    };
    let tol = T::lit(1e-9) * m.mass;
    if (m.mu20 - m.mu02).abs() < tol && m.mu11.abs() < tol {
        return Corrected::unchanged(img.clone(), CorrectionWarning::Isotropic);
    }
    let theta = T::lit(0.5) * (T::lit(2.0) * m.mu11).atan2(m.mu20 - m.mu02);
    let pi = T::PI();
    let mut delta = T::FRAC_PI_2() - theta;
    // the axis is undirected: take the smallest equivalent rotation
    while delta > T::FRAC_PI_2() {
        delta -= pi;
    }
    while delta <= -T::FRAC_PI_2() {
        delta += pi;
    }
    if delta.abs() < T::lit(1e-9) {
        return Corrected::ok(img.clone());
    }
    Corrected::ok(rotate_about(img, delta, m.cy, m.cx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed<T> {
    pub volume: Volume<T>,
    /// `(slice index, warning)` for every correction that was skipped.
    pub warnings: Vec<(usize, CorrectionWarning)>,
}

/// Per slice: resize to `target`×`target`, rotation-correct, recenter; then
/// min-max normalize the whole volume.
pub fn preprocess<T: Scalar>(v: &Volume<T>, target: usize) -> Result<Preprocessed<T>> {
    let mut warnings = Vec::new();
    let mut slices = Vec::with_capacity(v.len());
    for (i, s) in v.slices().iter().enumerate() {
        let resized = bicubic_resize(s, target, target)?;
        let rotated = rotation_correct(&resized);
        if let Some(w) = rotated.warning {
            warnings.push((i, w));
        }
        let centered = recenter(&rotated.image);
        if let Some(w) = centered.warning {
            if rotated.warning != Some(w) {
                warnings.push((i, w));
            }
        }
        slices.push(centered.image);
    }
    let volume = normalize_volume(&Volume::new(v.patient_id(), slices)?);
    Ok(Preprocessed { volume, warnings })
}
