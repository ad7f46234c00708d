//! Similarity between equally sized images: normalized mutual information,
//! Pearson correlation and a radial-basis kernel, plus the score → weight map.
//!
//! Scores are computed through [`Prepared`] descriptors so that the matcher,
//! which prepares every candidate once, gets bit-identical values to the
//! one-shot functions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec<T> {
    pub bins: usize,
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Default for HistogramSpec<T> {
    fn default() -> Self {
        Self {
            bins: 64,
            lo: T::zero(),
            hi: T::one(),
        }
    }
}

impl<T: Scalar> HistogramSpec<T> {
    pub fn new(bins: usize, lo: T, hi: T) -> Result<Self> {
        let s = Self { bins, lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || self.bins > u16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "histogram bins must be in 2..=65535, got {}",
                self.bins
            )));
        }
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "degenerate histogram range [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Uniform bin of `v`; out-of-range values fall into the edge bins.
    #[inline]
    pub fn bin_of(&self, v: T) -> usize {
        let t = (v - self.lo) / (self.hi - self.lo) * T::from_count(self.bins);
        let i = t.floor().to_isize().unwrap_or(0);
        i.clamp(0, self.bins as isize - 1) as usize
    }

    pub fn cast<U: Scalar>(&self) -> HistogramSpec<U> {
        HistogramSpec {
            bins: self.bins,
            lo: U::lit(self.lo.as_f64()),
            hi: U::lit(self.hi.as_f64()),
        }
    }
}

/// `bins × bins` co-occurrence counts, row index from the first image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<u32>,
    total: u64,
}

impl JointHistogram {
    /// Builds from a row-major count matrix.
    pub fn from_counts(bins: usize, counts: Vec<u32>) -> Result<Self> {
        if bins == 0 || counts.len() != bins * bins {
            return Err(Error::InvalidParameter(format!(
                "expected {}x{} counts, got {}",
                bins,
                bins,
                counts.len()
            )));
        }
        let total = counts.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return Err(Error::Empty("joint histogram has no samples".into()));
        }
        Ok(Self {
            bins,
            counts,
            total,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.bins + j]
    }

    pub fn row_marginal(&self) -> Vec<u32> {
        self.counts
            .chunks_exact(self.bins)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_marginal(&self) -> Vec<u32> {
        let mut m = vec![0u32; self.bins];
        for r in self.counts.chunks_exact(self.bins) {
            for (a, &c) in m.iter_mut().zip(r) {
                *a += c;
            }
        }
        m
    }
}

pub fn joint_histogram<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    spec: &HistogramSpec<T>,
) -> Result<JointHistogram> {
    x.same_dims(y)?;
    spec.validate()?;
    let b = spec.bins;
    let mut counts = vec![0u32; b * b];
    for (&u, &v) in x.as_slice().iter().zip(y.as_slice()) {
        counts[spec.bin_of(u) * b + spec.bin_of(v)] += 1;
    }
    JointHistogram::from_counts(b, counts)
}

/// `p·ln(p / (pa·pb))` for one cell, written in counts. Entropy reuses it with
/// `a = b = c`, which makes `I(x, x)` and `H(x)` agree bit-for-bit.
#[inline]
fn cell_term<T: Scalar>(c: u32, a: u32, b: u32, n: T) -> T {
    if c == 0 {
        return T::zero();
    }
    let cf = T::lit(c as f64);
    let p = cf / n;
    p * ((cf * n) / (T::lit(a as f64) * T::lit(b as f64))).ln()
}

/// Shannon entropy (nats) of a count vector.
pub fn entropy_of_counts<T: Scalar>(counts: &[u32], total: u64) -> T {
    let n = T::lit(total as f64);
    let mut h = T::zero();
    for &c in counts {
        h += cell_term(c, c, c, n);
    }
    h
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> Result<T> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "entry {v} is not a probability"
        )));
    }
    let s: T = p.iter().copied().sum();
    if (s - T::one()).abs() > T::lit(1e-9) {
        return Err(Error::InvalidDistribution(format!("sums to {s}")));
    }
    Ok(p.iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| -(v * v.ln()))
        .sum())
}

/// Plug-in mutual information from joint counts and their marginals.
///
/// Cells are visited as transpose pairs `(i, j)`, `(j, i)` so the result is
/// exactly symmetric in the two images.
fn mi_from_counts<T: Scalar>(joint: &[u32], bins: usize, a: &[u32], b: &[u32], total: u64) -> T {
    let n = T::lit(total as f64);
    let mut mi = T::zero();
    for i in 0..bins {
        mi += cell_term(joint[i * bins + i], a[i], b[i], n);
        for j in i + 1..bins {
            let upper = cell_term(joint[i * bins + j], a[i], b[j], n);
            let lower = cell_term(joint[j * bins + i], a[j], b[i], n);
            mi += upper + lower;
        }
    }
    mi
}

pub fn mutual_information<T: Scalar>(h: &JointHistogram) -> T {
    let a = h.row_marginal();
    let b = h.col_marginal();
    mi_from_counts(&h.counts, h.bins, &a, &b, h.total)
}

fn nmi_from_parts<T: Scalar>(mi: T, hx: T, hy: T) -> T {
    let denom = hx + hy;
    if denom <= T::zero() {
        return T::zero();
    }
    (T::lit(2.0) * mi / denom).max(T::zero()).min(T::one())
}

/// `2·I(x,y) / (H(x) + H(y))`, zero when both images occupy a single bin.
pub fn nmi<T: Scalar>(x: &Image<T>, y: &Image<T>, spec: &HistogramSpec<T>) -> Result<T> {
    let h = joint_histogram(x, y, spec)?;
    let a = h.row_marginal();
    let b = h.col_marginal();
    let mi = mi_from_counts(&h.counts, h.bins, &a, &b, h.total);
    let hx = entropy_of_counts(&a, h.total);
    let hy = entropy_of_counts(&b, h.total);
    Ok(nmi_from_parts(mi, hx, hy))
}

/// Pearson correlation with population statistics.
pub fn pcc<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    x.same_dims(y)?;
    let px = Centered::new(x);
    let py = Centered::new(y);
    px.correlate(&py)
}

/// Radial-basis-function kernel parameters. `gamma = None` selects `sqrt(N)/2`
/// for `N`-pixel inputs.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RbfParams<T> {
    pub gamma: Option<T>,
}

impl<T: Scalar> RbfParams<T> {
    pub fn with_gamma(gamma: T) -> Result<Self> {
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rbf gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self { gamma: Some(gamma) })
    }

    pub fn gamma_for(&self, pixels: usize) -> T {
        self.gamma
            .unwrap_or_else(|| T::from_count(pixels).sqrt() * T::lit(0.5))
    }

    pub fn cast<U: Scalar>(&self) -> RbfParams<U> {
        RbfParams {
            gamma: self.gamma.map(|g| U::lit(g.as_f64())),
        }
    }
}

/// `exp(−‖x − y‖² / (2γ²))`.
pub fn rbf<T: Scalar>(x: &Image<T>, y: &Image<T>, p: &RbfParams<T>) -> Result<T> {
    x.same_dims(y)?;
    let g = p.gamma_for(x.len());
    Ok(rbf_values(x.as_slice(), y.as_slice(), g))
}

fn rbf_values<T: Scalar>(x: &[T], y: &[T], gamma: T) -> T {
    let d2: T = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    (-d2 / (T::lit(2.0) * gamma * gamma)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    #[default]
    Nmi,
    Pcc,
    Rbf,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Nmi => "nmi",
            SimilarityKind::Pcc => "pcc",
            SimilarityKind::Rbf => "rbf",
        })
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmi" => Ok(SimilarityKind::Nmi),
            "pcc" => Ok(SimilarityKind::Pcc),
            "rbf" => Ok(SimilarityKind::Rbf),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams<T> {
    pub hist: HistogramSpec<T>,
    pub rbf: RbfParams<T>,
}

impl<T: Scalar> Default for SimilarityParams<T> {
    fn default() -> Self {
        Self {
            hist: HistogramSpec::default(),
            rbf: RbfParams::default(),
        }
    }
}

pub fn similarity<T: Scalar>(
    kind: SimilarityKind,
    x: &Image<T>,
    y: &Image<T>,
    params: &SimilarityParams<T>,
) -> Result<T> {
    x.same_dims(y)?;
    let a = Prepared::new(kind, x, params)?;
    let b = Prepared::new(kind, y, params)?;
    a.score(&b, &mut Scratch::default())
}

/// Maps a score onto `[0, 1]`: identity for NMI and RBF, negative PCC clipped to 0.
pub fn to_weight<T: Scalar>(kind: SimilarityKind, score: T) -> T {
    match kind {
        SimilarityKind::Nmi | SimilarityKind::Rbf => score,
        SimilarityKind::Pcc => score.max(T::zero()),
    }
}

#[derive(Clone, Debug)]
pub struct Centered<T> {
    dev: Vec<T>,
    std: T,
    constant: bool,
}

impl<T: Scalar> Centered<T> {
    fn new(img: &Image<T>) -> Self {
        let n = T::from_count(img.len());
        let mean = img.mean();
        let dev: Vec<T> = img.as_slice().iter().map(|&v| v - mean).collect();
        let var = dev.iter().map(|&d| d * d).sum::<T>() / n;
        Self {
            dev,
            std: var.sqrt(),
            constant: img.is_constant(),
        }
    }

    fn correlate(&self, other: &Self) -> Result<T> {
        if self.constant || other.constant || self.std == T::zero() || other.std == T::zero() {
            return Err(Error::ZeroVariance);
        }
        let n = T::from_count(self.dev.len());
        let cov = self
            .dev
            .iter()
            .zip(&other.dev)
            .map(|(&a, &b)| a * b)
            .sum::<T>()
            / n;
        Ok((cov / (self.std * other.std)).max(-T::one()).min(T::one()))
    }
}

/// Per-image data a metric needs, computed once and reused across comparisons.
#[derive(Clone, Debug)]
pub enum Prepared<T> {
    Nmi {
        bins: usize,
        index: Vec<u16>,
        marginal: Vec<u32>,
        entropy: T,
    },
    Pcc(Centered<T>),
    Rbf {
        values: Vec<T>,
        gamma: T,
    },
}

/// Reusable joint-count buffer for NMI scoring.
#[derive(Debug, Default)]
pub struct Scratch {
    joint: Vec<u32>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(kind: SimilarityKind, img: &Image<T>, params: &SimilarityParams<T>) -> Result<Self> {
        Ok(match kind {
            SimilarityKind::Nmi => {
                let spec = &params.hist;
                spec.validate()?;
                let mut marginal = vec![0u32; spec.bins];
                let index = img
                    .as_slice()
                    .iter()
                    .map(|&v| {
                        let b = spec.bin_of(v);
                        marginal[b] += 1;
                        b as u16
                    })
                    .collect();
                let entropy = entropy_of_counts(&marginal, img.len() as u64);
                Prepared::Nmi {
                    bins: spec.bins,
                    index,
                    marginal,
                    entropy,
                }
            }
            SimilarityKind::Pcc => Prepared::Pcc(Centered::new(img)),
            SimilarityKind::Rbf => {
                let gamma = params.rbf.gamma_for(img.len());
                if !(gamma > T::zero()) {
                    return Err(Error::InvalidParameter(format!("rbf gamma {gamma}")));
                }
                Prepared::Rbf {
                    values: img.as_slice().to_vec(),
                    gamma,
                }
            }
        })
    }

    pub fn kind(&self) -> SimilarityKind {
        match self {
            Prepared::Nmi { .. } => SimilarityKind::Nmi,
            Prepared::Pcc(_) => SimilarityKind::Pcc,
            Prepared::Rbf { .. } => SimilarityKind::Rbf,
        }
    }

    fn len(&self) -> usize {
        match self {
            Prepared::Nmi { index, .. } => index.len(),
            Prepared::Pcc(c) => c.dev.len(),
            Prepared::Rbf { values, .. } => values.len(),
        }
    }

    /// Similarity score between two prepared images of the same size and kind.
    pub fn score(&self, other: &Self, scratch: &mut Scratch) -> Result<T> {
        if self.len() != other.len() {
            return Err(Error::InvalidParameter(format!(
                "pixel count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        match (self, other) {
            (
                Prepared::Nmi {
                    bins,
                    index: ia,
                    marginal: ma,
                    entropy: ha,
                },
                Prepared::Nmi {
                    bins: bb,
                    index: ib,
                    marginal: mb,
                    entropy: hb,
                },
            ) if bins == bb => {
                let b = *bins;
                scratch.joint.clear();
                scratch.joint.resize(b * b, 0);
                for (&u, &v) in ia.iter().zip(ib) {
                    scratch.joint[u as usize * b + v as usize] += 1;
                }
                let mi = mi_from_counts(&scratch.joint, b, ma, mb, ia.len() as u64);
                Ok(nmi_from_parts(mi, *ha, *hb))
            }
            (Prepared::Pcc(a), Prepared::Pcc(b)) => a.correlate(b),
            (Prepared::Rbf { values: a, gamma }, Prepared::Rbf { values: b, .. }) => {
                Ok(rbf_values(a, b, *gamma))
            }
            _ => Err(Error::InvalidParameter(
                "prepared descriptors of different kinds or binning".into(),
            )),
        }
    }
}
