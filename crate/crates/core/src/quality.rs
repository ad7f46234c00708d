//! RMSE, PSNR and SSIM.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub fn rmse<T: Scalar>(y: &Image<T>, x: &Image<T>) -> Result<T> {
    y.same_dims(x)?;
    let ss = y
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>();
    Ok((ss / T::from_count(y.len())).sqrt())
}

/// PSNR in dB. Identical images have no finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Psnr<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl<T: Scalar> fmt::Display for Psnr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// `20 log10(peak / rmse)` with `peak = max(y)` unless overridden.
pub fn psnr_with_peak<T: Scalar>(y: &Image<T>, x: &Image<T>, peak: Option<T>) -> Result<Psnr<T>> {
    let e = rmse(y, x)?;
    if e == T::zero() {
        return Ok(Psnr::Infinite);
    }
    let peak = peak.unwrap_or_else(|| y.min_max().1);
    if !(peak > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    Ok(Psnr::Finite(T::lit(20.0) * (peak / e).log10()))
}

pub fn psnr<T: Scalar>(y: &Image<T>, x: &Image<T>) -> Result<Psnr<T>> {
    psnr_with_peak(y, x, None)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// One evaluation over whole-image statistics.
    #[default]
    Global,
    /// Mean over non-overlapping `window`×`window` tiles.
    Windowed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub mode: SsimMode,
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            mode: SsimMode::Global,
            window: 8,
        }
    }
}

impl SsimParams {
    pub fn windowed(window: usize) -> Self {
        Self {
            mode: SsimMode::Windowed,
            window,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("dynamic range", self.dynamic_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.mode == SsimMode::Windowed && self.window == 0 {
            return Err(Error::InvalidParameter(
                "SSIM window must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

fn ssim_block<T: Scalar>(x: &[T], y: &[T], c1: T, c2: T) -> T {
    let n = T::from_count(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut vx, mut vy, mut cov) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    let two = T::lit(2.0);
    let lum = (two * mx * my + c1) / (mx * mx + my * my + c1);
    let cs = (two * cov + c2) / (vx + vy + c2);
    lum * cs
}

pub fn ssim<T: Scalar>(x: &Image<T>, y: &Image<T>, p: &SsimParams) -> Result<T> {
    x.same_dims(y)?;
    p.validate()?;
    let (c1, c2) = (T::lit(p.c1()), T::lit(p.c2()));
    match p.mode {
        SsimMode::Global => Ok(ssim_block(x.as_slice(), y.as_slice(), c1, c2)),
        SsimMode::Windowed => {
            let k = p.window;
            let (h, w) = x.dims();
            if k > h || k > w {
                return Err(Error::InvalidParameter(format!(
                    "SSIM window {k} larger than {h}x{w} image"
                )));
            }
            let mut acc = T::zero();
            let mut tiles = 0usize;
            let (mut bx, mut by) = (Vec::with_capacity(k * k), Vec::with_capacity(k * k));
            for r0 in (0..=h - k).step_by(k) {
                for c0 in (0..=w - k).step_by(k) {
                    bx.clear();
                    by.clear();
                    for r in r0..r0 + k {
                        bx.extend_from_slice(&x.row(r)[c0..c0 + k]);
                        by.extend_from_slice(&y.row(r)[c0..c0 + k]);
                    }
                    acc += ssim_block(&bx, &by, c1, c2);
                    tiles += 1;
                }
            }
            Ok(acc / T::from_count(tiles))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport<T> {
    pub psnr: Psnr<T>,
    pub ssim: T,
    pub rmse: T,
}

pub fn evaluate_pair<T: Scalar>(
    reference: &Image<T>,
    estimate: &Image<T>,
    p: &SsimParams,
) -> Result<QualityReport<T>> {
    Ok(QualityReport {
        psnr: psnr(reference, estimate)?,
        ssim: ssim(estimate, reference, p)?,
        rmse: rmse(reference, estimate)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured() -> Image<f64> {
        Image::from_fn(32, 32, |r, c| {
            0.5 + 0.4 * ((r as f64) * 0.3).sin() * ((c as f64) * 0.2).cos()
        })
    }

    #[test]
    fn rmse_examples() {
        let a = textured();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.1);
        assert!((rmse(&b, &a).unwrap() - 0.1).abs() < 1e-12);
        let y = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
        let x = Image::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(rmse(&y, &x).unwrap(), 1.0);
        assert!(rmse(&y, &Image::filled(2, 1, 0.0)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let mut y = Image::filled(10, 10, 0.5f64);
        y = Image::from_fn(
            10,
            10,
            |r, c| if r == 0 && c == 0 { 1.0 } else { y.get(r, c) },
        );
        let x = y.map(|v| v - 0.1);
        let p = psnr(&y, &x).unwrap().finite().unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        let x = y.map(|v| v - 0.01);
        assert!((psnr(&y, &x).unwrap().finite().unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&y, &y).unwrap().is_infinite());
        assert_eq!(psnr(&y, &y).unwrap().to_string(), "inf");
        let p2 = psnr_with_peak(&y, &y.map(|v| v - 0.1), Some(2.0)).unwrap();
        assert!((p2.finite().unwrap() - 20.0 * 20f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let y = textured();
        let mut prev = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let x = y.map(|v| v + amp * rng.gen_range(-1.0..1.0));
            let p = psnr(&y, &x).unwrap().finite().unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_examples() {
        let p = SsimParams::default();
        let x = textured();
        assert_eq!(ssim(&x, &x, &p).unwrap(), 1.0);
        assert_eq!(ssim(&x, &x, &SsimParams::windowed(8)).unwrap(), 1.0);
        let (a, b) = (0.3f64, 0.7f64);
        let got = ssim(&Image::filled(8, 8, a), &Image::filled(8, 8, b), &p).unwrap();
        let c1 = p.c1();
        assert!((got - (2.0 * a * b + c1) / (a * a + b * b + c1)).abs() < 1e-15);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &inv, &p).unwrap() < 0.0);
        assert!(ssim(&x, &Image::filled(4, 4, 0.0), &p).is_err());
        assert!(ssim(
            &Image::filled(4, 4, 0.0),
            &Image::filled(4, 4, 0.0),
            &SsimParams::windowed(8)
        )
        .is_err());
    }

    #[test]
    fn windowed_averages_tiles() {
        let x = textured();
        let y = x.map(|v| v * v);
        let p = SsimParams::windowed(16);
        let mut acc = 0.0;
        for r in [0, 16] {
            for c in [0, 16] {
                acc += ssim(
                    &x.window(r, c, 16).unwrap(),
                    &y.window(r, c, 16).unwrap(),
                    &SsimParams::default(),
                )
                .unwrap();
            }
        }
        assert!((ssim(&x, &y, &p).unwrap() - acc / 4.0).abs() < 1e-14);
    }

    #[test]
    fn report_bundles_metrics() {
        let y = textured();
        let p = SsimParams::default();
        let r = evaluate_pair(&y, &y, &p).unwrap();
        assert_eq!((r.rmse, r.ssim, r.psnr), (0.0, 1.0, Psnr::Infinite));
        let x = y.map(|v| v * 0.9);
        let r = evaluate_pair(&y, &x, &p).unwrap();
        assert_eq!(r.rmse, rmse(&y, &x).unwrap());
        assert_eq!(r.ssim, ssim(&x, &y, &p).unwrap());
        assert_eq!(r.psnr, psnr(&y, &x).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn img() -> impl Strategy<Value = Image<f64>> {
            proptest::collection::vec(0.0f64..1.0, 64).prop_map(|v| Image::new(8, 8, v).unwrap())
        }

        proptest! {
            #[test]
            fn ssim_bounded_and_symmetric(x in img(), y in img()) {
                for p in [SsimParams::default(), SsimParams::windowed(4)] {
                    let a = ssim(&x, &y, &p).unwrap();
                    let b = ssim(&y, &x, &p).unwrap();
                    prop_assert!((-1.0..=1.0).contains(&a));
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn rmse_is_a_metric(x in img(), y in img(), z in img()) {
                let xy = rmse(&x, &y).unwrap();
                prop_assert_eq!(xy, rmse(&y, &x).unwrap());
                prop_assert!(xy <= rmse(&x, &z).unwrap() + rmse(&z, &y).unwrap() + 1e-12);
                prop_assert_eq!(rmse(&x, &x).unwrap(), 0.0);
            }
        }
    }
}
