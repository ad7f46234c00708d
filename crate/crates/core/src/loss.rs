//! Reference values and analytic gradients of the cycle-consistent
//! quasi-supervised objective, evaluated on externally supplied network outputs.
//!
//! Expectations are batch means over items, and each L1 distance is a mean
//! over pixels. The pair weight `w` multiplies each item's supervised term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{sign0, Scalar};

/// Clamp applied to discriminator outputs before taking logarithms.
pub const LOG_EPS: f64 = 1e-7;

/// Network evaluations for one training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LossItem<T> {
    pub x: Image<T>,
    pub y: Image<T>,
    pub gx: Image<T>,
    pub fy: Image<T>,
    pub fgx: Image<T>,
    pub gfy: Image<T>,
    pub fx: Image<T>,
    pub gy: Image<T>,
    pub dy_y: T,
    pub dy_gx: T,
    pub dx_x: T,
    pub dx_fy: T,
    pub w: T,
}

impl<T: Scalar> LossItem<T> {
    fn images(&self) -> [&Image<T>; 8] {
        [
            &self.x, &self.y, &self.gx, &self.fy, &self.fgx, &self.gfy, &self.fx, &self.gy,
        ]
    }

    fn validate(&self) -> Result<()> {
        let imgs = self.images();
        for im in &imgs[1..] {
            imgs[0].same_dims(im)?;
        }
        if !(self.w >= T::zero() && self.w <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "weight {} outside [0, 1]",
                self.w
            )));
        }
        for d in [self.dy_y, self.dy_gx, self.dx_x, self.dx_fy] {
            if !d.is_finite() {
                return Err(Error::InvalidParameter(
                    "non-finite discriminator output".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch<T> {
    items: Vec<LossItem<T>>,
}

impl<T: Scalar> LossBatch<T> {
    pub fn new(items: Vec<LossItem<T>>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Empty("loss batch".into()))?;
        for it in &items {
            it.validate()?;
            first.x.same_dims(&it.x)?;
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[LossItem<T>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn pixels(&self) -> usize {
        self.items[0].x.len()
    }

    fn mean_over(&self, f: impl Fn(&LossItem<T>) -> T) -> T {
        self.items.iter().map(f).sum::<T>() / T::from_count(self.items.len())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvKind {
    LogLoss,
    #[default]
    LeastSquares,
}

impl fmt::Display for AdvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvKind::LogLoss => "log",
            AdvKind::LeastSquares => "lsq",
        })
    }
}

impl FromStr for AdvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" | "logloss" | "log-loss" => Ok(AdvKind::LogLoss),
            "lsq" | "ls" | "least-squares" | "leastsquares" => Ok(AdvKind::LeastSquares),
            _ => Err(Error::InvalidParameter(format!(
                "unknown adversarial loss {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 256.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn mean_abs<T: Scalar>(a: &Image<T>, b: &Image<T>) -> T {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&p, &q)| (p - q).abs())
        .sum::<T>()
        / T::from_count(a.len())
}

fn mean_sq<T: Scalar>(a: &Image<T>, b: &Image<T>) -> T {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&p, &q)| (p - q) * (p - q))
        .sum::<T>()
        / T::from_count(a.len())
}

fn clamp_prob<T: Scalar>(d: T) -> T {
    let eps = T::lit(LOG_EPS);
    d.max(eps).min(T::one() - eps)
}

/// Derivative of the clamp: 1 strictly inside `[eps, 1 - eps]`, else 0.
fn clamp_slope<T: Scalar>(d: T) -> T {
    let eps = T::lit(LOG_EPS);
    if d > eps && d < T::one() - eps {
        T::one()
    } else {
        T::zero()
    }
}

pub fn adv_loss<T: Scalar>(b: &LossBatch<T>, kind: AdvKind) -> T {
    match kind {
        AdvKind::LogLoss => b.mean_over(|it| {
            clamp_prob(it.dy_y).ln()
                + (T::one() - clamp_prob(it.dy_gx)).ln()
                + clamp_prob(it.dx_x).ln()
                + (T::one() - clamp_prob(it.dx_fy)).ln()
        }),
        AdvKind::LeastSquares => b.mean_over(|it| {
            let one = T::one();
            (it.dy_y - one).powi(2) + it.dy_gx.powi(2) + (it.dx_x - one).powi(2) + it.dx_fy.powi(2)
        }),
    }
}

pub fn cyc_loss<T: Scalar>(b: &LossBatch<T>) -> T {
    b.mean_over(|it| mean_abs(&it.fgx, &it.x) + mean_abs(&it.gfy, &it.y))
}

pub fn idt_loss<T: Scalar>(b: &LossBatch<T>) -> T {
    b.mean_over(|it| mean_abs(&it.fx, &it.x) + mean_abs(&it.gy, &it.y))
}

pub fn ql_loss<T: Scalar>(b: &LossBatch<T>) -> T {
    b.mean_over(|it| it.w * (mean_abs(&it.gx, &it.y) + mean_abs(&it.fy, &it.x)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub adv: T,
    pub cyc: T,
    pub idt: T,
    pub ql: T,
    pub total: T,
}

pub fn total_loss<T: Scalar>(
    b: &LossBatch<T>,
    lw: &LossWeights,
    kind: AdvKind,
) -> Result<LossBreakdown<T>> {
    lw.validate()?;
    let adv = adv_loss(b, kind);
    let cyc = cyc_loss(b);
    let idt = idt_loss(b);
    let ql = ql_loss(b);
    let total = adv + T::lit(lw.lambda1) * cyc + T::lit(lw.lambda2) * idt + T::lit(lw.lambda3) * ql;
    Ok(LossBreakdown {
        adv,
        cyc,
        idt,
        ql,
        total,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    L1,
    L2,
}

/// `Σ w_i · Dist(pred_i, target_i)`, with Dist a per-pixel mean of `|·|` or `(·)²`.
pub fn weighted_supervised_loss<T: Scalar>(
    preds: &[Image<T>],
    targets: &[Image<T>],
    weights: &[T],
    dist: Distance,
) -> Result<T> {
    if preds.len() != targets.len() || preds.len() != weights.len() {
        return Err(Error::InvalidParameter(format!(
            "length mismatch: {} predictions, {} targets, {} weights",
            preds.len(),
            targets.len(),
            weights.len()
        )));
    }
    let mut acc = T::zero();
    for ((p, t), &w) in preds.iter().zip(targets).zip(weights) {
        if !(w >= T::zero() && w <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "weight {w} outside [0, 1]"
            )));
        }
        p.same_dims(t)?;
        let d = match dist {
            Distance::L1 => mean_abs(p, t),
            Distance::L2 => mean_sq(p, t),
        };
        acc += w * d;
    }
    Ok(acc)
}

/// Gradient of the total objective with respect to one item's generator
/// outputs and discriminator outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemGrad<T> {
    pub gx: Image<T>,
    pub fy: Image<T>,
    pub fgx: Image<T>,
    pub gfy: Image<T>,
    pub fx: Image<T>,
    pub gy: Image<T>,
    pub dy_y: T,
    pub dy_gx: T,
    pub dx_x: T,
    pub dx_fy: T,
}

fn l1_grad<T: Scalar>(pred: &Image<T>, target: &Image<T>, scale: T) -> Image<T> {
    let data = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| scale * sign0(p - t))
        .collect();
    Image::from_raw(pred.height(), pred.width(), data)
}

/// Analytic gradients of [`total_loss`]; `sign(0)` is taken as 0 for L1 terms.
pub fn loss_grad<T: Scalar>(
    b: &LossBatch<T>,
    lw: &LossWeights,
    kind: AdvKind,
) -> Result<Vec<ItemGrad<T>>> {
    lw.validate()?;
    let nb = T::from_count(b.len());
    let per_pixel = T::one() / (T::from_count(b.pixels()) * nb);
    let (l1, l2, l3) = (T::lit(lw.lambda1), T::lit(lw.lambda2), T::lit(lw.lambda3));
    let one = T::one();
    let two = T::lit(2.0);
    Ok(b.items
        .iter()
        .map(|it| {
            let (dy_y, dy_gx, dx_x, dx_fy) = match kind {
                AdvKind::LogLoss => (
                    clamp_slope(it.dy_y) / (clamp_prob(it.dy_y) * nb),
                    -clamp_slope(it.dy_gx) / ((one - clamp_prob(it.dy_gx)) * nb),
                    clamp_slope(it.dx_x) / (clamp_prob(it.dx_x) * nb),
                    -clamp_slope(it.dx_fy) / ((one - clamp_prob(it.dx_fy)) * nb),
                ),
                AdvKind::LeastSquares => (
                    two * (it.dy_y - one) / nb,
                    two * it.dy_gx / nb,
                    two * (it.dx_x - one) / nb,
                    two * it.dx_fy / nb,
                ),
            };
            ItemGrad {
                gx: l1_grad(&it.gx, &it.y, l3 * it.w * per_pixel),
                fy: l1_grad(&it.fy, &it.x, l3 * it.w * per_pixel),
                fgx: l1_grad(&it.fgx, &it.x, l1 * per_pixel),
                gfy: l1_grad(&it.gfy, &it.y, l1 * per_pixel),
                fx: l1_grad(&it.fx, &it.x, l2 * per_pixel),
                gy: l1_grad(&it.gy, &it.y, l2 * per_pixel),
                dy_y,
                dy_gx,
                dx_x,
                dx_fy,
            }
        })
        .collect())
}
