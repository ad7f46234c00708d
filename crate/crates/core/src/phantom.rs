//! Seeded synthetic head phantoms.
//!
//! Each patient is an elongated elliptical head with a bright rim, a soft
//! interior, a faint smooth background and a set of elliptical Gaussian blobs.
//! Blob parameters are interpolated linearly between two keyframes across the
//! slice index and the head cross-section shrinks towards the end slices, so
//! neighbouring slices are similar and distant ones are not.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Dataset, DomainLabel, Image, Volume};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub patients: usize,
    pub slices_per_patient: usize,
    /// Slice side length in pixels.
    pub size: usize,
    /// Inclusive range of blob counts per patient.
    pub blobs: (usize, usize),
    /// Blob semi-axis range as a fraction of the slice size.
    pub blob_radius: (f64, f64),
    pub blob_intensity: (f64, f64),
    /// How far blob centres may sit from the head centre, as a fraction of the head semi-axes.
    pub blob_spread: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            patients: 4,
            slices_per_patient: 8,
            size: 256,
            blobs: (4, 8),
            blob_radius: (0.03, 0.10),
            blob_intensity: (0.2, 0.7),
            blob_spread: 0.65,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.patients == 0 || self.slices_per_patient == 0 {
            return bad("patients and slices per patient must be at least 1".into());
        }
        if self.size < 32 {
            return bad(format!(
                "phantom size must be at least 32, got {}",
                self.size
            ));
        }
        if self.blobs.0 > self.blobs.1 {
            return bad(format!("empty blob count range {:?}", self.blobs));
        }
        let (r0, r1) = self.blob_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1 <= 0.5) {
            return bad(format!(
                "blob radius range {:?} must satisfy 0 < lo <= hi <= 0.5",
                self.blob_radius
            ));
        }
        let (i0, i1) = self.blob_intensity;
        if !(i0 >= 0.0 && i0 <= i1 && i1 <= 1.0) {
            return bad(format!(
                "blob intensity range {:?} must lie in [0, 1]",
                self.blob_intensity
            ));
        }
        if !(0.0..=1.0).contains(&self.blob_spread) {
            return bad(format!("blob spread {} outside [0, 1]", self.blob_spread));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct BlobKey {
    /// Offset from the head centre in units of the head semi-axes.
    du: f64,
    dv: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    intensity: f64,
}

impl BlobKey {
    fn lerp(&self, o: &Self, t: f64) -> Self {
        let l = |a: f64, b: f64| a + (b - a) * t;
        Self {
            du: l(self.du, o.du),
            dv: l(self.dv, o.dv),
            rx: l(self.rx, o.rx),
            ry: l(self.ry, o.ry),
            angle: l(self.angle, o.angle),
            intensity: l(self.intensity, o.intensity),
        }
    }
}

#[derive(Clone, Debug)]
struct Patient {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    rim: f64,
    tissue: f64,
    bg_freq: (f64, f64),
    bg_phase: (f64, f64),
    blobs: Vec<(BlobKey, BlobKey)>,
}

fn draw_key(rng: &mut ChaCha8Rng, spec: &PhantomSpec) -> BlobKey {
    // uniform over the disc of radius `blob_spread`
    let rad = spec.blob_spread * rng.gen_range(0.0f64..1.0).sqrt();
    let phi = rng.gen_range(0.0..TAU);
    BlobKey {
        du: rad * phi.cos(),
        dv: rad * phi.sin(),
        rx: rng.gen_range(spec.blob_radius.0..=spec.blob_radius.1),
        ry: rng.gen_range(spec.blob_radius.0..=spec.blob_radius.1),
        angle: rng.gen_range(0.0..PI),
        intensity: rng.gen_range(spec.blob_intensity.0..=spec.blob_intensity.1),
    }
}

fn draw_patient(rng: &mut ChaCha8Rng, spec: &PhantomSpec) -> Patient {
    let n = rng.gen_range(spec.blobs.0..=spec.blobs.1);
    Patient {
        cx: 0.5 + rng.gen_range(-0.02..0.02),
        cy: 0.5 + rng.gen_range(-0.02..0.02),
        ax: rng.gen_range(0.30..0.34),
        ay: rng.gen_range(0.40..0.44),
        rim: rng.gen_range(0.5..0.7),
        tissue: rng.gen_range(0.12..0.2),
        bg_freq: (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0)),
        bg_phase: (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)),
        blobs: (0..n)
            .map(|_| (draw_key(rng, spec), draw_key(rng, spec)))
            .collect(),
    }
}

fn jitter_key(k: &BlobKey, rng: &mut ChaCha8Rng, spec: &PhantomSpec, p: f64) -> BlobKey {
    let mut j = |width: f64| p * width * rng.gen_range(-1.0..1.0);
    let rw = spec.blob_radius.1 - spec.blob_radius.0;
    let iw = spec.blob_intensity.1 - spec.blob_intensity.0;
    let (du, dv) = (k.du + j(spec.blob_spread), k.dv + j(spec.blob_spread));
    let (rx, ry) = (k.rx + j(rw), k.ry + j(rw));
    let angle = k.angle + j(PI);
    let intensity = k.intensity + j(iw);
    BlobKey {
        du,
        dv,
        rx: rx.max(0.005),
        ry: ry.max(0.005),
        angle,
        intensity: intensity.clamp(0.0, 1.0),
    }
}

fn jitter_patient(pt: &Patient, rng: &mut ChaCha8Rng, spec: &PhantomSpec, p: f64) -> Patient {
    let mut j = |width: f64| p * width * rng.gen_range(-1.0..1.0);
    Patient {
        cx: pt.cx + j(0.02),
        cy: pt.cy + j(0.02),
        ax: pt.ax + j(0.02),
        ay: pt.ay + j(0.02),
        rim: pt.rim + j(0.1),
        tissue: pt.tissue + j(0.04),
        bg_freq: (pt.bg_freq.0 + j(1.0), pt.bg_freq.1 + j(1.0)),
        bg_phase: (pt.bg_phase.0 + j(PI), pt.bg_phase.1 + j(PI)),
        blobs: pt
            .blobs
            .iter()
            .map(|(a, b)| (jitter_key(a, rng, spec, p), jitter_key(b, rng, spec, p)))
            .collect(),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn render(pt: &Patient, size: usize, t: f64) -> Image<f64> {
    // head cross-section of a sphere cut away from its equator
    let z = 0.6 * (2.0 * t - 1.0);
    let shrink = (1.0 - z * z).sqrt();
    let (ax, ay) = (pt.ax * shrink, pt.ay * shrink);
    let blobs: Vec<BlobKey> = pt.blobs.iter().map(|(a, b)| a.lerp(b, t)).collect();
    let prepared: Vec<(f64, f64, f64, f64, f64, f64, f64)> = blobs
        .iter()
        .map(|k| {
            let (s, c) = k.angle.sin_cos();
            (
                pt.cx + k.du * ax,
                pt.cy + k.dv * ay,
                c,
                s,
                k.rx,
                k.ry,
                k.intensity,
            )
        })
        .collect();
    let n = size as f64;
    Image::from_fn(size, size, |r, c| {
        let u = (c as f64 + 0.5) / n;
        let v = (r as f64 + 0.5) / n;
        let d = (((u - pt.cx) / ax).powi(2) + ((v - pt.cy) / ay).powi(2)).sqrt();
        let inside = sigmoid((1.0 - d) / 0.03);
        let mut s = 0.03
            * (1.0
                + (TAU * u * pt.bg_freq.0 + pt.bg_phase.0).sin()
                    * (TAU * v * pt.bg_freq.1 + pt.bg_phase.1).sin());
        s += pt.rim * (-0.5 * ((d - 1.0) / 0.05).powi(2)).exp();
        s += pt.tissue * inside;
        for &(bx, by, cs, sn, rx, ry, amp) in &prepared {
            let (du, dv) = (u - bx, v - by);
            let p = du * cs + dv * sn;
            let q = -du * sn + dv * cs;
            s += amp * inside * (-0.5 * ((p / rx).powi(2) + (q / ry).powi(2))).exp();
        }
        1.0 - (-1.5 * s).exp()
    })
}

fn patient_id(i: usize) -> String {
    format!("p{i:03}")
}

fn render_dataset<T: Scalar>(
    patients: &[Patient],
    spec: &PhantomSpec,
    label: DomainLabel,
) -> Result<Dataset<T>> {
    let n = spec.slices_per_patient;
    let volumes = patients
        .par_iter()
        .enumerate()
        .map(|(i, pt)| {
            let slices = (0..n)
                .into_par_iter()
                .map(|s| {
                    let t = if n == 1 {
                        0.5
                    } else {
                        s as f64 / (n - 1) as f64
                    };
                    render(pt, spec.size, t).cast::<T>()
                })
                .collect();
            Volume::new(patient_id(i), slices)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(label, volumes)
}

fn draw_patients(spec: &PhantomSpec) -> Vec<Patient> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.patients)
        .map(|_| draw_patient(&mut rng, spec))
        .collect()
}

/// A deterministic dataset of `spec.patients` volumes, labelled HR.
pub fn generate_dataset<T: Scalar>(spec: &PhantomSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    render_dataset(&draw_patients(spec), spec, DomainLabel::Hr)
}

/// An LR-labelled dataset and an HR-labelled copy whose phantom parameters are
/// jittered by `perturbation` times each parameter's natural range. Patient
/// ids coincide.
pub fn generate_similar_pair<T: Scalar>(
    spec: &PhantomSpec,
    perturbation: f64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&perturbation) {
        return Err(Error::InvalidParameter(format!(
            "perturbation {perturbation} outside [0, 1]"
        )));
    }
    let base = draw_patients(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let jittered: Vec<Patient> = base
        .iter()
        .map(|p| jitter_patient(p, &mut rng, spec, perturbation))
        .collect();
    Ok((
        render_dataset(&base, spec, DomainLabel::Lr)?,
        render_dataset(&jittered, spec, DomainLabel::Hr)?,
    ))
}
