//! Match records, the persisted manifest format and weight statistics.
//!
//! A manifest file is line-delimited JSON. The first line is a header carrying
//! the matching configuration, creation time, record count and content
//! fingerprints of both datasets; every following line is one record:
//!
//! ```text
//! {"lr":{"patient":"p000","slice":0,"row":0,"col":0,"size":128},"hr":{...},"weight":0.47999999999999998}
//! ```
//!
//! Weights are written with 17 significant digits so they parse back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Dataset, PatchRef};
use crate::numfmt::format_g17;
use crate::scalar::Scalar;
use crate::similarity::{HistogramSpec, RbfParams, SimilarityKind, SimilarityParams};

pub const MANIFEST_FORMAT: &str = "quasipair-manifest/1";

/// Which levels of the patient → slice → patch search are performed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchLevels {
    /// Best patient, then best slice in it, then best patch in that slice.
    #[default]
    Hierarchical,
    /// Best slice across all patients, then best patch in it.
    SliceAndPatch,
    /// Every patch of every slice of every patient.
    PatchOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub metric: SimilarityKind,
    pub hist: HistogramSpec<f64>,
    pub rbf: RbfParams<f64>,
    pub threshold: f64,
    pub levels: MatchLevels,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 128,
            stride: 64,
            metric: SimilarityKind::Nmi,
            hist: HistogramSpec::default(),
            rbf: RbfParams::default(),
            threshold: 0.4,
            levels: MatchLevels::Hierarchical,
        }
    }
}

impl MatchConfig {
    /// Checks the configuration against `height`×`width` slices.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::InvalidParameter(format!(
                "stride {} must be in 1..=patch_size ({})",
                self.stride, self.patch_size
            )));
        }
        if self.patch_size > height || self.patch_size > width {
            return Err(Error::InvalidParameter(format!(
                "patch size {} exceeds slice {height}x{width}",
                self.patch_size
            )));
        }
        check_threshold(self.threshold)?;
        self.hist.validate()?;
        if let Some(g) = self.rbf.gamma {
            RbfParams::with_gamma(g)?;
        }
        Ok(())
    }

    pub fn similarity_params<T: Scalar>(&self) -> SimilarityParams<T> {
        SimilarityParams {
            hist: self.hist.cast(),
            rbf: self.rbf.cast(),
        }
    }
}

fn check_threshold(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be in [0, 1], got {tau}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub lr: PatchRef,
    pub hr: PatchRef,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<MatchRecord>,
    pub config: MatchConfig,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub lr_fingerprint: String,
    pub hr_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    config: MatchConfig,
    created: u64,
    records: usize,
    lr_fingerprint: String,
    hr_fingerprint: String,
}

/// Creation time: `SOURCE_DATE_EPOCH` when set, otherwise the wall clock.
pub fn timestamp_now() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return v;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// SHA-256 over patient ids, dimensions and pixel values, volumes in id order.
pub fn dataset_fingerprint<T: Scalar>(ds: &Dataset<T>) -> String {
    let mut h = Sha256::new();
    for v in ds.sorted_volumes() {
        h.update((v.patient_id().len() as u64).to_le_bytes());
        h.update(v.patient_id().as_bytes());
        let (rows, cols) = v.dims();
        for n in [rows, cols, v.len()] {
            h.update((n as u64).to_le_bytes());
        }
        for s in v.slices() {
            for &x in s.as_slice() {
                h.update(x.as_f64().to_bits().to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

impl Manifest {
    /// Sorts records by LR reference and keeps the first record per LR reference.
    pub fn new<T: Scalar>(
        mut records: Vec<MatchRecord>,
        config: MatchConfig,
        lr: &Dataset<T>,
        hr: &Dataset<T>,
    ) -> Self {
        records.sort_by(|a, b| a.lr.cmp(&b.lr));
        records.dedup_by(|b, a| a.lr == b.lr);
        Self {
            records,
            config,
            created: timestamp_now(),
            lr_fingerprint: dataset_fingerprint(lr),
            hr_fingerprint: dataset_fingerprint(hr),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_weight(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().map(|r| r.weight).sum::<f64>() / self.records.len() as f64)
    }

    /// Human-readable warnings when the manifest was built from other data.
    pub fn fingerprint_warnings<T: Scalar>(&self, lr: &Dataset<T>, hr: &Dataset<T>) -> Vec<String> {
        let mut out = Vec::new();
        let lf = dataset_fingerprint(lr);
        if lf != self.lr_fingerprint {
            out.push(format!(
                "LR fingerprint mismatch: manifest {} vs data {lf}",
                self.lr_fingerprint
            ));
        }
        let hf = dataset_fingerprint(hr);
        if hf != self.hr_fingerprint {
            out.push(format!(
                "HR fingerprint mismatch: manifest {} vs data {hf}",
                self.hr_fingerprint
            ));
        }
        out
    }

    /// Serialized file contents.
    pub fn to_text(&self) -> String {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            config: self.config.clone(),
            created: self.created,
            records: self.records.len(),
            lr_fingerprint: self.lr_fingerprint.clone(),
            hr_fingerprint: self.hr_fingerprint.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str("{\"lr\":");
            push_ref(&mut out, &r.lr);
            out.push_str(",\"hr\":");
            push_ref(&mut out, &r.hr);
            let _ = write!(out, ",\"weight\":{}}}", format_g17(r.weight));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let Some((_, first)) = lines.next() else {
            return Err(Error::ManifestParse {
                line: 1,
                msg: "missing header".into(),
            });
        };
        let header: Header = serde_json::from_str(first).map_err(|e| Error::ManifestParse {
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::ManifestParse {
                line: 1,
                msg: format!("unsupported format {:?}", header.format),
            });
        }
        let mut records: Vec<MatchRecord> = Vec::with_capacity(header.records);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let r: MatchRecord = serde_json::from_str(line).map_err(|e| Error::ManifestParse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&r.weight) {
                return Err(Error::ManifestParse {
                    line: lineno,
                    msg: format!("weight {} outside [0, 1]", r.weight),
                });
            }
            if let Some(prev) = records.last() {
                if prev.lr >= r.lr {
                    return Err(Error::ManifestParse {
                        line: lineno,
                        msg: "records not strictly sorted by LR reference".into(),
                    });
                }
            }
            records.push(r);
        }
        if records.len() != header.records {
            return Err(Error::ManifestParse {
                line: text.lines().count() + 1,
                msg: format!(
                    "header announces {} records, found {}",
                    header.records,
                    records.len()
                ),
            });
        }
        Ok(Self {
            records,
            config: header.config,
            created: header.created,
            lr_fingerprint: header.lr_fingerprint,
            hr_fingerprint: header.hr_fingerprint,
        })
    }
}

fn push_ref(out: &mut String, r: &PatchRef) {
    let id = serde_json::to_string(&r.patient_id).expect("string serializes");
    let _ = write!(
        out,
        "{{\"patient\":{id},\"slice\":{},\"row\":{},\"col\":{},\"size\":{}}}",
        r.slice_index, r.row, r.col, r.size
    );
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text)
}

/// Keeps records with weight strictly greater than `tau`.
pub fn filter_threshold(m: &Manifest, tau: f64) -> Result<Manifest> {
    check_threshold(tau)?;
    let mut out = m.clone();
    out.records.retain(|r| r.weight > tau);
    out.config.threshold = tau;
    Ok(out)
}

/// Distribution of record weights over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchStats {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    weights: Vec<f64>,
}

impl MatchStats {
    /// Fraction of weights in the closed interval `[lo, hi]`.
    pub fn fraction_in(&self, lo: f64, hi: f64) -> f64 {
        let n = self.weights.iter().filter(|&&w| w >= lo && w <= hi).count();
        n as f64 / self.weights.len() as f64
    }

    pub fn total(&self) -> usize {
        self.weights.len()
    }

    /// `bin_lo,bin_hi,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                format_g17(self.edges[i]),
                format_g17(self.edges[i + 1]),
                c
            );
        }
        out
    }
}

pub fn weight_stats(m: &Manifest, bins: usize) -> Result<MatchStats> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be >= 1".into()));
    }
    if m.is_empty() {
        return Err(Error::Empty("no records".into()));
    }
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for r in &m.records {
        let b = ((r.weight * bins as f64).floor() as isize).clamp(0, bins as isize - 1);
        counts[b as usize] += 1;
    }
    let weights: Vec<f64> = m.records.iter().map(|r| r.weight).collect();
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    Ok(MatchStats {
        edges,
        counts,
        mean,
        weights,
    })
}
