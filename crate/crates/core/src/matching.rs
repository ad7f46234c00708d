//! Patient → slice → patch matching of an LR dataset against an HR dataset.
//!
//! Every search is an argmax over candidates visited in lexicographic
//! `(patient_id, slice, row, col)` order with a strict `>` update, so ties
//! resolve to the smallest candidate. Queries run in parallel on the ambient
//! rayon pool and are merged in LR-reference order; output does not depend on
//! the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Dataset, Image, PatchRef, Volume};
use crate::manifest::{Manifest, MatchConfig, MatchLevels, MatchRecord};
use crate::scalar::Scalar;
use crate::similarity::{to_weight, Prepared, Scratch, SimilarityParams};

/// Top-left corners of a `size`×`size` sliding window with the given stride.
/// A final flush-to-border position is added when the stride does not reach it.
pub fn patch_grid(h: usize, w: usize, size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "patch size and stride must be positive".into(),
        ));
    }
    if size > h || size > w {
        return Err(Error::InvalidParameter(format!(
            "patch size {size} exceeds {h}x{w}"
        )));
    }
    let rows = axis_positions(h, size, stride);
    let cols = axis_positions(w, size, stride);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

fn axis_positions(n: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = n - size;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientHit {
    pub patient_id: String,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceHit {
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridHit {
    pub row: usize,
    pub col: usize,
    pub score: f64,
    pub weight: f64,
}

/// Upper-level choices made for one LR slice by the hierarchical search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelChoice {
    pub lr_patient: String,
    pub lr_slice: usize,
    pub hr_patient: String,
    pub hr_slice: usize,
}

/// Score used for ranking. Undefined correlations (a constant input under PCC)
/// rank below every defined score.
fn rank_score<T: Scalar>(a: &Prepared<T>, b: &Prepared<T>, s: &mut Scratch) -> Result<T> {
    match a.score(b, s) {
        Ok(v) => Ok(v),
        Err(Error::ZeroVariance) => Ok(T::neg_infinity()),
        Err(e) => Err(e),
    }
}

/// Index and score of the best candidate; first wins on ties.
fn argmax<'c, T: Scalar>(
    query: &Prepared<T>,
    candidates: impl IntoIterator<Item = &'c Prepared<T>>,
    scratch: &mut Scratch,
) -> Result<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, c) in candidates.into_iter().enumerate() {
        let s = rank_score(query, c, scratch)?;
        match best {
            Some((_, b)) if !(s > b) => {}
            _ => best = Some((i, s)),
        }
    }
    best.ok_or_else(|| Error::Empty("no candidates".into()))
}

fn finite_or_zero<T: Scalar>(v: T) -> f64 {
    let f = v.as_f64();
    if f.is_finite() {
        f
    } else {
        0.0
    }
}

fn weight_of<T: Scalar>(cfg: &MatchConfig, score: T) -> f64 {
    finite_or_zero(to_weight(cfg.metric, score)).clamp(0.0, 1.0)
}

/// HR patient whose mean image is most similar to the mean image of `lr`.
pub fn match_patient<T: Scalar>(
    lr: &Volume<T>,
    hr_set: &Dataset<T>,
    cfg: &MatchConfig,
) -> Result<PatientHit> {
    if hr_set.is_empty() {
        return Err(Error::Empty("HR dataset has no patients".into()));
    }
    let params = cfg.similarity_params::<T>();
    let hr = hr_set.sorted_volumes();
    let lr_mean = lr.mean_image();
    let cands = hr
        .iter()
        .map(|v| {
            let m = v.mean_image();
            lr_mean.same_dims(&m)?;
            Prepared::new(cfg.metric, &m, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    let q = Prepared::new(cfg.metric, &lr_mean, &params)?;
    let (i, s) = argmax(&q, &cands, &mut Scratch::default())?;
    Ok(PatientHit {
        patient_id: hr[i].patient_id().to_owned(),
        score: finite_or_zero(s),
    })
}

/// Index of the HR slice most similar to `lr_slice`.
pub fn match_slice<T: Scalar>(
    lr_slice: &Image<T>,
    hr: &Volume<T>,
    cfg: &MatchConfig,
) -> Result<SliceHit> {
    let params = cfg.similarity_params::<T>();
    let cands = hr
        .slices()
        .iter()
        .map(|s| {
            lr_slice.same_dims(s)?;
            Prepared::new(cfg.metric, s, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    let q = Prepared::new(cfg.metric, lr_slice, &params)?;
    let (i, s) = argmax(&q, &cands, &mut Scratch::default())?;
    Ok(SliceHit {
        index: i,
        score: finite_or_zero(s),
    })
}

/// Best grid position of `hr_slice` for `lr_patch`.
pub fn match_patch<T: Scalar>(
    lr_patch: &Image<T>,
    hr_slice: &Image<T>,
    cfg: &MatchConfig,
) -> Result<GridHit> {
    let size = cfg.patch_size;
    if lr_patch.dims() != (size, size) {
        return Err(Error::InvalidParameter(format!(
            "query is {}x{}, expected {size}x{size}",
            lr_patch.height(),
            lr_patch.width()
        )));
    }
    let params = cfg.similarity_params::<T>();
    let grid = patch_grid(hr_slice.height(), hr_slice.width(), size, cfg.stride)?;
    let cands = grid
        .iter()
        .map(|&(r, c)| Prepared::new(cfg.metric, &hr_slice.window(r, c, size)?, &params))
        .collect::<Result<Vec<_>>>()?;
    let q = Prepared::new(cfg.metric, lr_patch, &params)?;
    let (i, s) = argmax(&q, &cands, &mut Scratch::default())?;
    Ok(GridHit {
        row: grid[i].0,
        col: grid[i].1,
        score: finite_or_zero(s),
        weight: weight_of(cfg, s),
    })
}

/// One LR patch query.
struct Query {
    patient: usize,
    slice: usize,
    row: usize,
    col: usize,
}

/// Read-only HR descriptors shared by all queries.
struct HrIndex<'a, T> {
    volumes: Vec<&'a Volume<T>>,
    grid: Vec<(usize, usize)>,
    /// `[patient][slice][grid position]`
    patches: Vec<Vec<Vec<Prepared<T>>>>,
}

impl<'a, T: Scalar> HrIndex<'a, T> {
    fn build(hr: &'a Dataset<T>, cfg: &MatchConfig, params: &SimilarityParams<T>) -> Result<Self> {
        let volumes = hr.sorted_volumes();
        let (h, w) = hr.uniform_dims()?;
        let grid = patch_grid(h, w, cfg.patch_size, cfg.stride)?;
        let patches = volumes
            .par_iter()
            .map(|v| {
                v.slices()
                    .par_iter()
                    .map(|s| prepare_grid(s, &grid, cfg, params))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            volumes,
            grid,
            patches,
        })
    }

    fn hr_ref(&self, patient: usize, slice: usize, pos: usize, size: usize) -> PatchRef {
        let (r, c) = self.grid[pos];
        PatchRef::new(self.volumes[patient].patient_id(), slice, r, c, size)
    }
}

fn prepare_grid<T: Scalar>(
    img: &Image<T>,
    grid: &[(usize, usize)],
    cfg: &MatchConfig,
    params: &SimilarityParams<T>,
) -> Result<Vec<Prepared<T>>> {
    grid.iter()
        .map(|&(r, c)| Prepared::new(cfg.metric, &img.window(r, c, cfg.patch_size)?, params))
        .collect()
}

fn check_inputs<T: Scalar>(lr: &Dataset<T>, hr: &Dataset<T>, cfg: &MatchConfig) -> Result<()> {
    let (lh, lw) = lr.uniform_dims()?;
    let (hh, hw) = hr.uniform_dims()?;
    if (lh, lw) != (hh, hw) {
        return Err(Error::DimensionMismatch {
            left_h: lh,
            left_w: lw,
            right_h: hh,
            right_w: hw,
        });
    }
    cfg.validate(hh, hw)
}

/// Searches every HR patient, slice and grid position for each LR patch.
pub fn match_exhaustive<T: Scalar>(
    lr_set: &Dataset<T>,
    hr_set: &Dataset<T>,
    cfg: &MatchConfig,
) -> Result<Manifest> {
    check_inputs(lr_set, hr_set, cfg)?;
    let params = cfg.similarity_params::<T>();
    let hr = HrIndex::build(hr_set, cfg, &params)?;
    let lr = lr_set.sorted_volumes();
    let size = cfg.patch_size;

    let queries: Vec<Query> = lr
        .iter()
        .enumerate()
        .flat_map(|(p, v)| {
            let grid = &hr.grid;
            (0..v.len()).flat_map(move |s| {
                grid.iter().map(move |&(row, col)| Query {
                    patient: p,
                    slice: s,
                    row,
                    col,
                })
            })
        })
        .collect();

    let records = queries
        .par_iter()
        .map_init(Scratch::default, |scratch, q| {
            let img = lr[q.patient].slice(q.slice).window(q.row, q.col, size)?;
            let qp = Prepared::new(cfg.metric, &img, &params)?;
            let flat = hr.patches.iter().enumerate().flat_map(|(p, slices)| {
                slices.iter().enumerate().flat_map(move |(s, cands)| {
                    cands.iter().enumerate().map(move |(g, c)| ((p, s, g), c))
                })
            });
            let mut best: Option<((usize, usize, usize), T)> = None;
            for (key, c) in flat {
                let v = rank_score(&qp, c, scratch)?;
                match best {
                    Some((_, b)) if !(v > b) => {}
                    _ => best = Some((key, v)),
                }
            }
            let ((p, s, g), score) = best.ok_or_else(|| Error::Empty("HR dataset".into()))?;
            Ok(MatchRecord {
                lr: PatchRef::new(lr[q.patient].patient_id(), q.slice, q.row, q.col, size),
                hr: hr.hr_ref(p, s, g, size),
                weight: weight_of(cfg, score),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Manifest::new(records, cfg.clone(), lr_set, hr_set))
}

/// Runs the search selected by `cfg.levels`; `PatchOnly` is [`match_exhaustive`].
pub fn match_hierarchical<T: Scalar>(
    lr_set: &Dataset<T>,
    hr_set: &Dataset<T>,
    cfg: &MatchConfig,
) -> Result<Manifest> {
    match_hierarchical_traced(lr_set, hr_set, cfg).map(|(m, _)| m)
}

/// As [`match_hierarchical`], also returning the patient and slice chosen for
/// each LR slice (empty for `PatchOnly`).
pub fn match_hierarchical_traced<T: Scalar>(
    lr_set: &Dataset<T>,
    hr_set: &Dataset<T>,
    cfg: &MatchConfig,
) -> Result<(Manifest, Vec<LevelChoice>)> {
    if cfg.levels == MatchLevels::PatchOnly {
        return Ok((match_exhaustive(lr_set, hr_set, cfg)?, Vec::new()));
    }
    check_inputs(lr_set, hr_set, cfg)?;
    let params = cfg.similarity_params::<T>();
    let hr = HrIndex::build(hr_set, cfg, &params)?;
    let lr = lr_set.sorted_volumes();
    let size = cfg.patch_size;

    let hr_slices: Vec<Vec<Prepared<T>>> = hr
        .volumes
        .par_iter()
        .map(|v| {
            v.slices()
                .iter()
                .map(|s| Prepared::new(cfg.metric, s, &params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // patient level
    let patient_choice: Vec<Option<usize>> = if cfg.levels == MatchLevels::Hierarchical {
        let hr_means = hr
            .volumes
            .par_iter()
            .map(|v| Prepared::new(cfg.metric, &v.mean_image(), &params))
            .collect::<Result<Vec<_>>>()?;
        lr.par_iter()
            .map(|v| {
                let q = Prepared::new(cfg.metric, &v.mean_image(), &params)?;
                argmax(&q, &hr_means, &mut Scratch::default()).map(|(i, _)| Some(i))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; lr.len()]
    };

    let lr_slices: Vec<(usize, usize)> = lr
        .iter()
        .enumerate()
        .flat_map(|(p, v)| (0..v.len()).map(move |s| (p, s)))
        .collect();

    let per_slice = lr_slices
        .par_iter()
        .map_init(Scratch::default, |scratch, &(p, s)| {
            let lr_img = lr[p].slice(s);
            let q = Prepared::new(cfg.metric, lr_img, &params)?;
            // slice level, restricted to the chosen patient when there is one
            let (hp, hs) = match patient_choice[p] {
                Some(hp) => (hp, argmax(&q, &hr_slices[hp], scratch)?.0),
                None => {
                    let keys: Vec<(usize, usize)> = hr_slices
                        .iter()
                        .enumerate()
                        .flat_map(|(i, v)| (0..v.len()).map(move |j| (i, j)))
                        .collect();
                    let (k, _) = argmax(&q, keys.iter().map(|&(i, j)| &hr_slices[i][j]), scratch)?;
                    keys[k]
                }
            };
            let choice = LevelChoice {
                lr_patient: lr[p].patient_id().to_owned(),
                lr_slice: s,
                hr_patient: hr.volumes[hp].patient_id().to_owned(),
                hr_slice: hs,
            };
            // patch level
            let mut records = Vec::with_capacity(hr.grid.len());
            for &(row, col) in &hr.grid {
                let qp = Prepared::new(cfg.metric, &lr_img.window(row, col, size)?, &params)?;
                let (g, score) = argmax(&qp, &hr.patches[hp][hs], scratch)?;
                records.push(MatchRecord {
                    lr: PatchRef::new(lr[p].patient_id(), s, row, col, size),
                    hr: hr.hr_ref(hp, hs, g, size),
                    weight: weight_of(cfg, score),
                });
            }
            Ok((records, choice))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut choices = Vec::with_capacity(per_slice.len());
    for (r, c) in per_slice {
        records.extend(r);
        choices.push(c);
    }
    Ok((Manifest::new(records, cfg.clone(), lr_set, hr_set), choices))
}
