use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use log::{info, warn};
use quasipair::loss::{self, LossItem};
use quasipair::manifest::{filter_threshold, read_manifest, weight_stats, write_manifest};
use quasipair::numfmt::format_g17;
use quasipair::quality::{self, Psnr, SsimMode};
use quasipair::resample::{degrade as degrade_image, preprocess as preprocess_volume};
use quasipair::similarity::{HistogramSpec, RbfParams};
use quasipair::volio::{list_volumes, load_dataset, load_volume, save_dataset, save_volume};
use quasipair::{
    generate_similar_pair, match_hierarchical, AdvKind, Dataset, DegradeParams, DomainLabel, Image,
    LossBatch, LossWeights, MatchConfig, MatchLevels, PhantomSpec, SimilarityKind, SsimParams,
    Volume,
};

use crate::{
    AdvArg, DegradeArgs, DemoArgs, Levels, LossEvalArgs, MatchArgs, Metric, MetricsArgs,
    PreprocessArgs, SsimModeArg, StatsArgs,
};

/// Exit-code class of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or missing inputs: exit 2.
    Usage(String),
    /// Anything that goes wrong while processing data: exit 1.
    Data(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn require_dir(flag: &str, p: &Path) -> Outcome {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "{flag} {} is not a directory",
            p.display()
        )))
    }
}

fn require_file(flag: &str, p: &Path) -> Outcome {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "{flag} {} is not a file",
            p.display()
        )))
    }
}

fn distinct(input: &Path, output: &Path) -> Outcome {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        Err(Failure::usage(
            "output directory must differ from input directory",
        ))
    } else {
        Ok(())
    }
}

fn invalid(e: quasipair::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn map_volumes(
    ds: &Dataset<f64>,
    f: impl Fn(&Volume<f64>) -> anyhow::Result<Volume<f64>>,
) -> anyhow::Result<Dataset<f64>> {
    let vols = ds
        .volumes()
        .iter()
        .map(f)
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Dataset::new(ds.label(), vols)?)
}

fn preprocess_dataset(ds: &Dataset<f64>, size: usize) -> anyhow::Result<Dataset<f64>> {
    map_volumes(ds, |v| {
        let out =
            preprocess_volume(v, size).with_context(|| format!("volume {}", v.patient_id()))?;
        for (slice, w) in &out.warnings {
            warn!(
                "{} slice {slice}: {w:?}, correction skipped",
                v.patient_id()
            );
        }
        Ok(out.volume)
    })
}

fn degrade_image_with(
    p: &DegradeParams<f64>,
) -> impl Fn(&Image<f64>) -> quasipair::Result<Image<f64>> + '_ {
    move |s| degrade_image(s, p)
}

pub fn demo(a: &DemoArgs, seed: u64) -> Outcome {
    let spec = PhantomSpec {
        seed,
        patients: a.patients,
        slices_per_patient: a.slices,
        size: a.size,
        ..PhantomSpec::default()
    };
    spec.validate().map_err(invalid)?;
    if !(0.0..=1.0).contains(&a.perturbation) {
        return Err(Failure::usage(format!(
            "--perturbation {} outside [0, 1]",
            a.perturbation
        )));
    }
    let params = DegradeParams {
        sigma: a.sigma,
        scale_factor: a.factor,
    };
    params.validate().map_err(invalid)?;
    if !a.size.is_multiple_of(a.factor) {
        return Err(Failure::usage(format!(
            "--size {} not divisible by --factor {}",
            a.size, a.factor
        )));
    }

    let (lr, hr) = generate_similar_pair::<f64>(&spec, a.perturbation)?;
    let lr = preprocess_dataset(&lr, a.size)?;
    let hr = preprocess_dataset(&hr, a.size)?;
    let lr = degrade_dataset_with(&lr, &params)?;
    save_dataset(&lr, a.out.join("lr"))?;
    save_dataset(&hr, a.out.join("hr"))?;
    println!(
        "wrote {} LR and {} HR volumes of {} slices ({}x{}) to {}",
        lr.len(),
        hr.len(),
        a.slices,
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

fn degrade_dataset_with(ds: &Dataset<f64>, p: &DegradeParams<f64>) -> anyhow::Result<Dataset<f64>> {
    map_volumes(ds, |v| {
        let slices = v
            .slices()
            .iter()
            .map(degrade_image_with(p))
            .collect::<quasipair::Result<Vec<_>>>()
            .with_context(|| format!("volume {}", v.patient_id()))?;
        Ok(Volume::new(v.patient_id(), slices)?)
    })
}

/// Applies `f` to every volume file in `input`, writing the result under the same name in `output`.
fn per_file(
    input: &Path,
    output: &Path,
    f: impl Fn(&Volume<f64>) -> anyhow::Result<Volume<f64>>,
) -> Outcome {
    require_dir("--input", input)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    distinct(input, output)?;
    let files = list_volumes(input)?;
    if files.is_empty() {
        return Err(Failure::Data(anyhow!("no volumes in {}", input.display())));
    }
    for path in &files {
        let v: Volume<f64> = load_volume(path)?;
        let out = f(&v).with_context(|| format!("volume {}", path.display()))?;
        let name = path.file_name().expect("listed files have names");
        save_volume(&out, output.join(name))?;
        info!("{} -> {}", path.display(), output.join(name).display());
    }
    println!("processed {} volumes", files.len());
    Ok(())
}

pub fn preprocess(a: &PreprocessArgs) -> Outcome {
    if a.size == 0 {
        return Err(Failure::usage("--size must be positive"));
    }
    per_file(&a.input, &a.output, |v| {
        let out = preprocess_volume(v, a.size)?;
        for (slice, w) in &out.warnings {
            warn!(
                "{} slice {slice}: {w:?}, correction skipped",
                v.patient_id()
            );
        }
        Ok(out.volume)
    })
}

pub fn degrade(a: &DegradeArgs) -> Outcome {
    let params = DegradeParams {
        sigma: a.sigma,
        scale_factor: a.factor,
    };
    params.validate().map_err(invalid)?;
    per_file(&a.input, &a.output, |v| {
        let slices = v
            .slices()
            .iter()
            .map(degrade_image_with(&params))
            .collect::<quasipair::Result<Vec<_>>>()?;
        Ok(Volume::new(v.patient_id(), slices)?)
    })
}

pub fn match_config(a: &MatchArgs) -> Result<MatchConfig, Failure> {
    let metric = match a.metric {
        Metric::Nmi => SimilarityKind::Nmi,
        Metric::Pcc => SimilarityKind::Pcc,
        Metric::Rbf => SimilarityKind::Rbf,
    };
    let levels = match a.levels {
        Levels::Hierarchical => MatchLevels::Hierarchical,
        Levels::SliceAndPatch => MatchLevels::SliceAndPatch,
        Levels::Exhaustive => MatchLevels::PatchOnly,
    };
    let rbf = match a.gamma {
        Some(g) => RbfParams::with_gamma(g).map_err(invalid)?,
        None => RbfParams::default(),
    };
    Ok(MatchConfig {
        patch_size: a.patch_size,
        stride: a.stride,
        metric,
        hist: HistogramSpec::new(a.bins, 0.0, 1.0).map_err(invalid)?,
        rbf,
        threshold: a.threshold,
        levels,
    })
}

pub fn run_match(a: &MatchArgs) -> Outcome {
    require_dir("--lr", &a.lr)?;
    require_dir("--hr", &a.hr)?;
    let cfg = match_config(a)?;
    let lr: Dataset<f64> = load_dataset(&a.lr, DomainLabel::Lr)?;
    let hr: Dataset<f64> = load_dataset(&a.hr, DomainLabel::Hr)?;
    if lr.is_empty() || hr.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no volumes found in LR or HR directory"
        )));
    }
    let (h, w) = hr.uniform_dims()?;
    cfg.validate(h, w).map_err(invalid)?;
    let mut manifest = match_hierarchical(&lr, &hr, &cfg)?;
    if a.filter {
        manifest = filter_threshold(&manifest, a.threshold).map_err(invalid)?;
    }
    write_manifest(&manifest, &a.out)?;
    println!("records {}", manifest.len());
    match manifest.mean_weight() {
        Some(m) => println!("mean_weight {}", format_g17(m)),
        None => println!("mean_weight nan"),
    }
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Outcome {
    require_file("--manifest", &a.manifest)?;
    if a.bins == 0 {
        return Err(Failure::usage("--bins must be at least 1"));
    }
    let m = read_manifest(&a.manifest)?;
    if m.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no records in {}",
            a.manifest.display()
        )));
    }
    let s = weight_stats(&m, a.bins)?;
    fs::write(&a.out, s.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("records {}", s.total());
    println!("mean {}", format_g17(s.mean));
    println!(
        "fraction_0.45_0.55 {}",
        format_g17(s.fraction_in(0.45, 0.55))
    );
    Ok(())
}

fn psnr_text(p: Psnr<f64>) -> String {
    match p {
        Psnr::Finite(v) => format_g17(v),
        Psnr::Infinite => "inf".into(),
    }
}

pub fn metrics(a: &MetricsArgs) -> Outcome {
    require_dir("--reference", &a.reference)?;
    require_dir("--estimate", &a.estimate)?;
    let params = SsimParams {
        k1: a.k1,
        k2: a.k2,
        dynamic_range: a.dynamic_range,
        mode: match a.ssim_mode {
            SsimModeArg::Global => SsimMode::Global,
            SsimModeArg::Windowed => SsimMode::Windowed,
        },
        window: a.window,
    };
    params.validate().map_err(invalid)?;
    if let Some(p) = a.peak {
        if p.is_nan() || p <= 0.0 {
            return Err(Failure::usage("--peak must be positive"));
        }
    }
    let reference: Dataset<f64> = load_dataset(&a.reference, DomainLabel::Hr)?;
    let estimate: Dataset<f64> = load_dataset(&a.estimate, DomainLabel::Hr)?;
    if reference.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no volumes in {}",
            a.reference.display()
        )));
    }

    let sink: Box<dyn Write> = match &a.out {
        Some(p) => {
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["patient", "slice", "psnr", "ssim", "rmse"])?;
    let (mut n, mut psnr_sum, mut any_inf, mut ssim_sum, mut rmse_sum) =
        (0usize, 0.0, false, 0.0, 0.0);
    for rv in reference.sorted_volumes() {
        let id = rv.patient_id();
        let ev = estimate
            .volume(id)
            .ok_or_else(|| anyhow!("patient {id} missing from {}", a.estimate.display()))?;
        if ev.len() != rv.len() {
            return Err(Failure::Data(anyhow!(
                "patient {id}: {} reference slices vs {} estimate slices",
                rv.len(),
                ev.len()
            )));
        }
        for (i, (r, e)) in rv.slices().iter().zip(ev.slices()).enumerate() {
            let ctx = || format!("patient {id} slice {i}");
            let psnr = quality::psnr_with_peak(r, e, a.peak).with_context(ctx)?;
            let ssim = quality::ssim(e, r, &params).with_context(ctx)?;
            let rmse = quality::rmse(r, e).with_context(ctx)?;
            match psnr {
                Psnr::Finite(v) => psnr_sum += v,
                Psnr::Infinite => any_inf = true,
            }
            ssim_sum += ssim;
            rmse_sum += rmse;
            n += 1;
            out.write_record([
                id.to_string(),
                i.to_string(),
                psnr_text(psnr),
                format_g17(ssim),
                format_g17(rmse),
            ])?;
        }
    }
    let nf = n as f64;
    let mean_psnr = if any_inf {
        "inf".to_string()
    } else {
        format_g17(psnr_sum / nf)
    };
    out.write_record([
        "mean".to_string(),
        String::new(),
        mean_psnr,
        format_g17(ssim_sum / nf),
        format_g17(rmse_sum / nf),
    ])?;
    out.flush()?;
    Ok(())
}

const ROLES: [&str; 8] = ["x", "y", "gx", "fy", "fgx", "gfy", "fx", "gy"];
const VALUE_COLUMNS: [&str; 5] = ["dy_y", "dy_gx", "dx_x", "dx_fy", "w"];

fn read_values(path: &Path) -> anyhow::Result<Vec<[f64; 5]>> {
    let mut rd =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rd.headers()?.clone();
    let index: Vec<usize> = VALUE_COLUMNS
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.trim() == *c)
                .ok_or_else(|| anyhow!("{}: missing column {c}", path.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut row = [0.0; 5];
        for (k, &i) in index.iter().enumerate() {
            let field = rec.get(i).unwrap_or("").trim();
            row[k] = field.parse().with_context(|| {
                format!(
                    "{} row {}: bad {} value {field:?}",
                    path.display(),
                    line + 1,
                    VALUE_COLUMNS[k]
                )
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_batch(dir: &Path) -> anyhow::Result<LossBatch<f64>> {
    let mut vols: BTreeMap<&str, Volume<f64>> = BTreeMap::new();
    for role in ROLES {
        let p = dir.join(format!("{role}.vol"));
        vols.insert(
            role,
            load_volume(&p).with_context(|| format!("loading {}", p.display()))?,
        );
    }
    let values = read_values(&dir.join("values.csv"))?;
    let n = values.len();
    for (role, v) in &vols {
        if v.len() != n {
            return Err(anyhow!(
                "{role}.vol has {} slices but values.csv has {n} rows",
                v.len()
            ));
        }
    }
    let s = |role: &str, i: usize| vols[role].slice(i).clone();
    let items = values
        .iter()
        .enumerate()
        .map(|(i, v)| LossItem {
            x: s("x", i),
            y: s("y", i),
            gx: s("gx", i),
            fy: s("fy", i),
            fgx: s("fgx", i),
            gfy: s("gfy", i),
            fx: s("fx", i),
            gy: s("gy", i),
            dy_y: v[0],
            dy_gx: v[1],
            dx_x: v[2],
            dx_fy: v[3],
            w: v[4],
        })
        .collect();
    Ok(LossBatch::new(items)?)
}

pub fn loss_eval(a: &LossEvalArgs) -> Outcome {
    require_dir("--batch", &a.batch)?;
    let lw = LossWeights {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        lambda3: a.lambda3,
    };
    lw.validate().map_err(invalid)?;
    let kind = match a.adv {
        AdvArg::Log => AdvKind::LogLoss,
        AdvArg::Lsq => AdvKind::LeastSquares,
    };
    let batch = load_batch(&a.batch)?;
    let parts = loss::total_loss(&batch, &lw, kind)?;
    println!(
        "# lambda1={} lambda2={} lambda3={} adv={} items={}",
        format_g17(lw.lambda1),
        format_g17(lw.lambda2),
        format_g17(lw.lambda3),
        a.adv_name(),
        batch.len()
    );
    println!("component,value");
    for (name, v) in [
        ("adv", parts.adv),
        ("cyc", parts.cyc),
        ("idt", parts.idt),
        ("ql", parts.ql),
        ("total", parts.total),
    ] {
        println!("{name},{}", format_g17(v));
    }
    Ok(())
}

impl LossEvalArgs {
    fn adv_name(&self) -> &'static str {
        match self.adv {
            AdvArg::Log => "log",
            AdvArg::Lsq => "lsq",
        }
    }
}
