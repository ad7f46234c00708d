//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines appear in order and uncaptured.

#![allow(clippy::type_complexity)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use quasipair::loss::{adv_loss, cyc_loss, idt_loss, loss_grad, ql_loss, total_loss, ItemGrad};
use quasipair::manifest::{filter_threshold, Manifest};
use quasipair::quality::{psnr, ssim, Psnr, SsimParams};
use quasipair::resample::{bicubic_resize, degrade, gaussian_kernel, DegradeParams};
use quasipair::similarity::{nmi, pcc, rbf, similarity, to_weight, HistogramSpec, RbfParams};
use quasipair::volio::{load_dataset, save_volume};
use quasipair::{
    generate_dataset, match_exhaustive, match_hierarchical, AdvKind, Dataset, DomainLabel, Image,
    LossBatch, LossItem, LossWeights, MatchConfig, MatchLevels, MatchRecord, PatchRef, PhantomSpec,
    SimilarityKind, Volume,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_quasipair")
}

fn random_patch(rng: &mut ChaCha8Rng, n: usize) -> Image<f64> {
    loop {
        let im = Image::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
        if !im.is_constant() {
            return im;
        }
    }
}

fn criterion_1() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = HistogramSpec::default();
    let rp = RbfParams::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = random_patch(&mut rng, 32);
        let y = random_patch(&mut rng, 32);
        let sx = nmi(&x, &x, &spec).unwrap();
        ensure((sx - 1.0).abs() <= 1e-12, || format!("nmi(x,x) = {sx}"))?;
        worst = worst.max((sx - 1.0).abs());
        let r = rbf(&x, &x, &rp).unwrap();
        ensure(r == 1.0, || format!("rbf(x,x) = {r}"))?;
        let affine = x.map(|v| 2.0 * v + 1.0);
        let p = pcc(&x, &affine).unwrap();
        ensure((p - 1.0).abs() <= 1e-12, || format!("pcc(x,2x+1) = {p}"))?;
        worst = worst.max((p - 1.0).abs());
        let pairs = [
            (
                nmi(&x, &y, &spec).unwrap(),
                nmi(&y, &x, &spec).unwrap(),
                "nmi",
            ),
            (pcc(&x, &y).unwrap(), pcc(&y, &x).unwrap(), "pcc"),
            (rbf(&x, &y, &rp).unwrap(), rbf(&y, &x, &rp).unwrap(), "rbf"),
        ];
        for (a, b, name) in pairs {
            ensure(a.to_bits() == b.to_bits(), || {
                format!("{name} asymmetric: {a} vs {b}")
            })?;
        }
    }
    within(t.elapsed(), 5.0)?;
    Ok(format!(
        "1000 patches, max |identity - 1| = {worst:.1e}, symmetry bit-exact, {:.2} s",
        t.elapsed().as_secs_f64()
    ))
}

fn criterion_2() -> Check {
    let spec = HistogramSpec::new(2, 0.0, 1.0).unwrap();
    let im = |v: [f64; 4]| Image::new(2, 2, v.to_vec()).unwrap();
    let x = im([0.0, 0.0, 1.0, 1.0]);
    // H(x) = H(y) = ln 2; I = ln 2 for a bijection between bins, 0 for independence
    let cases = [
        ("identical", im([0.0, 0.0, 1.0, 1.0]), 1.0),
        ("anti-correlated", im([1.0, 1.0, 0.0, 0.0]), 1.0),
        ("independent", im([0.0, 1.0, 0.0, 1.0]), 0.0),
    ];
    let mut got = Vec::new();
    for (name, y, want) in cases {
        let v = nmi(&x, &y, &spec).unwrap();
        ensure((v - want).abs() <= 1e-12, || {
            format!("{name}: nmi {v}, expected {want}")
        })?;
        got.push(format!("{name}={v}"));
    }
    Ok(got.join(", "))
}

/// Grid corners enumerated independently of the library: multiples of the
/// stride, plus the flush position when the stride misses it.
fn oracle_positions(n: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut p = 0;
    while p + size <= n {
        v.push(p);
        p += stride;
    }
    if *v.last().unwrap() != n - size {
        v.push(n - size);
    }
    v
}

fn oracle_exhaustive(lr: &Dataset<f64>, hr: &Dataset<f64>, cfg: &MatchConfig) -> Vec<MatchRecord> {
    let params = cfg.similarity_params::<f64>();
    let (h, w) = lr.volumes()[0].dims();
    let rows = oracle_positions(h, cfg.patch_size, cfg.stride);
    let cols = oracle_positions(w, cfg.patch_size, cfg.stride);
    let mut lr_vols: Vec<&Volume<f64>> = lr.volumes().iter().collect();
    lr_vols.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
    let mut hr_vols: Vec<&Volume<f64>> = hr.volumes().iter().collect();
    hr_vols.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
    let k = cfg.patch_size;

    let mut out = Vec::new();
    for lv in &lr_vols {
        for (ls, lslice) in lv.slices().iter().enumerate() {
            for &r in &rows {
                for &c in &cols {
                    let q = lslice.window(r, c, k).unwrap();
                    let mut best: Option<(f64, PatchRef)> = None;
                    for hv in &hr_vols {
                        for (hs, hslice) in hv.slices().iter().enumerate() {
                            for &hr_row in &rows {
                                for &hc in &cols {
                                    let cand = hslice.window(hr_row, hc, k).unwrap();
                                    let s = similarity(cfg.metric, &q, &cand, &params)
                                        .unwrap_or(f64::NEG_INFINITY);
                                    if best.as_ref().is_none_or(|(b, _)| s > *b) {
                                        best = Some((
                                            s,
                                            PatchRef::new(hv.patient_id(), hs, hr_row, hc, k),
                                        ));
                                    }
                                }
                            }
                        }
                    }
                    let (s, href) = best.unwrap();
                    let wgt = if s.is_finite() {
                        to_weight(cfg.metric, s).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    out.push(MatchRecord {
                        lr: PatchRef::new(lv.patient_id(), ls, r, c, k),
                        hr: href,
                        weight: wgt,
                    });
                }
            }
        }
    }
    out
}

fn quantized(ds: Dataset<f64>, levels: f64) -> Dataset<f64> {
    let vols = ds
        .volumes()
        .iter()
        .map(|v| {
            let s = v
                .slices()
                .iter()
                .map(|s| s.map(|x| (x * levels).round() / levels))
                .collect();
            Volume::new(v.patient_id(), s).unwrap()
        })
        .collect();
    Dataset::new(ds.label(), vols).unwrap()
}

fn criterion_3() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let metrics = [
        SimilarityKind::Nmi,
        SimilarityKind::Pcc,
        SimilarityKind::Rbf,
    ];
    let runs = 24;
    let mut records = 0;
    for run in 0..runs {
        let spec = |seed: u64, rng: &mut ChaCha8Rng| PhantomSpec {
            seed,
            patients: rng.gen_range(1..=4),
            slices_per_patient: rng.gen_range(1..=6),
            size: 48,
            ..PhantomSpec::default()
        };
        let lr_spec = spec(rng.gen(), &mut rng);
        let hr_spec = PhantomSpec {
            slices_per_patient: rng.gen_range(1..=6),
            ..spec(rng.gen(), &mut rng)
        };
        let mut lr = generate_dataset::<f64>(&lr_spec)
            .unwrap()
            .with_label(DomainLabel::Lr);
        let mut hr = generate_dataset::<f64>(&hr_spec).unwrap();
        if run % 2 == 1 {
            // coarse levels create exact score ties
            lr = quantized(lr, 4.0);
            hr = quantized(hr, 4.0);
        }
        let cfg = MatchConfig {
            patch_size: 24,
            stride: 12,
            metric: metrics[run % 3],
            hist: HistogramSpec::new(16, 0.0, 1.0).unwrap(),
            ..MatchConfig::default()
        };
        let lib = match_exhaustive(&lr, &hr, &cfg).unwrap();
        let oracle = oracle_exhaustive(&lr, &hr, &cfg);
        let oracle_manifest = Manifest {
            records: oracle,
            ..lib.clone()
        };
        ensure(lib.to_text() == oracle_manifest.to_text(), || {
            let first = lib
                .records
                .iter()
                .zip(&oracle_manifest.records)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{a:?} vs {b:?}"))
                .unwrap_or_else(|| "record count differs".into());
            format!(
                "run {run} ({}): library differs from oracle: {first}",
                cfg.metric
            )
        })?;
        for levels in [MatchLevels::Hierarchical, MatchLevels::SliceAndPatch] {
            let hier = match_hierarchical(
                &lr,
                &hr,
                &MatchConfig {
                    levels,
                    ..cfg.clone()
                },
            )
            .unwrap();
            for (e, h) in lib.records.iter().zip(&hier.records) {
                ensure(e.lr == h.lr && h.weight <= e.weight, || {
                    format!(
                        "run {run}: {levels:?} weight {} exceeds exhaustive {}",
                        h.weight, e.weight
                    )
                })?;
            }
        }
        records += lib.len();
    }
    within(t.elapsed(), 60.0)?;
    Ok(format!(
        "{runs} datasets, {records} records byte-identical to oracle, hierarchical <= exhaustive, {:.2} s",
        t.elapsed().as_secs_f64()
    ))
}

fn write_batch(dir: &Path, items: &[LossItem<f64>]) {
    fs::create_dir_all(dir).unwrap();
    let roles: [(&str, fn(&LossItem<f64>) -> &Image<f64>); 8] = [
        ("x", |i| &i.x),
        ("y", |i| &i.y),
        ("gx", |i| &i.gx),
        ("fy", |i| &i.fy),
        ("fgx", |i| &i.fgx),
        ("gfy", |i| &i.gfy),
        ("fx", |i| &i.fx),
        ("gy", |i| &i.gy),
    ];
    for (name, get) in roles {
        let v = Volume::new(name, items.iter().map(|i| get(i).clone()).collect()).unwrap();
        save_volume(&v, dir.join(format!("{name}.vol"))).unwrap();
    }
    let mut csv = String::from("dy_y,dy_gx,dx_x,dx_fy,w\n");
    for i in items {
        writeln!(csv, "{},{},{},{},{}", i.dy_y, i.dy_gx, i.dx_x, i.dx_fy, i.w).unwrap();
    }
    fs::write(dir.join("values.csv"), csv).unwrap();
}

fn criterion_4() -> Check {
    let grid = quasipair::patch_grid(256, 256, 128, 64).unwrap();
    ensure(grid.len() == 9, || {
        format!("patch_grid(256,256,128,64) has {} positions", grid.len())
    })?;

    let cfg = MatchConfig::default();
    ensure(cfg.threshold == 0.4, || {
        format!("default threshold {}", cfg.threshold)
    })?;
    let rec = |row: usize, w: f64| MatchRecord {
        lr: PatchRef::new("a", 0, row, 0, 1),
        hr: PatchRef::new("b", 0, 0, 0, 1),
        weight: w,
    };
    let m = Manifest {
        records: vec![
            rec(0, 0.4),
            rec(1, f64::from_bits(0.4f64.to_bits() + 1)),
            rec(2, 0.39),
            rec(3, 0.9),
        ],
        config: cfg.clone(),
        created: 0,
        lr_fingerprint: String::new(),
        hr_fingerprint: String::new(),
    };
    let kept: Vec<usize> = filter_threshold(&m, cfg.threshold)
        .unwrap()
        .records
        .iter()
        .map(|r| r.lr.row)
        .collect();
    ensure(kept == vec![1, 3], || {
        format!("strict filter kept rows {kept:?}")
    })?;

    let lw = LossWeights::default();
    ensure(
        (lw.lambda1, lw.lambda2, lw.lambda3) == (1.0, 1.0, 256.0),
        || format!("defaults {lw:?}"),
    )?;
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let items: Vec<_> = (0..2).map(|_| random_item(&mut rng, 8)).collect();
    write_batch(dir.path(), &items);
    let out = Command::new(bin())
        .args(["loss-eval", "--batch"])
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let header = stdout.lines().next().unwrap_or("");
    ensure(out.status.success(), || {
        format!("loss-eval failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    ensure(
        ["lambda1=1", "lambda2=1", "lambda3=256"]
            .iter()
            .all(|s| header.split_whitespace().any(|w| w == *s)),
        || format!("loss-eval header {header:?}"),
    )?;
    Ok(format!(
        "9 grid positions, strict > 0.4 filter, loss-eval header {header:?}"
    ))
}

fn criterion_5() -> Check {
    let k = gaussian_kernel(3.0f64).unwrap();
    let sum: f64 = k.taps().iter().sum();
    ensure(k.taps().len() == 19, || format!("{} taps", k.taps().len()))?;
    ensure((sum - 1.0).abs() <= 1e-12, || format!("taps sum to {sum}"))?;

    let p = DegradeParams::default();
    for c in [0.0, 0.37, 1.0] {
        let out = degrade(&Image::filled(256, 256, c), &p).unwrap();
        ensure(out.as_slice().iter().all(|&v| v == c), || {
            format!("degrade changed constant {c}")
        })?;
    }

    let ramp = Image::from_fn(256, 256, |i, j| (i + j) as f64 / 512.0);
    let small = bicubic_resize(&ramp, 64, 64).unwrap();
    let back = bicubic_resize(&small, 256, 256).unwrap();
    let err = ramp
        .as_slice()
        .iter()
        .zip(back.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(err < 1e-2, || format!("ramp round trip max error {err}"))?;
    Ok(format!(
        "19 taps sum-1 = {:.1e}, constants exact, ramp max error {err:.2e}",
        sum - 1.0
    ))
}

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Image<f64> {
    Image::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0))
}

fn offset(target: &Image<f64>, rng: &mut ChaCha8Rng) -> Image<f64> {
    target.map(|t| t + rng.gen_range(0.001..0.3) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
}

fn random_item(rng: &mut ChaCha8Rng, n: usize) -> LossItem<f64> {
    let x = random_image(rng, n);
    let y = random_image(rng, n);
    LossItem {
        gx: offset(&y, rng),
        fy: offset(&x, rng),
        fgx: offset(&x, rng),
        gfy: offset(&y, rng),
        fx: offset(&x, rng),
        gy: offset(&y, rng),
        x,
        y,
        dy_y: rng.gen_range(0.05..0.95),
        dy_gx: rng.gen_range(0.05..0.95),
        dx_x: rng.gen_range(0.05..0.95),
        dx_fy: rng.gen_range(0.05..0.95),
        w: rng.gen_range(0.0..1.0),
    }
}

type ImageField = (
    fn(&mut LossItem<f64>) -> &mut Image<f64>,
    fn(&ItemGrad<f64>) -> &Image<f64>,
    fn(&LossItem<f64>) -> &Image<f64>,
);

fn criterion_6() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let eps = 1e-4;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut worst = 0.0f64;
    // (field, its gradient, the target it is compared with)
    let fields: [ImageField; 6] = [
        (|i| &mut i.gx, |g| &g.gx, |i| &i.y),
        (|i| &mut i.fy, |g| &g.fy, |i| &i.x),
        (|i| &mut i.fgx, |g| &g.fgx, |i| &i.x),
        (|i| &mut i.gfy, |g| &g.gfy, |i| &i.y),
        (|i| &mut i.fx, |g| &g.fx, |i| &i.x),
        (|i| &mut i.gy, |g| &g.gy, |i| &i.y),
    ];
    for batch_no in 0..50 {
        let kind = if batch_no % 2 == 0 {
            AdvKind::LeastSquares
        } else {
            AdvKind::LogLoss
        };
        let items: Vec<_> = (0..4).map(|_| random_item(&mut rng, 8)).collect();
        let lw = LossWeights::default();
        let b = LossBatch::new(items.clone()).unwrap();
        let grads = loss_grad(&b, &lw, kind).unwrap();
        let f = |items: Vec<LossItem<f64>>| {
            total_loss(&LossBatch::new(items).unwrap(), &lw, kind)
                .unwrap()
                .total
        };
        let mut compare = |analytic: f64, numeric: f64, what: String| -> Result<(), String> {
            let rel = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            let rel = if analytic == numeric { 0.0 } else { rel };
            worst = worst.max(rel);
            checked += 1;
            ensure(rel <= 1e-4, || {
                format!("batch {batch_no} {what}: analytic {analytic} vs numeric {numeric}")
            })
        };
        for i in 0..4 {
            for (field, grad_of, target_of) in &fields {
                for px in 0..64 {
                    let pred = {
                        let mut it = items[i].clone();
                        field(&mut it).as_slice()[px]
                    };
                    if (pred - target_of(&items[i]).as_slice()[px]).abs() < 1e-6 {
                        skipped += 1;
                        continue;
                    }
                    let bump = |d: f64| {
                        let mut its = items.clone();
                        let im = field(&mut its[i]);
                        let mut data = im.as_slice().to_vec();
                        data[px] += d;
                        *im = Image::new(8, 8, data).unwrap();
                        f(its)
                    };
                    let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    compare(
                        grad_of(&grads[i]).as_slice()[px],
                        numeric,
                        format!("item {i} pixel {px}"),
                    )?;
                }
            }
            let scalars: [(fn(&mut LossItem<f64>) -> &mut f64, f64, &str); 4] = [
                (|it| &mut it.dy_y, grads[i].dy_y, "dy_y"),
                (|it| &mut it.dy_gx, grads[i].dy_gx, "dy_gx"),
                (|it| &mut it.dx_x, grads[i].dx_x, "dx_x"),
                (|it| &mut it.dx_fy, grads[i].dx_fy, "dx_fy"),
            ];
            for (field, analytic, name) in scalars {
                let bump = |d: f64| {
                    let mut its = items.clone();
                    *field(&mut its[i]) += d;
                    f(its)
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                compare(analytic, numeric, format!("item {i} {name}"))?;
            }
        }
    }
    within(t.elapsed(), 30.0)?;
    Ok(format!(
        "{checked} entries, {skipped} near-zero residuals skipped, max relative error {worst:.1e}, {:.2} s",
        t.elapsed().as_secs_f64()
    ))
}

fn mean_abs(a: &Image<f64>, b: &Image<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            s += (a.get(i, j) - b.get(i, j)).abs();
        }
    }
    s / a.len() as f64
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut items: Vec<_> = (0..4).map(|_| random_item(&mut rng, 8)).collect();
        for it in &mut items {
            it.w = 1.0;
        }
        let n = items.len() as f64;
        let paired: f64 = items
            .iter()
            .map(|i| mean_abs(&i.gx, &i.y) + mean_abs(&i.fy, &i.x))
            .sum::<f64>()
            / n;
        let b = LossBatch::new(items.clone()).unwrap();
        let ql = ql_loss(&b);
        ensure((ql - paired).abs() <= 1e-12, || {
            format!("ql {ql} vs paired L1 {paired}")
        })?;
        worst = worst.max((ql - paired).abs());

        let lw = LossWeights {
            lambda3: 0.0,
            ..LossWeights::default()
        };
        for kind in [AdvKind::LeastSquares, AdvKind::LogLoss] {
            let adv = match kind {
                AdvKind::LeastSquares => {
                    items
                        .iter()
                        .map(|i| {
                            (i.dy_y - 1.0).powi(2)
                                + i.dy_gx.powi(2)
                                + (i.dx_x - 1.0).powi(2)
                                + i.dx_fy.powi(2)
                        })
                        .sum::<f64>()
                        / n
                }
                AdvKind::LogLoss => {
                    items
                        .iter()
                        .map(|i| {
                            i.dy_y.ln() + (1.0 - i.dy_gx).ln() + i.dx_x.ln() + (1.0 - i.dx_fy).ln()
                        })
                        .sum::<f64>()
                        / n
                }
            };
            let cyc: f64 = items
                .iter()
                .map(|i| mean_abs(&i.fgx, &i.x) + mean_abs(&i.gfy, &i.y))
                .sum::<f64>()
                / n;
            let idt: f64 = items
                .iter()
                .map(|i| mean_abs(&i.fx, &i.x) + mean_abs(&i.gy, &i.y))
                .sum::<f64>()
                / n;
            let want = adv + cyc + idt;
            let parts = total_loss(&b, &lw, kind).unwrap();
            let got = parts.total;
            ensure((got - want).abs() <= 1e-12, || {
                format!("{kind:?} lambda3=0 total {got} vs {want}")
            })?;
            ensure(
                (parts.adv - adv_loss(&b, kind)).abs() == 0.0
                    && parts.cyc == cyc_loss(&b)
                    && parts.idt == idt_loss(&b),
                || "breakdown disagrees with component functions".into(),
            )?;
            worst = worst.max((got - want).abs());
        }
    }
    Ok(format!("20 batches, max deviation {worst:.1e}"))
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let x = random_image(&mut rng, 32);
        for p in [SsimParams::default(), SsimParams::windowed(8)] {
            let s = ssim(&x, &x, &p).unwrap();
            ensure(s == 1.0, || format!("ssim(x,x) = {s}"))?;
        }
    }
    let y = Image::from_fn(16, 16, |r, c| if (r, c) == (0, 0) { 1.0f64 } else { 0.5 });
    let x = y.map(|v| v - 0.1);
    let db = match psnr(&y, &x).unwrap() {
        Psnr::Finite(v) => v,
        Psnr::Infinite => return Err("psnr infinite for distinct images".into()),
    };
    ensure((db - 20.0).abs() <= 1e-9, || format!("psnr {db} dB"))?;

    let p = SsimParams::default();
    let c1 = p.c1();
    let mut worst = 0.0f64;
    for (a, b) in [(0.2, 0.8), (0.5, 0.5), (0.0, 1.0), (0.33, 0.71)] {
        let s = ssim(&Image::filled(8, 8, a), &Image::filled(8, 8, b), &p).unwrap();
        let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
        ensure((s - want).abs() <= 1e-12, || {
            format!("constant ssim {s} vs {want}")
        })?;
        worst = worst.max((s - want).abs());
    }
    Ok(format!(
        "ssim(x,x)=1 exactly, psnr {db:.12} dB, constant closed form within {worst:.1e}"
    ))
}

/// Writes the suite-9 dataset pair through the CLI and returns the `lr/`, `hr/` parent.
fn suite9_data(root: &Path) -> Result<(), String> {
    let out = Command::new(bin())
        .args([
            "--seed",
            "9",
            "--threads",
            "1",
            "demo",
            "--patients",
            "8",
            "--slices",
            "16",
            "--size",
            "256",
        ])
        .args(["--perturbation", "0.25", "--out"])
        .arg(root)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("demo failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn grid_patch(v: &Volume<f64>, slice: usize, (r, c): (usize, usize), k: usize) -> Image<f64> {
    v.slice(slice).window(r, c, k).unwrap()
}

fn criterion_9(root: &Path) -> Check {
    let t = Instant::now();
    suite9_data(root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let (summary, elapsed) = pool.install(|| -> Result<String, String> {
        let lr: Dataset<f64> = load_dataset(root.join("lr"), DomainLabel::Lr).map_err(|e| e.to_string())?;
        let hr: Dataset<f64> = load_dataset(root.join("hr"), DomainLabel::Hr).map_err(|e| e.to_string())?;
        ensure(lr.len() == 8 && hr.len() == 8, || "expected 8 + 8 patients".into())?;
        let cfg = MatchConfig::default();
        let m = match_hierarchical(&lr, &hr, &cfg).map_err(|e| e.to_string())?;
        let retained = filter_threshold(&m, cfg.threshold).unwrap().len();
        ensure(retained >= 200, || format!("only {retained} pairs above {}", cfg.threshold))?;
        let matched = m.mean_weight().unwrap();

        // uniformly random LR/HR patch pairs, as many as there are matches
        let grid = quasipair::patch_grid(256, 256, cfg.patch_size, cfg.stride).unwrap();
        let spec = HistogramSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (lv, hv) = (lr.volumes(), hr.volumes());
        let mut total = 0.0;
        for _ in 0..m.len() {
            let a = &lv[rng.gen_range(0..lv.len())];
            let b = &hv[rng.gen_range(0..hv.len())];
            let pa = grid_patch(a, rng.gen_range(0..a.len()), grid[rng.gen_range(0..grid.len())], cfg.patch_size);
            let pb = grid_patch(b, rng.gen_range(0..b.len()), grid[rng.gen_range(0..grid.len())], cfg.patch_size);
            total += nmi(&pa, &pb, &spec).unwrap();
        }
        let random = total / m.len() as f64;
        ensure(matched - random >= 0.05, || {
            format!("matched mean {matched:.4} vs random mean {random:.4}: gap below 0.05")
        })?;

        let own = match_hierarchical(&hr, &hr, &cfg).map_err(|e| e.to_string())?;
        let off = own.records.iter().filter(|r| r.weight != 1.0).count();
        ensure(off == 0, || format!("{off} self-match weights differ from 1"))?;
        Ok(format!(
            "{} pairs, {retained} retained, matched mean NMI {matched:.4} vs random {random:.4}, self-match all 1",
            m.len()
        ))
    })
    .map(|s| (s, t.elapsed()))?;
    within(elapsed, 60.0)?;
    Ok(format!("{summary}, {:.2} s", elapsed.as_secs_f64()))
}

fn criterion_10(root: &Path) -> Check {
    if !root.join("lr").is_dir() {
        suite9_data(root)?;
    }
    let run = |threads: &str| -> Result<Vec<u8>, String> {
        let path = root.join(format!("manifest-{threads}.jsonl"));
        let out = Command::new(bin())
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .args(["--threads", threads, "match", "--lr"])
            .arg(root.join("lr"))
            .arg("--hr")
            .arg(root.join("hr"))
            .arg("--out")
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!(
                "match --threads {threads} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            )
        })?;
        fs::read(&path).map_err(|e| e.to_string())
    };
    let one = run("1")?;
    let eight = run("8")?;
    ensure(one == eight, || {
        "manifests differ between 1 and 8 threads".into()
    })?;
    Ok(format!("{} byte manifests identical", one.len()))
}

fn main() {
    let data = tempfile::tempdir().unwrap();
    let suite9 = data.path().join("suite9");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("similarity identities", Box::new(criterion_1)),
        ("hand-computed NMI cases", Box::new(criterion_2)),
        ("matcher oracle equivalence", Box::new(criterion_3)),
        ("default constants", Box::new(criterion_4)),
        ("degradation model", Box::new(criterion_5)),
        ("loss gradient check", Box::new(criterion_6)),
        ("supervised reduction", Box::new(criterion_7)),
        ("metric identities", Box::new(criterion_8)),
        (
            "matched vs random similarity",
            Box::new(|| criterion_9(&suite9)),
        ),
        (
            "determinism under parallelism",
            Box::new(|| criterion_10(&suite9)),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
