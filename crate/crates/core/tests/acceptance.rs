//! Acceptance checks, one PASS/FAIL line each. Run with
//! `cargo test -p leader-core --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{random_kind, random_tensor, ridge_image, rng};
use leader_core::cmr::{position_map, weight_map, CmrParams};
use leader_core::eval::{
    direct_win_counts, direct_win_matrix, pair_minutiae, precision_recall_f1, sample_ranking, tie_counts, tie_matrix,
    RankTies, ThresholdLevel,
};
use leader_core::io::{load_image, read_minutiae, read_weights};
use leader_core::losses::{composite_loss, direction_loss, position_loss, LossParts, LossWeights, DEFAULT_EPSILON};
use leader_core::model::random_model;
use leader_core::postprocess::nms;
use leader_core::tensor::{activation, concat_channels, conv2d, mul, Activation};
use leader_core::{build_model, ConvKernel, Minutia, MinutiaSet, ModelConfig, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn dist(ax: usize, ay: usize, bx: usize, by: usize) -> f64 {
    ((ax as f64 - bx as f64).powi(2) + (ay as f64 - by as f64).powi(2)).sqrt()
}

// 1

fn omega_scalar(s: f64) -> f64 {
    let (beta, sigma, lambda) = (2.0, 2.0, 0.3);
    let s1 = beta + 3.0 * sigma;
    let g = |z: f64| (-z * z / (2.0 * sigma * sigma)).exp();
    match s {
        s if s == 0.0 => 1.0,
        s if s <= beta => 0.0,
        s if s <= s1 => g(s - s1),
        s if s <= s1 + beta => 1.0,
        s => lambda + (1.0 - lambda) * g(s - s1 - beta),
    }
}

fn cmr_profile() -> Check {
    let params = CmrParams::new(4.0, 2.0, 2.0, 0.3).map_err(|e| e.to_string())?;
    let gt = MinutiaSet::new(80, 80, vec![Minutia::new(40, 40, 0.0, random_kind(&mut rng(1)), 1.0)]).unwrap();
    let w = weight_map(&position_map(&gt, 80, 80, &params).unwrap(), &params).unwrap();
    let mut worst = 0.0f64;
    let mut profile = Vec::new();
    for r in 0..=20usize {
        let want = omega_scalar((r as f64 - 4.0).max(0.0));
        for (y, x) in [(40, 40 + r), (40, 40 - r), (40 + r, 40), (40 - r, 40)] {
            worst = worst.max((w.get(y, x, 0) as f64 - want).abs());
        }
        profile.push(w.get(40, 40 + r, 0));
    }
    ensure!(worst < 1e-6, "max deviation {worst:e}");
    ensure!(profile[..=4].iter().all(|&v| v == 1.0), "castle {:?}", &profile[..=4]);
    ensure!(profile[5..=6].iter().all(|&v| v == 0.0), "moat {:?}", &profile[5..=6]);
    ensure!(profile[12..=14].iter().all(|&v| v == 1.0), "crest {:?}", &profile[12..=14]);
    ensure!(profile[15..].windows(2).all(|p| p[1] <= p[0] && p[1] > 0.3), "plateau {:?}", &profile[15..]);
    let far = w.get(0, 0, 0) as f64;
    ensure!((far - 0.3).abs() < 1e-6, "far field {far}");
    Ok(format!("max deviation {worst:.1e} over r = 0..20"))
}

// 2

fn position_oracle(gt: &MinutiaSet, n: usize, p: &CmrParams) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let near: Vec<f64> = gt.iter().map(|m| dist(x, y, m.x, m.y)).collect();
            let inside = near.iter().filter(|&&d| d <= p.delta).count();
            let ring = near.iter().any(|&d| d > p.delta && d <= p.delta + p.beta);
            out[y * n + x] = inside == 1 && !ring;
        }
    }
    out
}

fn position_equivalence() -> Check {
    let params = CmrParams::default();
    let mut r = rng(2);
    let mut close_pairs = 0;
    for trial in 0..200 {
        let mut ms: Vec<Minutia> = Vec::new();
        if trial % 2 == 0 {
            let (x, y) = (r.random_range(4..52), r.random_range(4..52));
            let gap = r.random_range(5..=7);
            let (dx, dy) = if r.random_bool(0.5) { (gap, 0) } else { (gap * 3 / 5, gap * 4 / 5) };
            ms.push(Minutia::new(x, y, 0.0, random_kind(&mut r), 1.0));
            ms.push(Minutia::new(x + dx, y + dy, 0.0, random_kind(&mut r), 1.0));
            close_pairs += 1;
        }
        let n = r.random_range(0..=10 - ms.len());
        while ms.len() < n + if trial % 2 == 0 { 2 } else { 0 } {
            let (x, y) = (r.random_range(0..64), r.random_range(0..64));
            if !ms.iter().any(|m| m.x == x && m.y == y) {
                ms.push(Minutia::new(x, y, 0.0, random_kind(&mut r), 1.0));
            }
        }
        let gt = MinutiaSet::new(64, 64, ms).unwrap();
        let got = position_map(&gt, 64, 64, &params).unwrap();
        let want = position_oracle(&gt, 64, &params);
        for (i, (&a, &b)) in got.data().iter().zip(&want).enumerate() {
            ensure!((a == 1.0) == b && (a == 0.0 || a == 1.0), "trial {trial}: pixel {i} is {a}, oracle {b}");
        }
    }
    Ok(format!("200 configurations, {close_pairs} with a 5-7 px pair"))
}

// 3

fn nms_equivalence() -> Check {
    let mut r = rng(3);
    let mut kept = 0usize;
    for trial in 0..1000 {
        // Half the maps are quantized so plateaus and ties occur.
        let levels = if trial % 2 == 0 { Some(r.random_range(2..8)) } else { None };
        let p = Tensor::from_fn(64, 64, 1, |_, _, _| match levels {
            Some(l) => r.random_range(0..l) as f32 / l as f32,
            None => r.random_range(0.0..1.0),
        });
        let out = nms(&p).map_err(|e| e.to_string())?;
        for y in 0..64usize {
            for x in 0..64usize {
                let mut m = f32::NEG_INFINITY;
                for yy in y.saturating_sub(3)..=(y + 3).min(63) {
                    for xx in x.saturating_sub(3)..=(x + 3).min(63) {
                        m = m.max(p.get(yy, xx, 0));
                    }
                }
                let v = p.get(y, x, 0);
                let want = if v == m { v } else { 0.0 };
                ensure!(out.get(y, x, 0) == want, "map {trial} ({y}, {x}): {} vs {want}", out.get(y, x, 0));
                kept += (v == m) as usize;
            }
        }
    }
    Ok(format!("1000 maps, {kept} maxima kept"))
}

// 4

fn best_cardinality(e: &[Minutia], g: &[Minutia], ok: &dyn Fn(&Minutia, &Minutia) -> bool) -> usize {
    fn go(i: usize, e: &[Minutia], g: &[Minutia], used: u32, ok: &dyn Fn(&Minutia, &Minutia) -> bool) -> usize {
        if i == e.len() {
            return 0;
        }
        let mut best = go(i + 1, e, g, used, ok);
        for j in 0..g.len() {
            if used & (1 << j) == 0 && ok(&e[i], &g[j]) {
                best = best.max(1 + go(i + 1, e, g, used | (1 << j), ok));
            }
        }
        best
    }
    go(0, e, g, 0, ok)
}

fn jittered_instance(r: &mut ChaCha8Rng) -> (MinutiaSet, MinutiaSet) {
    let (w, h) = (60, 60);
    let ng = r.random_range(0..=7);
    let mut g: Vec<Minutia> = Vec::new();
    while g.len() < ng {
        let (x, y) = (r.random_range(0..w), r.random_range(0..h));
        if !g.iter().any(|m| m.x == x && m.y == y) {
            g.push(Minutia::new(x, y, r.random_range(-PI..PI), random_kind(r), 1.0));
        }
    }
    let ne = r.random_range(0..=7);
    let mut e: Vec<Minutia> = Vec::new();
    while e.len() < ne {
        let m = if !g.is_empty() && r.random_bool(0.7) {
            let src = g[r.random_range(0..g.len())];
            let x = (src.x as i64 + r.random_range(-14..=14)).clamp(0, w as i64 - 1) as usize;
            let y = (src.y as i64 + r.random_range(-14..=14)).clamp(0, h as i64 - 1) as usize;
            let kind = if r.random_bool(0.75) { src.kind } else { random_kind(r) };
            Minutia::new(x, y, src.theta + r.random_range(-0.6..0.6), kind, 1.0)
        } else {
            Minutia::new(r.random_range(0..w), r.random_range(0..h), r.random_range(-PI..PI), random_kind(r), 1.0)
        };
        if !e.iter().any(|o| o.x == m.x && o.y == m.y) {
            e.push(m);
        }
    }
    (MinutiaSet::new(w, h, e).unwrap(), MinutiaSet::new(w, h, g).unwrap())
}

fn pairing_optimality() -> Check {
    let mut r = rng(4);
    let mut total_tp = 0;
    for trial in 0..500 {
        let (e, g) = jittered_instance(&mut r);
        for level in ThresholdLevel::standard() {
            for aware in [false, true] {
                let ok = |a: &Minutia, b: &Minutia| {
                    let phi = (b.theta - a.theta + PI).rem_euclid(2.0 * PI) - PI;
                    dist(a.x, a.y, b.x, b.y) <= level.rho_t
                        && phi.abs() <= level.theta_t
                        && (!aware || a.kind == b.kind)
                };
                let want = best_cardinality(e.minutiae(), g.minutiae(), &ok);
                let got = pair_minutiae(&e, &g, &level, aware).true_positives;
                ensure!(got == want, "instance {trial}, {level:?}, aware {aware}: TP {got}, optimum {want}");
                total_tp += got;
            }
        }
    }
    Ok(format!("500 instances x 3 levels x 2 regimes, {total_tp} TP in total"))
}

// 5

fn loss_contracts() -> Check {
    let mut r = rng(5);
    let (h, w) = (24, 24);
    let p = Tensor::from_fn(h, w, 1, |_, _, _| r.random_bool(0.2) as u8 as f32);
    let d = random_tensor(&mut r, h, w, 1, -3.0, 3.0);
    let perfect = direction_loss(&p, &d, &d, DEFAULT_EPSILON).unwrap();
    ensure!(perfect == 0.0, "perfect directions give {perfect}");
    let opposite = d.map(|v| if v > 0.0 { v - PI as f32 } else { v + PI as f32 });
    let worst = direction_loss(&p, &d, &opposite, DEFAULT_EPSILON).unwrap();
    ensure!((worst - 1.0).abs() < 1e-6, "constant pi error gives {worst}");

    let gt = common::random_set(&mut r, w, h, 4);
    let params = CmrParams::default();
    let pos = position_map(&gt, h, w, &params).unwrap();
    let wt = weight_map(&pos, &params).unwrap();
    let q = random_tensor(&mut r, h, w, 1, 0.01, 0.99);
    let mut q2 = q.clone();
    let mut moat = 0;
    for y in 0..h {
        for x in 0..w {
            if wt.get(y, x, 0) == 0.0 {
                q2.set(y, x, 0, r.random_range(0.0..1.0));
                moat += 1;
            }
        }
    }
    let a = position_loss(&pos, &q, &wt, DEFAULT_EPSILON).unwrap();
    let b = position_loss(&pos, &q2, &wt, DEFAULT_EPSILON).unwrap();
    ensure!(moat > 0 && (a - b).abs() < 1e-6, "moat perturbation moved the loss {a} -> {b}");

    let unit = LossParts { position: 1.0, direction: 1.0, kind: 1.0 };
    let total = composite_loss(&unit, &LossWeights::default());
    ensure!((total - 1.0).abs() < 1e-6, "composite on unit parts is {total}");
    Ok(format!("L_d in {{0, {worst:.7}}}, {moat} moat pixels perturbed, composite {total}"))
}

// 6

fn model_shape() -> Check {
    let cfg = ModelConfig::default();
    let model = random_model(&cfg, 6).map_err(|e| e.to_string())?;
    let n = model.parameter_count();
    ensure!((800_000..=1_000_000).contains(&n), "{n} parameters");
    let mut r = rng(6);
    let mut sizes = Vec::new();
    while sizes.len() < 5 {
        let (h, w) = (r.random_range(33..200), r.random_range(33..200));
        if h % 32 != 0 && w % 32 != 0 {
            sizes.push((h, w));
        }
    }
    for &(h, w) in &sizes {
        let (maps, _) = model.forward(&random_tensor(&mut r, h, w, 1, 0.0, 1.0), &[]).map_err(|e| e.to_string())?;
        for (name, t) in [("P", &maps.position), ("T", &maps.kind), ("D", &maps.direction), ("Q", &maps.refined)] {
            ensure!(t.shape() == (h, w, 1), "{name} has shape {:?} for {h}x{w}", t.shape());
        }
        ensure!(maps.position.data().iter().all(|&v| v > 0.0 && v < 1.0), "P outside (0, 1)");
        ensure!(maps.kind.data().iter().all(|&v| v > 0.0 && v < 1.0), "T outside (0, 1)");
        let pi = std::f32::consts::PI;
        ensure!(maps.direction.data().iter().all(|&v| v > -pi && v <= pi), "D outside (-pi, pi]");
    }
    Ok(format!("{n} parameters, sizes {sizes:?}"))
}

// 7

fn gate_conformance() -> Check {
    let model = random_model(&ModelConfig::default(), 7).map_err(|e| e.to_string())?;
    let gate = model.attention_gate();
    ensure!(gate.channels() == 32, "gate has {} channels", gate.channels());
    let store = model.weights();
    let kernel = |prefix: &str| {
        let w = store.get(&format!("{prefix}.weight")).unwrap();
        let b = store.get(&format!("{prefix}.bias")).unwrap();
        let d = w.dims();
        ConvKernel::new(d[0], d[2], d[3], w.data().to_vec(), Some(b.data().to_vec())).unwrap()
    };
    let mut r = rng(7);
    let mut worst = 0.0f32;
    for _ in 0..5 {
        let (h, w) = (r.random_range(5..40), r.random_range(5..40));
        let x = random_tensor(&mut r, h, w, 32, -3.0, 3.0);
        let paths: Vec<Tensor> = [1, 3, 6]
            .iter()
            .map(|&rate| activation(&conv2d(&x, &kernel(&format!("gate.dil{rate}")), rate).unwrap(), Activation::Gelu))
            .collect();
        let refs: Vec<&Tensor> = paths.iter().collect();
        let psi = conv2d(&concat_channels(&refs).unwrap(), &kernel("gate.psi"), 1).unwrap();
        let manual = mul(&x, &activation(&psi, Activation::Sigmoid)).unwrap();
        let out = gate.forward(&x).map_err(|e| e.to_string())?;
        worst = worst.max(out.gated.max_abs_diff(&manual).unwrap());
    }
    ensure!(worst < 1e-6, "max difference {worst:e}");
    Ok(format!("32 channels, max difference {worst:.1e}"))
}

// 8

fn pipeline_smoke() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let img = ridge_image(120, 100);
    let path = dir.path().join("ridges.pgm");
    leader_core::io::save_pgm(&path, &img).map_err(|e| e.to_string())?;
    let out = dir.path().join("minutiae.txt");
    let o = Command::new(env!("CARGO_BIN_EXE_leader"))
        .args(["extract", "--random-weights", "8", "--tau", "0.6", "--image"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .env_remove("LEADER_WEIGHTS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    let set = read_minutiae(&out).map_err(|e| e.to_string())?;
    ensure!((set.width(), set.height()) == (100, 120), "header {}x{}", set.width(), set.height());
    for m in &set {
        ensure!(m.quality >= 0.6, "quality {} below threshold", m.quality);
        ensure!(m.x < 100 && m.y < 120, "({}, {}) out of bounds", m.x, m.y);
    }
    Ok(format!("{} minutiae, all q >= 0.6 and in bounds", set.len()))
}

// 9

fn ranking_statistics() -> Check {
    let mut r = rng(9);
    for trial in 0..100 {
        let methods = r.random_range(2..8);
        let samples = r.random_range(1..60);
        let f1: Vec<Vec<f64>> =
            (0..methods).map(|_| (0..samples).map(|_| r.random_range(0..6) as f64 / 5.0).collect()).collect();
        let names: Vec<String> = (0..methods).map(|m| format!("m{m}")).collect();
        let rep = sample_ranking(&names, &f1, RankTies::Competition).map_err(|e| e.to_string())?;
        for s in 0..samples {
            let mut sorted: Vec<f64> = f1.iter().map(|row| row[s]).collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for m in 0..methods {
                let want = sorted.iter().position(|&v| v == f1[m][s]).unwrap() as f64 + 1.0;
                ensure!(rep.ranks[m][s] == want, "table {trial}: rank {} vs {want}", rep.ranks[m][s]);
            }
        }
        for (m, st) in rep.methods.iter().enumerate() {
            let mean = rep.ranks[m].iter().sum::<f64>() / samples as f64;
            ensure!(st.mean_rank == mean, "table {trial}: mean rank {} vs {mean}", st.mean_rank);
        }
        let wins = direct_win_counts(&f1).unwrap();
        let ties = tie_counts(&f1).unwrap();
        let pct = direct_win_matrix(&f1).unwrap();
        let tie_pct = tie_matrix(&f1).unwrap();
        for i in 0..methods {
            for j in 0..methods {
                if i == j {
                    continue;
                }
                let count = (0..samples).filter(|&s| f1[i][s] > f1[j][s]).count();
                ensure!(wins[i][j] == count, "table {trial}: wins {} vs {count}", wins[i][j]);
                ensure!(pct[i][j] == Some(100.0 * count as f64 / samples as f64), "table {trial}: percentage");
                ensure!(wins[i][j] + wins[j][i] + ties[i][j] == samples, "table {trial}: counts do not add up");
                let sum = pct[i][j].unwrap() + pct[j][i].unwrap() + tie_pct[i][j].unwrap();
                ensure!((sum - 100.0).abs() < 1e-9, "table {trial}: percentages sum to {sum}");
            }
        }
    }
    Ok("100 tables".into())
}

// 10

fn performance() -> Check {
    let model = random_model(&ModelConfig::default(), 10).map_err(|e| e.to_string())?;
    let img = ridge_image(800, 768);
    model.forward(&ridge_image(64, 64), &[]).map_err(|e| e.to_string())?;
    let t = Instant::now();
    model.forward(&img, &[]).map_err(|e| e.to_string())?;
    let dt = t.elapsed();
    ensure!(dt < Duration::from_secs(2), "forward took {:.3} s", dt.as_secs_f64());
    Ok(format!("800x768 forward in {:.3} s", dt.as_secs_f64()))
}

// 11

fn dataset_files(dir: &Path) -> std::io::Result<Vec<(PathBuf, PathBuf, Option<PathBuf>)>> {
    let mut out = Vec::new();
    let mut images: Vec<PathBuf> = std::fs::read_dir(dir.join("images"))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    images.sort();
    for img in images {
        let stem = img.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let gt = dir.join("gt").join(format!("{stem}.txt"));
        let mask = ["png", "pgm"].iter().map(|ext| dir.join("masks").join(format!("{stem}.{ext}"))).find(|p| p.is_file());
        if gt.is_file() {
            out.push((img, gt, mask));
        }
    }
    Ok(out)
}

fn reproduction() -> Check {
    let Ok(weights) = std::env::var("LEADER_WEIGHTS") else {
        return Ok("informational, skipped: LEADER_WEIGHTS not set".into());
    };
    let targets = [("LEADER_FVC2002_DB1A", 0.92), ("LEADER_NIST_SD27", 0.71)];
    if targets.iter().all(|(v, _)| std::env::var_os(v).is_none()) {
        return Ok("informational, skipped: no dataset directory set".into());
    }
    let store = read_weights(&weights).map_err(|e| e.to_string())?;
    let model = build_model(&store, &ModelConfig::default()).map_err(|e| e.to_string())?;
    let level = ThresholdLevel::standard()[0];
    let mut notes = Vec::new();
    for (var, target) in targets {
        let Some(dir) = std::env::var_os(var) else { continue };
        let files = dataset_files(Path::new(&dir)).map_err(|e| format!("{var}: {e}"))?;
        let mut f1 = Vec::new();
        for (img, gt, mask) in files {
            let image = load_image(&img).map_err(|e| e.to_string())?;
            let (set, _) = model.extract(&image, 0.6).map_err(|e| e.to_string())?;
            let gt = read_minutiae(&gt).map_err(|e| e.to_string())?;
            let (e, g) = match mask {
                Some(m) => {
                    let m = load_image(&m).map_err(|e| e.to_string())?;
                    let crop = |s: &MinutiaSet| leader_core::eval::crop_and_filter(s, &m, 14.0).map(|c| c.set);
                    (crop(&set).map_err(|e| e.to_string())?, crop(&gt).map_err(|e| e.to_string())?)
                }
                None => (set, gt),
            };
            f1.push(precision_recall_f1(&pair_minutiae(&e, &g, &level, false)).f1);
        }
        let mean = f1.iter().sum::<f64>() / f1.len().max(1) as f64;
        notes.push(format!("{var}: mean F1 {mean:.3} over {} images, target {target}, deviation {:+.3}", f1.len(), mean - target));
    }
    Ok(format!("informational: {}", notes.join("; ")))
}

fn main() {
    let checks: [(u32, &str, fn() -> Check, Option<u64>); 11] = [
        (1, "cmr profile", cmr_profile, Some(1)),
        (2, "position map oracle", position_equivalence, Some(30)),
        (3, "nms brute force", nms_equivalence, Some(30)),
        (4, "pairing optimality", pairing_optimality, Some(60)),
        (5, "loss contracts", loss_contracts, None),
        (6, "model shape and size", model_shape, Some(60)),
        (7, "attention gate", gate_conformance, None),
        (8, "pipeline smoke", pipeline_smoke, None),
        (9, "ranking statistics", ranking_statistics, None),
        (10, "forward performance", performance, None),
        (11, "published f1 reproduction", reproduction, None),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in checks {
        let t = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let dt = t.elapsed().as_secs_f64();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if dt >= l as f64 => Err(format!("took {dt:.2} s, limit {l} s")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name} ({dt:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name} ({dt:.2} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
