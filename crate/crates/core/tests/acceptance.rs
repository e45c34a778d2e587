//! Acceptance criteria C1-C9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use d3_core::encoder::EncoderConfig;
use d3_core::features::{first_order_cosine, first_order_l2, second_order_diff, sigma_score, ScalarSeries};
use d3_core::harness::{
    emit_report, evaluate, load_manifest, run_detection, DetectionRun, ManifestEntry, RunConfig, RunReport, SCORES_FILE,
};
use d3_core::metrics::{auroc, average_precision, RealPool, ScoredLabel};
use d3_core::par::default_workers;
use d3_core::robustness::{default_grid, sweep, write_sweep_csv, Perturbation};
use d3_core::synth::{
    fixture_trajectory, integrate, make_corpus, render_clip, simulate_second_order, CorpusParams, DynamicsParams,
    RenderStyle, CLONE_SUBSET,
};
use d3_core::{DistanceKind, EmbeddingSeries, FeatureOrder, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn report(id: &str, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), l.as_secs())),
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id} {name} [{:.1}s] {detail}", took.as_secs_f64());
    outcome.is_ok()
}

// Scalar-loop oracles for the feature chain.

fn oracle_l2(v: &[Vec<f64>], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() - 1);
    for k in 0..v.len() - 1 {
        let mut ss = 0.0;
        for i in 0..v[k].len() {
            ss += (v[k + 1][i] - v[k][i]) * (v[k + 1][i] - v[k][i]);
        }
        out.push(ss.sqrt() / dt);
    }
    out
}

fn oracle_cos(v: &[Vec<f64>], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() - 1);
    for k in 0..v.len() - 1 {
        let (mut d, mut a, mut b) = (0.0, 0.0, 0.0);
        for i in 0..v[k].len() {
            d += v[k][i] * v[k + 1][i];
            a += v[k][i] * v[k][i];
            b += v[k + 1][i] * v[k + 1][i];
        }
        out.push(d / (a.sqrt() * b.sqrt()) / dt);
    }
    out
}

fn oracle_diff(f: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len() - 1);
    for i in 0..f.len() - 1 {
        out.push((f[i + 1] - f[i]) / dt);
    }
    out
}

fn oracle_std(f: &[f64]) -> f64 {
    let mut mean = 0.0;
    for x in f {
        mean += x;
    }
    mean /= f.len() as f64;
    let mut ss = 0.0;
    for x in f {
        ss += (x - mean) * (x - mean);
    }
    (ss / (f.len() - 1) as f64).sqrt()
}

fn all_close(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(a, b)| rel_close(*a, *b, tol))
}

fn first(values: Vec<f64>, dt: f64) -> ScalarSeries {
    ScalarSeries {
        values,
        order: FeatureOrder::First,
        distance: DistanceKind::L2,
        dt,
    }
}

fn c1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 1000;
    for case in 0..cases {
        let t = rng.random_range(4..=32);
        let n = rng.random_range(2..=512);
        let dt = rng.random_range(0.05..2.0);
        let v: Vec<Vec<f64>> = (0..t).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let f0 = EmbeddingSeries::new(v.clone(), dt).map_err(|e| e.to_string())?;
        let l2 = first_order_l2(&f0).map_err(|e| e.to_string())?;
        ensure(all_close(&l2.values, &oracle_l2(&v, dt), 1e-9), || format!("case {case}: first_order_l2"))?;
        let cos = first_order_cosine(&f0).map_err(|e| e.to_string())?;
        ensure(all_close(&cos.values, &oracle_cos(&v, dt), 1e-9), || format!("case {case}: first_order_cosine"))?;
        let f2 = second_order_diff(&l2).map_err(|e| e.to_string())?;
        let want_f2 = oracle_diff(&oracle_l2(&v, dt), dt);
        ensure(all_close(&f2.values, &want_f2, 1e-9), || format!("case {case}: second_order_diff"))?;
        let s = sigma_score(&f2).map_err(|e| e.to_string())?;
        ensure(rel_close(s.sigma, oracle_std(&want_f2), 1e-9), || format!("case {case}: sigma_score"))?;
        ensure(s.fake_score == -s.sigma, || format!("case {case}: fake_score"))?;
    }
    Ok(format!("{cases} random series, four operations within 1e-9 relative"))
}

fn c2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 10_000;
    let d2 = |f: &[f64], dt: f64| second_order_diff(&first(f.to_vec(), dt)).map(|s| s.values).map_err(|e| e.to_string());
    for case in 0..cases {
        let len = rng.random_range(2..=40);
        let dt = rng.random_range(0.05..3.0);
        let f: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let g: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let (lhs, df, dg) = (d2(&mix, dt)?, d2(&f, dt)?, d2(&g, dt)?);
        for i in 0..lhs.len() {
            let rhs = a * df[i] + b * dg[i];
            let scale = (a * df[i]).abs() + (b * dg[i]).abs();
            ensure((lhs[i] - rhs).abs() <= 1e-9 * scale.max(1.0), || format!("case {case}: linearity {} vs {rhs}", lhs[i]))?;
        }

        let c = rng.random_range(-10.0..10.0);
        ensure(d2(&vec![c; len], dt)?.iter().all(|x| x.abs() <= 1e-9), || format!("case {case}: constant"))?;

        let (alpha, beta) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let line: Vec<f64> = (0..len).map(|k| alpha + beta * k as f64).collect();
        let want = beta / dt;
        ensure(
            d2(&line, dt)?.iter().all(|x| (x - want).abs() <= 1e-9 * want.abs().max(1.0) * (1.0 + alpha.abs() / dt)),
            || format!("case {case}: linear input"),
        )?;

        let s: Vec<f64> = (0..len + 1).map(|_| rng.random_range(-10.0..10.0)).collect();
        let h = dt;
        let once: Vec<f64> = (0..s.len() - 1).map(|i| (s[i + 1] - s[i]) / h).collect();
        let twice = d2(&once, h)?;
        for (i, v) in twice.iter().enumerate() {
            let x = i + 1;
            let three = (s[x + 1] - 2.0 * s[x] + s[x - 1]) / (h * h);
            let scale = (s[x + 1].abs() + 2.0 * s[x].abs() + s[x - 1].abs()) / (h * h);
            ensure((v - three).abs() <= 1e-9 * scale.max(1.0), || format!("case {case}: three-point {v} vs {three}"))?;
        }
    }
    Ok(format!("{cases} cases: linearity, constant, linear and three-point checks"))
}

fn items(scores: &[f64], labels: &[bool]) -> Vec<ScoredLabel> {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| ScoredLabel::new(s, if l { Label::Generated } else { Label::Real }))
        .collect()
}

fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_tp) = (0.0, 0.0);
    for t in thresholds {
        let (mut tp, mut k) = (0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                k += 1.0;
                if *l {
                    tp += 1.0;
                }
            }
        }
        ap += ((tp - prev_tp) / n_pos) * (tp / k);
        prev_tp = tp;
    }
    ap
}

fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Every multiset of size 1..=8 over the 8 (score, label) kinds.
fn multisets() -> Vec<Vec<(f64, bool)>> {
    fn rec(kind: usize, left: usize, cur: &mut Vec<(f64, bool)>, out: &mut Vec<Vec<(f64, bool)>>) {
        if kind == 8 {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            return;
        }
        let item = ((kind / 2) as f64, kind % 2 == 1);
        for n in 0..=left {
            for _ in 0..n {
                cur.push(item);
            }
            rec(kind + 1, left - n, cur, out);
            cur.truncate(cur.len() - n);
        }
    }
    let mut out = Vec::new();
    rec(0, 8, &mut Vec::new(), &mut out);
    out
}

fn c3() -> Check {
    let all = multisets();
    let (mut ap_checked, mut auc_checked) = (0, 0);
    for m in &all {
        let (s, l): (Vec<f64>, Vec<bool>) = m.iter().copied().unzip();
        let it = items(&s, &l);
        if l.iter().any(|&x| x) {
            let (got, want) = (average_precision(&it).map_err(|e| e.to_string())?, brute_ap(&s, &l));
            ensure(got == want, || format!("AP {got} != {want} on {m:?}"))?;
            ap_checked += 1;
        }
        if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
            let (got, want) = (auroc(&it).map_err(|e| e.to_string())?, brute_auroc(&s, &l));
            ensure(got == want, || format!("AUROC {got} != {want} on {m:?}"))?;
            auc_checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let n = rng.random_range(2..=40);
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect();
        let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        l[0] = true;
        l[1] = false;
        let (a, b) = (rng.random_range(0.1..4.0), rng.random_range(-5.0..5.0));
        let mapped: Vec<f64> = s.iter().map(|x| a * x * x * x + a * x + b).collect();
        let exp: Vec<f64> = s.iter().map(|x| (x * 0.7).exp()).collect();
        let base = items(&s, &l);
        for other in [items(&mapped, &l), items(&exp, &l)] {
            ensure(average_precision(&base).unwrap() == average_precision(&other).unwrap(), || format!("case {case}: AP"))?;
            ensure(auroc(&base).unwrap() == auroc(&other).unwrap(), || format!("case {case}: AUROC"))?;
        }
    }
    Ok(format!(
        "{} multisets exhaustively ({ap_checked} AP, {auc_checked} AUROC), 1000 monotone-map cases",
        all.len()
    ))
}

struct Corpus {
    entries: Vec<ManifestEntry>,
    run: DetectionRun,
    build_s: f64,
}

fn build_corpus(dir: &Path) -> Result<Corpus, String> {
    let start = Instant::now();
    let manifest = make_corpus(100, 100, &CorpusParams::with_seed(0), dir).map_err(|e| e.to_string())?;
    let entries = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let run = run_detection(&entries, &config(default_workers())).map_err(|e| e.to_string())?;
    Ok(Corpus {
        entries,
        run,
        build_s: start.elapsed().as_secs_f64(),
    })
}

fn config(workers: usize) -> RunConfig {
    RunConfig {
        workers,
        ..RunConfig::default()
    }
}

fn ranking(run: &DetectionRun) -> Vec<ScoredLabel> {
    run.records.iter().map(|r| ScoredLabel::new(r.fake_score, r.label)).collect()
}

fn c4(corpus: &Result<Corpus, String>) -> Check {
    let c = corpus.as_ref().map_err(Clone::clone)?;
    ensure(c.run.records.len() == 200, || format!("{} records, failures {:?}", c.run.records.len(), c.run.failures))?;
    let it = ranking(&c.run);
    let (ap, auc) = (average_precision(&it).unwrap(), auroc(&it).unwrap());
    ensure(ap >= 0.95 && auc >= 0.95, || format!("AP {ap:.4} AUROC {auc:.4}"))?;
    ensure(c.build_s < 120.0, || format!("corpus + scoring took {:.1}s", c.build_s))?;
    Ok(format!("AP {ap:.4} AUROC {auc:.4}; corpus + scoring {:.1}s", c.build_s))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn c5(corpus: &Result<Corpus, String>) -> Check {
    let c = corpus.as_ref().map_err(Clone::clone)?;
    let cfg = RunConfig {
        feature_order: FeatureOrder::First,
        ..config(default_workers())
    };
    let first_run = run_detection(&c.entries, &cfg).map_err(|e| e.to_string())?;
    let ap2 = average_precision(&ranking(&c.run)).unwrap();
    let ap1 = average_precision(&ranking(&first_run)).unwrap();

    let is_real: Vec<bool> = c.run.records.iter().map(|r| r.label == Label::Real).collect();
    let f1_mean = |want: bool| {
        mean(c.run.series.iter().zip(&is_real).filter(|(_, r)| **r == want).map(|(s, _)| mean(s.f1.iter().copied())))
    };
    let sigma_mean = |want: bool| mean(c.run.records.iter().filter(|r| (r.label == Label::Real) == want).map(|r| r.sigma));
    let (m_real, m_fake) = (f1_mean(true), f1_mean(false));
    let f1_gap = (m_real - m_fake).abs() / m_real;
    let ratio = sigma_mean(true) / sigma_mean(false);
    let detail = format!(
        "AP second {ap2:.4} first {ap1:.4} (gap {:.4}); mean F1 real {m_real:.4} clone {m_fake:.4} ({:.1}% apart); sigma ratio {ratio:.2}",
        ap2 - ap1,
        100.0 * f1_gap
    );
    ensure(ap2 - ap1 >= 0.10 && f1_gap <= 0.10 && ratio >= 3.0, || detail.clone())?;
    Ok(detail)
}

fn c6(corpus: &Result<Corpus, String>, out: &Path) -> Check {
    let c = corpus.as_ref().map_err(Clone::clone)?;
    let grid = default_grid();
    let result = sweep(&c.entries, &config(default_workers()), &grid, &RealPool::AllReal).map_err(|e| e.to_string())?;
    let csv = out.join("sweep.csv");
    write_sweep_csv(&result, &csv).map_err(|e| e.to_string())?;
    let rows = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?.lines().count();
    ensure(result.points.len() == 10 && rows == 12, || format!("{} points, {rows} csv lines", result.points.len()))?;
    let map_of = |p: Perturbation| result.point(&p).and_then(|q| q.report.as_ref()).map(|r| r.map);
    let base = map_of(Perturbation::Identity).ok_or("no baseline mAP")?;
    let blur1 = map_of(Perturbation::GaussianBlur { sigma: 1.0 }).ok_or("no sigma=1 mAP")?;
    let q90 = map_of(Perturbation::JpegCompress { quality: 90 }).ok_or("no q=90 mAP")?;
    let blur4 = map_of(Perturbation::GaussianBlur { sigma: 4.0 }).unwrap_or(f64::NAN);
    let detail = format!("mAP base {base:.4} blur1 {blur1:.4} q90 {q90:.4} blur4 {blur4:.4}; 10-point CSV written");
    ensure(base - blur1 <= 0.05 && base - q90 <= 0.05, || detail.clone())?;
    Ok(detail)
}

fn c7(corpus: &Result<Corpus, String>, out: &Path) -> Check {
    let c = corpus.as_ref().map_err(Clone::clone)?;
    let mut files = Vec::new();
    for (i, workers) in [1usize, 8, 1].into_iter().enumerate() {
        let cfg = config(workers);
        let run = run_detection(&c.entries, &cfg).map_err(|e| e.to_string())?;
        let report = evaluate(&run, &cfg).map_err(|e| e.to_string())?;
        let dir = out.join(format!("run{i}_w{workers}"));
        emit_report(&RunReport::new(&cfg, &run, Ok(&report)).unwrap(), &dir, false).map_err(|e| e.to_string())?;
        files.push(std::fs::read(dir.join(SCORES_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(files.windows(2).all(|w| w[0] == w[1]), || "scores.csv differs".into())?;
    Ok(format!("scores.csv identical over workers 1, 8, 1 ({} bytes)", files[0].len()))
}

fn c8() -> Check {
    let p = DynamicsParams {
        a2: 1.0,
        a1: 0.5,
        a0: 4.0,
        force_noise_std: 0.0,
        dt_sim: 0.01,
        steps: 400,
        seed: 0,
    };
    let (x0, v0) = ([1.0, -0.5], [0.0, 2.0]);
    let traj = simulate_second_order(&p, x0, v0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for axis in 0..2 {
        let h = p.dt_sim / 100.0;
        let (mut x, mut v) = (x0[axis], v0[axis]);
        let mut reference = vec![x];
        for _ in 1..p.steps {
            for _ in 0..100 {
                v += h * (-p.a1 * v - p.a0 * x) / p.a2;
                x += h * v;
            }
            reference.push(x);
        }
        let peak = reference.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        for (q, r) in traj.positions.iter().zip(&reference) {
            worst = worst.max((q[axis] - r).abs() / peak);
        }
    }
    ensure(worst <= 0.05, || format!("position error {:.2}% of peak", 100.0 * worst))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let mut q = DynamicsParams {
            a2: rng.random_range(0.2..3.0),
            a1: rng.random_range(0.05..2.0),
            a0: rng.random_range(0.0..6.0),
            force_noise_std: 0.0,
            dt_sim: 1.0,
            steps: 60,
            seed: case,
        };
        q.dt_sim = rng.random_range(0.05..=1.0) * q.dissipative_dt_bound().min(2.0);
        let xs = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let vs = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let run = integrate(&q, xs, vs, |_| [0.0, 0.0]);
        let e: Vec<f64> = run.positions.iter().zip(&run.velocities).map(|(x, v)| q.mechanical_energy(*x, *v)).collect();
        ensure(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), || format!("energy rose in case {case}: {q:?}"))?;
    }
    Ok(format!(
        "max position error {:.2}% of peak vs 100x finer steps; energy non-increasing in 100/100 damped runs",
        100.0 * worst
    ))
}

fn c9(out: &Path) -> Check {
    if !cfg!(feature = "onnx") {
        return Err("built without the onnx feature".into());
    }
    let model = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_encoder.onnx");
    let clip = render_clip(
        &fixture_trajectory(&CorpusParams::default(), 9).map_err(|e| e.to_string())?,
        &RenderStyle::default(),
        &out.join("onnx_clip"),
    )
    .map_err(|e| e.to_string())?;
    let mut cfg = config(1);
    cfg.encoder = EncoderConfig::external(&model, 32);
    let entries = [
        ManifestEntry::new("clip", &clip, Label::Real, "real"),
        ManifestEntry::new("clip_again", &clip, Label::Generated, CLONE_SUBSET),
    ];
    let run = run_detection(&entries, &cfg).map_err(|e| e.to_string())?;
    ensure(run.failures.is_empty(), || format!("{:?}", run.failures))?;
    let sigma = run.records[0].sigma;
    ensure(sigma.is_finite() && run.series[0].frames == 16, || format!("sigma {sigma}, {} frames", run.series[0].frames))?;
    let report = evaluate(&run, &cfg).map_err(|e| e.to_string())?;
    let dir = out.join("onnx_report");
    emit_report(&RunReport::new(&cfg, &run, Ok(&report)).unwrap(), &dir, false).map_err(|e| e.to_string())?;
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let want = hex::encode(Sha256::digest(std::fs::read(&model).map_err(|e| e.to_string())?));
    ensure(json["model_sha256"] == want.as_str(), || format!("report hash {} != {want}", json["model_sha256"]))?;
    Ok(format!("16 frames, sigma {sigma:.6}, model sha256 {}…", &want[..12]))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= report("C1", "feature-chain oracles", Some(Duration::from_secs(30)), c1);
    ok &= report("C2", "difference-operator algebra", None, c2);
    ok &= report("C3", "metric oracle equivalence", Some(Duration::from_secs(60)), c3);
    let mut corpus = Err("corpus not built".to_string());
    ok &= report("C4", "synthetic separation", None, || {
        corpus = build_corpus(&work.path().join("corpus"));
        c4(&corpus)
    });
    ok &= report("C5", "order ablation", None, || c5(&corpus));
    ok &= report("C6", "robustness sweep", None, || c6(&corpus, work.path()));
    ok &= report("C7", "determinism across worker counts", None, || c7(&corpus, work.path()));
    ok &= report("C8", "dynamics integrator", None, c8);
    ok &= report("C9", "external model path", None, || c9(work.path()));
    if !ok {
        std::process::exit(1);
    }
}
