//! Release gate: each test checks one numbered criterion and prints a
//! single `criterion N (...): PASS|FAIL` line. Criteria 8 through 11
//! share one trained synthetic benchmark, built once on first use.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see every
//! verdict line; under the default harness they surface on failure.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use sss_core::backbone::{
    loss_and_grad, BackboneConfig, LocalModel, PatchMlpBackbone, SeriesGroup,
};
use sss_core::calibrate::{
    expected_calibration_error, pava_fit, CalibrationSet, Calibrator, VennAbersModel,
};
use sss_core::ingest::synth::{synthesize, BurstInterval, SynthConfig};
use sss_core::ingest::{balance_classes, preprocess, split_dataset, PreprocessConfig};
use sss_core::metrics::{auc, f1_score, ConfusionCounts};
use sss_core::pipeline::{
    evaluate, heatmap, meta_path, predict_series, save_checkpoint, train, write_history_csv,
    CheckpointMeta, TrainConfig, TrainOutcome,
};
use sss_core::sampling::{build_pool, EpochSampler, WindowSpec};
use sss_core::{aggregate, AggregationWeights, ProbVector, SeriesRecord, Split};

fn verdict(num: usize, name: &str, pass: bool) {
    println!(
        "criterion {num} ({name}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn flat_series(id: &str, len: usize, label: usize) -> SeriesRecord {
    SeriesRecord::new(id, Array2::zeros((len, 1)), label).unwrap()
}

// ---------------------------------------------------------------------
// 1. sampling law

#[test]
fn criterion_01_sampling_law() {
    let start = Instant::now();
    // two series sized so the pool splits 7 / 24 under L=10, S=5
    let records = [flat_series("short", 40, 0), flat_series("long", 125, 1)];
    let spec = WindowSpec::new(10, 5).unwrap();
    let pool = build_pool(&records, spec).unwrap();
    assert_eq!(pool.len(), 31);

    // Within one epoch draws are without replacement, so only the first
    // draw of a fresh epoch is a clean uniform sample of the pool. 2000
    // fresh epochs give 2000 such draws; grouped per 1000 they realize
    // the binomial count the sampling law promises.
    let epochs = 2000usize;
    let mut short_hits = 0usize;
    for trial in 0..epochs {
        let mut sampler =
            EpochSampler::new(&pool, 1, sss_core::seed::derive(90, "first-draw", trial as u64))
                .unwrap();
        let batch = sampler.next_batch(&pool).unwrap();
        if batch[0].series_id == "short" {
            short_hits += 1;
        }
    }

    let p = 7.0 / 31.0;
    let expected_per_1000 = 1000.0 * p;
    let mean_per_1000 = short_hits as f64 / (epochs as f64 / 1000.0);
    // mean of (epochs/1000) binomial counts, each with variance 1000 p (1-p)
    let se = (1000.0 * p * (1.0 - p) / (epochs as f64 / 1000.0)).sqrt();
    let mean_ok = (mean_per_1000 - expected_per_1000).abs() <= 3.0 * se;

    let expected = [epochs as f64 * p, epochs as f64 * (1.0 - p)];
    let observed = [short_hits as f64, (epochs - short_hits) as f64];
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let p_value = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    let fit_ok = p_value > 0.001;

    let in_time = start.elapsed() < Duration::from_secs(60);
    let pass = mean_ok && fit_ok && in_time;
    verdict(1, "sampling law", pass);
    assert!(
        pass,
        "mean {mean_per_1000:.2} vs {expected_per_1000:.2} (3se {:.2}), chi2 {chi2:.3} p {p_value:.4}, elapsed {:?}",
        3.0 * se,
        start.elapsed()
    );
}

// ---------------------------------------------------------------------
// 2. exactly-once epoch coverage

#[test]
fn criterion_02_epoch_coverage() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..50 {
        let n_series = rng.random_range(1..=6);
        let records: Vec<SeriesRecord> = (0..n_series)
            .map(|i| flat_series(&format!("s{i}"), rng.random_range(3..=200), i % 2))
            .collect();
        let window_len = rng.random_range(2..=40);
        let stride = rng.random_range(1..=window_len);
        let spec = WindowSpec::new(window_len, stride).unwrap();
        let pool = build_pool(&records, spec).unwrap();
        let batch_size = rng.random_range(1..=pool.len());

        let mut sampler = EpochSampler::new(&pool, batch_size, 1000 + case).unwrap();
        let mut seen: Vec<(String, usize)> = Vec::with_capacity(pool.len());
        while let Some(batch) = sampler.next_batch(&pool) {
            assert!(batch.len() <= batch_size);
            seen.extend(batch.iter().map(|w| (w.series_id.clone(), w.offset)));
        }
        seen.sort();
        let mut want: Vec<(String, usize)> = pool
            .refs
            .iter()
            .map(|w| (w.series_id.clone(), w.offset))
            .collect();
        want.sort();
        assert_eq!(seen, want, "case {case}: batches must tile the pool");
    }
    let pass = start.elapsed() < Duration::from_secs(10);
    verdict(2, "exactly-once epoch coverage", pass);
    assert!(pass, "elapsed {:?}", start.elapsed());
}

// ---------------------------------------------------------------------
// 3. aggregation stays on the simplex

#[test]
fn criterion_03_aggregation_convexity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let random_simplex = |k: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect()
    };
    for _ in 0..100_000 {
        let k = rng.random_range(2..=6);
        let count = rng.random_range(1..=10);
        let preds: Vec<ProbVector> = (0..count)
            .map(|_| ProbVector::new(random_simplex(k, &mut rng)).unwrap())
            .collect();
        let weights = AggregationWeights::new(random_simplex(count, &mut rng)).unwrap();
        let out = aggregate(&preds, &weights).unwrap();
        let sum: f64 = out.probs().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
        assert!(out.probs().iter().all(|p| (-1e-9..=1.0 + 1e-9).contains(p)));
    }
    let pass = start.elapsed() < Duration::from_secs(10);
    verdict(3, "aggregation convexity", pass);
    assert!(pass, "elapsed {:?}", start.elapsed());
}

// ---------------------------------------------------------------------
// 4. PAVA against a brute-force oracle

/// Pools exact score ties of unit-weight points (input sorted) into
/// (score, mean, weight) blocks.
fn pool_ties(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64, f64)> {
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        match out.last_mut() {
            Some((ps, sum, w)) if *ps == s => {
                *sum += l as f64;
                *w += 1.0;
            }
            _ => out.push((s, l as f64, 1.0)),
        }
    }
    for (_, sum, w) in &mut out {
        *sum /= *w;
    }
    out
}

/// Minimum-SSE monotone fit by trying every contiguous partition of the
/// pooled points. Independent of the production solver on purpose.
fn oracle_fit(pooled: &[(f64, f64, f64)]) -> Vec<f64> {
    let m = pooled.len();
    let mut pw = vec![0.0; m + 1];
    let mut pwy = vec![0.0; m + 1];
    for (i, &(_, y, w)) in pooled.iter().enumerate() {
        pw[i + 1] = pw[i] + w;
        pwy[i + 1] = pwy[i] + w * y;
    }
    // SSE = sum w y^2 - sum_blocks W M^2, so maximize the second term
    let mut best_gain = f64::NEG_INFINITY;
    let mut best = Vec::new();
    for mask in 0u32..(1 << (m - 1)) {
        let mut gain = 0.0;
        let mut fitted = Vec::with_capacity(m);
        let mut prev_mean = f64::NEG_INFINITY;
        let mut block_start = 0usize;
        let mut monotone = true;
        for i in 0..m {
            let boundary = i + 1 == m || mask & (1 << i) != 0;
            if !boundary {
                continue;
            }
            let w = pw[i + 1] - pw[block_start];
            let mean = (pwy[i + 1] - pwy[block_start]) / w;
            if mean < prev_mean - 1e-12 {
                monotone = false;
                break;
            }
            gain += w * mean * mean;
            fitted.extend(std::iter::repeat(mean).take(i + 1 - block_start));
            prev_mean = mean;
            block_start = i + 1;
        }
        if monotone && gain > best_gain {
            best_gain = gain;
            best = fitted;
        }
    }
    best
}

#[test]
fn criterion_04_pava_oracle() {
    let start = Instant::now();
    let mut cases = 0u64;
    for n in 1..=8usize {
        // scores live on a 0.1 grid; the fit only depends on the sorted
        // multiset, so nondecreasing tuples cover every input
        let mut idx = vec![0usize; n];
        loop {
            let scores: Vec<f64> = idx.iter().map(|&i| i as f64 / 10.0).collect();
            for mask in 0u32..(1 << n) {
                let labels: Vec<u8> = (0..n).map(|b| (mask >> b & 1) as u8).collect();
                let pooled = pool_ties(&scores, &labels);
                let expected = oracle_fit(&pooled);
                let model =
                    pava_fit(&CalibrationSet::new(scores.clone(), labels).unwrap()).unwrap();
                for (block, &(s, _, _)) in pooled.iter().enumerate() {
                    let got = model.predict(s);
                    assert!(
                        (got - expected[block]).abs() <= 1e-9,
                        "scores {scores:?} mask {mask:b}: predict({s}) = {got}, oracle {}",
                        expected[block]
                    );
                }
                cases += 1;
            }
            // next nondecreasing tuple
            let Some(pos) = (0..n).rev().find(|&j| idx[j] < 10) else {
                break;
            };
            let v = idx[pos] + 1;
            idx[pos..].fill(v);
        }
    }
    let pass = start.elapsed() < Duration::from_secs(120);
    verdict(4, "pava oracle equivalence", pass);
    assert!(pass, "{cases} cases took {:?}", start.elapsed());
}

// ---------------------------------------------------------------------
// 5. Venn-Abers

#[test]
fn criterion_05_venn_abers() {
    let cal = CalibrationSet::new(vec![0.2, 0.8], vec![0, 1]).unwrap();
    let model = VennAbersModel::new(cal);
    let (p0, p1, y) = model.predict(0.5).unwrap();
    let worked = p0 == 0.0 && p1 == 1.0 && y == 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut ordered = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let model = VennAbersModel::new(CalibrationSet::new(scores, labels).unwrap());
        let (p0, p1, y) = model.predict(rng.random()).unwrap();
        ordered &= p0 <= p1 + 1e-12 && (0.0..=1.0).contains(&y);
    }
    let pass = worked && ordered;
    verdict(5, "venn-abers", pass);
    assert!(pass, "worked example ({p0}, {p1}, {y}), ordering ok: {ordered}");
}

// ---------------------------------------------------------------------
// 6. gradient check

#[test]
fn criterion_06_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let window_len = rng.random_range(6..=12);
        let patch_len = rng.random_range(2..=4.min(window_len));
        let config = BackboneConfig {
            window_len,
            channels: rng.random_range(1..=2),
            patch_len,
            patch_stride: rng.random_range(1..=patch_len),
            embed_dim: rng.random_range(3..=5),
            hidden_dim: rng.random_range(3..=5),
            num_classes: rng.random_range(2..=3),
        };
        let model = PatchMlpBackbone::new(config, 7000 + case).unwrap();
        let groups: Vec<SeriesGroup> = (0..rng.random_range(1..=3))
            .map(|_| SeriesGroup {
                label: rng.random_range(0..config.num_classes),
                windows: (0..rng.random_range(1..=3))
                    .map(|_| {
                        Array2::from_shape_fn((window_len, config.channels), |_| {
                            rng.random::<f64>() * 2.0 - 1.0
                        })
                    })
                    .collect(),
            })
            .collect();

        let (_, analytic) = loss_and_grad(&model, &groups).unwrap();
        let mut numeric = vec![0.0; analytic.len()];
        let mut probe = model.clone();
        for i in 0..numeric.len() {
            let theta = model.params()[i];
            let h = 1e-5 * (1.0 + theta.abs());
            probe.params_mut()[i] = theta + h;
            let (up, _) = loss_and_grad(&probe, &groups).unwrap();
            probe.params_mut()[i] = theta - h;
            let (down, _) = loss_and_grad(&probe, &groups).unwrap();
            probe.params_mut()[i] = theta;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let err: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|g| g * g).sum::<f64>().sqrt())
            .max(1e-12);
        worst = worst.max(err / scale);
    }
    let pass = worst < 1e-4 && start.elapsed() < Duration::from_secs(60);
    verdict(6, "gradient check", pass);
    assert!(pass, "worst relative error {worst:.3e}, elapsed {:?}", start.elapsed());
}

// ---------------------------------------------------------------------
// 7. metrics oracles

/// ROC area by explicit threshold sweep and trapezoidal integration.
fn trapezoid_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (mut dtp, mut dfp) = (0.0, 0.0);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                dtp += 1.0;
            } else {
                dfp += 1.0;
            }
            i += 1;
        }
        area += (dfp / neg) * (tp + dtp / 2.0) / pos;
        tp += dtp;
        fp += dfp;
    }
    let _ = fp;
    area
}

#[test]
fn criterion_07_metrics_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for case in 0..100 {
        let n = rng.random_range(2..=60);
        let (scores, labels) = loop {
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(0..=8) as f64 / 8.0 // force ties
                    } else {
                        rng.random()
                    }
                })
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
                break (scores, labels);
            }
        };
        let got = auc(&scores, &labels).unwrap();
        let want = trapezoid_auc(&scores, &labels);
        assert!(
            (got - want).abs() <= 1e-9,
            "case {case}: pairwise {got} vs trapezoid {want}"
        );
    }

    let counts = ConfusionCounts {
        tp: 8,
        fp: 2,
        tn: 0,
        fn_: 4,
    };
    let f1 = f1_score(&counts).unwrap();
    let pass = (f1 - 8.0 / 11.0).abs() <= 1e-12;
    verdict(7, "metrics oracles", pass);
    assert!(pass, "f1 {f1} vs 8/11");
}

// ---------------------------------------------------------------------
// 8-11. shared synthetic benchmark

struct SeedRun {
    cfg: TrainConfig,
    outcome: TrainOutcome<PatchMlpBackbone>,
    f1: f64,
    auc: f64,
}

struct Benchmark {
    records: Vec<SeriesRecord>,
    bursts: Vec<BurstInterval>,
    runs: Vec<SeedRun>,
    elapsed: Duration,
}

/// Default corpus and preprocessing, classes balanced and splits
/// stratified under the data seed.
fn prepared_corpus(burst_amplitude: f64) -> (Vec<SeriesRecord>, Vec<BurstInterval>) {
    let synth_cfg = SynthConfig {
        burst_amplitude,
        ..SynthConfig::default()
    };
    let (records, bursts) = synthesize(&synth_cfg).unwrap();
    // no pooling: keep heatmap coordinates aligned with burst annotations
    let pre = PreprocessConfig {
        downsample_kernel: 1,
        downsample_stride: 1,
        ..PreprocessConfig::default()
    };
    let records = preprocess(records, &pre).unwrap();
    let records = balance_classes(records, synth_cfg.seed).unwrap();
    let records = split_dataset(records, pre.split_fractions, synth_cfg.seed).unwrap();
    (records, bursts)
}

fn of_split(records: &[SeriesRecord], split: Split) -> Vec<SeriesRecord> {
    records
        .iter()
        .filter(|r| r.split == Some(split))
        .cloned()
        .collect()
}

fn train_with_sampler_seed(records: &[SeriesRecord], seed_sampler: u64) -> SeedRun {
    let cfg = TrainConfig {
        seed_sampler,
        ..TrainConfig::default()
    };
    let model = PatchMlpBackbone::new(BackboneConfig::default(), cfg.seed_init).unwrap();
    let outcome = train(
        model,
        &of_split(records, Split::Train),
        &of_split(records, Split::Val),
        &cfg,
    )
    .unwrap();
    assert!(!outcome.diverged, "benchmark training diverged");
    let report = evaluate(
        &outcome.model,
        &outcome.calibrator,
        &of_split(records, Split::Test),
        cfg.inference_spec(),
    )
    .unwrap();
    SeedRun {
        cfg,
        outcome,
        f1: report.f1.expect("test split has both classes"),
        auc: report.auc.expect("test split has both classes"),
    }
}

fn benchmark() -> &'static Benchmark {
    static BENCH: OnceLock<Benchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
        let start = Instant::now();
        let (records, bursts) = prepared_corpus(SynthConfig::default().burst_amplitude);
        let runs: Vec<SeedRun> = [2, 3, 4]
            .iter()
            .map(|&s| train_with_sampler_seed(&records, s))
            .collect();
        Benchmark {
            records,
            bursts,
            runs,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_08_end_to_end_benchmark() {
    let start = Instant::now();
    let bench = benchmark();
    let mean_auc = bench.runs.iter().map(|r| r.auc).sum::<f64>() / bench.runs.len() as f64;
    let mean_f1 = bench.runs.iter().map(|r| r.f1).sum::<f64>() / bench.runs.len() as f64;

    let (null_records, _) = prepared_corpus(0.0);
    let null_run = train_with_sampler_seed(&null_records, 2);

    let elapsed = bench.elapsed + start.elapsed();
    let pass = mean_auc >= 0.90
        && mean_f1 >= 0.80
        && (0.35..=0.65).contains(&null_run.auc)
        && elapsed < Duration::from_secs(45 * 60);
    verdict(8, "end-to-end benchmark", pass);
    assert!(
        pass,
        "mean auc {mean_auc:.4}, mean f1 {mean_f1:.4}, null auc {:.4}, elapsed {elapsed:?}",
        null_run.auc
    );
}

fn overlaps(start: usize, end: usize, intervals: &[(usize, usize)]) -> bool {
    intervals.iter().any(|&(s, e)| start < e && end > s)
}

#[test]
fn criterion_09_localization() {
    let bench = benchmark();
    let run = &bench.runs[0];
    let spec = run.cfg.inference_spec();

    let mut gaps = Vec::new();
    let mut hits = 0usize;
    let mut total = 0usize;
    for record in bench.records.iter().filter(|r| {
        r.split == Some(Split::Test) && r.label == 1
    }) {
        let intervals: Vec<(usize, usize)> = bench
            .bursts
            .iter()
            .filter(|b| b.id == record.id)
            .map(|b| (b.start, b.end))
            .collect();
        assert!(!intervals.is_empty(), "positive series {} has no bursts", record.id);

        let pred =
            predict_series(&run.outcome.model, &run.outcome.calibrator, record, spec).unwrap();
        let map = heatmap(&pred, spec.stride).unwrap();
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for (b, &p) in map.bins.iter().enumerate() {
            let bin_start = b * map.bin_width;
            let bin_end = (bin_start + map.bin_width).min(map.series_len);
            if overlaps(bin_start, bin_end, &intervals) {
                inside.push(p);
            } else {
                outside.push(p);
            }
        }
        if !inside.is_empty() && !outside.is_empty() {
            gaps.push(
                inside.iter().sum::<f64>() / inside.len() as f64
                    - outside.iter().sum::<f64>() / outside.len() as f64,
            );
        }

        let best = pred
            .windows
            .iter()
            .max_by(|a, b| a.calibrated.probs()[1].total_cmp(&b.calibrated.probs()[1]))
            .unwrap();
        total += 1;
        if overlaps(best.offset, best.offset + pred.window_len, &intervals) {
            hits += 1;
        }
    }

    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let hit_rate = hits as f64 / total as f64;
    let pass = mean_gap >= 0.1 && hit_rate >= 0.8;
    verdict(9, "localization", pass);
    assert!(
        pass,
        "mean in/out gap {mean_gap:.4} over {} series, max-window hit rate {hit_rate:.2}",
        gaps.len()
    );
}

#[test]
fn criterion_10_calibration_effect() {
    let bench = benchmark();
    let test = of_split(&bench.records, Split::Test);

    // Isotonic calibration acts on window scores, so that is where its
    // effect is measured. ECE of the mean-aggregated series outputs is
    // a property of the aggregation, not the calibrator, and is only
    // recorded below.
    let mut pass = true;
    for run in &bench.runs {
        let spec = run.cfg.inference_spec();
        let (mut cal_scores, mut raw_scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for record in &test {
            let pred =
                predict_series(&run.outcome.model, &run.outcome.calibrator, record, spec).unwrap();
            for w in &pred.windows {
                cal_scores.push(w.calibrated.probs()[1]);
                raw_scores.push(w.raw.probs()[1]);
                labels.push(record.label as u8);
            }
        }
        let ece_cal = expected_calibration_error(&cal_scores, &labels, 10).unwrap();
        let ece_raw = expected_calibration_error(&raw_scores, &labels, 10).unwrap();
        println!(
            "criterion 10 note: sampler seed {} test window ece {ece_cal:.4} calibrated vs {ece_raw:.4} raw",
            run.cfg.seed_sampler
        );
        pass &= ece_cal <= ece_raw;
    }

    // threshold metrics under both pipelines: recorded, not asserted
    let run = &bench.runs[0];
    let raw_report = evaluate(
        &run.outcome.model,
        &Calibrator::None,
        &test,
        run.cfg.inference_spec(),
    )
    .unwrap();
    println!(
        "criterion 10 note: calibrated f1 {:.4} auc {:.4} vs raw f1 {:.4} auc {:.4}",
        run.f1,
        run.auc,
        raw_report.f1.unwrap(),
        raw_report.auc.unwrap()
    );

    verdict(10, "calibration effect", pass);
    assert!(pass, "calibrated window ECE exceeded raw for some seed");
}

#[test]
fn criterion_11_determinism() {
    let bench = benchmark();
    let first = &bench.runs[0];
    let again = train_with_sampler_seed(&bench.records, first.cfg.seed_sampler);

    let dir = tempfile::tempdir().unwrap();
    let mut artifacts = Vec::new();
    for (tag, run) in [("a", first), ("b", &again)] {
        let history = dir.path().join(format!("history-{tag}.csv"));
        write_history_csv(&run.outcome.history, &history).unwrap();
        let ckpt = dir.path().join(format!("model-{tag}.ckpt"));
        let meta = CheckpointMeta {
            backbone: run.outcome.model.config,
            train: run.cfg,
            calibrator: run.outcome.calibrator.clone(),
            best_epoch: run.outcome.best_epoch,
            best_val_f1: run.outcome.history[run.outcome.best_epoch].val_f1,
        };
        save_checkpoint(&run.outcome.model, &meta, &ckpt).unwrap();
        artifacts.push((
            std::fs::read(&history).unwrap(),
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(meta_path(&ckpt)).unwrap(),
        ));
    }
    let pass = artifacts[0] == artifacts[1];
    verdict(11, "determinism", pass);
    assert!(pass, "rerun artifacts differ");
}
