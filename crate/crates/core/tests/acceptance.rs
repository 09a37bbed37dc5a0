//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line regardless of output capture.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cfair::conformal::{fixed_label_scores, ConformalCalibrator, CoverageInterval, Thresholds};
use cfair::data::{DegeneratePolicy, FairnessSpec, LabelSet, Metric, Mode, RatioForm, SliceCondition, Split};
use cfair::gcp::{evaluate_batchgcp, fit, fit_batchgcp, GcpProblem};
use cfair::metrics::{evaluate_sets, predictive_parity_feasibility, Estimate, ThresholdSets};
use cfair::scores::{compute_scores, score_tps, ScoreKind, ScoreParams, ScoreTable};
use cfair::search::{find_classwise_lambdas, find_lambda_opt, satisfy_lambda, Engine, SearchMode};
use cfair::synth::{generate, oracle_scan, AttributeSpec, GroupSpec, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn two_groups(bias: f64) -> Vec<AttributeSpec> {
    vec![AttributeSpec {
        name: "group".into(),
        values: vec![
            GroupSpec { name: "g0".into(), weight: 1.0, bias: 0.0, label_prior: None },
            GroupSpec { name: "g1".into(), weight: 1.0, bias, label_prior: None },
        ],
    }]
}

fn biased(n: usize, signal: f64, seed: u64) -> SynthConfig {
    SynthConfig { n, num_classes: 4, signal, attributes: two_groups(-1.5), seed, ..SynthConfig::default() }
}

/// True-label TPS score of one draw from a fixed 4-class softmax model.
fn draw_score(rng: &mut ChaCha8Rng) -> f64 {
    let y = rng.random_range(0..4usize);
    let mut z = [0.0f64; 4];
    for v in z.iter_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    z[y] += 1.5;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    1.0 - (z[y] - max).exp() / sum
}

fn binomial_se(p: f64, n: f64) -> f64 {
    (p * (1.0 - p) / n).sqrt()
}

// 1. Marginal coverage at q̂ over fresh calibration sets.
fn marginal_coverage() -> Outcome {
    let start = Instant::now();
    let (n, trials, alpha) = (1000usize, 10_000usize, 0.1);
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000_003 * t as u64 + 17);
            let calib: Vec<f64> = (0..n).map(|_| draw_score(&mut rng)).collect();
            let q = ConformalCalibrator::new(calib, alpha).unwrap().conformal_quantile().unwrap();
            usize::from(draw_score(&mut rng) <= q)
        })
        .sum();
    let cov = hits as f64 / trials as f64;
    let se = binomial_se(1.0 - alpha, trials as f64);
    let (lo, hi) = (1.0 - alpha - 3.0 * se, 1.0 - alpha + 1.0 / (n + 1) as f64 + 3.0 * se);
    let secs = start.elapsed().as_secs_f64();
    check(
        cov >= lo && cov <= hi && secs < 10.0,
        format!("coverage {cov:.4} in [{lo:.4}, {hi:.4}], {secs:.2}s"),
    )
}

// 2. Inverse-quantile bounds bracket the true probability, aggregated over
//    fresh calibration sets per instance.
fn inverse_quantile_sandwich() -> Outcome {
    let start = Instant::now();
    let trials = 10_000usize;
    let results: Vec<(bool, f64, f64, f64)> = (0..1000u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xABCD_0000 + inst);
            let n = rng.random_range(10..60usize);
            // scores ~ U(0,1)^power: a different distribution per instance
            let power = rng.random_range(0.3..3.0f64);
            let level = rng.random_range(0.05..0.95f64);
            let lambda = level.powf(power);
            let mut sum_lo = 0.0;
            let mut sum_hi = 0.0;
            let mut hits = 0usize;
            let mut calib = vec![0.0; n];
            for _ in 0..trials {
                for c in calib.iter_mut() {
                    *c = rng.random::<f64>().powf(power);
                }
                let count = calib.iter().filter(|&&s| s <= lambda).count();
                let iv = CoverageInterval::from_count(count, n);
                sum_lo += iv.lower;
                sum_hi += iv.upper;
                hits += usize::from(rng.random::<f64>().powf(power) <= lambda);
            }
            let p = hits as f64 / trials as f64;
            let se = binomial_se(p.clamp(1e-3, 1.0 - 1e-3), trials as f64);
            let (lo, hi) = (sum_lo / trials as f64, sum_hi / trials as f64);
            (p >= lo - 3.0 * se && p <= hi + 3.0 * se, p, lo, hi)
        })
        .collect();
    let bad = results.iter().filter(|r| !r.0).count();
    let secs = start.elapsed().as_secs_f64();
    // at 3 SE, about 0.3% of 1000 instances are expected outside by chance
    check(bad <= 10 && secs < 30.0, format!("{bad}/1000 instances outside ±3 SE, {secs:.2}s"))
}

// 3. Slice-calibrated quantiles give conditional coverage per (g, ỹ).
fn conditional_coverage() -> Outcome {
    let alpha = 0.1;
    let mut worst = String::new();
    let mut ok = true;
    for condition in [SliceCondition::InGroupWithLabel, SliceCondition::InGroup] {
        // per (g, ỹ): hits, test count, min m
        let mut agg = [(0usize, 0usize, usize::MAX); 8];
        for trial in 0..40u64 {
            let cfg = SynthConfig { splits: [0.0, 0.0, 0.5, 0.5], ..biased(8000, 1.5, 500 + trial) };
            let ds = generate(&cfg).unwrap();
            let t = score_tps(ds.probs());
            let calib = ds.split_indices(Split::Calib);
            let test = ds.split_indices(Split::Test);
            for g in 0..2 {
                for y in 0..4 {
                    let keep = |i: usize| {
                        ds.groups().group_of(i) == g
                            && (condition == SliceCondition::InGroup || ds.label(i) == Some(y))
                    };
                    let members: Vec<usize> = calib.iter().copied().filter(|&i| keep(i)).collect();
                    let m = members.len();
                    let q = ConformalCalibrator::new(fixed_label_scores(&t, &members, y).unwrap(), alpha)
                        .unwrap()
                        .conformal_quantile()
                        .unwrap();
                    let cell = &mut agg[g * 4 + y];
                    for &i in test.iter().filter(|&&i| keep(i)) {
                        cell.0 += usize::from(t.get(i, y) <= q);
                        cell.1 += 1;
                    }
                    cell.2 = cell.2.min(m);
                }
            }
        }
        for (idx, &(hits, n, m)) in agg.iter().enumerate() {
            let p = hits as f64 / n as f64;
            let se = binomial_se(1.0 - alpha, n as f64);
            let lo = 1.0 - alpha - 3.0 * se;
            let hi = 1.0 - alpha + 1.0 / (m + 1) as f64 + 3.0 * se;
            if m < 200 || p < lo || p > hi {
                ok = false;
                worst = format!("{condition} slice {idx}: coverage {p:.4}, m_min {m}, band [{lo:.4}, {hi:.4}]");
            }
        }
    }
    check(ok, if ok { "all 16 slices within band, m >= 200".into() } else { worst })
}

fn test_slice_se(report: &cfair::metrics::DisparityReport) -> f64 {
    report
        .slices
        .iter()
        .map(|s| {
            let p = s.covered as f64 / s.size as f64;
            binomial_se(p, s.size as f64)
        })
        .fold(0.0, f64::max)
}

// 4. Calibration disparity ≤ c exactly; test disparity ≤ c + 3 SE in ≥ 95% of runs.
fn disparity_control() -> Outcome {
    let cs = [0.05, 0.1, 0.15, 0.2];
    let metrics = [Metric::DemographicParity, Metric::EqualOpportunity];
    let runs: Vec<Vec<(bool, bool)>> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let ds = generate(&biased(4000, 1.5, 10_000 + seed)).unwrap();
            let t = score_tps(ds.probs());
            let test = ds.split_indices(Split::Test);
            let mut out = Vec::new();
            for metric in metrics {
                for c in cs {
                    let spec = FairnessSpec::new(metric, c, 0.1, LabelSet::all(4).unwrap()).unwrap();
                    let r = find_lambda_opt(&t, &ds, &spec, None, SearchMode::FirstSatisfying).unwrap();
                    // infeasible: no calibration claim, counted as a test-split miss
                    let Some(th) = r.lambda_opt else {
                        out.push((true, false));
                        continue;
                    };
                    let calib_ok = r.report.satisfied && r.report.worst_disparity <= c;
                    let rep = evaluate_sets(&ds, &spec, &test, &ThresholdSets { table: &t, thresholds: &th }, Estimate::Empirical)
                        .unwrap();
                    out.push((calib_ok, rep.worst_disparity <= c + 3.0 * test_slice_se(&rep)));
                }
            }
            out
        })
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (j, (metric, c)) in metrics.iter().flat_map(|m| cs.iter().map(move |c| (m, c))).enumerate() {
        let calib_all = runs.iter().all(|r| r[j].0);
        let test_pass = runs.iter().filter(|r| r[j].1).count();
        ok &= calib_all && test_pass >= 95;
        parts.push(format!("{}@{c}: calib {} test {test_pass}/100", short(*metric), if calib_all { "ok" } else { "FAIL" }));
    }
    check(ok, parts.join("; "))
}

fn short(m: Metric) -> &'static str {
    match m {
        Metric::DemographicParity => "DP",
        Metric::EqualOpportunity => "EO",
        Metric::PredictiveEquality => "PE",
        Metric::EqualizedOdds => "EOdds",
        Metric::DisparateImpact => "DI",
        Metric::PredictiveParity => "PP",
        Metric::PredictiveParityProxy => "PPP",
    }
}

// 5. Four-fifths rule in ratio mode, under both ratio forms.
fn four_fifths() -> Outcome {
    let mut ok = true;
    let mut printed_sat = 0;
    let mut cov_sat = 0;
    let mut msgs = Vec::new();
    let seeds = 20u64;
    let mut base_printed_max: f64 = 0.0;
    let mut gains = Vec::new();
    for seed in 0..seeds {
        let ds = generate(&biased(4000, 2.5, 20_000 + seed)).unwrap();
        let t = score_tps(ds.probs());
        for form in [RatioForm::Miscoverage, RatioForm::Coverage] {
            let spec = FairnessSpec::new(Metric::DisparateImpact, 0.8, 0.1, LabelSet::all(4).unwrap())
                .unwrap()
                .with_ratio_form(form);
            assert_eq!(spec.mode, Mode::Ratio);
            let r = find_lambda_opt(&t, &ds, &spec, None, SearchMode::FirstSatisfying).unwrap();
            let base = Engine::new(&t, &ds, &spec).unwrap().evaluate_lambda(r.q_hat);
            if r.satisfied() {
                // "exit 0": every label's calibration ratio is at least 0.8
                let all = r.report.labels.iter().all(|l| l.value >= 0.8);
                if !all {
                    ok = false;
                    msgs.push(format!("seed {seed} {form:?}: satisfied with a label below 0.8"));
                }
            }
            match form {
                RatioForm::Miscoverage => {
                    printed_sat += usize::from(r.satisfied());
                    base_printed_max = base_printed_max.max(base.worst_disparity);
                    if base.worst_disparity >= 0.8 {
                        ok = false;
                        msgs.push(format!("seed {seed}: printed-form baseline ratio {:.3} not below 0.8", base.worst_disparity));
                    }
                }
                RatioForm::Coverage => {
                    cov_sat += usize::from(r.satisfied());
                    if !(base.worst_disparity < 0.8) || base.worst_disparity > r.report.worst_disparity {
                        ok = false;
                        msgs.push(format!(
                            "seed {seed}: coverage-form baseline {:.3} vs result {:.3}",
                            base.worst_disparity, r.report.worst_disparity
                        ));
                    }
                    if r.satisfied() {
                        gains.push((base.worst_disparity, r.report.worst_disparity));
                    }
                }
            }
        }
    }
    ok &= cov_sat > 0;
    let mean = |f: fn(&(f64, f64)) -> f64| gains.iter().map(f).sum::<f64>() / gains.len().max(1) as f64;
    msgs.insert(
        0,
        format!(
            "coverage form: {cov_sat}/{seeds} reach 0.8, baseline {:.3} -> {:.3}; printed form: {printed_sat}/{seeds} satisfiable, baseline max {base_printed_max:.3}",
            mean(|g| g.0),
            mean(|g| g.1)
        ),
    );
    check(ok, msgs.join("; "))
}

// 6. Classwise thresholds never exceed the global one.
fn classwise_dominance() -> Outcome {
    let mut compared = 0;
    let mut bad = Vec::new();
    for seed in 0..15u64 {
        let ds = generate(&biased(3000, 1.5, 30_000 + seed)).unwrap();
        let params = ScoreParams { seed, ..ScoreParams::new(if seed % 2 == 0 { ScoreKind::Tps } else { ScoreKind::Aps }) };
        let t = compute_scores(&ds, &params).unwrap();
        let test = ds.split_indices(Split::Test);
        for metric in [Metric::DemographicParity, Metric::EqualOpportunity, Metric::PredictiveEquality] {
            for c in [0.05, 0.1, 0.2] {
                let spec = FairnessSpec::new(metric, c, 0.1, LabelSet::all(4).unwrap()).unwrap();
                let g = find_lambda_opt(&t, &ds, &spec, None, SearchMode::FirstSatisfying).unwrap();
                let cw = find_classwise_lambdas(&t, &ds, &spec.clone().classwise(true), None, SearchMode::FirstSatisfying)
                    .unwrap();
                let (Some(Thresholds::Global(l)), Some(Thresholds::Classwise(ls))) = (&g.lambda_opt, &cw.lambda_opt) else {
                    continue;
                };
                compared += 1;
                let eff = |th: &Thresholds| {
                    cfair::metrics::efficiency(&ds, &test, &ThresholdSets { table: &t, thresholds: th })
                };
                let (eg, ec) = (eff(g.lambda_opt.as_ref().unwrap()), eff(cw.lambda_opt.as_ref().unwrap()));
                if ls.iter().any(|li| li > l) || ec > eg {
                    bad.push(format!("seed {seed} {} c={c}", short(metric)));
                }
            }
        }
    }
    check(
        bad.is_empty() && compared > 0,
        format!("{compared} instance pairs compared, {} violations {}", bad.len(), bad.join(",")),
    )
}

fn random_instance(i: u64) -> (cfair::data::Dataset, ScoreTable, FairnessSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + i);
    let k = rng.random_range(2..=5usize);
    let n_groups = rng.random_range(2..=3usize);
    let values = (0..n_groups)
        .map(|g| GroupSpec {
            name: format!("v{g}"),
            weight: rng.random_range(0.5..2.0),
            bias: rng.random_range(-2.0..1.0),
            label_prior: None,
        })
        .collect();
    let cfg = SynthConfig {
        n: rng.random_range(100..=2000usize),
        num_classes: k,
        attributes: vec![AttributeSpec { name: "a".into(), values }],
        signal: rng.random_range(0.5..3.0),
        noise: rng.random_range(0.5..1.5),
        seed: i,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let kind = [ScoreKind::Tps, ScoreKind::Aps, ScoreKind::Raps][rng.random_range(0..3usize)];
    let t = compute_scores(&ds, &ScoreParams { seed: i, ..ScoreParams::new(kind) }).unwrap();
    let metric = Metric::ALL[rng.random_range(0..Metric::ALL.len())];
    let c = if metric.mode() == Mode::Ratio { rng.random_range(0.5..0.99) } else { rng.random_range(0.02..0.5) };
    let alpha = [0.05, 0.1, 0.2][rng.random_range(0..3usize)];
    let mut positive: Vec<usize> = (0..k).filter(|_| rng.random::<f64>() < 0.6).collect();
    if positive.is_empty() {
        positive.push(rng.random_range(0..k));
    }
    let mut spec = FairnessSpec::new(metric, c, alpha, LabelSet::new(k, positive).unwrap())
        .unwrap()
        .with_degenerate(DegeneratePolicy::SkipWithWarning);
    if rng.random::<f64>() < 0.3 {
        spec = spec.with_ratio_form(RatioForm::Coverage);
    }
    (ds, t, spec)
}

// 7. Search engine agrees with the naive oracle on every candidate.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let failures: Vec<String> = (0..200u64)
        .into_par_iter()
        .filter_map(|i| {
            let (ds, t, spec) = random_instance(i);
            let oracle = oracle_scan(&t, &ds, &spec);
            let engine = find_lambda_opt(&t, &ds, &spec, None, SearchMode::Exhaustive);
            let (oracle, engine) = match (oracle, engine) {
                (Ok(o), Ok(e)) => (o, e),
                (Err(a), Err(b)) if a.to_string() == b.to_string() => return None,
                (a, b) => return Some(format!("instance {i}: oracle {:?} vs engine {:?}", a.err(), b.err())),
            };
            let fast = find_lambda_opt(&t, &ds, &spec, None, SearchMode::FirstSatisfying).unwrap();
            if oracle.q_hat != engine.q_hat
                || oracle.lambda_opt.map(Thresholds::Global) != engine.lambda_opt
                || fast.lambda_opt != engine.lambda_opt
                || oracle.verdicts.len() != engine.verdicts.len()
            {
                return Some(format!("instance {i}: lambda_opt or candidate set differs"));
            }
            let eng = Engine::new(&t, &ds, &spec).unwrap();
            for (o, e) in oracle.verdicts.iter().zip(&engine.verdicts) {
                let same_worst = o.worst_disparity.to_bits() == e.worst_disparity.to_bits();
                if o.lambda != e.lambda || o.satisfied != e.satisfied || !same_worst {
                    return Some(format!("instance {i}: verdict differs at {}", o.lambda));
                }
                let covs: Vec<f64> = eng.evaluate_lambda(o.lambda).slices.iter().map(|s| s.coverage.lower).collect();
                if covs != o.coverages {
                    return Some(format!("instance {i}: coverages differ at {}", o.lambda));
                }
            }
            None
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    check(
        failures.is_empty() && secs < 120.0,
        format!("200 instances, {} mismatches, {secs:.2}s {}", failures.len(), failures.first().cloned().unwrap_or_default()),
    )
}

// 8. Predictive-parity endpoints at the largest score.
fn predictive_parity_endpoints() -> Outcome {
    let mut msgs = Vec::new();
    let mut ok = true;
    for seed in 0..10u64 {
        let mut attrs = two_groups(-1.0);
        attrs[0].values[0].label_prior = Some(vec![0.4, 0.3, 0.2, 0.1]);
        attrs[0].values[1].label_prior = Some(vec![0.1, 0.2, 0.3, 0.4]);
        let cfg = SynthConfig { attributes: attrs, ..biased(3000, 1.5, 40_000 + seed) };
        let ds = generate(&cfg).unwrap();
        let t = score_tps(ds.probs());
        let top = t.max();
        let labels = LabelSet::all(4).unwrap();
        let proxy = satisfy_lambda(&t, &ds, &FairnessSpec::new(Metric::PredictiveParityProxy, 0.05, 0.1, labels.clone()).unwrap(), top)
            .unwrap();
        let pp_spec = FairnessSpec::new(Metric::PredictiveParity, 0.05, 0.1, labels).unwrap();
        let calib = ds.split_indices(Split::Calib);
        let pp = evaluate_sets(
            &ds,
            &pp_spec,
            &calib,
            &ThresholdSets { table: &t, thresholds: &Thresholds::Global(top) },
            Estimate::Empirical,
        )
        .unwrap();
        let bound = predictive_parity_feasibility(&ds, &pp_spec).unwrap();
        if proxy.worst_disparity != 0.0 || pp.worst_disparity > bound.max_tv + 1e-9 {
            ok = false;
        }
        if seed == 0 || !ok {
            msgs.push(format!(
                "seed {seed}: proxy {} PPV gap {:.4} <= max TV {:.4}",
                proxy.worst_disparity, pp.worst_disparity, bound.max_tv
            ));
        }
    }
    check(ok, msgs.join("; "))
}

// 9. Group-offset baseline: group coverage, single-group quantile, convexity.
fn gcp_fit() -> Outcome {
    let mut msgs = Vec::new();
    let mut ok = true;

    let mut attrs = two_groups(0.0);
    attrs[0].values[1].bias = -1.5;
    let cfg = SynthConfig { attributes: attrs, ..biased(8000, 2.0, 50_000) };
    let ds = generate(&cfg).unwrap();
    let t = score_tps(ds.probs());
    let model = fit_batchgcp(&t, &ds, 0.1, false).unwrap();
    let spec = FairnessSpec::new(Metric::DemographicParity, 0.1, 0.1, LabelSet::all(4).unwrap()).unwrap();
    let ev = evaluate_batchgcp(&model, &t, &ds, &spec, Split::Test).unwrap();
    for g in &ev.group_coverage {
        let se = binomial_se(0.9, g.size as f64);
        let good = (g.coverage - 0.9).abs() <= 3.0 * se;
        ok &= good;
        msgs.push(format!("{} coverage {:.4} (±{:.4})", g.group, g.coverage, 3.0 * se));
    }

    let mut single = two_groups(0.0);
    single[0].values.truncate(1);
    let ds1 = generate(&SynthConfig { attributes: single, ..biased(3000, 1.5, 50_001) }).unwrap();
    let t1 = score_tps(ds1.probs());
    let m1 = fit_batchgcp(&t1, &ds1, 0.1, false).unwrap();
    let mut s: Vec<f64> = ds1
        .split_indices(Split::Calib)
        .iter()
        .map(|&i| t1.get(i, ds1.label(i).unwrap()))
        .collect();
    s.sort_by(f64::total_cmp);
    let k = cfair::conformal::quantile_rank(s.len(), 0.1);
    let fitted = m1.base + m1.lambda[0];
    let (lo, hi) = (s[k.saturating_sub(2)], s[k.min(s.len() - 1)]);
    let single_ok = fitted >= lo && fitted <= hi;
    ok &= single_ok;
    msgs.push(format!("single group {fitted:.5} in [{lo:.5}, {hi:.5}]"));

    let (problem, _) = GcpProblem::from_dataset(&t, &ds, 0.1, true).unwrap();
    let (_, _, iters, capped) = fit(&problem);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut convex_bad = 0;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..problem.num_groups).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b: Vec<f64> = (0..problem.num_groups).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w = rng.random::<f64>();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| w * x + (1.0 - w) * y).collect();
        if problem.objective(&mid) > w * problem.objective(&a) + (1.0 - w) * problem.objective(&b) + 1e-9 {
            convex_bad += 1;
        }
    }
    ok &= convex_bad == 0;
    msgs.push(format!("convexity violations {convex_bad}/1000; fit {iters} iterations, capped {capped}"));
    check(ok, msgs.join("; "))
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("wall_time_ms");
            map.values_mut().for_each(strip_wall_time);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

fn run_cli(args: &[&str], dir: &Path) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_cfair")).args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

// 10. Rerunning every CLI command yields identical reports.
fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "metric = \"equal_opportunity\"\nc = 0.1\nalpha = 0.1\nscore = \"aps\"\nseed = 11\n\n[synth]\nn = 3000\nsignal = 1.5\n\n[synth.graph]\np_in = 0.01\np_out = 0.002\n",
    )
    .unwrap();
    let mut msgs = Vec::new();
    let mut ok = true;
    let runs: [(&str, Vec<&str>, &str); 7] = [
        ("synth", vec!["synth", "--config", "run.toml", "--out", "OUT.csv", "--graph", "OUT.edges.csv"], "OUT.csv"),
        ("calibrate", vec!["calibrate", "--config", "run.toml", "--data", "a.csv", "--out", "OUT", "--sets-out", "sets.csv"], "OUT"),
        ("calibrate-csv", vec!["calibrate", "--config", "run.toml", "--data", "a.csv", "--format", "csv", "--out", "OUT"], "OUT"),
        ("audit", vec!["audit", "--config", "run.toml", "--data", "a.csv", "--sets", "sets.csv", "--out", "OUT"], "OUT"),
        ("audit-lambda", vec!["audit", "--config", "run.toml", "--data", "a.csv", "--lambda", "0.9", "--out", "OUT"], "OUT"),
        ("evaluate", vec!["evaluate", "--config", "run.toml", "--data", "a.csv", "--lambda", "0.9", "--out", "OUT"], "OUT"),
        ("compare-gcp", vec!["compare-gcp", "--config", "run.toml", "--data", "a.csv", "--out", "OUT"], "OUT"),
    ];
    for (name, args, _) in &runs {
        let mut outputs = Vec::new();
        for rep in ["1", "2"] {
            let out_name = if *name == "synth" { format!("s{rep}.csv") } else { format!("{name}{rep}.out") };
            let edges = format!("s{rep}.edges.csv");
            let args: Vec<String> = args
                .iter()
                .map(|a| match *a {
                    "OUT.csv" | "OUT" => out_name.clone(),
                    "OUT.edges.csv" => edges.clone(),
                    other => other.to_string(),
                })
                .collect();
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            let (code, _) = run_cli(&argv, d);
            if *name == "synth" && rep == "1" {
                std::fs::copy(d.join(&out_name), d.join("a.csv")).unwrap();
            }
            let bytes = std::fs::read(d.join(&out_name)).unwrap_or_default();
            let mut extra = Vec::new();
            if *name == "synth" {
                extra = std::fs::read(d.join(&edges)).unwrap_or_default();
            }
            outputs.push((code, bytes, extra));
        }
        let (a, b) = (&outputs[0], &outputs[1]);
        let same = if name.ends_with("csv") || *name == "synth" {
            a.1 == b.1 && a.2 == b.2
        } else {
            let mut va: serde_json::Value = serde_json::from_slice(&a.1).unwrap_or_default();
            let mut vb: serde_json::Value = serde_json::from_slice(&b.1).unwrap_or_default();
            strip_wall_time(&mut va);
            strip_wall_time(&mut vb);
            va == vb && !va.is_null() && a.1.len() == b.1.len()
        };
        let valid_code = a.0 == b.0 && (a.0 == 0 || a.0 == 2);
        ok &= same && valid_code && !a.1.is_empty();
        msgs.push(format!("{name}: exit {} {}", a.0, if same { "identical" } else { "DIFFERENT" }));
    }
    check(ok, msgs.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 marginal coverage", marginal_coverage),
        ("2 inverse-quantile sandwich", inverse_quantile_sandwich),
        ("3 conditional coverage", conditional_coverage),
        ("4 disparity control", disparity_control),
        ("5 four-fifths ratio mode", four_fifths),
        ("6 classwise dominance", classwise_dominance),
        ("7 oracle equivalence", oracle_equivalence),
        ("8 predictive-parity endpoints", predictive_parity_endpoints),
        ("9 group-offset baseline fit", gcp_fit),
        ("10 CLI determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("acceptance {name}: PASS ({secs:.1}s) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("acceptance {name}: FAIL ({secs:.1}s) {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
