use std::collections::BTreeMap;

use coffee_core::coffee::{coffee_run, resample, resample_indices, CoffeeConfig, EffectTable};
use coffee_core::interchange::{CovariateTable, ThetaMatrix};
use coffee_core::linstat::two_sided_p;
use coffee_core::synthgen::{generate_synthetic, SynthSpec};
use coffee_core::Error;

fn effect_spec(n: usize, seed: u64) -> SynthSpec {
    SynthSpec::null(n, 4, &[("A", 0.5), ("B", 0.3), ("C", 0.2)], seed)
        .with_effect("A", 0, 0.05)
        .with_effect("A", 1, -0.05)
        .with_effect("B", 0, -0.02)
        .with_effect("B", 1, 0.02)
        .with_effect("C", 0, -0.03)
        .with_effect("C", 1, 0.03)
}

fn run(spec: &SynthSpec, n_bootstrap: usize, seed: u64) -> EffectTable {
    let b = generate_synthetic(spec).unwrap();
    let mut cfg = CoffeeConfig::new("group", seed);
    cfg.n_bootstrap = n_bootstrap;
    coffee_run(&b.theta, &b.covariates, &cfg).unwrap()
}

/// With a single categorical covariate the sum-contrast fit is saturated, so
/// each sample's coefficients are category means minus their plain average.
fn closed_form_oracle(
    theta: &ThetaMatrix,
    labels: &[String],
    n_bootstrap: usize,
    seed: u64,
) -> BTreeMap<(u32, String), (f64, f64, f64)> {
    let levels: Vec<String> = {
        let mut l = labels.to_vec();
        l.sort();
        l.dedup();
        l
    };
    let n = theta.n_docs();
    let mut per_term: BTreeMap<(u32, String), Vec<f64>> = BTreeMap::new();
    let mut dfs = Vec::new();
    for s in 0..n_bootstrap as u64 {
        let idx = resample_indices(n, seed, s);
        let mut sums = vec![vec![0.0; theta.n_topics()]; levels.len()];
        let mut counts = vec![0usize; levels.len()];
        for &i in &idx {
            let c = levels.binary_search(&labels[i]).unwrap();
            counts[c] += 1;
            for k in 0..theta.n_topics() {
                sums[c][k] += theta.get(i, k);
            }
        }
        if counts.contains(&0) {
            continue;
        }
        dfs.push((n - levels.len()) as f64);
        for k in 0..theta.n_topics() {
            let means: Vec<f64> = (0..levels.len()).map(|c| sums[c][k] / counts[c] as f64).collect();
            let grand = means.iter().sum::<f64>() / means.len() as f64;
            let t = theta.topic_indices[k];
            per_term.entry((t, "Intercept".into())).or_default().push(grand);
            for (c, l) in levels.iter().enumerate() {
                per_term.entry((t, l.clone())).or_default().push(means[c] - grand);
            }
        }
    }
    dfs.sort_by(f64::total_cmp);
    let m = dfs.len();
    let median = if m % 2 == 1 { dfs[m / 2] } else { (dfs[m / 2 - 1] + dfs[m / 2]) / 2.0 };
    per_term
        .into_iter()
        .map(|(key, xs)| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (key, (mean, var.sqrt(), median))
        })
        .collect()
}

#[test]
fn matches_closed_form_bootstrap() {
    let spec = effect_spec(600, 21);
    let b = generate_synthetic(&spec).unwrap();
    let mut cfg = CoffeeConfig::new("group", 77);
    cfg.n_bootstrap = 40;
    let table = coffee_run(&b.theta, &b.covariates, &cfg).unwrap();
    let labels = b.covariates.column("group").unwrap();
    let oracle = closed_form_oracle(&b.theta, labels, 40, 77);
    assert_eq!(table.rows.len(), oracle.len());
    for r in &table.rows {
        let (mean, sd, df) = oracle[&(r.topic_index, r.term.clone())];
        assert!((r.estimate - mean).abs() < 1e-10, "{} {}", r.topic_index, r.term);
        assert!((r.std_error - sd).abs() < 1e-10);
        assert_eq!(r.df, df);
        assert_eq!(r.samples_used, 40);
    }
}

#[test]
fn effects_sum_to_zero_within_each_sample() {
    let table = run(&effect_spec(800, 4), 30, 9);
    for k in 0..4 {
        let s: f64 = ["A", "B", "C"].iter().map(|t| table.row(k, t).unwrap().estimate).sum();
        assert!(s.abs() < 1e-12, "topic {k}: {s}");
    }
}

#[test]
fn recovers_planted_effects() {
    let spec = effect_spec(5000, 11);
    let truth = generate_synthetic(&spec).unwrap().truth;
    let table = run(&spec, 100, 7);
    for k in 0..4usize {
        for cat in ["A", "B", "C"] {
            let r = table.row(k as u32, cat).unwrap();
            let want = truth.effect(cat, k);
            assert!((r.estimate - want).abs() < 0.01, "{cat} topic {k}: {} vs {want}", r.estimate);
            if want != 0.0 {
                assert!(r.p_value < 0.001, "{cat} topic {k}: p = {}", r.p_value);
            }
        }
    }
}

#[test]
fn bootstrap_se_tracks_sampling_spread() {
    // spread of full-data estimates across datasets vs the bootstrap SE of one
    let spec = |seed| effect_spec(1000, seed);
    let est: Vec<f64> = (0..30)
        .map(|s| run(&spec(500 + s), 25, s).row(0, "A").unwrap().estimate)
        .collect();
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    let sd = (est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
    let se = run(&spec(999), 200, 3).row(0, "A").unwrap().std_error;
    let ratio = se / sd;
    assert!((0.6..1.6).contains(&ratio), "bootstrap se {se}, empirical sd {sd}");
}

#[test]
fn p_values_follow_from_t_and_df() {
    let table = run(&effect_spec(400, 2), 25, 1);
    for r in &table.rows {
        let t = r.estimate / r.std_error;
        assert!((r.t_value - t).abs() < 1e-12 * t.abs().max(1.0));
        assert_eq!(r.p_value, two_sided_p(r.t_value, r.df).unwrap());
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let b = generate_synthetic(&effect_spec(700, 8)).unwrap();
    let mut cfg = CoffeeConfig::new("group", 5);
    cfg.n_bootstrap = 50;
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let a = one.install(|| coffee_run(&b.theta, &b.covariates, &cfg).unwrap());
    let c = many.install(|| coffee_run(&b.theta, &b.covariates, &cfg).unwrap());
    assert_eq!(format!("{a:?}"), format!("{c:?}"));
}

#[test]
fn resample_keeps_about_63_percent_of_rows() {
    let n = 10_000;
    let mut total = 0.0;
    for s in 0..20 {
        let idx = resample_indices(n, 3, s);
        assert_eq!(idx.len(), n);
        let mut seen = vec![false; n];
        idx.iter().for_each(|&i| seen[i] = true);
        total += seen.iter().filter(|&&x| x).count() as f64 / n as f64;
    }
    let frac = total / 20.0;
    assert!((frac - (1.0 - (-1.0f64).exp())).abs() < 0.005, "{frac}");
}

#[test]
fn resample_moves_theta_and_covariates_together() {
    let b = generate_synthetic(&effect_spec(50, 1)).unwrap();
    let cfg = CoffeeConfig::new("group", 3);
    let r = resample(&b.theta, &b.covariates, 4, &cfg).unwrap();
    let orig = b.covariates.column("group").unwrap();
    let got = r.covariates.column("group").unwrap();
    for (pos, &i) in r.indices.iter().enumerate() {
        assert_eq!(r.theta.row(pos), b.theta.row(i));
        assert_eq!(got[pos], orig[i]);
        assert_eq!(r.theta.doc_ids[pos], format!("{}#{pos}", b.theta.doc_ids[i]));
    }
}

#[test]
fn rare_category_below_min_samples_is_nan() {
    let b = generate_synthetic(&SynthSpec::null(2000, 3, &[("big", 1.0)], 0)).unwrap();
    let mut col = b.covariates.column("group").unwrap().to_vec();
    col[0] = "tiny".into();
    let cov = CovariateTable::new(b.covariates.doc_ids.clone(), [("group".to_owned(), col)].into()).unwrap();
    let mut cfg = CoffeeConfig::new("group", 0);
    cfg.n_bootstrap = 30;
    // one doc out of 2000 shows up in ~63% of samples: feasible but sparse
    let t = coffee_run(&b.theta, &cov, &cfg).unwrap();
    assert!(t.row(0, "tiny").unwrap().samples_used < 30);
    cfg.min_feasible_samples = 30;
    let t = coffee_run(&b.theta, &cov, &cfg).unwrap();
    assert!(t.row(0, "tiny").unwrap().estimate.is_nan());
}

#[test]
fn merge_threshold_folds_small_levels() {
    let b = generate_synthetic(&SynthSpec::null(300, 2, &[("a", 0.9), ("b", 0.05), ("c", 0.05)], 0)).unwrap();
    let mut cfg = CoffeeConfig::new("group", 1);
    cfg.merge_threshold = Some(20);
    let t = coffee_run(&b.theta, &b.covariates, &cfg).unwrap();
    let terms: Vec<&str> = t.rows.iter().filter(|r| r.topic_index == 0).map(|r| r.term.as_str()).collect();
    assert_eq!(terms, ["Intercept", "Other", "a"]);
}

#[test]
fn missing_covariate_row_is_an_error() {
    let b = generate_synthetic(&effect_spec(40, 1)).unwrap();
    let ids = b.covariates.doc_ids[1..].to_vec();
    let col = b.covariates.column("group").unwrap()[1..].to_vec();
    let cov = CovariateTable::new(ids, [("group".to_owned(), col)].into()).unwrap();
    let err = coffee_run(&b.theta, &cov, &CoffeeConfig::new("group", 0)).unwrap_err();
    assert!(matches!(err, Error::Invariant { .. }));
}
