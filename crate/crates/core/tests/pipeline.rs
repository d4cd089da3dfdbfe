use mixevidence::chib::{chib_pair, rao_blackwell_log_density, symmetrized_log_density};
use mixevidence::conjugate::{suff_stats, Allocation, Hyperparams};
use mixevidence::gibbs::{run_chain, select_map, Trace};
use mixevidence::math::ln_factorial;
use mixevidence::model::{permute_params, Dataset, MixtureParams, Permutation};
use mixevidence::oracle::{exact_log_marginal, DEFAULT_ENUMERATION_BUDGET};
use proptest::prelude::*;

fn data5() -> Dataset {
    Dataset::new(vec![-2.1, -1.6, -2.4, 2.0, 2.7]).unwrap()
}

fn sym_estimate(data: &Dataset, k: usize, iters: usize, seed: u64) -> f64 {
    let hyper = Hyperparams::from_data(data);
    let trace = run_chain(data, k, &hyper, iters, iters / 10, seed).unwrap();
    chib_pair(data, &trace, &hyper, &Permutation::lexicographic(k))
        .unwrap()
        .symmetrized
        .log_evidence
}

#[test]
fn trace_round_trip_is_lossless() {
    let data = data5();
    let hyper = Hyperparams::from_data(&data);
    let trace = run_chain(&data, 3, &hyper, 300, 30, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    trace.save(&path, Some(&hyper)).unwrap();
    let (back, stored) = Trace::load(&path).unwrap();
    assert_eq!(back, trace);
    assert_eq!(stored, Some(hyper));

    let perms = Permutation::lexicographic(3);
    let a = chib_pair(&data, &trace, &hyper, &perms).unwrap();
    let b = chib_pair(&data, &back, &hyper, &perms).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_trace_file_is_rejected() {
    let data = data5();
    let hyper = Hyperparams::from_data(&data);
    let trace = run_chain(&data, 2, &hyper, 50, 0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    trace.save(&path, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(Trace::load(&path).is_err());
}

#[test]
fn one_component_matches_exact() {
    let values: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 * 0.4 - 1.0).collect();
    let data = Dataset::new(values).unwrap();
    let hyper = Hyperparams::from_data(&data);
    let exact = exact_log_marginal(&data, 1, &hyper, DEFAULT_ENUMERATION_BUDGET)
        .unwrap()
        .log_evidence;
    let trace = run_chain(&data, 1, &hyper, 10_000, 1_000, 2).unwrap();
    let pair = chib_pair(&data, &trace, &hyper, &[Permutation::identity(1)]).unwrap();
    assert_eq!(
        pair.raw.log_evidence.to_bits(),
        pair.symmetrized.log_evidence.to_bits()
    );
    assert!(
        (pair.raw.log_evidence - exact).abs() < 0.02,
        "{} vs {exact}",
        pair.raw.log_evidence
    );
}

#[test]
fn chib_tracks_exact_for_two_and_three_components() {
    let data = data5();
    let hyper = Hyperparams::from_data(&data);
    for (k, tol) in [(2, 0.05), (3, 0.08)] {
        let exact = exact_log_marginal(&data, k, &hyper, DEFAULT_ENUMERATION_BUDGET)
            .unwrap()
            .log_evidence;
        let est = sym_estimate(&data, k, 10_000, 3);
        assert!((est - exact).abs() < tol, "k={k}: {est} vs {exact}");
    }
}

#[test]
fn spread_across_seeds_shrinks_with_chain_length() {
    let data = data5();
    let sd = |iters: usize| {
        let xs: Vec<f64> = (0..10)
            .map(|s| sym_estimate(&data, 2, iters, 100 + s))
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    let short = sd(250);
    let long = sd(16_000);
    // T grows 64-fold, so T^-1/2 predicts a factor of 8
    assert!(long < short / 3.0, "short {short}, long {long}");
}

fn params_strategy(k: usize) -> impl Strategy<Value = MixtureParams> {
    (
        prop::collection::vec(0.05f64..1.0, k),
        prop::collection::vec(-4.0f64..4.0, k),
        prop::collection::vec(0.2f64..4.0, k),
    )
        .prop_map(|(w, m, v)| {
            let total: f64 = w.iter().sum();
            MixtureParams::new(w.iter().map(|x| x / total).collect(), m, v).unwrap()
        })
}

fn random_trace(data: &Dataset, k: usize, labels: &[Vec<usize>]) -> Trace {
    let stats_seq: Vec<_> = labels
        .iter()
        .map(|z| {
            let z: Vec<usize> = z.iter().map(|c| c % k).collect();
            suff_stats(data, &Allocation::new(z, k).unwrap(), k).unwrap()
        })
        .collect();
    let t = stats_seq.len();
    let theta = MixtureParams::new(vec![1.0 / k as f64; k], vec![0.0; k], vec![1.0; k]).unwrap();
    Trace {
        k,
        iterations: t,
        burn_in: 0,
        seed: 0,
        stats_seq,
        params_seq: vec![theta; t],
        log_post_seq: vec![0.0; t],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn symmetrized_density_is_relabeling_invariant(
        (k, theta) in (2usize..=4).prop_flat_map(|k| (Just(k), params_strategy(k))),
        values in prop::collection::vec(-5.0f64..5.0, 3..12),
        labels in prop::collection::vec(prop::collection::vec(0usize..4, 12), 1..40),
        seed in any::<u64>(),
    ) {
        let data = Dataset::new(values.clone()).unwrap();
        let labels: Vec<Vec<usize>> = labels.iter().map(|z| z[..values.len()].to_vec()).collect();
        let trace = random_trace(&data, k, &labels);
        let hyper = Hyperparams::from_data(&data);
        let all = Permutation::lexicographic(k);
        let sigma = all[(seed % all.len() as u64) as usize].clone();
        let a = symmetrized_log_density(&theta, &trace, &hyper, &all).unwrap();
        let b = symmetrized_log_density(&permute_params(&theta, &sigma).unwrap(), &trace, &hyper, &all).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn delta_never_exceeds_log_k_factorial(
        k in 1usize..=4,
        values in prop::collection::vec(-6.0f64..6.0, 3..20),
        iters in 20usize..200,
        seed in any::<u64>(),
    ) {
        let data = Dataset::new(values).unwrap();
        let hyper = Hyperparams::from_data(&data);
        let trace = run_chain(&data, k, &hyper, iters, 10, seed).unwrap();
        let pair = chib_pair(&data, &trace, &hyper, &Permutation::lexicographic(k)).unwrap();
        let delta = pair.symmetrized.log_evidence - pair.raw.log_evidence;
        prop_assert!(delta <= ln_factorial(k) + 1e-9, "delta {} for k={}", delta, k);

        let theta = select_map(&trace);
        let raw = rao_blackwell_log_density(&theta, &trace, &hyper).unwrap();
        let ident = symmetrized_log_density(&theta, &trace, &hyper, &[Permutation::identity(k)]).unwrap();
        prop_assert_eq!(raw.to_bits(), ident.to_bits());
    }
}
