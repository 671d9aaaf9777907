mod oracles;

use rand::Rng;

use lts_core::mtm::{self, CountRegressor, KernelClassifier, MtmState};
use lts_core::seed::rng_from;
use lts_core::sim::{traffic, DatasetMeta, LabeledDataset, Labels, CAR_TYPES};
use oracles::{finite_diff_grad, relative_error, OracleReport};

fn class_data(n: usize, dim: usize, seed: u64) -> LabeledDataset {
    let mut rng = rng_from(seed);
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    LabeledDataset::new(
        features,
        dim,
        Labels::Classes(labels),
        DatasetMeta { seed, decoded: None },
    )
    .unwrap()
}

fn count_data(n: usize, dim: usize, seed: u64) -> LabeledDataset {
    let mut rng = rng_from(seed);
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<[u32; CAR_TYPES]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(0..4)))
        .collect();
    LabeledDataset::new(
        features,
        dim,
        Labels::Counts(labels),
        DatasetMeta { seed, decoded: None },
    )
    .unwrap()
}

#[test]
fn hinge_objective_gradient_matches_finite_differences() {
    for instance in 0..10u64 {
        let data = class_data(12, 3, instance);
        let mut rng = rng_from(100 + instance);
        let params: Vec<f64> = (0..=data.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let base = KernelClassifier::new(0.5, 1e-3, 3, 100).unwrap();
        let model = base.with_support(&data, &params).unwrap();
        let (ga, gb) = model.gradient(&data).unwrap();
        let mut analytic = ga;
        analytic.push(gb);
        let fd = finite_diff_grad(
            &mut |p: &[f64]| base.with_support(&data, p).unwrap().objective(&data).unwrap(),
            &params,
            1e-6,
        )
        .unwrap();
        let err = relative_error(&fd, &analytic);
        OracleReport::new(
            format!("hinge gradient, instance {instance}"),
            vec![err],
            1e-5,
            err < 1e-5,
        )
        .assert_pass();
    }
}

#[test]
fn l1_loss_gradient_matches_finite_differences() {
    for instance in 0..10u64 {
        let data = count_data(8, 4, instance);
        let mut model = CountRegressor::new(4, 3, &mut rng_from(instance)).unwrap();
        let params = model.params().to_vec();
        let analytic = model.loss_gradient(&data).unwrap();
        let fd = finite_diff_grad(
            &mut |p: &[f64]| {
                model.set_params(p).unwrap();
                model.loss(&data).unwrap()
            },
            &params,
            1e-6,
        )
        .unwrap();
        let err = relative_error(&fd, &analytic);
        OracleReport::new(format!("l1 gradient, instance {instance}"), vec![err], 1e-5, err < 1e-5).assert_pass();
    }
}

#[test]
fn evaluation_is_permutation_invariant() {
    let data = class_data(40, 2, 1);
    let model = mtm::train(
        None,
        &mtm::MtmSpec::default_kernel(),
        &data,
        &mtm::TrainConfig::default(),
        3,
    )
    .unwrap();
    let tdata = count_data(40, 6, 2);
    let reg = MtmState::Counter(CountRegressor::new(6, 5, &mut rng_from(4)).unwrap());
    let mut order: Vec<usize> = (0..40).rev().collect();
    order.swap(3, 17);
    for (m, d) in [(&model, &data), (&reg, &tdata)] {
        let a = mtm::evaluate(m, d).unwrap();
        let b = mtm::evaluate(m, &d.permuted(&order)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hinge_objective_does_not_increase_with_small_steps() {
    for instance in 0..5u64 {
        let data = class_data(30, 2, 50 + instance);
        let mut model = KernelClassifier::new(0.5, 1e-3, 2, 100)
            .unwrap()
            .with_support(&data, &vec![0.0; 31])
            .unwrap();
        let mut prev = model.objective(&data).unwrap();
        for _ in 0..50 {
            let (ga, gb) = model.gradient(&data).unwrap();
            let mut p = model.params();
            for (v, g) in p.iter_mut().zip(ga.iter().chain([&gb])) {
                *v -= 1e-3 * g;
            }
            model.set_params(&p).unwrap();
            let next = model.objective(&data).unwrap();
            assert!(next <= prev + 1e-15, "instance {instance}: {prev} -> {next}");
            prev = next;
        }
    }
}

#[test]
fn zero_predictor_reward_is_minus_mean_count() {
    let data = traffic::TrafficSim::default()
        .generate_counting(&traffic::real_theta(), 200, 4)
        .unwrap();
    let Labels::Counts(counts) = data.labels() else {
        unreachable!()
    };
    // Independent arithmetic over the raw labels.
    let mut total = 0u64;
    for c in counts {
        for &v in c {
            total += u64::from(v);
        }
    }
    let expected = -(total as f64) / (counts.len() * CAR_TYPES) as f64;
    let got = mtm::constant_prediction_reward(&data, [0.0; CAR_TYPES]).unwrap();
    assert!((got - expected).abs() < 1e-12);

    // The same through a regressor whose weights are all zero.
    let mut r = CountRegressor::new(traffic::N_FEATURES, 4, &mut rng_from(0)).unwrap();
    let zeros = vec![0.0; r.params().len()];
    r.set_params(&zeros).unwrap();
    let via_model = mtm::evaluate(&MtmState::Counter(r), &data).unwrap();
    assert!((via_model - expected).abs() < 1e-12);
}

#[test]
fn coefficient_count_tracks_support() {
    let data = class_data(25, 2, 9);
    let state = mtm::train(
        None,
        &mtm::MtmSpec::default_kernel(),
        &data,
        &mtm::TrainConfig::default(),
        1,
    )
    .unwrap();
    let MtmState::Kernel(k) = state else { unreachable!() };
    assert!(k.support_len() <= 25);
    assert_eq!(k.coeffs().len(), k.support_len());
    let r = CountRegressor::new(7, 3, &mut rng_from(1)).unwrap();
    assert_eq!(r.predict(&[0.0; 7]).len(), CAR_TYPES);
}
