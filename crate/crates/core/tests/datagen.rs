use proptest::prelude::*;
use shinbo::datagen::{add_noise, impulsive_signal, synth_factors, BurstTrain, SynthSpec};
use shinbo::metrics::sparsity;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn densities_are_exact(seed in any::<u64>(), m in 5usize..60, n in 5usize..60, r in 1usize..5, dw in 0.2f64..1.0, dh in 0.2f64..1.0) {
        let spec = SynthSpec { m, n, r, density_w: dw, density_h: dh, seed };
        let d = synth_factors(&spec).unwrap();
        let nnz = |a: &ndarray::Array2<f64>| a.iter().filter(|&&v| v > 0.0).count();
        prop_assert_eq!(nnz(&d.w), (dw * (m * r) as f64).round() as usize);
        prop_assert_eq!(nnz(&d.h), (dh * (r * n) as f64).round() as usize);
        prop_assert!(d.w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(d.w.columns().into_iter().all(|c| c.iter().any(|&v| v > 0.0)));
        prop_assert!(d.h.rows().into_iter().all(|c| c.iter().any(|&v| v > 0.0)));
        prop_assert_eq!(d.x, d.w.dot(&d.h));
    }

    #[test]
    fn noisy_data_is_nonnegative(seed in any::<u64>(), eps in 0.0f64..2.0) {
        let d = synth_factors(&SynthSpec { m: 20, n: 15, seed, ..Default::default() }).unwrap();
        prop_assert!(add_noise(&d.x, eps, seed).unwrap().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn default_problem_counts() {
    let d = synth_factors(&SynthSpec::default()).unwrap();
    assert_eq!(d.w.iter().filter(|&&v| v > 0.0).count(), 30);
    assert_eq!(d.h.iter().filter(|&&v| v > 0.0).count(), 147);
    assert_eq!(sparsity(&d.w, 1e-6), 90.0);
    assert_eq!(d.x.dim(), (100, 70));
}

#[test]
fn generation_is_bit_reproducible() {
    let spec = SynthSpec { seed: 77, ..Default::default() };
    let (a, b) = (synth_factors(&spec).unwrap(), synth_factors(&spec).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, synth_factors(&SynthSpec { seed: 78, ..spec }).unwrap());
    assert_eq!(add_noise(&a.x, 0.1, 3).unwrap(), add_noise(&a.x, 0.1, 3).unwrap());
    let p = BurstTrain { duration: 0.05, ..Default::default() };
    assert_eq!(impulsive_signal(&p).unwrap(), impulsive_signal(&p).unwrap());
}

#[test]
fn too_sparse_factors_are_rejected() {
    let spec = SynthSpec { density_w: 0.001, ..Default::default() };
    assert!(synth_factors(&spec).is_err());
    assert!(synth_factors(&SynthSpec { r: 80, ..Default::default() }).is_err());
}

#[test]
fn zero_noise_is_identity() {
    let d = synth_factors(&SynthSpec::default()).unwrap();
    assert_eq!(add_noise(&d.x, 0.0, 1).unwrap(), d.x);
    assert!(add_noise(&d.x, -0.1, 1).is_err());
}

#[test]
fn larger_noise_moves_further_on_average() {
    let levels = [0.01, 0.05, 0.1];
    let mut totals = [0.0; 3];
    for seed in 0..50 {
        let d = synth_factors(&SynthSpec { seed, ..Default::default() }).unwrap();
        for (t, &eps) in totals.iter_mut().zip(&levels) {
            let y = add_noise(&d.x, eps, seed + 1000).unwrap();
            *t += (&y - &d.x).mapv(|v| v * v).sum().sqrt();
        }
    }
    assert!(totals[0] < totals[1] && totals[1] < totals[2], "{totals:?}");
}

#[test]
fn burst_train_shape_and_domain() {
    let sig = impulsive_signal(&BurstTrain::default()).unwrap();
    assert_eq!(sig.samples().len(), 50_000);
    for bad in [
        BurstTrain { f0: 30_000.0, ..Default::default() },
        BurstTrain { carrier_hz: 25_000.0, ..Default::default() },
        BurstTrain { noise_sigma: -1.0, ..Default::default() },
    ] {
        assert!(impulsive_signal(&bad).is_err());
    }
}
