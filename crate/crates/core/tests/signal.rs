use ndarray::{Array1, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use shinbo::datagen::{impulsive_signal, BurstTrain};
use shinbo::signal::{
    detect_fundamental, envelope_spectrum, envsi, stft_spectrogram, EnvelopeSpectrum, EnvsiOptions, SampledSignal,
    SpectrogramScale, StftParams, WindowKind,
};

/// Frame energy of a burst-train recording, used as a stand-in activation.
fn frame_energy(p: &BurstTrain) -> (Array1<f64>, f64) {
    let sig = impulsive_signal(p).unwrap();
    let spec = stft_spectrogram(&sig, &StftParams::default()).unwrap();
    (spec.power.sum_axis(Axis(0)), spec.frame_rate)
}

fn random_signal(seed: u64, len: usize) -> SampledSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampledSignal::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 8000.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn spectrogram_shape_formula(
        seed in any::<u64>(),
        window_len in 1usize..=64,
        overlap_frac in 0.0f64..1.0,
        extra_nfft in 0usize..64,
        len in 1usize..600,
    ) {
        let overlap = ((window_len as f64 * overlap_frac) as usize).min(window_len - 1);
        let nfft = window_len + extra_nfft;
        let params = StftParams { window_len, overlap, nfft, ..Default::default() };
        let sig = random_signal(seed, len);
        match stft_spectrogram(&sig, &params) {
            Ok(spec) => {
                let hop = window_len - overlap;
                prop_assert_eq!(spec.power.dim(), (nfft / 2 + 1, (len - window_len) / hop + 1));
            }
            Err(_) => prop_assert!(len < window_len),
        }
    }

    #[test]
    fn frame_power_satisfies_parseval(seed in any::<u64>(), window_len in 8usize..=64, extra in 0usize..64, hann in any::<bool>()) {
        let nfft = window_len + extra;
        let window = if hann { WindowKind::Hann } else { WindowKind::Rectangular };
        let params = StftParams { window_len, overlap: window_len / 2, nfft, window, scale: SpectrogramScale::Power };
        let sig = random_signal(seed, 4 * window_len);
        let spec = stft_spectrogram(&sig, &params).unwrap();
        let w = window.coefficients(window_len);
        let hop = params.hop();
        for f in 0..spec.power.ncols() {
            let col = spec.power.column(f);
            // One-sided power: interior bins stand for two mirrored bins.
            let nyq = if nfft % 2 == 0 { col[nfft / 2] } else { 2.0 * col[nfft / 2] };
            let full = col[0] + nyq + 2.0 * col.slice(ndarray::s![1..nfft / 2]).sum();
            let energy: f64 = sig.samples()[f * hop..f * hop + window_len]
                .iter()
                .zip(&w)
                .map(|(x, wk)| (x * wk).powi(2))
                .sum();
            prop_assert!((full - nfft as f64 * energy).abs() <= 1e-6 * nfft as f64 * energy.max(1e-12));
        }
    }

    #[test]
    fn envsi_lies_in_unit_interval(
        mags in prop::collection::vec(0.0f64..10.0, 40..200),
        f0_bins in 3.0f64..6.0,
        harmonics in 1usize..=6,
    ) {
        let spec = EnvelopeSpectrum { magnitudes: mags, bin_hz: 0.5 };
        let opts = EnvsiOptions { harmonics, ..Default::default() };
        let v = envsi(&spec, f0_bins * 0.5, &opts).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{}", v);
    }
}

#[test]
fn all_energy_on_harmonics_scores_one() {
    let mut mags = vec![0.0; 101];
    for i in 1..=6 {
        mags[7 * i] = i as f64;
    }
    let spec = EnvelopeSpectrum { magnitudes: mags, bin_hz: 1.0 };
    let v = envsi(&spec, 7.0, &EnvsiOptions::default()).unwrap();
    assert!((v - 1.0).abs() < 1e-15);
}

#[test]
fn flat_spectrum_scores_near_zero() {
    let spec = EnvelopeSpectrum { magnitudes: vec![1.0; 1001], bin_hz: 1.0 };
    let v = envsi(&spec, 10.0, &EnvsiOptions::default()).unwrap();
    assert!((v - 6.0 / 1000.0).abs() < 1e-12);
}

#[test]
fn harmonic_beyond_nyquist_errors_or_truncates() {
    let spec = EnvelopeSpectrum { magnitudes: vec![1.0; 21], bin_hz: 1.0 };
    assert!(envsi(&spec, 5.0, &EnvsiOptions::default()).is_err());
    let opts = EnvsiOptions { truncate_harmonics: true, ..Default::default() };
    assert!(envsi(&spec, 5.0, &opts).unwrap() > 0.0);
}

#[test]
fn impulse_train_beats_equal_power_noise() {
    let n = 1782;
    let frame_rate = 50_000.0 / 28.0;
    let mut pulses = Array1::<f64>::zeros(n);
    let mut k = 0.0;
    while let Some(v) = pulses.get_mut((k * frame_rate / 91.0_f64).round() as usize) {
        *v = 1.0;
        k += 1.0;
    }
    let power = pulses.dot(&pulses);
    let spec = envelope_spectrum(pulses.view(), frame_rate).unwrap();
    let train = envsi(&spec, 91.0, &EnvsiOptions::default()).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Array1<f64> = Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut rng));
        let noise = &noise * (power / noise.dot(&noise)).sqrt();
        let spec = envelope_spectrum(noise.view(), frame_rate).unwrap();
        let white = envsi(&spec, 91.0, &EnvsiOptions::default()).unwrap();
        assert!(train > white, "seed {seed}: train {train} noise {white}");
    }
}

#[test]
fn envsi_grows_with_burst_amplitude() {
    let amplitudes = [0.0, 0.1, 0.2, 0.4, 0.8];
    let means: Vec<f64> = amplitudes
        .iter()
        .map(|&amplitude| {
            (0..20)
                .map(|seed| {
                    let p = BurstTrain { amplitude, seed, ..Default::default() };
                    let (act, rate) = frame_energy(&p);
                    let spec = envelope_spectrum(act.view(), rate).unwrap();
                    envsi(&spec, p.f0, &EnvsiOptions::default()).unwrap()
                })
                .sum::<f64>()
                / 20.0
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] > w[0], "{means:?}");
    }
}

#[test]
fn clean_burst_envelope_peaks_at_repetition_rate() {
    let p = BurstTrain { noise_sigma: 0.0, ..Default::default() };
    let (act, rate) = frame_energy(&p);
    let spec = envelope_spectrum(act.view(), rate).unwrap();
    let f = detect_fundamental(&spec, 50.0, 150.0).unwrap();
    assert!((f - p.f0).abs() <= spec.bin_hz, "{f}");
}

#[test]
fn detect_fundamental_examples() {
    let rate = 200.0;
    let t = Array1::from_shape_fn(400, |i| i as f64 / rate);
    let sine = t.mapv(|v| 1.0 + (2.0 * std::f64::consts::PI * 30.0 * v).sin());
    let spec = envelope_spectrum(sine.view(), rate).unwrap();
    assert!((detect_fundamental(&spec, 10.0, 50.0).unwrap() - 30.0).abs() <= spec.bin_hz);

    let mut mags = vec![0.0; 60];
    mags[20] = 1.0;
    mags[40] = 2.0;
    let spec = EnvelopeSpectrum { magnitudes: mags, bin_hz: 1.0 };
    assert_eq!(detect_fundamental(&spec, 1.0, 59.0).unwrap(), 40.0);
    assert!(detect_fundamental(&spec, 70.0, 80.0).is_err());
}
