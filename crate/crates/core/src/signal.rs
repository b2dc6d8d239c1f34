//! Spectrogram construction and envelope-spectrum scoring of activations.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mono samples with their sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate} must be positive"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                row: i,
                col: 0,
                reason: "sample is not finite".into(),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann if len == 1 => vec![1.0],
            WindowKind::Hann => (0..len)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (len - 1) as f64).cos())
                .collect(),
        }
    }
}

/// Value stored per time-frequency cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectrogramScale {
    #[default]
    Power,
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftParams {
    pub window_len: usize,
    pub overlap: usize,
    pub nfft: usize,
    pub window: WindowKind,
    pub scale: SpectrogramScale,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_len: 128,
            overlap: 100,
            nfft: 512,
            window: WindowKind::Hann,
            scale: SpectrogramScale::Power,
        }
    }
}

impl StftParams {
    pub fn hop(&self) -> usize {
        self.window_len - self.overlap
    }

    fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.overlap >= self.window_len || self.window_len > self.nfft {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= overlap ({}) < window ({}) <= nfft ({})",
                self.overlap, self.window_len, self.nfft
            )));
        }
        Ok(())
    }

    /// `floor((len - window) / hop) + 1`, or `None` if not even one frame fits.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| (len - self.window_len) / self.hop() + 1)
    }
}

/// One-sided spectrogram, frequency bins along rows and frames along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub power: Array2<f64>,
    /// Hz per frequency bin.
    pub freq_resolution: f64,
    /// Frames per second.
    pub frame_rate: f64,
}

/// Hann-windowed power spectrogram.
pub fn stft_power_spectrogram(
    signal: &SampledSignal,
    window_len: usize,
    overlap: usize,
    nfft: usize,
) -> Result<Spectrogram> {
    stft_spectrogram(
        signal,
        &StftParams {
            window_len,
            overlap,
            nfft,
            ..Default::default()
        },
    )
}

pub fn stft_spectrogram(signal: &SampledSignal, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let x = signal.samples();
    let frames = params.frame_count(x.len()).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "signal has {} samples; at least {} are needed for one frame",
            x.len(),
            params.window_len
        ))
    })?;
    let bins = params.nfft / 2 + 1;
    let hop = params.hop();
    let window = params.window.coefficients(params.window_len);
    let fft = FftPlanner::new().plan_fft_forward(params.nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); params.nfft];
    let mut power = Array2::zeros((bins, frames));
    for f in 0..frames {
        let start = f * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (k, (&s, &wk)) in x[start..start + params.window_len].iter().zip(&window).enumerate() {
            buf[k].re = s * wk;
        }
        fft.process(&mut buf);
        for b in 0..bins {
            let mag2 = buf[b].norm_sqr();
            power[[b, f]] = match params.scale {
                SpectrogramScale::Power => mag2,
                SpectrogramScale::Magnitude => mag2.sqrt(),
            };
        }
    }
    Ok(Spectrogram {
        power,
        freq_resolution: signal.sample_rate() / params.nfft as f64,
        frame_rate: signal.sample_rate() / hop as f64,
    })
}

/// One-sided magnitude spectrum of a mean-removed activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpectrum {
    pub magnitudes: Vec<f64>,
    /// Hz per bin.
    pub bin_hz: f64,
}

impl EnvelopeSpectrum {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }
}

/// Envelope spectrum of a nonnegative activation sampled at `frame_rate`.
///
/// The activation already tracks energy over time, so it is used as the
/// envelope directly: the mean is removed and the magnitude spectrum taken.
pub fn envelope_spectrum(activation: ArrayView1<f64>, frame_rate: f64) -> Result<EnvelopeSpectrum> {
    let n = activation.len();
    if n < 8 {
        return Err(Error::InvalidArgument(format!(
            "activation has {n} samples; at least 8 are needed"
        )));
    }
    if !(frame_rate > 0.0) {
        return Err(Error::InvalidArgument("frame rate must be positive".into()));
    }
    if activation.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("activation is identically zero".into()));
    }
    let mean = activation.mean().unwrap_or(0.0);
    let mut buf: Vec<Complex<f64>> = activation.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(EnvelopeSpectrum {
        magnitudes: buf[..=n / 2].iter().map(|c| c.norm()).collect(),
        bin_hz: frame_rate / n as f64,
    })
}

/// Frequency of the largest non-DC bin inside `[f_lo, f_hi]`.
pub fn detect_fundamental(spec: &EnvelopeSpectrum, f_lo: f64, f_hi: f64) -> Result<f64> {
    let lo = ((f_lo / spec.bin_hz).ceil() as usize).max(1);
    let hi = ((f_hi / spec.bin_hz).floor() as usize).min(spec.magnitudes.len().saturating_sub(1));
    if !(f_lo <= f_hi) || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "band [{f_lo}, {f_hi}] Hz contains no non-DC bin"
        )));
    }
    let best = (lo..=hi)
        .max_by(|&a, &b| spec.magnitudes[a].total_cmp(&spec.magnitudes[b]))
        .unwrap_or(lo);
    Ok(spec.frequency(best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvsiOptions {
    /// Number of harmonics in the numerator.
    pub harmonics: usize,
    /// Bins searched on each side of a nominal harmonic.
    pub tolerance_bins: usize,
    /// Bins in the denominator, counted from bin 1; `None` uses every non-DC bin.
    pub total_bins: Option<usize>,
    /// Drop harmonics above Nyquist instead of failing.
    pub truncate_harmonics: bool,
}

impl Default for EnvsiOptions {
    fn default() -> Self {
        Self {
            harmonics: 6,
            tolerance_bins: 1,
            total_bins: None,
            truncate_harmonics: false,
        }
    }
}

/// Envelope-spectrum indicator `sum_i AIS_i^2 / sum_k S_k^2`.
///
/// `AIS_i` is the largest magnitude within `tolerance_bins` of `i * f0` and
/// `S_k` runs over bins `1..=total_bins`. A spectrum with no energy scores 0.
pub fn envsi(spec: &EnvelopeSpectrum, f0: f64, opts: &EnvsiOptions) -> Result<f64> {
    if opts.harmonics == 0 {
        return Err(Error::InvalidArgument("at least one harmonic is needed".into()));
    }
    if !(f0 > 0.0) {
        return Err(Error::InvalidArgument("fundamental must be positive".into()));
    }
    let last = spec.magnitudes.len() - 1;
    let m2 = opts.total_bins.unwrap_or(last);
    if m2 == 0 || m2 > last {
        return Err(Error::InvalidArgument(format!(
            "total_bins {m2} must lie in 1..={last}"
        )));
    }
    let mut numer = 0.0;
    for i in 1..=opts.harmonics {
        let center = (i as f64 * f0 / spec.bin_hz).round() as usize;
        if center > last {
            if opts.truncate_harmonics {
                break;
            }
            return Err(Error::InvalidArgument(format!(
                "harmonic {i} at {} Hz lies above Nyquist",
                i as f64 * f0
            )));
        }
        let lo = center.saturating_sub(opts.tolerance_bins).max(1);
        let hi = (center + opts.tolerance_bins).min(last);
        let peak = spec.magnitudes[lo..=hi].iter().cloned().fold(0.0, f64::max);
        numer += peak * peak;
    }
    let denom: f64 = spec.magnitudes[1..=m2].iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(numer / denom)
}

/// Detects the fundamental of an activation inside `band` and scores it.
pub fn activation_envsi(
    activation: ArrayView1<f64>,
    frame_rate: f64,
    band: (f64, f64),
    opts: &EnvsiOptions,
) -> Result<(f64, f64)> {
    let spec = envelope_spectrum(activation, frame_rate)?;
    let f0 = detect_fundamental(&spec, band.0, band.1)?;
    Ok((f0, envsi(&spec, f0, opts)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn paper_spectrogram_shape() {
        let s = SampledSignal::new(vec![0.1; 50_000], 50_000.0).unwrap();
        let spec = stft_power_spectrogram(&s, 128, 100, 512).unwrap();
        assert_eq!(spec.power.dim(), (257, 1782));
        assert!((spec.frame_rate - 50_000.0 / 28.0).abs() < 1e-9);
    }

    #[test]
    fn dc_signal_lands_in_bin_zero() {
        let s = SampledSignal::new(vec![2.0; 1000], 1000.0).unwrap();
        let params = StftParams {
            window_len: 64,
            overlap: 0,
            nfft: 64,
            window: WindowKind::Rectangular,
            scale: SpectrogramScale::Power,
        };
        let spec = stft_spectrogram(&s, &params).unwrap();
        for col in spec.power.columns() {
            assert!((col[0] - (2.0 * 64.0f64).powi(2)).abs() < 1e-6);
            assert!(col.iter().skip(1).all(|&v| v < 1e-12));
        }
    }

    #[test]
    fn bin_centred_sinusoid_has_single_bin() {
        let fs = 1024.0;
        let k = 5.0;
        let f = k * fs / 64.0;
        let x: Vec<f64> = (0..2048).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
        let s = SampledSignal::new(x, fs).unwrap();
        let params = StftParams {
            window_len: 64,
            overlap: 32,
            nfft: 64,
            window: WindowKind::Rectangular,
            scale: SpectrogramScale::Power,
        };
        let spec = stft_spectrogram(&s, &params).unwrap();
        for col in spec.power.columns() {
            let peak = col[5];
            assert!(col.iter().enumerate().all(|(b, &v)| b == 5 || v <= 1e-10 * peak));
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let s = SampledSignal::new(vec![0.0; 100], 1000.0).unwrap();
        let err = stft_power_spectrogram(&s, 128, 100, 512).unwrap_err();
        assert!(err.to_string().contains("128"));
        assert!(stft_power_spectrogram(&s, 64, 64, 512).is_err());
    }

    #[test]
    fn constant_activation_has_flat_zero_spectrum() {
        let a = Array1::from_elem(64, 3.0);
        let spec = envelope_spectrum(a.view(), 100.0).unwrap();
        assert!(spec.magnitudes.iter().all(|&m| m < 1e-12));
        assert!(envelope_spectrum(Array1::zeros(64).view(), 100.0).is_err());
        assert!(envelope_spectrum(Array1::ones(4).view(), 100.0).is_err());
    }

    #[test]
    fn sine_activation_single_bin() {
        let n = 1000;
        let fr = 1000.0;
        let a = Array1::from_iter((0..n).map(|i| 2.0 + (2.0 * PI * 30.0 * i as f64 / fr).sin()));
        let spec = envelope_spectrum(a.view(), fr).unwrap();
        let peak = spec.magnitudes[30];
        assert!(spec
            .magnitudes
            .iter()
            .enumerate()
            .all(|(k, &m)| k == 30 || m <= 1e-8 * peak));
        let f0 = detect_fundamental(&spec, 10.0, 50.0).unwrap();
        assert!((f0 - 30.0).abs() <= spec.bin_hz);
    }

    #[test]
    fn impulse_train_peaks_at_harmonics() {
        let fr = 1785.0;
        let n = 1785;
        let period = fr / 91.0;
        let a = Array1::from_iter((0..n).map(|i| {
            let phase = (i as f64 / period).fract();
            if phase < 1.0 / period { 1.0 } else { 0.0 }
        }));
        let spec = envelope_spectrum(a.view(), fr).unwrap();
        let f0 = detect_fundamental(&spec, 50.0, 150.0).unwrap();
        assert!((f0 - 91.0).abs() <= spec.bin_hz, "f0 = {f0}");
        let score = envsi(&spec, f0, &EnvsiOptions::default()).unwrap();
        assert!(score > 0.0 && score <= 1.0);
    }

    #[test]
    fn argmax_picks_larger_peak() {
        let mut mags = vec![0.0; 101];
        mags[20] = 1.0;
        mags[40] = 2.0;
        let spec = EnvelopeSpectrum { magnitudes: mags, bin_hz: 1.0 };
        assert_eq!(detect_fundamental(&spec, 10.0, 60.0).unwrap(), 40.0);
        assert!(detect_fundamental(&spec, 10.2, 10.8).is_err());
    }

    #[test]
    fn envsi_all_energy_on_harmonics() {
        let mut mags = vec![0.0; 201];
        for i in 1..=6 {
            mags[10 * i] = 1.0 / i as f64;
        }
        let spec = EnvelopeSpectrum { magnitudes: mags, bin_hz: 0.5 };
        let v = envsi(&spec, 5.0, &EnvsiOptions::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envsi_flat_spectrum_is_small() {
        let spec = EnvelopeSpectrum { magnitudes: vec![1.0; 1001], bin_hz: 1.0 };
        let v = envsi(&spec, 91.0, &EnvsiOptions::default()).unwrap();
        assert!((v - 6.0 / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn envsi_harmonics_beyond_nyquist() {
        let spec = EnvelopeSpectrum { magnitudes: vec![1.0; 101], bin_hz: 1.0 };
        assert!(envsi(&spec, 30.0, &EnvsiOptions::default()).is_err());
        let opts = EnvsiOptions { truncate_harmonics: true, ..Default::default() };
        assert!((envsi(&spec, 30.0, &opts).unwrap() - 3.0 / 100.0).abs() < 1e-12);
    }
}
