//! Matrix, signal and report files.
//!
//! Matrices are headerless row-major CSV with 17 significant digits, so a
//! write/read cycle reproduces every value exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use shinbo::signal::SampledSignal;

use crate::CliError;

pub fn write_matrix(path: &Path, a: &Array2<f64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut cols = 0;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if i == 0 {
            cols = record.len();
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!("{}: line {}, column {}: bad number {field:?}", path.display(), i + 1, j + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(CliError::Input(format!("{}: empty matrix", path.display())));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Vector as one value per line.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<(), CliError> {
    let text: String = v.iter().map(|x| format!("{x:.16e}\n")).collect();
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline. Field order follows the struct, so
/// equal values give identical bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_json(value)?).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes rows of already formatted fields under a header.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Mono WAV (16-bit integer or 32-bit float) or a one-column CSV of samples.
/// CSV input needs `sample_rate`; for WAV it overrides the header when given.
pub fn read_signal(path: &Path, sample_rate: Option<f64>) -> Result<SampledSignal, CliError> {
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let mut reader = hound::WavReader::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(CliError::Input(format!(
                "{}: {} channels, only mono is supported",
                path.display(),
                spec.channels
            )));
        }
        let bad = |e: hound::Error| CliError::Input(format!("{}: {e}", path.display()));
        let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<Result<_, _>>()
                .map_err(bad)?,
            (hound::SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(bad)?,
            (fmt, bits) => {
                return Err(CliError::Input(format!(
                    "{}: unsupported sample format {fmt:?} with {bits} bits",
                    path.display()
                )))
            }
        };
        let rate = sample_rate.unwrap_or(spec.sample_rate as f64);
        Ok(SampledSignal::new(samples, rate)?)
    } else {
        let rate = sample_rate.ok_or_else(|| {
            CliError::Config(format!("{}: CSV signals need a sample rate", path.display()))
        })?;
        let m = read_matrix(path)?;
        if m.ncols() != 1 {
            return Err(CliError::Input(format!(
                "{}: expected one column of samples, found {}",
                path.display(),
                m.ncols()
            )));
        }
        Ok(SampledSignal::new(m.into_raw_vec_and_offset().0, rate)?)
    }
}

/// 32-bit float mono WAV.
pub fn write_wav(path: &Path, signal: &SampledSignal) -> Result<(), CliError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate().round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let bad = |e: hound::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(bad)?;
    for &s in signal.samples() {
        w.write_sample(s as f32).map_err(bad)?;
    }
    w.finalize().map_err(bad)
}
