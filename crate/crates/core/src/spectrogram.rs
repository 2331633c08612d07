//! Sliding-window spectrogram of the a\* signal.
//!
//! Each window is mean-subtracted, tapered with a symmetric Tukey window and
//! transformed with an unnormalized forward DFT
//! (`X_k = sum_n x_n e^{-2πi kn/N}`, so `sum_k |X_k|^2 = N sum_n x_n^2`).
//! Rows hold FFT magnitudes for the bins whose center frequency lies in the
//! heart-rate band; columns are windows. No zero padding, so one row spans
//! `frame_rate / window_length` Hz.
//!
//! After [`normalize_columns`] every non-empty column peaks at exactly 1, and
//! [`threshold_noise`] zeroes everything under the noise floor.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub window_length: usize,
    pub stride: usize,
    pub tukey_shape: f64,
    /// Samples per second of the analysed signal.
    pub frame_rate: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub noise_threshold: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 512,
            stride: 4,
            tukey_shape: 0.5,
            frame_rate: 30.0,
            band_low: 50.0,
            band_high: 150.0,
            noise_threshold: 0.1,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window_length < 2 {
            return bad(format!("stft.window_length must be >= 2, got {}", self.window_length));
        }
        if self.stride == 0 || self.stride > self.window_length {
            return bad(format!(
                "stft.stride must be in 1..={}, got {}",
                self.window_length, self.stride
            ));
        }
        if !(0.0..=1.0).contains(&self.tukey_shape) {
            return bad(format!("stft.tukey_shape must be in [0, 1], got {}", self.tukey_shape));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return bad(format!("frame rate must be positive, got {}", self.frame_rate));
        }
        if !(self.band_low.is_finite() && self.band_high.is_finite() && self.band_low < self.band_high) {
            return bad(format!(
                "stft.band_low ({}) must be below stft.band_high ({})",
                self.band_low, self.band_high
            ));
        }
        if !(0.0..1.0).contains(&self.noise_threshold) {
            return bad(format!(
                "stft.noise_threshold must be in [0, 1), got {}",
                self.noise_threshold
            ));
        }
        Ok(())
    }

    /// BPM spacing of adjacent rows.
    pub fn bin_width_bpm(&self) -> f64 {
        60.0 * self.frame_rate / self.window_length as f64
    }

    /// The same window and hop durations at another sample rate.
    pub fn rescaled(&self, sample_rate: f64) -> StftConfig {
        let scale = sample_rate / self.frame_rate;
        StftConfig {
            window_length: ((self.window_length as f64 * scale).round() as usize).max(2),
            stride: ((self.stride as f64 * scale).round() as usize).max(1),
            frame_rate: sample_rate,
            ..*self
        }
    }
}

/// K×L matrix of non-negative harmonic powers, frequency rows by time columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    powers: Vec<f64>,
    freq_bpm: Vec<f64>,
    time_s: Vec<f64>,
    duration_s: f64,
}

impl Spectrogram {
    /// `powers` is row-major K×L with `K = freq_bpm.len()`, `L = time_s.len()`.
    pub fn from_parts(powers: Vec<f64>, freq_bpm: Vec<f64>, time_s: Vec<f64>) -> Result<Self> {
        if powers.len() != freq_bpm.len() * time_s.len() {
            return Err(Error::LengthMismatch {
                what: "spectrogram powers vs K*L",
                left: powers.len(),
                right: freq_bpm.len() * time_s.len(),
            });
        }
        if freq_bpm.is_empty() || time_s.is_empty() {
            return Err(Error::Config("spectrogram needs at least one row and column".into()));
        }
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("spectrogram powers must be finite and non-negative".into()));
        }
        let duration_s = time_s.last().copied().unwrap_or(0.0) - time_s[0];
        Ok(Self {
            powers,
            freq_bpm,
            time_s,
            duration_s,
        })
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self
    }

    /// K, the number of frequency rows.
    pub fn rows(&self) -> usize {
        self.freq_bpm.len()
    }

    /// L, the number of time columns.
    pub fn cols(&self) -> usize {
        self.time_s.len()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.powers[k * self.cols() + l]
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn freq_bpm(&self) -> &[f64] {
        &self.freq_bpm
    }

    pub fn time_s(&self) -> &[f64] {
        &self.time_s
    }

    /// Length of the source signal in seconds.
    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn column(&self, l: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows()).map(move |k| self.get(k, l))
    }

    pub fn column_max(&self, l: usize) -> f64 {
        self.column(l).fold(0.0, f64::max)
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    /// Linear map from (fractional) row index to BPM.
    pub fn row_to_bpm(&self, row: f64) -> f64 {
        match self.freq_bpm.len() {
            1 => self.freq_bpm[0],
            n => {
                let step = (self.freq_bpm[n - 1] - self.freq_bpm[0]) / (n - 1) as f64;
                self.freq_bpm[0] + row * step
            }
        }
    }

    /// Row with the largest power per column; `None` for empty columns.
    /// Ties go to the lower row.
    pub fn argmax_rows(&self) -> Vec<Option<usize>> {
        (0..self.cols())
            .map(|l| {
                let mut best: Option<(usize, f64)> = None;
                for (k, p) in self.column(l).enumerate() {
                    if p > 0.0 && best.map_or(true, |(_, b)| p > b) {
                        best = Some((k, p));
                    }
                }
                best.map(|(k, _)| k)
            })
            .collect()
    }

    fn map_columns(mut self, f: impl Fn(&mut [f64])) -> Self {
        let (rows, cols) = (self.rows(), self.cols());
        let mut col = vec![0.0; rows];
        for l in 0..cols {
            for k in 0..rows {
                col[k] = self.powers[k * cols + l];
            }
            f(&mut col);
            for k in 0..rows {
                self.powers[k * cols + l] = col[k];
            }
        }
        self
    }
}

/// Symmetric Tukey (tapered cosine) window. Shape 0 is rectangular, shape 1 is Hann.
pub fn tukey_window(length: usize, shape: f64) -> Vec<f64> {
    assert!(length >= 2, "window length must be at least 2");
    assert!((0.0..=1.0).contains(&shape), "shape must be in [0, 1]");
    let last = (length - 1) as f64;
    let half = shape / 2.0;
    let taper = |n: usize| {
        let x = n as f64 / last;
        if x < half {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * x / shape).cos())
        } else {
            1.0
        }
    };
    // Evaluate the rising half and mirror it so the window is exactly symmetric.
    (0..length).map(|n| taper(n.min(length - 1 - n))).collect()
}

// Mean-removed, tapered window samples into `buf`. An exactly flat frame
// has no AC content and returns false (its rounding residue is not noise).
fn load_window(frame: &[f64], window: &[f64], buf: &mut [Complex<f64>]) -> bool {
    let first = frame[0];
    if frame.iter().all(|&v| v == first) {
        return false;
    }
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    for ((slot, &x), &w) in buf.iter_mut().zip(frame).zip(window) {
        *slot = Complex::new((x - mean) * w, 0.0);
    }
    true
}

/// The samples one spectrogram column transforms: `frame` minus its mean,
/// times the Tukey window (all zero for a flat frame).
pub fn windowed_samples(frame: &[f64], shape: f64) -> Vec<f64> {
    let window = tukey_window(frame.len(), shape);
    let mut buf = vec![Complex::new(0.0, 0.0); frame.len()];
    load_window(frame, &window, &mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Full, uncropped magnitude spectrum of one window, `|X_k|` for every bin
/// `k < frame.len()`. The transform is unnormalized, so
/// `sum |X_k|^2 = N * sum x_n^2` over the windowed samples.
pub fn window_spectrum(frame: &[f64], shape: f64) -> Vec<f64> {
    let n = frame.len();
    let window = tukey_window(n, shape);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    if !load_window(frame, &window, &mut buf) {
        return vec![0.0; n];
    }
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Band-cropped magnitude spectrogram (not yet normalized).
pub fn compute_spectrogram(signal: &[f64], config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let n = config.window_length;
    if signal.len() < n {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            needed: n,
        });
    }
    let bin_bpm = config.bin_width_bpm();
    let bins: Vec<usize> = (0..=n / 2)
        .filter(|&k| {
            let bpm = k as f64 * bin_bpm;
            bpm >= config.band_low && bpm <= config.band_high
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Config(format!(
            "no frequency bin falls inside [{}, {}] BPM at {:.3} BPM resolution",
            config.band_low, config.band_high, bin_bpm
        )));
    }
    let cols = (signal.len() - n) / config.stride + 1;
    let window = tukey_window(n, config.tukey_shape);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let columns: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map_init(
            || (vec![Complex::new(0.0, 0.0); n], vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()]),
            |(buf, scratch), l| {
                let frame = &signal[l * config.stride..l * config.stride + n];
                if !load_window(frame, &window, buf) {
                    return vec![0.0; bins.len()];
                }
                fft.process_with_scratch(buf, scratch);
                bins.iter().map(|&k| buf[k].norm()).collect()
            },
        )
        .collect();

    let rows = bins.len();
    let mut powers = vec![0.0; rows * cols];
    for (l, column) in columns.iter().enumerate() {
        for (k, &p) in column.iter().enumerate() {
            powers[k * cols + l] = p;
        }
    }
    let freq_bpm = bins.iter().map(|&k| k as f64 * bin_bpm).collect();
    let center = (n - 1) as f64 / 2.0;
    let time_s = (0..cols)
        .map(|l| ((l * config.stride) as f64 + center) / config.frame_rate)
        .collect();
    Ok(Spectrogram {
        powers,
        freq_bpm,
        time_s,
        duration_s: signal.len() as f64 / config.frame_rate,
    })
}

/// Scales every column so its maximum is 1; all-zero columns stay zero.
pub fn normalize_columns(spec: Spectrogram) -> Spectrogram {
    spec.map_columns(|col| {
        let max = col.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for v in col.iter_mut() {
                *v /= max;
            }
        }
    })
}

/// Zeroes values strictly below `threshold`.
pub fn threshold_noise(mut spec: Spectrogram, threshold: f64) -> Spectrogram {
    for p in spec.powers.iter_mut() {
        if *p < threshold {
            *p = 0.0;
        }
    }
    spec
}

/// compute, normalize and threshold in one call.
pub fn build_spectrogram(signal: &[f64], config: &StftConfig) -> Result<Spectrogram> {
    let raw = compute_spectrogram(signal, config)?;
    Ok(threshold_noise(normalize_columns(raw), config.noise_threshold))
}

pub const SPECTROGRAM_MAGIC: [u8; 4] = *b"RPSG";
pub const WEIGHTS_MAGIC: [u8; 4] = *b"RPWM";

/// Writes a matrix dump: 16-byte header (`magic`, u32 rows, u32 cols, u32 0,
/// all little-endian) followed by row-major little-endian f32 values.
pub fn write_matrix<W: Write>(mut out: W, magic: [u8; 4], rows: usize, cols: usize, values: &[f64]) -> io::Result<()> {
    assert_eq!(values.len(), rows * cols);
    let dim = |v: usize| u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"));
    out.write_all(&magic)?;
    out.write_all(&dim(rows)?.to_le_bytes())?;
    out.write_all(&dim(cols)?.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    out.flush()
}

/// Reads a dump written by [`write_matrix`]: `(magic, rows, cols, values)`.
pub fn read_matrix<R: Read>(mut input: R) -> io::Result<([u8; 4], usize, usize, Vec<f32>)> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    let (rows, cols) = (word(4), word(8));
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != rows * cols * 4 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("expected {} payload bytes, found {}", rows * cols * 4, body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((magic, rows, cols, values))
}

pub fn write_spectrogram<W: Write>(out: W, spec: &Spectrogram) -> io::Result<()> {
    write_matrix(out, SPECTROGRAM_MAGIC, spec.rows(), spec.cols(), &spec.powers)
}

/// Axis sidecar: `freq_bpm,<K values>` and `time_seconds,<L values>` lines.
pub fn write_axes<W: Write>(mut out: W, spec: &Spectrogram) -> io::Result<()> {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
    writeln!(out, "freq_bpm,{}", join(&spec.freq_bpm))?;
    writeln!(out, "time_seconds,{}", join(&spec.time_s))?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_from_rows(rows: &[&[f64]]) -> Spectrogram {
        let k = rows.len();
        let l = rows[0].len();
        let powers = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Spectrogram::from_parts(powers, (0..k).map(|i| 50.0 + i as f64).collect(), (0..l).map(|i| i as f64).collect())
            .unwrap()
    }

    #[test]
    fn tukey_limits() {
        assert_eq!(tukey_window(4, 0.0), vec![1.0; 4]);
        let hann = tukey_window(5, 1.0);
        let expect = [0.0, 0.5, 1.0, 0.5, 0.0];
        for (a, b) in hann.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{hann:?}");
        }
    }

    #[test]
    fn tukey_matches_frozen_reference_values() {
        // scipy.signal.windows.tukey(512, 0.5)
        let w = tukey_window(512, 0.5);
        let frozen = [
            (1, 0.0001511805947714273),
            (7, 0.0073899466219696786),
            (64, 0.5015369802866778),
            (127, 0.9999149590404399),
            (128, 1.0),
            (200, 1.0),
            (384, 0.9999149590404399),
            (400, 0.9581786299404047),
            (510, 0.00015118059477148282),
        ];
        for (i, v) in frozen {
            assert!((w[i] - v).abs() < 1e-12, "w[{i}] = {}", w[i]);
        }
        assert!((w.iter().sum::<f64>() - 383.24999527529394).abs() < 1e-9);
        // scipy.signal.windows.tukey(6, 0.5)
        let six = tukey_window(6, 0.5);
        for (a, b) in six.iter().zip([0.0, 0.9045084971874737, 1.0, 1.0, 0.9045084971874735, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        for bad in [
            StftConfig { stride: 0, ..Default::default() },
            StftConfig { stride: 513, ..Default::default() },
            StftConfig { band_low: 150.0, band_high: 50.0, ..Default::default() },
            StftConfig { noise_threshold: 1.0, ..Default::default() },
            StftConfig { tukey_shape: 1.5, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn too_short_signal() {
        let cfg = StftConfig::default();
        assert!(matches!(
            compute_spectrogram(&[0.0; 100], &cfg),
            Err(Error::SignalTooShort { len: 100, needed: 512 })
        ));
    }

    #[test]
    fn column_count_and_axes() {
        let cfg = StftConfig::default();
        let signal: Vec<f64> = (0..1000).map(|n| (n as f64 * 0.3).sin()).collect();
        let spec = compute_spectrogram(&signal, &cfg).unwrap();
        assert_eq!(spec.cols(), (1000 - 512) / 4 + 1);
        assert!(spec.freq_bpm().iter().all(|&f| (50.0..=150.0).contains(&f)));
        // 30 fps / 512 -> 3.515625 BPM rows, bins 15..=42
        assert_eq!(spec.rows(), 28);
        assert!((spec.freq_bpm()[0] - 15.0 * 3.515625).abs() < 1e-12);
        assert!((spec.time_s()[1] - spec.time_s()[0] - 4.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn constant_signal_gives_zero_columns() {
        let spec = build_spectrogram(&[7.25; 600], &StftConfig::default()).unwrap();
        assert!(spec.powers().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn normalize_examples() {
        let spec = normalize_columns(spec_from_rows(&[&[2.0, 0.0], &[4.0, 0.0], &[8.0, 0.0]]));
        assert_eq!(spec.column(0).collect::<Vec<_>>(), vec![0.25, 0.5, 1.0]);
        assert_eq!(spec.column(1).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_examples() {
        let spec = threshold_noise(spec_from_rows(&[&[0.05], &[0.1], &[0.95]]), 0.1);
        assert_eq!(spec.column(0).collect::<Vec<_>>(), vec![0.0, 0.1, 0.95]);
        let keep = spec_from_rows(&[&[0.2, 0.5], &[1.0, 0.3]]);
        assert_eq!(threshold_noise(keep.clone(), 0.1), keep);
    }

    #[test]
    fn argmax_prefers_lower_row_on_ties() {
        let spec = spec_from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(spec.argmax_rows(), vec![Some(0), None]);
    }

    #[test]
    fn matrix_dump_layout() {
        let spec = spec_from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let mut bytes = Vec::new();
        write_spectrogram(&mut bytes, &spec).unwrap();
        assert_eq!(&bytes[0..4], b"RPSG");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16 + 3 * 4..16 + 4 * 4], &4.0f32.to_le_bytes());
        let (magic, rows, cols, values) = read_matrix(bytes.as_slice()).unwrap();
        assert_eq!((magic, rows, cols), (SPECTROGRAM_MAGIC, 2, 3));
        assert_eq!(values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn rescaled_keeps_durations() {
        let cfg = StftConfig::default().rescaled(120.0);
        assert_eq!(cfg.window_length, 2048);
        assert_eq!(cfg.stride, 16);
        assert!((cfg.bin_width_bpm() - StftConfig::default().bin_width_bpm()).abs() < 1e-12);
    }
}
