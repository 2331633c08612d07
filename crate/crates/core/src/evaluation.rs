//! Reference heart rate and curve scoring.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectrogram::{compute_spectrogram, StftConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeartRateCurve {
    times: Vec<f64>,
    bpm: Vec<f64>,
}

impl HeartRateCurve {
    pub fn new(times: Vec<f64>, bpm: Vec<f64>) -> Result<Self> {
        if times.len() != bpm.len() {
            return Err(Error::LengthMismatch {
                what: "curve times vs bpm",
                left: times.len(),
                right: bpm.len(),
            });
        }
        if times.iter().chain(&bpm).any(|v| !v.is_finite()) {
            return Err(Error::Config("curve values must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("curve times must be strictly increasing".into()));
        }
        Ok(Self { times, bpm })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bpm(&self) -> &[f64] {
        &self.bpm
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same values, every timestamp moved by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + dt).collect(),
            bpm: self.bpm.clone(),
        }
    }

    /// Linear interpolation at `t`; `None` outside `[first, last]`.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first || t > last {
            return None;
        }
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return Some(self.bpm[0]);
        }
        let lo = i - 1;
        if lo + 1 == self.times.len() || self.times[lo] == t {
            return Some(self.bpm[lo]);
        }
        let s = (t - self.times[lo]) / (self.times[lo + 1] - self.times[lo]);
        Some((1.0 - s) * self.bpm[lo] + s * self.bpm[lo + 1])
    }

    pub fn mean_bpm(&self) -> f64 {
        self.bpm.iter().sum::<f64>() / self.bpm.len().max(1) as f64
    }
}

/// Contact-sensor recording: reflected-light amplitude samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRecording {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Time of the first sample relative to video start.
    pub start_offset: f64,
}

impl ReferenceRecording {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "reference sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference samples must be finite".into()));
        }
        Ok(())
    }

    /// Builds a recording from `(time, amplitude)` rows with uniform spacing.
    pub fn from_timed(times: &[f64], samples: Vec<f64>) -> Result<Self> {
        if times.len() != samples.len() {
            return Err(Error::LengthMismatch {
                what: "reference times vs samples",
                left: times.len(),
                right: samples.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::SignalTooShort {
                len: times.len(),
                needed: 2,
            });
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::Config("reference times must increase".into()));
        }
        // Timestamps are printed with finite precision; allow 1% jitter.
        let tolerance = 0.01 * dt;
        for (i, &t) in times.iter().enumerate() {
            if (t - (times[0] + i as f64 * dt)).abs() > tolerance {
                return Err(Error::Config(format!(
                    "reference sample {i} at {t} s breaks uniform spacing of {dt} s"
                )));
            }
        }
        let rec = Self {
            samples,
            sample_rate: 1.0 / dt,
            start_offset: times[0],
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Per-window argmax heart rate of the contact recording, using the video
/// window and hop durations rescaled to the reference sample rate. Windows
/// with no in-band energy are skipped.
pub fn reference_hr(rec: &ReferenceRecording, config: &StftConfig) -> Result<HeartRateCurve> {
    rec.validate()?;
    let scaled = config.rescaled(rec.sample_rate);
    let spec = compute_spectrogram(&rec.samples, &scaled)?;
    let mut times = Vec::new();
    let mut bpm = Vec::new();
    for (l, best) in spec.argmax_rows().into_iter().enumerate() {
        if let Some(k) = best {
            times.push(spec.time_s()[l] + rec.start_offset);
            bpm.push(spec.freq_bpm()[k]);
        }
    }
    if times.is_empty() {
        return Err(Error::EmptySpectrogram);
    }
    HeartRateCurve::new(times, bpm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    pub times: Vec<f64>,
    pub video: Vec<f64>,
    pub reference: Vec<f64>,
}

impl PairedSamples {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Interpolates the reference onto the video timestamps; video samples
/// outside the reference span are dropped.
pub fn align(video: &HeartRateCurve, reference: &HeartRateCurve) -> Result<PairedSamples> {
    let mut out = PairedSamples {
        times: Vec::new(),
        video: Vec::new(),
        reference: Vec::new(),
    };
    for (&t, &v) in video.times().iter().zip(video.bpm()) {
        if let Some(r) = reference.value_at(t) {
            out.times.push(t);
            out.video.push(v);
            out.reference.push(r);
        }
    }
    if out.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(out)
}

pub fn mae(pairs: &PairedSamples) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairing);
    }
    let total: f64 = pairs.video.iter().zip(&pairs.reference).map(|(v, r)| (v - r).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// Aligns and scores in one step.
pub fn curve_mae(video: &HeartRateCurve, reference: &HeartRateCurve) -> Result<f64> {
    mae(&align(video, reference)?)
}

/// Arithmetic mean of per-experiment MAEs.
pub fn batch_mean(maes: &[f64]) -> Result<f64> {
    if maes.is_empty() {
        return Err(Error::EmptyPairing);
    }
    Ok(maes.iter().sum::<f64>() / maes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(times: &[f64], bpm: &[f64]) -> HeartRateCurve {
        HeartRateCurve::new(times.to_vec(), bpm.to_vec()).unwrap()
    }

    #[test]
    fn curve_validation() {
        assert!(HeartRateCurve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(HeartRateCurve::new(vec![0.0], vec![]).is_err());
        assert!(HeartRateCurve::new(vec![0.0, 1.0], vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn align_identity() {
        let c = curve(&[0.0, 1.0, 2.0], &[60.0, 70.0, 80.0]);
        let p = align(&c, &c).unwrap();
        assert_eq!(p.video, p.reference);
        assert_eq!(p.times, c.times());
        assert_eq!(mae(&p).unwrap(), 0.0);
    }

    #[test]
    fn align_interpolates_half_step_shift() {
        let video = curve(&[0.5, 1.5, 2.5], &[0.0, 0.0, 0.0]);
        let reference = curve(&[0.0, 1.0, 2.0, 3.0], &[60.0, 70.0, 90.0, 80.0]);
        let p = align(&video, &reference).unwrap();
        assert_eq!(p.reference, vec![65.0, 80.0, 85.0]);
    }

    #[test]
    fn align_drops_non_overlap() {
        let video = curve(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4]);
        let reference = curve(&[1.0, 2.0], &[5.0, 5.0]);
        assert_eq!(align(&video, &reference).unwrap().times, vec![1.0, 2.0]);
        let far = curve(&[10.0, 11.0], &[5.0, 5.0]);
        assert!(matches!(align(&video, &far), Err(Error::NoOverlap)));
    }

    #[test]
    fn mae_examples() {
        let a = curve(&[0.0, 1.0, 2.0], &[70.0, 72.0, 74.0]);
        let b = curve(&[0.0, 1.0, 2.0], &[72.0, 74.0, 76.0]);
        assert!((curve_mae(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let empty = PairedSamples {
            times: vec![],
            video: vec![],
            reference: vec![],
        };
        assert!(matches!(mae(&empty), Err(Error::EmptyPairing)));
        assert!(batch_mean(&[]).is_err());
        assert_eq!(batch_mean(&[1.0, 2.0, 6.0]).unwrap(), 3.0);
    }

    #[test]
    fn constant_reference_has_no_ridge() {
        let rec = ReferenceRecording {
            samples: vec![0.4; 3000],
            sample_rate: 100.0,
            start_offset: 0.0,
        };
        assert!(matches!(reference_hr(&rec, &StftConfig::default()), Err(Error::EmptySpectrogram)));
    }

    #[test]
    fn reference_from_timed_rows() {
        let times: Vec<f64> = (0..10).map(|i| 1.0 + i as f64 * 0.01).collect();
        let rec = ReferenceRecording::from_timed(&times, vec![0.0; 10]).unwrap();
        assert!((rec.sample_rate - 100.0).abs() < 1e-9);
        assert_eq!(rec.start_offset, 1.0);
        let mut uneven = times.clone();
        uneven[5] += 0.004;
        assert!(ReferenceRecording::from_timed(&uneven, vec![0.0; 10]).is_err());
    }
}
