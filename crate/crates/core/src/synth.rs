//! Synthetic inputs with known heart rate.
//!
//! Signals are unit-amplitude sinusoids whose phase integrates a
//! piecewise-linear BPM trajectory, plus optional Gaussian noise and motion
//! spikes (all in a\* units). Frame sequences paint that signal into the
//! a\* channel of face cells laid out on a plain background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::color::{lab_to_srgb_f64, quantize, srgb_to_lab, Lab, RgbFrame};
use crate::error::{Error, Result};
use crate::evaluation::HeartRateCurve;
use crate::roi::{CellSignalSeries, CellSpec, LandmarkFrame};

/// Length of one motion spike.
pub const SPIKE_DURATION_S: f64 = 1.0;

const NOISE_STREAM: u64 = 1;
const SPIKE_STREAM: u64 = 2;
const DITHER_STREAM: u64 = 3;

/// Piecewise-linear heart rate over time, held constant outside its span.
#[derive(Debug, Clone, PartialEq)]
pub struct HrTrajectory {
    breakpoints: Vec<(f64, f64)>,
}

impl HrTrajectory {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::Config("trajectory needs at least one breakpoint".into()));
        }
        if breakpoints.iter().any(|&(t, b)| !(t.is_finite() && b.is_finite() && b > 0.0)) {
            return Err(Error::Config("trajectory breakpoints must be finite with positive BPM".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("trajectory times must be strictly increasing".into()));
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(bpm: f64) -> Result<Self> {
        Self::new(vec![(0.0, bpm)])
    }

    pub fn ramp(duration_s: f64, from_bpm: f64, to_bpm: f64) -> Result<Self> {
        Self::new(vec![(0.0, from_bpm), (duration_s, to_bpm)])
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn bpm_at(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        if t <= bp[0].0 {
            return bp[0].1;
        }
        let last = bp[bp.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = bp.partition_point(|&(x, _)| x <= t);
        let (t0, b0) = bp[i - 1];
        let (t1, b1) = bp[i];
        b0 + (b1 - b0) * (t - t0) / (t1 - t0)
    }

    /// Rejects trajectories that leave `[low, high]` BPM.
    pub fn check_band(&self, low: f64, high: f64) -> Result<()> {
        for &(t, b) in &self.breakpoints {
            if b < low || b > high {
                return Err(Error::Config(format!(
                    "trajectory reaches {b} BPM at {t} s, outside [{low}, {high}]"
                )));
            }
        }
        Ok(())
    }

    /// Ground-truth curve at the given timestamps.
    pub fn curve_at(&self, times: &[f64]) -> Result<HeartRateCurve> {
        HeartRateCurve::new(times.to_vec(), times.iter().map(|&t| self.bpm_at(t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionSpec {
    /// Per-sample Gaussian noise, a\* units.
    pub additive_noise_sigma: f64,
    /// Lightness swing: L\* runs linearly from `1 - amp` to `1 + amp` times
    /// its base value over the clip. Frames only.
    pub luminosity_ramp_amplitude: f64,
    /// Mean spike count per minute (Poisson arrivals).
    pub motion_spike_rate: f64,
    /// Peak spike height, a\* units; the sign is random per spike.
    pub motion_spike_amplitude: f64,
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("additive_noise_sigma", self.additive_noise_sigma),
            ("luminosity_ramp_amplitude", self.luminosity_ramp_amplitude),
            ("motion_spike_rate", self.motion_spike_rate),
            ("motion_spike_amplitude", self.motion_spike_amplitude),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.luminosity_ramp_amplitude >= 1.0 {
            return Err(Error::Config("luminosity_ramp_amplitude must be below 1".into()));
        }
        Ok(())
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Spike start times (seconds) and signs for a Poisson process.
pub fn spike_events(duration_s: f64, rate_per_minute: f64, seed: u64) -> Vec<(f64, f64)> {
    if rate_per_minute <= 0.0 {
        return Vec::new();
    }
    let mut rng = rng(seed, SPIKE_STREAM);
    let mean_gap = 60.0 / rate_per_minute;
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen();
        t += -mean_gap * (1.0 - u).ln();
        if t >= duration_s {
            break;
        }
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        events.push((t, sign));
    }
    events
}

/// Raised-cosine bump of unit height lasting [`SPIKE_DURATION_S`].
fn spike_shape(dt: f64) -> f64 {
    if (0.0..SPIKE_DURATION_S).contains(&dt) {
        0.5 * (1.0 - (2.0 * std::f64::consts::PI * dt / SPIKE_DURATION_S).cos())
    } else {
        0.0
    }
}

/// Synthetic a\* signal: `sin(phase)` with `phase += 2π f(t) / frame_rate`,
/// plus the configured noise and spikes. Deterministic per seed.
pub fn generate_signal(
    traj: &HrTrajectory,
    frame_rate: f64,
    duration_s: f64,
    distortion: &DistortionSpec,
    seed: u64,
) -> Result<CellSignalSeries> {
    distortion.validate()?;
    if !(frame_rate.is_finite() && frame_rate > 0.0 && duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Config(format!(
            "frame rate and duration must be positive, got {frame_rate} fps / {duration_s} s"
        )));
    }
    let n = (duration_s * frame_rate).round() as usize;
    let mut samples = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    for i in 0..n {
        let t = i as f64 / frame_rate;
        samples.push(phase.sin());
        phase += 2.0 * std::f64::consts::PI * traj.bpm_at(t) / 60.0 / frame_rate;
        phase %= 2.0 * std::f64::consts::PI;
    }

    if distortion.additive_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, distortion.additive_noise_sigma).expect("sigma is finite");
        let mut rng = rng(seed, NOISE_STREAM);
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }

    if distortion.motion_spike_amplitude > 0.0 {
        for (start, sign) in spike_events(duration_s, distortion.motion_spike_rate, seed) {
            let first = (start * frame_rate).ceil() as usize;
            let last = (((start + SPIKE_DURATION_S) * frame_rate).ceil() as usize).min(n);
            for (i, s) in samples.iter_mut().enumerate().take(last).skip(first) {
                *s += sign * distortion.motion_spike_amplitude * spike_shape(i as f64 / frame_rate - start);
            }
        }
    }

    Ok(CellSignalSeries {
        cell_id: 0,
        samples,
        frame_rate,
        filled_frames: 0,
    })
}

/// Frame size, cells and the landmark positions that realize them.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceGeometry {
    pub width: usize,
    pub height: usize,
    pub landmarks: Vec<[f64; 2]>,
    pub cells: Vec<CellSpec>,
}

impl FaceGeometry {
    /// Lays the cells out on a grid, each as a regular polygon over its own
    /// landmarks. Landmarks no cell uses sit at the frame center. Cells that
    /// share landmarks distort each other.
    pub fn grid(width: usize, height: usize, cells: Vec<CellSpec>, landmark_count: usize) -> Self {
        let needed = cells
            .iter()
            .flat_map(|c| c.vertex_landmarks().iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        let mut landmarks = vec![[0.5, 0.5]; landmark_count.max(needed)];
        let n = cells.len().max(1);
        let grid_cols = (n as f64).sqrt().ceil() as usize;
        let grid_rows = n.div_ceil(grid_cols);
        let (slot_w, slot_h) = (1.0 / grid_cols as f64, 1.0 / grid_rows as f64);
        for (i, cell) in cells.iter().enumerate() {
            let cx = (i % grid_cols) as f64 * slot_w + slot_w / 2.0;
            let cy = (i / grid_cols) as f64 * slot_h + slot_h / 2.0;
            let verts = cell.vertex_landmarks();
            for (j, &idx) in verts.iter().enumerate() {
                let angle = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / verts.len() as f64;
                landmarks[idx] = [cx + 0.4 * slot_w * angle.cos(), cy + 0.4 * slot_h * angle.sin()];
            }
        }
        Self {
            width,
            height,
            landmarks,
            cells,
        }
    }

    /// The default cell set on a `width`×`height` frame with 468 landmarks.
    pub fn default_face(width: usize, height: usize) -> Self {
        Self::grid(width, height, crate::roi::default_cells(), 468)
    }
}

/// Appearance and timing of a synthetic clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub geometry: FaceGeometry,
    pub frame_rate: f64,
    pub duration_s: f64,
    /// a\* swing of the pulse, a\* units per unit of signal.
    pub pulse_amplitude: f64,
    pub skin_rgb: [u8; 3],
    pub background_rgb: [u8; 3],
}

impl Scene {
    pub fn new(geometry: FaceGeometry, frame_rate: f64, duration_s: f64) -> Self {
        Self {
            geometry,
            frame_rate,
            duration_s,
            pulse_amplitude: 2.0,
            skin_rgb: [190, 140, 120],
            background_rgb: [90, 110, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub frames: Vec<RgbFrame>,
    pub landmarks: Vec<LandmarkFrame>,
    pub cells: Vec<CellSpec>,
    /// The a\* signal painted into the cells (before 8-bit encoding).
    pub signal: CellSignalSeries,
    pub frame_rate: f64,
}

impl SyntheticVideo {
    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.frames.len()).map(|i| i as f64 / self.frame_rate).collect()
    }
}

/// Renders a frame sequence: cell pixels carry `skin a* + pulse_amplitude *
/// signal(t)`, everything gets the lightness ramp, then each pixel is encoded
/// to 8-bit sRGB with ±0.5 level dither.
pub fn generate_frames(
    traj: &HrTrajectory,
    distortion: &DistortionSpec,
    scene: &Scene,
    seed: u64,
) -> Result<SyntheticVideo> {
    let signal = generate_signal(traj, scene.frame_rate, scene.duration_s, distortion, seed)?;
    let geo = &scene.geometry;
    if geo.width == 0 || geo.height == 0 {
        return Err(Error::Config("frame size must be non-zero".into()));
    }
    let skin = srgb_to_lab(scene.skin_rgb);
    let background = srgb_to_lab(scene.background_rgb);
    let landmark_frame = LandmarkFrame::new(0, geo.landmarks.clone());

    let mut in_cell = vec![false; geo.width * geo.height];
    for cell in &geo.cells {
        // Degenerate layout cells simply paint nothing; the sampler reports them.
        if let Ok(pixels) = crate::roi::rasterize_cell(cell, &landmark_frame, geo.width, geo.height) {
            for p in pixels {
                in_cell[p.y * geo.width + p.x] = true;
            }
        }
    }

    let n = signal.samples.len();
    let mut dither = rng(seed, DITHER_STREAM);
    let mut frames = Vec::with_capacity(n);
    let mut landmarks = Vec::with_capacity(n);
    for (i, &s) in signal.samples.iter().enumerate() {
        let progress = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let lum = 1.0 + distortion.luminosity_ramp_amplitude * (2.0 * progress - 1.0);
        let face = lab_to_srgb_f64(Lab {
            l: skin.l * lum,
            a: skin.a + scene.pulse_amplitude * s,
            b: skin.b,
        });
        let back = lab_to_srgb_f64(Lab {
            l: background.l * lum,
            ..background
        });
        let pixels = in_cell
            .iter()
            .map(|&inside| {
                let base = if inside { face } else { back };
                base.map(|c| quantize(c + (dither.gen::<f64>() - 0.5) / 255.0))
            })
            .collect();
        frames.push(RgbFrame::new(geo.width, geo.height, pixels)?);
        landmarks.push(LandmarkFrame::new(i, geo.landmarks.clone()));
    }

    Ok(SyntheticVideo {
        frames,
        landmarks,
        cells: geo.cells.clone(),
        signal,
        frame_rate: scene.frame_rate,
    })
}
