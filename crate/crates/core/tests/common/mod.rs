//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the code under test except to
//! build inputs.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg::evaluation::curve_mae;
use rppg::fitter::{fit_detailed, sample_heart_rate, FitConfig, FitResult};
use rppg::spectrogram::{build_spectrogram, Spectrogram, StftConfig};
use rppg::synth::{generate_signal, DistortionSpec, HrTrajectory};
use rppg::HeartRateCurve;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Spectrogram with uniform random powers in `[0, 1)`, BPM axis 50 + k.
pub fn random_spectrogram(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Spectrogram {
    let powers = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
    axes(powers, rows, cols)
}

pub fn axes(powers: Vec<f64>, rows: usize, cols: usize) -> Spectrogram {
    Spectrogram::from_parts(
        powers,
        (0..rows).map(|k| 50.0 + k as f64).collect(),
        (0..cols).map(|l| l as f64).collect(),
    )
    .unwrap()
}

pub fn spectrogram_from(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Spectrogram {
    let mut powers = Vec::with_capacity(rows * cols);
    for k in 0..rows {
        for l in 0..cols {
            powers.push(f(k, l));
        }
    }
    axes(powers, rows, cols)
}

/// Direct nested-loop evaluation of the polyline objective.
pub fn naive_loss(xs: &[f64], ys: &[f64], spec: &Spectrogram, cfg: &FitConfig) -> f64 {
    let k_count = spec.rows();
    let l_count = spec.cols() as i64;
    let m_count = xs.len();
    let p = ((xs[1] - xs[0]) / 2.0).round() as i64;

    let mut smooth = 0.0;
    for m in 0..m_count - 1 {
        let dy = ys[m + 1] - ys[m];
        smooth += (dy * dy + cfg.smoothing_epsilon * cfg.smoothing_epsilon).powf(cfg.beta / 2.0);
    }

    let mut ridge = 0.0;
    for m in 0..m_count {
        let x = xs[m].round() as i64;
        let mut inner = 0.0;
        for k in 0..k_count {
            let w = 1.0 / (1.0 + (k as f64 - ys[m]).powi(2) / (k_count as f64 * cfg.r * cfg.r));
            let mut column_total = 0.0;
            for l in (x - p)..=(x + p) {
                if l >= 0 && l < l_count {
                    column_total += spec.get(k, l as usize);
                }
            }
            inner += w * column_total;
        }
        ridge += inner * inner;
    }
    cfg.alpha * smooth - ridge / cfg.alpha
}

/// Double-loop power-weighted row centroid.
pub fn naive_centroid(spec: &Spectrogram) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..spec.rows() {
        for l in 0..spec.cols() {
            num += k as f64 * spec.get(k, l);
            den += spec.get(k, l);
        }
    }
    num / den
}

/// Even-odd point-in-polygon (PNPOLY form) with exact on-edge detection.
pub fn brute_inside(poly: &[[f64; 2]], px: f64, py: f64) -> bool {
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        let cross = (xj - xi) * (py - yi) - (yj - yi) * (px - xi);
        let in_box = px >= xi.min(xj) && px <= xi.max(xj) && py >= yi.min(yj) && py <= yi.max(yj);
        if cross == 0.0 && in_box {
            return true;
        }
        j = i;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixels `(x, y)` whose centers pass [`brute_inside`], row-major.
pub fn brute_raster(poly: &[[f64; 2]], width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if brute_inside(poly, x as f64 + 0.5, y as f64 + 0.5) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Star-shaped polygon (possibly non-convex) around a random center, in
/// pixel units. Some vertices snap to the half-pixel grid so that centers
/// land exactly on edges and vertices.
pub fn random_star_polygon(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<[f64; 2]> {
    let n = rng.gen_range(3..=9);
    let cx = rng.gen_range(4.0..width as f64 - 4.0);
    let cy = rng.gen_range(4.0..height as f64 - 4.0);
    let snap = rng.gen_bool(0.4);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let r = rng.gen_range(1.0..14.0);
            let (mut x, mut y) = (cx + r * a.cos(), cy + r * a.sin());
            if snap {
                x = (x * 2.0).round() / 2.0;
                y = (y * 2.0).round() / 2.0;
            }
            [x, y]
        })
        .collect()
}

pub const EXPERIMENT_MAE: [f64; 26] = [
    0.63, 1.57, 0.32, 7.80, 7.41, 5.13, 0.74, 0.46, 0.98, 3.26, 1.90, 0.63, 0.47, 1.29, 2.86, 3.79, 1.20, 1.26,
    0.45, 1.12, 1.40, 1.78, 1.22, 0.39, 0.73, 1.77,
];

/// A reference curve and a video curve that deviates from it by exactly
/// `offset` BPM at every video timestamp, with alternating sign. The
/// reference is sampled at half the video step so alignment interpolates.
pub fn offset_pair(offset: f64, seed: u64) -> (HeartRateCurve, HeartRateCurve) {
    let mut r = rng(seed);
    let base = r.gen_range(60.0..90.0);
    let swing = r.gen_range(0.0..8.0);
    let hr = |t: f64| base + swing * (t / 40.0).sin();
    let ref_times: Vec<f64> = (0..=1200).map(|i| i as f64 * 0.25).collect();
    let reference = HeartRateCurve::new(ref_times.clone(), ref_times.iter().map(|&t| hr(t)).collect()).unwrap();
    // Video samples sit on reference timestamps so interpolation is exact.
    let video_times: Vec<f64> = (4..1180).step_by(2).map(|i| i as f64 * 0.25).collect();
    let video_bpm = video_times
        .iter()
        .enumerate()
        .map(|(i, &t)| reference.value_at(t).unwrap() + if i % 2 == 0 { offset } else { -offset })
        .collect();
    (HeartRateCurve::new(video_times, video_bpm).unwrap(), reference)
}

pub struct EndToEnd {
    pub fit_mae: f64,
    pub argmax_mae: f64,
    pub spectrogram: Spectrogram,
    pub curve: HeartRateCurve,
    pub truth: HeartRateCurve,
    pub fit: FitResult,
}

/// Per-column argmax BPM, as a curve on the spectrogram's time axis.
pub fn argmax_curve(spec: &Spectrogram) -> HeartRateCurve {
    let bpm = spec
        .argmax_rows()
        .into_iter()
        .map(|k| spec.freq_bpm()[k.unwrap_or(0)])
        .collect();
    HeartRateCurve::new(spec.time_s().to_vec(), bpm).unwrap()
}

/// Signal-level pipeline: generate, spectrogram, fit, score.
pub fn run_signal(traj: &HrTrajectory, duration_s: f64, distortion: DistortionSpec, seed: u64, fit: &FitConfig) -> EndToEnd {
    let stft = StftConfig::default();
    let signal = generate_signal(traj, stft.frame_rate, duration_s, &distortion, seed).unwrap();
    score(build_spectrogram(&signal.samples, &stft).unwrap(), traj, fit)
}

pub fn score(spectrogram: Spectrogram, traj: &HrTrajectory, fit: &FitConfig) -> EndToEnd {
    let result = fit_detailed(&spectrogram, fit).unwrap();
    let curve = sample_heart_rate(&result.polyline, &spectrogram);
    let truth = traj.curve_at(spectrogram.time_s()).unwrap();
    let fit_mae = curve_mae(&curve, &truth).unwrap();
    let argmax_mae = curve_mae(&argmax_curve(&spectrogram), &truth).unwrap();
    EndToEnd {
        fit_mae,
        argmax_mae,
        spectrogram,
        curve,
        truth,
        fit: result,
    }
}

/// Fraction of optimizer steps that lowered the loss.
pub fn decrease_fraction(fit: &FitResult) -> f64 {
    let steps = fit.loss_history.len() - 1;
    let down = fit.loss_history.windows(2).filter(|w| w[1] < w[0]).count();
    down as f64 / steps.max(1) as f64
}

/// Relative error used for gradient checks: the difference over the larger
/// magnitude, floored at a small fraction of the gradient's scale so that
/// components near zero do not dominate.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6 * scale).max(1e-300)
}
