mod common;

use common::*;
use rppg::fitter::FitConfig;
use rppg::roi::{build_series_rgb, combine_series, SamplerOptions};
use rppg::spectrogram::{build_spectrogram, StftConfig};
use rppg::synth::{generate_frames, generate_signal, spike_events, DistortionSpec, FaceGeometry, HrTrajectory, Scene};
use rppg::Error;

fn zero_crossings(x: &[f64]) -> Vec<usize> {
    x.windows(2)
        .enumerate()
        .filter(|(_, w)| (w[0] < 0.0) != (w[1] < 0.0))
        .map(|(i, _)| i)
        .collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn rel_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt() / m.abs()
}

#[test]
fn constant_rate_zero_crossings() {
    let traj = HrTrajectory::constant(72.0).unwrap();
    let s = generate_signal(&traj, 30.0, 60.0, &DistortionSpec::default(), 0).unwrap();
    assert_eq!(s.samples.len(), 1800);
    let count = zero_crossings(&s.samples).len() as i64;
    assert!((count - 144).abs() <= 1, "{count} crossings");
}

#[test]
fn ramp_zero_crossings_track_the_trajectory() {
    let fps = 30.0;
    let traj = HrTrajectory::ramp(120.0, 60.0, 100.0).unwrap();
    let s = generate_signal(&traj, fps, 120.0, &DistortionSpec::default(), 0).unwrap();
    // Crossing instants refined by linear interpolation between samples.
    let zc: Vec<f64> = zero_crossings(&s.samples)
        .into_iter()
        .map(|i| {
            let (a, b) = (s.samples[i], s.samples[i + 1]);
            (i as f64 + a / (a - b)) / fps
        })
        .collect();
    // Two crossings per cycle; estimate the rate over four half-cycles.
    for w in zc.windows(5) {
        let (t0, t1) = (w[0], w[4]);
        if t0 < 5.0 || t1 > 115.0 {
            continue;
        }
        let bpm = 60.0 * 2.0 / (t1 - t0);
        let truth = traj.bpm_at((t0 + t1) / 2.0);
        assert!((bpm - truth).abs() <= 2.0, "at {t0:.1}s: {bpm:.2} vs {truth:.2}");
    }
}

#[test]
fn seeded_outputs_repeat() {
    let traj = HrTrajectory::constant(80.0).unwrap();
    let d = DistortionSpec {
        additive_noise_sigma: 0.3,
        motion_spike_rate: 10.0,
        motion_spike_amplitude: 3.0,
        luminosity_ramp_amplitude: 0.1,
    };
    let a = generate_signal(&traj, 30.0, 30.0, &d, 17).unwrap();
    assert_eq!(a, generate_signal(&traj, 30.0, 30.0, &d, 17).unwrap());
    assert_ne!(a, generate_signal(&traj, 30.0, 30.0, &d, 18).unwrap());
    let clean = DistortionSpec::default();
    assert_eq!(
        generate_signal(&traj, 30.0, 30.0, &clean, 1).unwrap(),
        generate_signal(&traj, 30.0, 30.0, &clean, 1).unwrap()
    );
    let scene = Scene::new(FaceGeometry::default_face(24, 24), 30.0, 4.0);
    assert_eq!(
        generate_frames(&traj, &d, &scene, 5).unwrap(),
        generate_frames(&traj, &d, &scene, 5).unwrap()
    );
    assert_eq!(spike_events(120.0, 6.0, 3), spike_events(120.0, 6.0, 3));
}

#[test]
fn clean_ridge_sits_within_one_bin_of_constant_stretches() {
    let cfg = StftConfig::default();
    let traj = HrTrajectory::new(vec![(0.0, 66.0), (50.0, 66.0), (50.5, 110.0), (120.0, 110.0)]).unwrap();
    let s = generate_signal(&traj, cfg.frame_rate, 120.0, &DistortionSpec::default(), 0).unwrap();
    let spec = build_spectrogram(&s.samples, &cfg).unwrap();
    let bin = cfg.bin_width_bpm();
    let curve = argmax_curve(&spec);
    for l in 0..spec.cols() {
        let start = (l * cfg.stride) as f64 / cfg.frame_rate;
        let end = (l * cfg.stride + cfg.window_length) as f64 / cfg.frame_rate;
        let constant = end <= 50.0 || start >= 50.5;
        if constant {
            let truth = traj.bpm_at(start);
            assert!((curve.bpm()[l] - truth).abs() <= bin, "column {l}: {} vs {truth}", curve.bpm()[l]);
        }
    }
}

#[test]
fn frame_path_reproduces_the_signal() {
    let traj = HrTrajectory::constant(72.0).unwrap();
    let scene = Scene::new(FaceGeometry::default_face(48, 48), 30.0, 20.0);
    let video = generate_frames(&traj, &DistortionSpec::default(), &scene, 2).unwrap();
    let series = build_series_rgb(&video.frames, &video.landmarks, &video.cells, SamplerOptions::default()).unwrap();
    let combined = combine_series(&series).unwrap();
    assert_eq!(combined.len(), video.signal.samples.len());
    let r = correlation(&combined, &video.signal.samples);
    assert!(r > 0.99, "correlation {r}");
}

#[test]
fn luminosity_ramp_barely_moves_a_star() {
    let traj = HrTrajectory::constant(72.0).unwrap();
    let mut scene = Scene::new(FaceGeometry::default_face(32, 32), 30.0, 10.0);
    scene.pulse_amplitude = 0.0;
    let d = DistortionSpec {
        luminosity_ramp_amplitude: 0.25,
        ..Default::default()
    };
    let video = generate_frames(&traj, &d, &scene, 3).unwrap();
    let series = build_series_rgb(&video.frames, &video.landmarks, &video.cells, SamplerOptions::default()).unwrap();
    let a_star = combine_series(&series).unwrap();
    let red: Vec<f64> = video.frames.iter().map(|f| f.channel_mean(0)).collect();
    let (a, r) = (rel_std(&a_star), rel_std(&red));
    assert!(a * 5.0 < r, "a* {a}, red {r}");
}

#[test]
fn frame_level_constant_rate_run() {
    let traj = HrTrajectory::constant(84.0).unwrap();
    let scene = Scene::new(FaceGeometry::default_face(32, 32), 30.0, 60.0);
    let d = DistortionSpec {
        additive_noise_sigma: 0.5,
        ..Default::default()
    };
    let video = generate_frames(&traj, &d, &scene, 4).unwrap();
    let series = build_series_rgb(&video.frames, &video.landmarks, &video.cells, SamplerOptions::default()).unwrap();
    let spec = build_spectrogram(&combine_series(&series).unwrap(), &StftConfig::default()).unwrap();
    let run = score(spec, &traj, &FitConfig::default());
    assert!(run.fit_mae < 1.0, "MAE {}", run.fit_mae);
    assert!(run.fit.iterations <= 100);
}

#[test]
fn zero_cells_fail_in_the_sampler() {
    let traj = HrTrajectory::constant(72.0).unwrap();
    let geo = FaceGeometry::grid(16, 16, Vec::new(), 10);
    let video = generate_frames(&traj, &DistortionSpec::default(), &Scene::new(geo, 30.0, 1.0), 0).unwrap();
    assert!(matches!(
        build_series_rgb(&video.frames, &video.landmarks, &video.cells, SamplerOptions::default()),
        Err(Error::NoCells)
    ));
}

#[test]
fn band_and_distortion_checks() {
    assert!(HrTrajectory::constant(40.0).unwrap().check_band(50.0, 150.0).is_err());
    assert!(HrTrajectory::ramp(60.0, 60.0, 151.0).unwrap().check_band(50.0, 150.0).is_err());
    assert!(HrTrajectory::constant(72.0).unwrap().check_band(50.0, 150.0).is_ok());
    let bad = DistortionSpec {
        luminosity_ramp_amplitude: 1.0,
        ..Default::default()
    };
    let traj = HrTrajectory::constant(72.0).unwrap();
    assert!(matches!(generate_signal(&traj, 30.0, 10.0, &bad, 0), Err(Error::Config(_))));
    assert!(HrTrajectory::new(vec![(1.0, 70.0), (1.0, 80.0)]).is_err());
}
