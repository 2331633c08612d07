//! End-to-end runs: frames and landmarks to a heart-rate curve, curve
//! scoring, and synthetic fixture generation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::{batch_mean, curve_mae, HeartRateCurve};
use crate::fitter::{fit_detailed, sample_heart_rate, weight_map, FitConfig, FitResult};
use crate::io::{self, FrameSource};
use crate::roi::{combine_series, CellSignalSeries, CellSpec, LandmarkFrame, SeriesBuilder};
use crate::spectrogram::{build_spectrogram, write_axes, write_matrix, write_spectrogram, Spectrogram, WEIGHTS_MAGIC};
use crate::synth::{generate_frames, generate_signal, DistortionSpec, FaceGeometry, HrTrajectory, Scene};

/// Frames decoded and sampled per parallel batch.
pub const FRAME_BATCH: usize = 64;

pub const CURVE_FILE: &str = "curve.csv";
pub const SPECTROGRAM_FILE: &str = "spectrogram.bin";
pub const AXES_FILE: &str = "spectrogram_axes.csv";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const REPORT_FILE: &str = "report.json";
pub const MAE_FILE: &str = "mae.csv";

#[derive(Debug, Clone)]
pub struct ExtractResult {
    pub curve: HeartRateCurve,
    pub spectrogram: Spectrogram,
    pub fit: FitResult,
    pub fit_config: FitConfig,
    pub cells: Vec<CellSpec>,
    pub series: Vec<CellSignalSeries>,
    /// Mean of the cell series, the input to the spectrogram.
    pub signal: Vec<f64>,
    pub frame_rate: f64,
    pub warnings: Vec<String>,
}

/// Samples every frame, builds the spectrogram and fits the ridge.
pub fn run_extract(
    frames: &mut dyn FrameSource,
    landmarks: &[LandmarkFrame],
    config: &PipelineConfig,
) -> Result<ExtractResult> {
    config.validate()?;
    if frames.frame_count() != landmarks.len() {
        return Err(Error::LengthMismatch {
            what: "frames vs landmark records",
            left: frames.frame_count(),
            right: landmarks.len(),
        });
    }
    let frame_rate = config.resolve_frame_rate(frames.frame_rate())?;
    let cells = config.load_cells()?;
    log::info!(
        "extract: {} frames {}x{} at {frame_rate} fps, {} cells",
        frames.frame_count(),
        frames.width(),
        frames.height(),
        cells.len()
    );

    let mut builder = SeriesBuilder::new(&cells, config.sampler_options(frame_rate))?;
    loop {
        let batch = frames.read_batch(FRAME_BATCH)?;
        if batch.is_empty() {
            break;
        }
        let start = builder.frames_seen();
        builder.push_rgb(&batch, &landmarks[start..start + batch.len()])?;
    }
    if builder.frames_seen() != landmarks.len() {
        return Err(Error::LengthMismatch {
            what: "frames read vs landmark records",
            left: builder.frames_seen(),
            right: landmarks.len(),
        });
    }
    let series = builder.finish()?;

    let mut warnings = Vec::new();
    for (s, cell) in series.iter().zip(&cells) {
        if s.filled_frames > 0 {
            warn(&mut warnings, format!(
                "cell {} ({}) degenerate in {} of {} frames, held previous sample",
                cell.cell_id,
                cell.name,
                s.filled_frames,
                s.samples.len()
            ));
        }
    }

    let signal = combine_series(&series)?;
    let spectrogram = build_spectrogram(&signal, &config.stft_for(frame_rate))?;
    let fit = fit_detailed(&spectrogram, &config.fit)?;
    let p = fit.polyline.half_span();
    if p > 0 {
        let note = format!(
            "edge vertices sum {} of {} columns (clipped at the spectrogram ends)",
            p + 1,
            2 * p + 1
        );
        log::info!("{note}");
        warnings.push(note);
    }
    if !fit.converged {
        warn(&mut warnings, format!("polyline did not stabilize within {} iterations", fit.iterations));
    }
    let curve = sample_heart_rate(&fit.polyline, &spectrogram);
    Ok(ExtractResult {
        curve,
        spectrogram,
        fit,
        fit_config: config.fit,
        cells,
        series,
        signal,
        frame_rate,
        warnings,
    })
}

fn warn(warnings: &mut Vec<String>, message: String) {
    log::warn!("{message}");
    warnings.push(message);
}

/// [`run_extract`] on files.
pub fn extract_files(frames: &Path, landmarks: &Path, config: &PipelineConfig) -> Result<ExtractResult> {
    let landmarks = io::read_landmarks(landmarks)?;
    let mut source = io::open_frames(frames)?;
    run_extract(source.as_mut(), &landmarks, config)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpOptions {
    pub spectrogram: bool,
    pub weights: bool,
}

/// Writes the curve CSV and requested dumps; returns the written paths.
pub fn write_extract_outputs(dir: &Path, result: &ExtractResult, dumps: DumpOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let curve = dir.join(CURVE_FILE);
    io::write_curve(io::create_file(&curve)?, &result.curve)?;
    written.push(curve);
    if dumps.spectrogram {
        let path = dir.join(SPECTROGRAM_FILE);
        write_spectrogram(io::create_file(&path)?, &result.spectrogram)?;
        written.push(path);
        let path = dir.join(AXES_FILE);
        write_axes(io::create_file(&path)?, &result.spectrogram)?;
        written.push(path);
    }
    if dumps.weights {
        let path = dir.join(WEIGHTS_FILE);
        let poly = &result.fit.polyline;
        let map = weight_map(poly, &result.spectrogram, &result.fit_config);
        write_matrix(io::create_file(&path)?, WEIGHTS_MAGIC, result.spectrogram.rows(), poly.len(), &map)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentScore {
    pub experiment: String,
    pub mae_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub vertex_count: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
}

/// Machine-readable summary of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub experiments: Vec<ExperimentScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_mae_bpm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    pub runtime_seconds: f64,
    pub config: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            command: command.to_string(),
            experiments: Vec::new(),
            mean_mae_bpm: None,
            fit: None,
            runtime_seconds: 0.0,
            config: config.echo(),
            warnings: Vec::new(),
        }
    }

    pub fn with_extract(mut self, result: &ExtractResult) -> Self {
        self.fit = Some(FitSummary {
            vertex_count: result.fit.polyline.len(),
            iterations: result.fit.iterations,
            converged: result.fit.converged,
            final_loss: result.fit.loss_history.last().copied().unwrap_or(0.0),
        });
        self.warnings.extend(result.warnings.iter().cloned());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(REPORT_FILE);
        fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<serde_json::Value> {
        let text = io::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// MAE of a curve against a reference file (raw recording or curve).
pub fn evaluate_curve(curve: &HeartRateCurve, reference: &io::ReferenceInput, config: &PipelineConfig) -> Result<f64> {
    let stft = config.stft_for(config.resolve_frame_rate(None)?);
    let reference = reference.to_curve(&stft)?;
    curve_mae(curve, &reference)
}

pub fn evaluate_files(curve: &Path, reference: &Path, config: &PipelineConfig) -> Result<f64> {
    let curve = io::read_curve(curve)?;
    let reference = io::read_reference(reference)?;
    evaluate_curve(&curve, &reference, config)
}

/// Scores every manifest entry; returns per-experiment MAEs and their mean.
pub fn evaluate_batch(manifest: &Path, config: &PipelineConfig) -> Result<(Vec<ExperimentScore>, f64)> {
    let entries = io::read_batch_manifest(manifest)?;
    let scores = entries
        .iter()
        .map(|e| {
            Ok(ExperimentScore {
                experiment: e.experiment.clone(),
                mae_bpm: evaluate_files(&e.curve, &e.reference, config)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = batch_mean(&scores.iter().map(|s| s.mae_bpm).collect::<Vec<_>>())?;
    Ok((scores, mean))
}

/// Named synthetic scenario: `const<bpm>`, `ramp<from>_<to>` or
/// `spikes<bpm>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub trajectory: HrTrajectory,
    pub distortion: DistortionSpec,
}

/// Noise level of the `const` and `ramp` scenarios, a\* units.
pub const SCENARIO_NOISE: f64 = 0.5;
pub const SCENARIO_SPIKE_RATE: f64 = 6.0;
pub const SCENARIO_SPIKE_AMPLITUDE: f64 = 8.0;

impl Scenario {
    pub fn parse(name: &str, config: &PipelineConfig) -> Result<Self> {
        let bad = || Error::Config(format!("unknown scenario `{name}` (expected const<bpm>, ramp<from>_<to> or spikes<bpm>)"));
        let bpm = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        let duration = config.synth.duration_s;
        let (trajectory, mut distortion) = if let Some(rest) = name.strip_prefix("const") {
            let noisy = DistortionSpec {
                additive_noise_sigma: SCENARIO_NOISE,
                ..Default::default()
            };
            (HrTrajectory::constant(bpm(rest)?)?, noisy)
        } else if let Some(rest) = name.strip_prefix("ramp") {
            let (from, to) = rest.split_once('_').ok_or_else(bad)?;
            let noisy = DistortionSpec {
                additive_noise_sigma: SCENARIO_NOISE,
                ..Default::default()
            };
            (HrTrajectory::ramp(duration, bpm(from)?, bpm(to)?)?, noisy)
        } else if let Some(rest) = name.strip_prefix("spikes") {
            let spiky = DistortionSpec {
                motion_spike_rate: SCENARIO_SPIKE_RATE,
                motion_spike_amplitude: SCENARIO_SPIKE_AMPLITUDE,
                ..Default::default()
            };
            (HrTrajectory::constant(bpm(rest)?)?, spiky)
        } else {
            return Err(bad());
        };
        trajectory.check_band(config.stft.band_low, config.stft.band_high)?;
        let y = &config.synth;
        if let Some(v) = y.noise_sigma {
            distortion.additive_noise_sigma = v;
        }
        if let Some(v) = y.luminosity_ramp {
            distortion.luminosity_ramp_amplitude = v;
        }
        if let Some(v) = y.spike_rate {
            distortion.motion_spike_rate = v;
        }
        if let Some(v) = y.spike_amplitude {
            distortion.motion_spike_amplitude = v;
        }
        distortion.validate()?;
        Ok(Self {
            name: name.to_string(),
            trajectory,
            distortion,
        })
    }
}

pub const SYNTH_FRAMES_FILE: &str = "frames.rpf";
pub const SYNTH_LANDMARKS_FILE: &str = "landmarks.ndjson";
pub const SYNTH_SIGNAL_FILE: &str = "signal.csv";
pub const SYNTH_TRUTH_FILE: &str = "truth.csv";

/// Writes frames, landmarks, the clean a\* signal and the ground-truth curve
/// for a scenario. Returns the written paths.
pub fn run_synth(scenario: &Scenario, config: &PipelineConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let frame_rate = config.resolve_frame_rate(None)?;
    let y = &config.synth;
    let mut scene = Scene::new(FaceGeometry::default_face(y.width, y.height), frame_rate, y.duration_s);
    scene.pulse_amplitude = y.pulse_amplitude;
    let video = generate_frames(&scenario.trajectory, &scenario.distortion, &scene, seed)?;
    let clean = generate_signal(&scenario.trajectory, frame_rate, y.duration_s, &DistortionSpec::default(), seed)?;
    let truth = scenario.trajectory.curve_at(&video.frame_times())?;

    fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [SYNTH_FRAMES_FILE, SYNTH_LANDMARKS_FILE, SYNTH_SIGNAL_FILE, SYNTH_TRUTH_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    io::write_raw_frames(io::create_file(&paths[0])?, &video.frames, frame_rate)?;
    io::write_landmarks(io::create_file(&paths[1])?, &video.landmarks)?;
    io::write_signal(io::create_file(&paths[2])?, &clean.samples, frame_rate)?;
    io::write_curve(io::create_file(&paths[3])?, &truth)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::RawFrameReader;

    #[test]
    fn scenario_names() {
        let cfg = PipelineConfig::default();
        let s = Scenario::parse("const72", &cfg).unwrap();
        assert_eq!(s.trajectory.bpm_at(10.0), 72.0);
        assert_eq!(s.distortion.additive_noise_sigma, SCENARIO_NOISE);
        let r = Scenario::parse("ramp60_100", &cfg).unwrap();
        assert_eq!(r.trajectory.bpm_at(0.0), 60.0);
        assert_eq!(r.trajectory.bpm_at(cfg.synth.duration_s), 100.0);
        let k = Scenario::parse("spikes72", &cfg).unwrap();
        assert_eq!(k.distortion.motion_spike_rate, SCENARIO_SPIKE_RATE);
        for bad in ["const40", "ramp60_160", "wobble", "const", "ramp60"] {
            assert!(matches!(Scenario::parse(bad, &cfg), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn extract_in_memory_recovers_constant_rate() {
        let mut cfg = PipelineConfig::default();
        cfg.synth.width = 24;
        cfg.synth.height = 24;
        cfg.synth.duration_s = 40.0;
        let scenario = Scenario::parse("const90", &cfg).unwrap();
        let scene = Scene::new(FaceGeometry::default_face(24, 24), 30.0, 40.0);
        let video = generate_frames(&scenario.trajectory, &scenario.distortion, &scene, 7).unwrap();
        let mut raw = Vec::new();
        io::write_raw_frames(&mut raw, &video.frames, 30.0).unwrap();
        let mut source = RawFrameReader::new(&raw[..], Path::new("mem")).unwrap();
        let result = run_extract(&mut source, &video.landmarks, &cfg).unwrap();
        assert_eq!(result.curve.len(), (1200 - 512) / 4 + 1);
        assert!((result.curve.mean_bpm() - 90.0).abs() < 1.0, "{}", result.curve.mean_bpm());

        let mut short = video.landmarks.clone();
        short.pop();
        let mut source = RawFrameReader::new(&raw[..], Path::new("mem")).unwrap();
        assert!(matches!(run_extract(&mut source, &short, &cfg), Err(Error::LengthMismatch { .. })));
    }
}
