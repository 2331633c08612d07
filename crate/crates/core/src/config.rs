//! Run configuration from flat `key = value` files.
//!
//! Keys are namespaced by stage (`stft.*`, `fit.*`, `roi.*`, `video.*`,
//! `synth.*`); `#` starts a comment. Unknown keys are rejected so typos do
//! not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::roi::{default_cells, parse_cells, CellSpec, SamplerOptions};
use crate::spectrogram::StftConfig;

/// Frame rate used when neither the config nor the frame source states one.
pub const DEFAULT_FRAME_RATE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub width: usize,
    pub height: usize,
    pub duration_s: f64,
    pub pulse_amplitude: f64,
    /// Overrides the scenario's additive noise when set.
    pub noise_sigma: Option<f64>,
    pub luminosity_ramp: Option<f64>,
    pub spike_rate: Option<f64>,
    pub spike_amplitude: Option<f64>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            duration_s: 60.0,
            pulse_amplitude: 2.0,
            noise_sigma: None,
            luminosity_ramp: None,
            spike_rate: None,
            spike_amplitude: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub fit: FitConfig,
    /// Cell layout file; `None` uses the built-in layout.
    pub cells_path: Option<PathBuf>,
    pub normalize_by_pixel_count: bool,
    /// Explicit video frame rate; otherwise taken from the frame source.
    pub frame_rate: Option<f64>,
    pub synth: SynthSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            fit: FitConfig::default(),
            cells_path: None,
            normalize_by_pixel_count: true,
            frame_rate: None,
            synth: SynthSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let mut config = Self::parse(&text, path)?;
        // Relative cell files resolve against the config file's directory.
        if let (Some(cells), Some(dir)) = (&config.cells_path, path.parent()) {
            if cells.is_relative() {
                config.cells_path = Some(dir.join(cells));
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, lineno, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            config
                .set(key, value)
                .map_err(|msg| Error::parse(source, lineno, format!("{key}: {msg}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let s = &mut self.stft;
        let f = &mut self.fit;
        let y = &mut self.synth;
        match key {
            "stft.window_length" => s.window_length = num(value)?,
            "stft.stride" => s.stride = num(value)?,
            "stft.tukey_shape" => s.tukey_shape = num(value)?,
            "stft.band_low_bpm" => s.band_low = num(value)?,
            "stft.band_high_bpm" => s.band_high = num(value)?,
            "stft.noise_threshold" => s.noise_threshold = num(value)?,
            "fit.vertex_count" => f.vertex_count = Some(num(value)?),
            "fit.vertex_spacing_seconds" => f.vertex_spacing_s = num(value)?,
            "fit.alpha" => f.alpha = num(value)?,
            "fit.beta" => f.beta = num(value)?,
            "fit.r" => f.r = num(value)?,
            "fit.learning_rate" => f.learning_rate = num(value)?,
            "fit.max_iterations" => f.max_iterations = num(value)?,
            "fit.convergence_tol" => f.convergence_tol = num(value)?,
            "fit.smoothing_epsilon" => f.smoothing_epsilon = num(value)?,
            "roi.cells" => self.cells_path = Some(PathBuf::from(value)),
            "roi.normalize_by_pixel_count" => self.normalize_by_pixel_count = boolean(value)?,
            "video.frame_rate" => self.frame_rate = Some(num(value)?),
            "synth.width" => y.width = num(value)?,
            "synth.height" => y.height = num(value)?,
            "synth.duration_seconds" => y.duration_s = num(value)?,
            "synth.pulse_amplitude" => y.pulse_amplitude = num(value)?,
            "synth.noise_sigma" => y.noise_sigma = Some(num(value)?),
            "synth.luminosity_ramp" => y.luminosity_ramp = Some(num(value)?),
            "synth.spike_rate_per_minute" => y.spike_rate = Some(num(value)?),
            "synth.spike_amplitude" => y.spike_amplitude = Some(num(value)?),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.stft_for(self.frame_rate.unwrap_or(DEFAULT_FRAME_RATE)).validate()?;
        self.fit.validate()?;
        if let Some(fps) = self.frame_rate {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::Config(format!("video.frame_rate must be positive, got {fps}")));
            }
        }
        let y = &self.synth;
        if y.width == 0 || y.height == 0 {
            return Err(Error::Config("synth.width and synth.height must be non-zero".into()));
        }
        if !(y.duration_s.is_finite() && y.duration_s > 0.0) {
            return Err(Error::Config(format!(
                "synth.duration_seconds must be positive, got {}",
                y.duration_s
            )));
        }
        if !(y.pulse_amplitude.is_finite() && y.pulse_amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "synth.pulse_amplitude must be non-negative, got {}",
                y.pulse_amplitude
            )));
        }
        Ok(())
    }

    /// STFT settings at the given video frame rate.
    pub fn stft_for(&self, frame_rate: f64) -> StftConfig {
        StftConfig { frame_rate, ..self.stft }
    }

    /// The configured frame rate, else the source's, else 30 fps.
    pub fn resolve_frame_rate(&self, source: Option<f64>) -> Result<f64> {
        match (self.frame_rate, source) {
            (Some(cfg), Some(src)) if (cfg - src).abs() > 1e-6 * src.abs() => Err(Error::Config(format!(
                "video.frame_rate = {cfg} disagrees with the frame source ({src} fps)"
            ))),
            (Some(fps), _) | (None, Some(fps)) => Ok(fps),
            (None, None) => Ok(DEFAULT_FRAME_RATE),
        }
    }

    pub fn sampler_options(&self, frame_rate: f64) -> SamplerOptions {
        SamplerOptions {
            normalize_by_pixel_count: self.normalize_by_pixel_count,
            frame_rate,
        }
    }

    pub fn load_cells(&self) -> Result<Vec<CellSpec>> {
        match &self.cells_path {
            Some(path) => parse_cells(&crate::io::read_text(path)?, path),
            None => Ok(default_cells()),
        }
    }

    /// Every effective setting as `key -> value`, for run reports.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let s = &self.stft;
        let f = &self.fit;
        let mut out = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        put("stft.window_length", s.window_length.to_string());
        put("stft.stride", s.stride.to_string());
        put("stft.tukey_shape", s.tukey_shape.to_string());
        put("stft.band_low_bpm", s.band_low.to_string());
        put("stft.band_high_bpm", s.band_high.to_string());
        put("stft.noise_threshold", s.noise_threshold.to_string());
        put(
            "fit.vertex_count",
            f.vertex_count.map_or_else(|| "auto".to_string(), |m| m.to_string()),
        );
        put("fit.vertex_spacing_seconds", f.vertex_spacing_s.to_string());
        put("fit.alpha", f.alpha.to_string());
        put("fit.beta", f.beta.to_string());
        put("fit.r", f.r.to_string());
        put("fit.learning_rate", f.learning_rate.to_string());
        put("fit.max_iterations", f.max_iterations.to_string());
        put("fit.convergence_tol", f.convergence_tol.to_string());
        put("fit.smoothing_epsilon", f.smoothing_epsilon.to_string());
        put(
            "roi.cells",
            self.cells_path
                .as_ref()
                .map_or_else(|| "builtin".to_string(), |p| p.display().to_string()),
        );
        put("roi.normalize_by_pixel_count", self.normalize_by_pixel_count.to_string());
        put(
            "video.frame_rate",
            self.frame_rate.map_or_else(|| "auto".to_string(), |v| v.to_string()),
        );
        out
    }
}

fn num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}
