//! Heart rate from face video.
//!
//! Pipeline: sRGB frames are converted to CIELAB ([`color`]), the a\* channel
//! is aggregated over landmark-defined face cells ([`roi`]), the combined
//! signal becomes a normalized, thresholded spectrogram ([`spectrogram`]) and
//! a smooth polyline is fitted along its heart-rate ridge ([`fitter`]). The
//! resulting curve is scored against a reference with [`evaluation`].
//! [`synth`] produces inputs with known ground truth; [`io`], [`config`] and
//! [`pipeline`] tie the stages to files.

pub mod color;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fitter;
pub mod io;
pub mod pipeline;
pub mod roi;
pub mod spectrogram;
pub mod synth;

pub use config::PipelineConfig;
pub use color::{convert_frame, srgb_to_lab, Lab, LabFrame, RgbFrame};
pub use error::{Error, Result};
pub use evaluation::{align, mae, reference_hr, HeartRateCurve, PairedSamples, ReferenceRecording};
pub use fitter::{fit, grad_loss, init_polyline, loss, sample_heart_rate, AdamState, FitConfig, Polyline};
pub use roi::{aggregate_cell, build_series, rasterize_cell, CellSignalSeries, CellSpec, LandmarkFrame};
pub use spectrogram::{build_spectrogram, compute_spectrogram, normalize_columns, threshold_noise, tukey_window, Spectrogram, StftConfig};
pub use pipeline::{run_extract, ExtractResult, RunReport};
pub use synth::{generate_frames, generate_signal, DistortionSpec, HrTrajectory};
