//! File formats.
//!
//! * Landmarks: newline-delimited JSON, one `{"frame": i, "points": [[x, y], ...]}`
//!   record per frame, optionally `"missing": true` when no face was found.
//! * Frames: a directory of `frame_NNNNNN.png` files (optional `manifest.json`
//!   with `"fps"`), or a raw stream: `b"RPFR"`, then little-endian `u32`
//!   version (1), width, height, frame count and `f32` frame rate, then
//!   `width * height * 3` RGB bytes per frame, row-major.
//! * Curves: CSV with header `time_seconds,bpm`.
//! * Reference recordings: two columns `time_seconds, amplitude`, comma or
//!   whitespace separated, optional header. A `time_seconds,bpm` header marks
//!   an already processed reference curve instead.
//!
//! All CSVs use `.` decimals and `\n` line endings.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::RgbFrame;
use crate::error::{Error, Result};
use crate::evaluation::{reference_hr, HeartRateCurve, ReferenceRecording};
use crate::roi::LandmarkFrame;
use crate::spectrogram::StftConfig;

pub const RAW_FRAMES_MAGIC: [u8; 4] = *b"RPFR";
pub const RAW_FRAMES_VERSION: u32 = 1;
const RAW_HEADER_LEN: u64 = 24;

pub const CURVE_HEADER: &str = "time_seconds,bpm";
pub const SIGNAL_HEADER: &str = "time_seconds,a_star";
pub const MAE_HEADER: &str = "experiment,mae_bpm";
pub const BATCH_HEADER: &str = "experiment,curve,reference";

fn missing_or_io(path: &Path, err: io::Error) -> Error {
    if err.kind() == io::ErrorKind::NotFound {
        Error::InputMissing(path.to_path_buf())
    } else {
        Error::Io(err)
    }
}

pub fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| missing_or_io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| missing_or_io(path, e))
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkRecord {
    frame: usize,
    #[serde(default)]
    points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    missing: bool,
}

pub fn parse_landmarks(text: &str, source: &Path) -> Result<Vec<LandmarkFrame>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec: LandmarkRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(source, idx + 1, e.to_string()))?;
        if !rec.missing && rec.points.is_empty() {
            return Err(Error::parse(source, idx + 1, "record has no points and is not marked missing"));
        }
        out.push(LandmarkFrame {
            frame_index: rec.frame,
            points: rec.points,
            missing: rec.missing,
        });
    }
    Ok(out)
}

pub fn read_landmarks(path: &Path) -> Result<Vec<LandmarkFrame>> {
    parse_landmarks(&read_text(path)?, path)
}

pub fn write_landmarks<W: Write>(mut out: W, frames: &[LandmarkFrame]) -> Result<()> {
    for f in frames {
        let rec = LandmarkRecord {
            frame: f.frame_index,
            points: if f.missing { Vec::new() } else { f.points.clone() },
            missing: f.missing,
        };
        serde_json::to_writer(&mut out, &rec).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Checks a landmark stream against the shared schema: indices contiguous
/// from 0, at least `min_points` points per present frame, coordinates in
/// `[0, 1]`.
pub fn validate_landmark_stream(frames: &[LandmarkFrame], min_points: usize) -> Result<()> {
    for (pos, f) in frames.iter().enumerate() {
        if f.frame_index != pos {
            return Err(Error::Landmarks(format!("record {pos} carries frame index {}", f.frame_index)));
        }
        if f.missing {
            continue;
        }
        if f.points.len() < min_points {
            return Err(Error::Landmarks(format!(
                "frame {pos} has {} points, need at least {min_points}",
                f.points.len()
            )));
        }
        if let Some(p) = f.points.iter().find(|p| !p.iter().all(|c| (0.0..=1.0).contains(c))) {
            return Err(Error::Landmarks(format!("frame {pos} has point {p:?} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Sequential access to a frame sequence of known size.
pub trait FrameSource: Send {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn frame_count(&self) -> usize;
    /// Frame rate stored with the frames, if any.
    fn frame_rate(&self) -> Option<f64>;
    /// Up to `max` further frames; empty once exhausted.
    fn read_batch(&mut self, max: usize) -> Result<Vec<RgbFrame>>;
}

/// Raw RGB stream reader.
pub struct RawFrameReader<R> {
    input: R,
    path: PathBuf,
    width: usize,
    height: usize,
    frame_count: usize,
    frame_rate: f64,
    next: usize,
}

impl RawFrameReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = open_file(path)?;
        let len = file.metadata()?.len();
        let reader = Self::new(BufReader::new(file), path)?;
        let expected = RAW_HEADER_LEN + (reader.frame_count * reader.frame_bytes()) as u64;
        if len != expected {
            return Err(Error::parse(
                path,
                0,
                format!("file is {len} bytes, header implies {expected}"),
            ));
        }
        Ok(reader)
    }
}

impl<R: Read> RawFrameReader<R> {
    pub fn new(mut input: R, path: &Path) -> Result<Self> {
        let mut header = [0u8; RAW_HEADER_LEN as usize];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::parse(path, 0, "truncated frame stream header"))?;
        if header[0..4] != RAW_FRAMES_MAGIC {
            return Err(Error::parse(path, 0, "not a raw frame stream (bad magic)"));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != RAW_FRAMES_VERSION {
            return Err(Error::parse(path, 0, format!("unsupported frame stream version {version}")));
        }
        let (width, height, frame_count) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let frame_rate = f32::from_le_bytes(header[20..24].try_into().unwrap()) as f64;
        if width == 0 || height == 0 {
            return Err(Error::parse(path, 0, format!("frame size {width}x{height}")));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::parse(path, 0, format!("frame rate {frame_rate}")));
        }
        Ok(Self {
            input,
            path: path.to_path_buf(),
            width,
            height,
            frame_count,
            frame_rate,
            next: 0,
        })
    }

    fn frame_bytes(&self) -> usize {
        self.width * self.height * 3
    }
}

impl<R: Read + Send> FrameSource for RawFrameReader<R> {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn frame_rate(&self) -> Option<f64> {
        Some(self.frame_rate)
    }

    fn read_batch(&mut self, max: usize) -> Result<Vec<RgbFrame>> {
        let n = max.min(self.frame_count - self.next);
        let mut buf = vec![0u8; self.frame_bytes()];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            self.input.read_exact(&mut buf).map_err(|_| {
                Error::parse(&self.path, 0, format!("stream ends inside frame {}", self.next))
            })?;
            let pixels = buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            out.push(RgbFrame::new(self.width, self.height, pixels)?);
            self.next += 1;
        }
        Ok(out)
    }
}

pub fn write_raw_frames<W: Write>(mut out: W, frames: &[RgbFrame], frame_rate: f64) -> Result<()> {
    let (width, height) = frames.first().map_or((0, 0), |f| (f.width(), f.height()));
    if frames.iter().any(|f| f.width() != width || f.height() != height) {
        return Err(Error::Config("all frames must share one size".into()));
    }
    out.write_all(&RAW_FRAMES_MAGIC)?;
    for v in [RAW_FRAMES_VERSION, width as u32, height as u32, frames.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(frame_rate as f32).to_le_bytes())?;
    for f in frames {
        for px in f.pixels() {
            out.write_all(px)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn png_frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Numbered PNG directory reader.
pub struct PngDirReader {
    files: Vec<PathBuf>,
    width: usize,
    height: usize,
    frame_rate: Option<f64>,
    next: usize,
}

impl PngDirReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut numbered = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| missing_or_io(dir, e))? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if let Some(num) = name.strip_prefix("frame_").and_then(|r| r.strip_suffix(".png")) {
                if let Ok(i) = num.parse::<usize>() {
                    numbered.push((i, path));
                }
            }
        }
        numbered.sort();
        if numbered.is_empty() {
            return Err(Error::parse(dir, 0, "no frame_NNNNNN.png files"));
        }
        for (pos, (i, path)) in numbered.iter().enumerate() {
            if *i != pos {
                return Err(Error::parse(path, 0, format!("frame numbering has a gap before index {i}")));
            }
        }
        let files: Vec<PathBuf> = numbered.into_iter().map(|(_, p)| p).collect();
        let first = decode_png(&files[0])?;
        let manifest = dir.join("manifest.json");
        let frame_rate = if manifest.exists() {
            let value: serde_json::Value = serde_json::from_str(&read_text(&manifest)?)
                .map_err(|e| Error::parse(&manifest, e.line(), e.to_string()))?;
            match value.get("fps") {
                None => None,
                Some(v) => Some(v.as_f64().filter(|f| *f > 0.0).ok_or_else(|| {
                    Error::parse(&manifest, 0, "fps must be a positive number")
                })?),
            }
        } else {
            None
        };
        Ok(Self {
            width: first.width(),
            height: first.height(),
            files,
            frame_rate,
            next: 0,
        })
    }
}

fn decode_png(path: &Path) -> Result<RgbFrame> {
    let img = image::open(path)
        .map_err(|source| match source {
            image::ImageError::IoError(e) => missing_or_io(path, e),
            source => Error::Image {
                path: path.to_path_buf(),
                source,
            },
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    RgbFrame::new(w, h, pixels)
}

impl FrameSource for PngDirReader {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn frame_count(&self) -> usize {
        self.files.len()
    }

    fn frame_rate(&self) -> Option<f64> {
        self.frame_rate
    }

    fn read_batch(&mut self, max: usize) -> Result<Vec<RgbFrame>> {
        let end = (self.next + max).min(self.files.len());
        let frames = self.files[self.next..end]
            .par_iter()
            .map(|p| decode_png(p))
            .collect::<Result<Vec<_>>>()?;
        for (f, p) in frames.iter().zip(&self.files[self.next..end]) {
            if f.width() != self.width || f.height() != self.height {
                return Err(Error::parse(
                    p,
                    0,
                    format!(
                        "frame is {}x{}, earlier frames are {}x{}",
                        f.width(),
                        f.height(),
                        self.width,
                        self.height
                    ),
                ));
            }
        }
        self.next = end;
        Ok(frames)
    }
}

pub fn write_png_frames(dir: &Path, frames: &[RgbFrame], frame_rate: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    frames.par_iter().enumerate().try_for_each(|(i, f)| {
        let path = dir.join(png_frame_name(i));
        let bytes: Vec<u8> = f.pixels().iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(f.width() as u32, f.height() as u32, bytes)
            .expect("buffer matches frame size");
        img.save(&path).map_err(|source| Error::Image { path, source })
    })?;
    if let Some(fps) = frame_rate {
        let manifest = serde_json::json!({ "frame_count": frames.len(), "fps": fps });
        fs::write(dir.join("manifest.json"), format!("{manifest}\n"))?;
    }
    Ok(())
}

/// Opens a PNG directory or a raw frame stream, by path type.
pub fn open_frames(path: &Path) -> Result<Box<dyn FrameSource>> {
    let meta = fs::metadata(path).map_err(|e| missing_or_io(path, e))?;
    if meta.is_dir() {
        Ok(Box::new(PngDirReader::open(path)?))
    } else {
        Ok(Box::new(RawFrameReader::open(path)?))
    }
}

fn fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn two_numbers(fs: &[&str], source: &Path, line: usize) -> Result<(f64, f64)> {
    if fs.len() != 2 {
        return Err(Error::parse(source, line, format!("expected 2 columns, found {}", fs.len())));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(source, line, format!("`{s}` is not a finite number")))
    };
    Ok((parse(fs[0])?, parse(fs[1])?))
}

fn is_curve_header(fs: &[&str]) -> bool {
    fs.len() == 2 && fs[0] == "time_seconds" && fs[1] == "bpm"
}

pub fn write_curve<W: Write>(mut out: W, curve: &HeartRateCurve) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for (t, b) in curve.times().iter().zip(curve.bpm()) {
        writeln!(out, "{t:.6},{b:.6}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_curve(text: &str, source: &Path) -> Result<HeartRateCurve> {
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, l)) if is_curve_header(&fields(l)) => {}
        Some((n, _)) => return Err(Error::parse(source, n, format!("expected header `{CURVE_HEADER}`"))),
        None => return Err(Error::parse(source, 0, "empty curve file")),
    }
    let (mut times, mut bpm) = (Vec::new(), Vec::new());
    for (n, l) in lines {
        let (t, b) = two_numbers(&fields(l), source, n)?;
        if times.last().is_some_and(|&prev| t <= prev) {
            return Err(Error::parse(source, n, "times must be strictly increasing"));
        }
        times.push(t);
        bpm.push(b);
    }
    if times.is_empty() {
        return Err(Error::parse(source, 0, "curve has no samples"));
    }
    HeartRateCurve::new(times, bpm)
}

pub fn read_curve(path: &Path) -> Result<HeartRateCurve> {
    parse_curve(&read_text(path)?, path)
}

/// A reference file holds either raw sensor samples or a ready curve.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceInput {
    Recording(ReferenceRecording),
    Curve(HeartRateCurve),
}

impl ReferenceInput {
    /// Heart-rate curve, running the spectral estimate on raw recordings.
    pub fn to_curve(&self, video_stft: &StftConfig) -> Result<HeartRateCurve> {
        match self {
            ReferenceInput::Recording(rec) => reference_hr(rec, video_stft),
            ReferenceInput::Curve(c) => Ok(c.clone()),
        }
    }
}

pub fn parse_reference(text: &str, source: &Path) -> Result<ReferenceInput> {
    let mut lines = data_lines(text).peekable();
    let Some(&(first_line, first)) = lines.peek() else {
        return Err(Error::parse(source, 0, "empty reference file"));
    };
    let header = fields(first);
    if is_curve_header(&header) {
        return parse_curve(text, source).map(ReferenceInput::Curve);
    }
    if header.iter().any(|f| f.parse::<f64>().is_err()) {
        if header.len() != 2 {
            return Err(Error::parse(source, first_line, "expected a two-column header"));
        }
        lines.next();
    }
    let (mut times, mut samples) = (Vec::new(), Vec::new());
    for (n, l) in lines {
        let (t, a) = two_numbers(&fields(l), source, n)?;
        times.push(t);
        samples.push(a);
    }
    ReferenceRecording::from_timed(&times, samples).map(ReferenceInput::Recording)
}

pub fn read_reference(path: &Path) -> Result<ReferenceInput> {
    parse_reference(&read_text(path)?, path)
}

pub fn write_reference<W: Write>(mut out: W, rec: &ReferenceRecording) -> Result<()> {
    writeln!(out, "time_seconds,amplitude")?;
    for (i, a) in rec.samples.iter().enumerate() {
        writeln!(out, "{:.6},{a:.9}", rec.start_offset + i as f64 / rec.sample_rate)?;
    }
    out.flush()?;
    Ok(())
}

/// Time-stamped scalar signal, e.g. the clean synthetic a\* series.
pub fn write_signal<W: Write>(mut out: W, samples: &[f64], frame_rate: f64) -> Result<()> {
    writeln!(out, "{SIGNAL_HEADER}")?;
    for (i, v) in samples.iter().enumerate() {
        writeln!(out, "{:.6},{v:.9}", i as f64 / frame_rate)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-experiment MAE table; `mean` adds a final `mean` row.
pub fn write_mae_table<W: Write>(mut out: W, rows: &[(String, f64)], mean: Option<f64>) -> Result<()> {
    writeln!(out, "{MAE_HEADER}")?;
    for (name, v) in rows {
        writeln!(out, "{name},{v:.6}")?;
    }
    if let Some(m) = mean {
        writeln!(out, "mean,{m:.6}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    pub experiment: String,
    pub curve: PathBuf,
    pub reference: PathBuf,
}

/// Batch manifest: CSV `experiment,curve,reference`, paths relative to the
/// manifest's directory.
pub fn parse_batch_manifest(text: &str, source: &Path) -> Result<Vec<BatchEntry>> {
    let base = source.parent().unwrap_or(Path::new(""));
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, l)) if fields(l) == ["experiment", "curve", "reference"] => {}
        Some((n, _)) => return Err(Error::parse(source, n, format!("expected header `{BATCH_HEADER}`"))),
        None => return Err(Error::parse(source, 0, "empty batch manifest")),
    }
    let mut out = Vec::new();
    for (n, l) in lines {
        let fs: Vec<&str> = l.split(',').map(str::trim).collect();
        if fs.len() != 3 || fs.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(source, n, "expected `experiment,curve,reference`"));
        }
        out.push(BatchEntry {
            experiment: fs[0].to_string(),
            curve: base.join(fs[1]),
            reference: base.join(fs[2]),
        });
    }
    if out.is_empty() {
        return Err(Error::parse(source, 0, "batch manifest lists no experiments"));
    }
    Ok(out)
}

pub fn read_batch_manifest(path: &Path) -> Result<Vec<BatchEntry>> {
    parse_batch_manifest(&read_text(path)?, path)
}
