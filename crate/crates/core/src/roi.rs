//! Face-cell sampling.
//!
//! Each cell is a polygon over landmark indices. Per frame the polygon is
//! scaled to pixel units (`x * width`, `y * height`), rasterized, and the a\*
//! values of the covered pixels are folded into one sample
//! `S_n(t) = sqrt(sum a*^2)`, optionally divided by `sqrt(pixel count)`.
//!
//! Pixel membership rule: the pixel `(col, row)` is tested at its center
//! `(col + 0.5, row + 0.5)`. A center is inside when the even-odd crossing
//! count is odd, or when it lies exactly on an edge. The crossing for edge
//! `(v[i], v[j])`, `j = i - 1 (mod n)`, is taken when `(yi > py) != (yj > py)`
//! at `x = (xj - xi) * (py - yi) / (yj - yi) + xi`, and counts when `px < x`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{srgb_to_lab, LabFrame, RgbFrame};
use crate::error::{Error, Result};

/// Shipped default cell layout (MediaPipe face-mesh indices).
pub const DEFAULT_CELLS: &str = include_str!("../data/default_cells.conf");

/// Below this polygon area (pixels²) a cell counts as collapsed.
const MIN_CELL_AREA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub frame_index: usize,
    /// Normalized `(x, y)` positions, `[0, 1]` spans the frame.
    pub points: Vec<[f64; 2]>,
    /// No face was found for this frame; every cell is treated as degenerate.
    #[serde(default)]
    pub missing: bool,
}

impl LandmarkFrame {
    pub fn new(frame_index: usize, points: Vec<[f64; 2]>) -> Self {
        Self {
            frame_index,
            points,
            missing: false,
        }
    }

    pub fn missing(frame_index: usize) -> Self {
        Self {
            frame_index,
            points: Vec::new(),
            missing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpec {
    pub cell_id: usize,
    pub name: String,
    vertices: Vec<usize>,
}

impl CellSpec {
    pub fn new(cell_id: usize, name: impl Into<String>, vertices: Vec<usize>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidCell {
                cell_id,
                reason: format!("{} vertices, need at least 3", vertices.len()),
            });
        }
        for (i, v) in vertices.iter().enumerate() {
            if vertices[..i].contains(v) {
                return Err(Error::InvalidCell {
                    cell_id,
                    reason: format!("landmark {v} repeated"),
                });
            }
        }
        Ok(Self {
            cell_id,
            name: name.into(),
            vertices,
        })
    }

    pub fn vertex_landmarks(&self) -> &[usize] {
        &self.vertices
    }

    /// Polygon in pixel units for one frame.
    pub fn polygon(&self, landmarks: &LandmarkFrame, width: usize, height: usize) -> Result<Vec<[f64; 2]>> {
        self.vertices
            .iter()
            .map(|&i| {
                let p = landmarks.points.get(i).ok_or_else(|| Error::InvalidCell {
                    cell_id: self.cell_id,
                    reason: format!("landmark {i} out of range ({} points)", landmarks.points.len()),
                })?;
                Ok([p[0] * width as f64, p[1] * height as f64])
            })
            .collect()
    }
}

/// Parses a cell file: one `name = i0 i1 i2 ...` line per cell, `#` comments.
/// Cell ids follow file order.
pub fn parse_cells(text: &str, source: &Path) -> Result<Vec<CellSpec>> {
    let mut cells = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, indices) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source, lineno + 1, "expected `name = indices`"))?;
        let vertices = indices
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| Error::parse(source, lineno + 1, format!("bad landmark index `{tok}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(CellSpec::new(cells.len(), name.trim(), vertices)?);
    }
    if cells.is_empty() {
        return Err(Error::NoCells);
    }
    Ok(cells)
}

pub fn default_cells() -> Vec<CellSpec> {
    parse_cells(DEFAULT_CELLS, Path::new("default_cells.conf")).expect("shipped cell file is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub y: usize,
    pub x: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

fn on_segment(px: f64, py: f64, a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    cross == 0.0
        && px >= a[0].min(b[0])
        && px <= a[0].max(b[0])
        && py >= a[1].min(b[1])
        && py <= a[1].max(b[1])
}

fn center(i: usize) -> f64 {
    i as f64 + 0.5
}

/// Scanline rasterization of a polygon given in pixel units. Returns the
/// covered pixels sorted by row, then column.
pub fn rasterize_polygon(poly: &[[f64; 2]], width: usize, height: usize) -> Vec<Pixel> {
    let n = poly.len();
    if n < 3 || width == 0 || height == 0 {
        return Vec::new();
    }
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in poly {
        y_lo = y_lo.min(p[1]);
        y_hi = y_hi.max(p[1]);
    }
    if !(y_lo.is_finite() && y_hi.is_finite()) {
        return Vec::new();
    }
    let row_lo = ((y_lo - 0.5).floor().max(0.0)) as usize;
    let row_hi = ((y_hi - 0.5).ceil().min(height as f64 - 1.0)).max(-1.0);
    if row_hi < 0.0 {
        return Vec::new();
    }
    let row_hi = row_hi as usize;

    let mut out = Vec::new();
    let mut crossings = Vec::with_capacity(n);
    let mut row_pixels: Vec<usize> = Vec::new();
    for row in row_lo..=row_hi {
        let py = center(row);
        crossings.clear();
        row_pixels.clear();

        for i in 0..n {
            let (vi, vj) = (poly[i], poly[(i + n - 1) % n]);
            if (vi[1] > py) != (vj[1] > py) {
                crossings.push((vj[0] - vi[0]) * (py - vi[1]) / (vj[1] - vi[1]) + vi[0]);
            }
        }
        crossings.sort_by(f64::total_cmp);
        // Inside when an odd number of crossings lie at or left of the center.
        for span in crossings.chunks_exact(2) {
            let (start, end) = (span[0], span[1]);
            let mut first = (start - 0.5).ceil().max(0.0) as usize;
            while first > 0 && center(first - 1) >= start {
                first -= 1;
            }
            while first < width && center(first) < start {
                first += 1;
            }
            let mut col = first;
            while col < width && center(col) < end {
                row_pixels.push(col);
                col += 1;
            }
        }

        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if py < a[1].min(b[1]) || py > a[1].max(b[1]) {
                continue;
            }
            let (lo, hi) = if a[1] == b[1] {
                (a[0].min(b[0]), a[0].max(b[0]))
            } else {
                let x = a[0] + (b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]);
                (x, x)
            };
            let first = (lo - 1.5).floor().max(0.0);
            let last = (hi + 0.5).ceil().min(width as f64 - 1.0);
            if last < 0.0 || first > last {
                continue;
            }
            for col in first as usize..=last as usize {
                if on_segment(center(col), py, a, b) {
                    row_pixels.push(col);
                }
            }
        }

        row_pixels.sort_unstable();
        row_pixels.dedup();
        out.extend(row_pixels.iter().map(|&x| Pixel { x, y: row }));
    }
    out
}

/// Pixels covered by `cell` in a `width`×`height` frame.
pub fn rasterize_cell(cell: &CellSpec, landmarks: &LandmarkFrame, width: usize, height: usize) -> Result<Vec<Pixel>> {
    if landmarks.missing {
        return Err(Error::DegenerateCell { cell_id: cell.cell_id });
    }
    let poly = cell.polygon(landmarks, width, height)?;
    if polygon_area(&poly) < MIN_CELL_AREA {
        return Err(Error::DegenerateCell { cell_id: cell.cell_id });
    }
    let pixels = rasterize_polygon(&poly, width, height);
    if pixels.is_empty() {
        return Err(Error::DegenerateCell { cell_id: cell.cell_id });
    }
    Ok(pixels)
}

/// `sqrt(sum a*^2)` over the given pixels.
pub fn aggregate_cell(lab: &LabFrame, pixels: &[Pixel]) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::EmptyCell);
    }
    let sum_sq: f64 = pixels
        .iter()
        .map(|p| {
            let a = lab.a_star(p.x, p.y);
            a * a
        })
        .sum();
    Ok(sum_sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// Divide each sample by `sqrt(pixel count)`, turning the norm into an RMS.
    pub normalize_by_pixel_count: bool,
    pub frame_rate: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            normalize_by_pixel_count: true,
            frame_rate: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSignalSeries {
    pub cell_id: usize,
    pub samples: Vec<f64>,
    pub frame_rate: f64,
    /// Frames where the cell was degenerate and the sample was held.
    pub filled_frames: usize,
}

/// One sample per cell for one frame; `None` for degenerate cells.
pub fn sample_frame(
    lab: &LabFrame,
    landmarks: &LandmarkFrame,
    cells: &[CellSpec],
    normalize_by_pixel_count: bool,
) -> Result<Vec<Option<f64>>> {
    cells
        .iter()
        .map(|cell| match rasterize_cell(cell, landmarks, lab.width(), lab.height()) {
            Ok(pixels) => {
                let s = aggregate_cell(lab, &pixels)?;
                Ok(Some(if normalize_by_pixel_count {
                    s / (pixels.len() as f64).sqrt()
                } else {
                    s
                }))
            }
            Err(Error::DegenerateCell { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

fn check_inputs(frame_count: usize, landmarks: &[LandmarkFrame], cells: &[CellSpec]) -> Result<()> {
    if frame_count != landmarks.len() {
        return Err(Error::LengthMismatch {
            what: "frames vs landmark records",
            left: frame_count,
            right: landmarks.len(),
        });
    }
    LandmarkCheck::new(cells)?.check(0, landmarks)
}

// Validates landmark records as they arrive: contiguous indices, a constant
// point count and every cell vertex in range.
#[derive(Debug, Clone)]
struct LandmarkCheck {
    max_vertex: Option<(usize, usize)>,
    point_count: Option<usize>,
}

impl LandmarkCheck {
    fn new(cells: &[CellSpec]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::NoCells);
        }
        let max_vertex = cells
            .iter()
            .flat_map(|c| c.vertex_landmarks().iter().map(move |&v| (v, c.cell_id)))
            .max_by_key(|&(v, _)| v);
        Ok(Self {
            max_vertex,
            point_count: None,
        })
    }

    fn check(&mut self, first_index: usize, landmarks: &[LandmarkFrame]) -> Result<()> {
        for (offset, lm) in landmarks.iter().enumerate() {
            let pos = first_index + offset;
            if lm.frame_index != pos {
                return Err(Error::Landmarks(format!(
                    "record {pos} carries frame index {}",
                    lm.frame_index
                )));
            }
            if lm.missing {
                continue;
            }
            if lm.points.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Landmarks(format!("frame {pos} has non-finite coordinates")));
            }
            match self.point_count {
                None => {
                    let n = lm.points.len();
                    if let Some((v, cell_id)) = self.max_vertex.filter(|&(v, _)| v >= n) {
                        return Err(Error::InvalidCell {
                            cell_id,
                            reason: format!("landmark {v} out of range ({n} points)"),
                        });
                    }
                    self.point_count = Some(n);
                }
                Some(n) if n != lm.points.len() => {
                    return Err(Error::Landmarks(format!(
                        "frame {pos} has {} points, earlier frames have {n}",
                        lm.points.len()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

fn assemble(per_frame: Vec<Vec<Option<f64>>>, cells: &[CellSpec], frame_rate: f64) -> Result<Vec<CellSignalSeries>> {
    cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let first_valid = per_frame
                .iter()
                .find_map(|f| f[c])
                .ok_or(Error::CellNeverVisible { cell_id: cell.cell_id })?;
            let mut held = first_valid;
            let mut filled_frames = 0;
            let samples = per_frame
                .iter()
                .map(|f| match f[c] {
                    Some(v) => {
                        held = v;
                        v
                    }
                    None => {
                        filled_frames += 1;
                        held
                    }
                })
                .collect();
            Ok(CellSignalSeries {
                cell_id: cell.cell_id,
                samples,
                frame_rate,
                filled_frames,
            })
        })
        .collect()
}

/// Per-cell series over a CIELAB frame sequence. Degenerate cells hold the
/// previous valid sample (the first valid one at the start).
pub fn build_series(
    frames: &[LabFrame],
    landmarks: &[LandmarkFrame],
    cells: &[CellSpec],
    options: SamplerOptions,
) -> Result<Vec<CellSignalSeries>> {
    check_inputs(frames.len(), landmarks, cells)?;
    let per_frame = frames
        .par_iter()
        .zip(landmarks.par_iter())
        .map(|(lab, lm)| sample_frame(lab, lm, cells, options.normalize_by_pixel_count))
        .collect::<Result<Vec<_>>>()?;
    assemble(per_frame, cells, options.frame_rate)
}

/// Same as [`build_series`] but converts each sRGB frame on the fly.
pub fn build_series_rgb(
    frames: &[RgbFrame],
    landmarks: &[LandmarkFrame],
    cells: &[CellSpec],
    options: SamplerOptions,
) -> Result<Vec<CellSignalSeries>> {
    let mut builder = SeriesBuilder::new(cells, options)?;
    builder.push_rgb(frames, landmarks)?;
    builder.finish()
}

/// Incremental [`build_series_rgb`] for inputs too long to hold in memory.
/// Batches must arrive in frame order; each batch is sampled in parallel.
#[derive(Debug, Clone)]
pub struct SeriesBuilder<'a> {
    cells: &'a [CellSpec],
    options: SamplerOptions,
    check: LandmarkCheck,
    per_frame: Vec<Vec<Option<f64>>>,
}

impl<'a> SeriesBuilder<'a> {
    pub fn new(cells: &'a [CellSpec], options: SamplerOptions) -> Result<Self> {
        Ok(Self {
            cells,
            options,
            check: LandmarkCheck::new(cells)?,
            per_frame: Vec::new(),
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.per_frame.len()
    }

    pub fn push_rgb(&mut self, frames: &[RgbFrame], landmarks: &[LandmarkFrame]) -> Result<()> {
        if frames.len() != landmarks.len() {
            return Err(Error::LengthMismatch {
                what: "frames vs landmark records",
                left: self.per_frame.len() + frames.len(),
                right: self.per_frame.len() + landmarks.len(),
            });
        }
        self.check.check(self.per_frame.len(), landmarks)?;
        let normalize = self.options.normalize_by_pixel_count;
        let cells = self.cells;
        let batch = frames
            .par_iter()
            .zip(landmarks.par_iter())
            .map(|(rgb, lm)| sample_rgb_frame(rgb, lm, cells, normalize))
            .collect::<Result<Vec<_>>>()?;
        self.per_frame.extend(batch);
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<CellSignalSeries>> {
        assemble(self.per_frame, self.cells, self.options.frame_rate)
    }
}

// Converts only the pixels the cells touch.
fn sample_rgb_frame(
    rgb: &RgbFrame,
    landmarks: &LandmarkFrame,
    cells: &[CellSpec],
    normalize_by_pixel_count: bool,
) -> Result<Vec<Option<f64>>> {
    cells
        .iter()
        .map(|cell| match rasterize_cell(cell, landmarks, rgb.width(), rgb.height()) {
            Ok(pixels) => {
                let sum_sq: f64 = pixels
                    .iter()
                    .map(|p| {
                        let a = srgb_to_lab(rgb.pixel(p.x, p.y)).a;
                        a * a
                    })
                    .sum();
                let s = sum_sq.sqrt();
                Ok(Some(if normalize_by_pixel_count {
                    s / (pixels.len() as f64).sqrt()
                } else {
                    s
                }))
            }
            Err(Error::DegenerateCell { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Element-wise mean of the per-cell series.
pub fn combine_series(series: &[CellSignalSeries]) -> Result<Vec<f64>> {
    let first = series.first().ok_or(Error::NoCells)?;
    let len = first.samples.len();
    for s in series {
        if s.samples.len() != len {
            return Err(Error::LengthMismatch {
                what: "cell series lengths",
                left: len,
                right: s.samples.len(),
            });
        }
    }
    let scale = 1.0 / series.len() as f64;
    Ok((0..len)
        .map(|t| series.iter().map(|s| s.samples[t]).sum::<f64>() * scale)
        .collect())
}
