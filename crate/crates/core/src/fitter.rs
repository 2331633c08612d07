//! Polyline ridge fitting over a spectrogram.
//!
//! The polyline has `M` vertices at fixed, equidistant column positions
//! spanning `[0, L-1]` and free heights measured in row (frequency bin)
//! units, clamped to `[0, K-1]`. The objective is
//!
//! ```text
//! loss   = alpha * smooth - ridge / alpha
//! smooth = sum_m (dy_m^2 + eps^2)^(beta/2),      dy_m = y_{m+1} - y_m
//! ridge  = sum_m ( sum_k w(k, y_m) * C[m][k] )^2
//! w(k,y) = 1 / (1 + (k - y)^2 / (K r^2))
//! C[m][k] = sum of row k over columns round(x_m) - p ..= round(x_m) + p (clipped)
//! ```
//!
//! with `p` half the column spacing between vertices. `C` does not depend on
//! the heights, so it is computed once per fit from row prefix sums.
//! Heights start at the power-weighted row centroid of the whole spectrogram
//! and move under ADAM until no vertex moves more than `convergence_tol`
//! rows in one step.

use crate::error::{Error, Result};
use crate::evaluation::HeartRateCurve;
use crate::spectrogram::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Fixed vertex count; `None` derives one vertex per `vertex_spacing_s`.
    pub vertex_count: Option<usize>,
    pub vertex_spacing_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub smoothing_epsilon: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            vertex_count: None,
            vertex_spacing_s: 10.0,
            alpha: 1.0,
            beta: 2.0,
            r: 0.25,
            learning_rate: 0.5,
            max_iterations: 300,
            convergence_tol: 0.01,
            smoothing_epsilon: 1e-3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fit.alpha", self.alpha),
            ("fit.beta", self.beta),
            ("fit.r", self.r),
            ("fit.learning_rate", self.learning_rate),
            ("fit.vertex_spacing_seconds", self.vertex_spacing_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::Config(format!(
                "fit.convergence_tol must be non-negative, got {}",
                self.convergence_tol
            )));
        }
        if !(self.smoothing_epsilon.is_finite() && self.smoothing_epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "fit.smoothing_epsilon must be non-negative, got {}",
                self.smoothing_epsilon
            )));
        }
        if let Some(m) = self.vertex_count {
            if m < 2 {
                return Err(Error::Config(format!("fit.vertex_count must be >= 2, got {m}")));
            }
        }
        Ok(())
    }

    /// Vertex count for a spectrogram: the configured value, or one per
    /// `vertex_spacing_s` of signal (at least 2), never more than the columns.
    pub fn resolve_vertex_count(&self, spec: &Spectrogram) -> usize {
        let m = self
            .vertex_count
            .unwrap_or_else(|| ((spec.duration_s() / self.vertex_spacing_s).round() as usize).max(2));
        m.min(spec.cols()).max(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    half_span: usize,
}

impl Polyline {
    /// `M` equidistant columns over `[0, cols - 1]`, all heights at `y`.
    pub fn flat(cols: usize, vertex_count: usize, y: f64) -> Result<Self> {
        Self::new(vertex_columns(cols, vertex_count)?, vec![y; vertex_count])
    }

    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::Config(format!(
                "polyline needs matching xs/ys with at least 2 vertices, got {}/{}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Config("polyline xs must be finite and strictly increasing".into()));
        }
        let half_span = ((xs[1] - xs[0]) / 2.0).round() as usize;
        Ok(Self { xs, ys, half_span })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// `p`: columns summed on each side of a vertex.
    pub fn half_span(&self) -> usize {
        self.half_span
    }

    /// Copy with different heights.
    pub fn with_ys(&self, ys: Vec<f64>) -> Self {
        assert_eq!(ys.len(), self.ys.len());
        Self { ys, ..self.clone() }
    }

    /// Height at a (fractional) column by linear interpolation; clamps
    /// outside the vertex span.
    pub fn height_at(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[last] {
            return self.ys[last];
        }
        let seg = self.xs.partition_point(|&v| v <= x) - 1;
        let t = (x - self.xs[seg]) / (self.xs[seg + 1] - self.xs[seg]);
        (1.0 - t) * self.ys[seg] + t * self.ys[seg + 1]
    }
}

fn vertex_columns(cols: usize, vertex_count: usize) -> Result<Vec<f64>> {
    if cols < 2 {
        return Err(Error::Config(format!(
            "polyline fitting needs at least 2 spectrogram columns, got {cols}"
        )));
    }
    let m = vertex_count.max(2);
    let span = (cols - 1) as f64;
    Ok((0..m)
        .map(|i| if i == m - 1 { span } else { span * i as f64 / (m - 1) as f64 })
        .collect())
}

/// Power-weighted mean row over the whole spectrogram.
pub fn centroid_row(spec: &Spectrogram) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total = 0.0;
    for k in 0..spec.rows() {
        let row: f64 = (0..spec.cols()).map(|l| spec.get(k, l)).sum();
        weighted += k as f64 * row;
        total += row;
    }
    if total <= 0.0 {
        return Err(Error::EmptySpectrogram);
    }
    Ok(weighted / total)
}

pub fn init_polyline(spec: &Spectrogram, config: &FitConfig) -> Result<Polyline> {
    config.validate()?;
    let start = centroid_row(spec)?;
    Polyline::flat(spec.cols(), config.resolve_vertex_count(spec), start)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// Smoothness term before weighting by alpha.
    pub smoothness: f64,
    /// Ridge term before division by alpha.
    pub ridge: f64,
    pub total: f64,
}

/// The fit objective with per-vertex column sums precomputed.
#[derive(Debug, Clone)]
pub struct RidgeObjective {
    rows: usize,
    vertices: usize,
    /// `vertices × rows`, row-major by vertex.
    column_sums: Vec<f64>,
    alpha: f64,
    beta: f64,
    width_sq: f64,
    epsilon_sq: f64,
}

impl RidgeObjective {
    pub fn new(spec: &Spectrogram, poly: &Polyline, config: &FitConfig) -> Self {
        let (rows, cols) = (spec.rows(), spec.cols());
        let p = poly.half_span();
        let mut column_sums = vec![0.0; poly.len() * rows];
        let mut prefix = vec![0.0; cols + 1];
        for k in 0..rows {
            for l in 0..cols {
                prefix[l + 1] = prefix[l] + spec.get(k, l);
            }
            for (m, &x) in poly.xs().iter().enumerate() {
                let c = x.round() as usize;
                let lo = c.saturating_sub(p);
                let hi = (c + p).min(cols - 1);
                column_sums[m * rows + k] = prefix[hi + 1] - prefix[lo];
            }
        }
        Self {
            rows,
            vertices: poly.len(),
            column_sums,
            alpha: config.alpha,
            beta: config.beta,
            width_sq: rows as f64 * config.r * config.r,
            epsilon_sq: config.smoothing_epsilon * config.smoothing_epsilon,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `C[m][k]`.
    pub fn column_sum(&self, vertex: usize, row: usize) -> f64 {
        self.column_sums[vertex * self.rows + row]
    }

    pub fn weight(&self, row: usize, y: f64) -> f64 {
        let d = row as f64 - y;
        1.0 / (1.0 + d * d / self.width_sq)
    }

    fn vertex_sums(&self, m: usize, y: f64) -> (f64, f64) {
        let sums = &self.column_sums[m * self.rows..(m + 1) * self.rows];
        let mut s = 0.0;
        let mut ds = 0.0;
        for (k, &c) in sums.iter().enumerate() {
            let d = k as f64 - y;
            let w = 1.0 / (1.0 + d * d / self.width_sq);
            s += w * c;
            ds += 2.0 * d * w * w / self.width_sq * c;
        }
        (s, ds)
    }

    fn segment(&self, dy: f64) -> (f64, f64) {
        let base = dy * dy + self.epsilon_sq;
        if base == 0.0 {
            return (0.0, 0.0);
        }
        let half_beta = self.beta / 2.0;
        (base.powf(half_beta), self.beta * dy * base.powf(half_beta - 1.0))
    }

    pub fn terms(&self, ys: &[f64]) -> LossTerms {
        assert_eq!(ys.len(), self.vertices);
        let smoothness: f64 = ys.windows(2).map(|w| self.segment(w[1] - w[0]).0).sum();
        let ridge: f64 = ys
            .iter()
            .enumerate()
            .map(|(m, &y)| {
                let s = self.vertex_sums(m, y).0;
                s * s
            })
            .sum();
        LossTerms {
            smoothness,
            ridge,
            total: self.alpha * smoothness - ridge / self.alpha,
        }
    }

    pub fn loss(&self, ys: &[f64]) -> f64 {
        self.terms(ys).total
    }

    /// Writes d(loss)/d(y_m) into `grad`.
    pub fn gradient(&self, ys: &[f64], grad: &mut [f64]) {
        assert_eq!(ys.len(), self.vertices);
        assert_eq!(grad.len(), self.vertices);
        for (m, (g, &y)) in grad.iter_mut().zip(ys).enumerate() {
            let (s, ds) = self.vertex_sums(m, y);
            *g = -2.0 * s * ds / self.alpha;
        }
        for m in 0..self.vertices - 1 {
            let d = self.segment(ys[m + 1] - ys[m]).1 * self.alpha;
            grad[m + 1] += d;
            grad[m] -= d;
        }
    }
}

pub fn loss(poly: &Polyline, spec: &Spectrogram, config: &FitConfig) -> f64 {
    RidgeObjective::new(spec, poly, config).loss(poly.ys())
}

pub fn loss_terms(poly: &Polyline, spec: &Spectrogram, config: &FitConfig) -> LossTerms {
    RidgeObjective::new(spec, poly, config).terms(poly.ys())
}

pub fn grad_loss(poly: &Polyline, spec: &Spectrogram, config: &FitConfig) -> Vec<f64> {
    let mut grad = vec![0.0; poly.len()];
    RidgeObjective::new(spec, poly, config).gradient(poly.ys(), &mut grad);
    grad
}

/// ADAM moments for the vertex heights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub iteration: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: usize) -> Self {
        Self {
            first_moment: vec![0.0; params],
            second_moment: vec![0.0; params],
            iteration: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected update, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], learning_rate: f64) {
        assert_eq!(params.len(), grads.len());
        self.iteration += 1;
        let bc1 = 1.0 - self.beta1.powi(self.iteration as i32);
        let bc2 = 1.0 - self.beta2.powi(self.iteration as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub polyline: Polyline,
    /// ADAM steps taken.
    pub iterations: usize,
    pub converged: bool,
    /// Loss at the start point and after every step.
    pub loss_history: Vec<f64>,
}

pub fn fit(spec: &Spectrogram, config: &FitConfig) -> Result<Polyline> {
    fit_detailed(spec, config).map(|r| r.polyline)
}

/// [`fit`] plus iteration count and loss trace.
pub fn fit_detailed(spec: &Spectrogram, config: &FitConfig) -> Result<FitResult> {
    let start = init_polyline(spec, config)?;
    fit_from(spec, config, start)
}

/// Runs the optimizer from an explicit starting polyline.
pub fn fit_from(spec: &Spectrogram, config: &FitConfig, start: Polyline) -> Result<FitResult> {
    config.validate()?;
    let objective = RidgeObjective::new(spec, &start, config);
    let upper = (spec.rows() - 1) as f64;
    let mut ys = start.ys().to_vec();
    let mut prev = ys.clone();
    let mut grad = vec![0.0; ys.len()];
    let mut adam = AdamState::new(ys.len());
    let mut loss_history = vec![objective.loss(&ys)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        objective.gradient(&ys, &mut grad);
        prev.copy_from_slice(&ys);
        adam.step(&mut ys, &grad, config.learning_rate);
        for y in ys.iter_mut() {
            *y = y.clamp(0.0, upper);
        }
        iterations += 1;
        loss_history.push(objective.loss(&ys));
        let moved = ys.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < config.convergence_tol {
            converged = true;
            break;
        }
    }
    log::debug!("polyline fit: {iterations} iterations, converged={converged}");
    Ok(FitResult {
        polyline: start.with_ys(ys),
        iterations,
        converged,
        loss_history,
    })
}

/// Polyline height at every column, mapped to BPM.
pub fn sample_heart_rate(poly: &Polyline, spec: &Spectrogram) -> HeartRateCurve {
    let bpm = (0..spec.cols())
        .map(|l| spec.row_to_bpm(poly.height_at(l as f64)))
        .collect();
    HeartRateCurve::new(spec.time_s().to_vec(), bpm).expect("spectrogram time axis is strictly increasing")
}

/// `w(k, y_m)` for every row and vertex, row-major K×M.
pub fn weight_map(poly: &Polyline, spec: &Spectrogram, config: &FitConfig) -> Vec<f64> {
    let width_sq = spec.rows() as f64 * config.r * config.r;
    let mut out = Vec::with_capacity(spec.rows() * poly.len());
    for k in 0..spec.rows() {
        for &y in poly.ys() {
            let d = k as f64 - y;
            out.push(1.0 / (1.0 + d * d / width_sq));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Spectrogram {
        let powers = (0..rows).flat_map(|k| (0..cols).map(move |l| (k, l))).map(|(k, l)| f(k, l)).collect();
        Spectrogram::from_parts(
            powers,
            (0..rows).map(|k| 50.0 + 4.0 * k as f64).collect(),
            (0..cols).map(|l| l as f64 * 0.5).collect(),
        )
        .unwrap()
    }

    fn cfg(m: usize) -> FitConfig {
        FitConfig {
            vertex_count: Some(m),
            ..FitConfig::default()
        }
    }

    #[test]
    fn centroid_examples() {
        let one_row = spec(10, 20, |k, _| if k == 6 { 1.0 } else { 0.0 });
        let poly = init_polyline(&one_row, &cfg(4)).unwrap();
        assert!(poly.ys().iter().all(|&y| y == 6.0));
        assert_eq!(poly.xs(), &[0.0, 19.0 / 3.0, 38.0 / 3.0, 19.0]);

        let uniform = spec(9, 5, |_, _| 0.5);
        assert!((centroid_row(&uniform).unwrap() - 4.0).abs() < 1e-12);

        let empty = spec(4, 4, |_, _| 0.0);
        assert!(matches!(init_polyline(&empty, &cfg(2)), Err(Error::EmptySpectrogram)));
    }

    #[test]
    fn flat_polyline_has_no_smoothness_cost() {
        let s = spec(8, 12, |k, l| ((k * 7 + l * 3) % 5) as f64 / 4.0);
        let poly = Polyline::flat(12, 3, 2.5).unwrap();
        let t = loss_terms(&poly, &s, &FitConfig { smoothing_epsilon: 0.0, ..cfg(3) });
        assert_eq!(t.smoothness, 0.0);
        assert_eq!(t.total, -t.ridge / 1.0);
    }

    #[test]
    fn empty_spectrogram_only_smoothness() {
        let s = spec(8, 12, |_, _| 0.0);
        let poly = Polyline::new(vec![0.0, 5.5, 11.0], vec![1.0, 4.0, 2.0]).unwrap();
        let c = FitConfig { alpha: 2.0, smoothing_epsilon: 0.0, ..cfg(3) };
        let t = loss_terms(&poly, &s, &c);
        assert_eq!(t.ridge, 0.0);
        assert_eq!(t.total, 2.0 * (9.0 + 4.0));
        let flat = Polyline::flat(12, 3, 3.0).unwrap();
        assert!(grad_loss(&flat, &s, &c).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn half_span_is_half_vertex_spacing() {
        let poly = Polyline::flat(101, 5, 0.0).unwrap();
        assert_eq!(poly.half_span(), 13); // spacing 25 -> round(12.5)
        assert!(Polyline::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(Polyline::flat(1, 2, 0.0).is_err());
    }

    #[test]
    fn vertex_count_from_duration() {
        let s = spec(4, 400, |_, _| 1.0).with_duration(300.0);
        assert_eq!(FitConfig::default().resolve_vertex_count(&s), 30);
        let short = spec(4, 400, |_, _| 1.0).with_duration(3.0);
        assert_eq!(FitConfig::default().resolve_vertex_count(&short), 2);
        assert_eq!(cfg(7).resolve_vertex_count(&s), 7);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut adam = AdamState::new(2);
        let mut p = [0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.001], 0.5);
        assert!((p[0] + 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-4, "{p:?}");
    }

    #[test]
    fn sample_heart_rate_interpolates() {
        let s = spec(20, 11, |_, _| 1.0);
        let poly = Polyline::new(vec![0.0, 10.0], vec![2.0, 12.0]).unwrap();
        let curve = sample_heart_rate(&poly, &s);
        for (l, bpm) in curve.bpm().iter().enumerate() {
            assert!((bpm - (50.0 + 4.0 * (2.0 + l as f64))).abs() < 1e-12);
        }
        assert_eq!(curve.times(), s.time_s());
    }

    #[test]
    fn weight_map_peaks_on_the_vertex_row() {
        let s = spec(10, 10, |_, _| 1.0);
        let poly = Polyline::new(vec![0.0, 9.0], vec![3.0, 7.0]).unwrap();
        let w = weight_map(&poly, &s, &FitConfig::default());
        assert_eq!(w.len(), 20);
        assert_eq!(w[3 * 2], 1.0);
        assert_eq!(w[7 * 2 + 1], 1.0);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}
