//! Translation-only kernelized correlation filter.
//!
//! The target is modelled by a single grayscale template sampled from a
//! padded window around the box, resized to a fixed square, mean-subtracted
//! and tapered by a raised-cosine window. Training solves kernel ridge
//! regression over all circular shifts of the template in the Fourier
//! domain, against a Gaussian response centered in the patch. Localisation
//! evaluates the Gaussian-kernel correlation of a new patch with the
//! template and takes the (sub-pixel) response peak.
//!
//! The model is never blended: callers re-initialise it whenever a better
//! box is available.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Side of the square template, in template pixels.
    pub template_size: usize,
    /// Search window is `(1 + padding)` times the target size on each axis.
    pub padding: f64,
    pub kernel_sigma: f64,
    pub regularization_lambda: f64,
    /// Gaussian label bandwidth, as a fraction of `template_size`.
    pub output_sigma_factor: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            template_size: 64,
            padding: 1.5,
            kernel_sigma: 0.5,
            regularization_lambda: 1e-4,
            output_sigma_factor: 0.1,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.template_size < 16 {
            return Err(Error::invalid("template_size must be at least 16"));
        }
        if !(self.padding > 1.0) {
            return Err(Error::invalid("padding must exceed 1"));
        }
        if !(self.regularization_lambda > 0.0) {
            return Err(Error::invalid("regularization_lambda must be positive"));
        }
        if !(self.kernel_sigma > 0.0) || !(self.output_sigma_factor > 0.0) {
            return Err(Error::invalid("bandwidths must be positive"));
        }
        Ok(())
    }
}

/// Forward / inverse 2-D FFT on a square `n x n` row-major buffer.
struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn shared(n: usize) -> Arc<Fft2> {
        static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let mut plans = PLANS.get_or_init(Default::default).lock().unwrap();
        plans
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
            })
            .clone()
    }

    fn transpose(&self, data: &mut [Complex64]) {
        let n = self.n;
        for r in 0..n {
            for c in (r + 1)..n {
                data.swap(r * n + c, c * n + r);
            }
        }
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        fft.process(data);
        self.transpose(data);
        fft.process(data);
        self.transpose(data);
    }

    fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.fwd, data);
    }

    fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inv, data);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfOutput {
    pub bbox: BBox,
    pub peak: f64,
}

#[derive(Debug, Clone)]
pub struct FilterModel {
    params: FilterParams,
    target_size: (f64, f64),
    window: Vec<f64>,
    template_features: Vec<f64>,
    template_hat: Vec<Complex64>,
    template_energy: f64,
    alpha_hat: Vec<Complex64>,
    last_center: (f64, f64),
    baseline_peak: f64,
    fft: Arc<Fft2>,
}

fn hann(n: usize) -> Vec<f64> {
    let w1: Vec<f64> = (0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos())).collect();
    let mut w = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            w.push(w1[r] * w1[c]);
        }
    }
    w
}

/// Gaussian label peaking at `(n/2, n/2)`.
fn gaussian_label(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let mut y = Vec::with_capacity(n * n);
    for r in 0..n {
        for col in 0..n {
            let d2 = (r as f64 - c).powi(2) + (col as f64 - c).powi(2);
            y.push((-0.5 * d2 / (sigma * sigma)).exp());
        }
    }
    y
}

impl FilterModel {
    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn target_size(&self) -> (f64, f64) {
        self.target_size
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn template_features(&self) -> &[f64] {
        &self.template_features
    }

    pub fn alpha_hat(&self) -> &[Complex64] {
        &self.alpha_hat
    }

    pub fn last_center(&self) -> (f64, f64) {
        self.last_center
    }

    pub fn baseline_peak(&self) -> f64 {
        self.baseline_peak
    }

    fn patch_scale(&self) -> (f64, f64) {
        let n = self.params.template_size as f64;
        let k = 1.0 + self.params.padding;
        (self.target_size.0 * k / n, self.target_size.1 * k / n)
    }

    /// Samples, normalises and tapers the search patch centered at `center`.
    fn features(&self, frame: &Frame, center: (f64, f64)) -> Vec<f64> {
        let n = self.params.template_size;
        let (sx, sy) = self.patch_scale();
        let half = n as f64 / 2.0;
        let mut patch = Vec::with_capacity(n * n);
        for r in 0..n {
            let v = center.1 + (r as f64 + 0.5 - half) * sy - 0.5;
            for c in 0..n {
                let u = center.0 + (c as f64 + 0.5 - half) * sx - 0.5;
                patch.push(frame.luma_bilinear(u, v));
            }
        }
        let mean = patch.iter().sum::<f64>() / patch.len() as f64;
        patch.iter_mut().zip(&self.window).for_each(|(p, w)| *p = (*p - mean) * w);
        patch
    }

    /// Gaussian kernel evaluated against every circular shift of `z`.
    fn kernel_correlation(&self, z: &[f64]) -> Vec<Complex64> {
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let mut cross: Vec<Complex64> = self.fft.forward_real(z);
        cross.iter_mut().zip(&self.template_hat).for_each(|(zh, xh)| *zh *= xh.conj());
        self.fft.inverse(&mut cross);
        let numel = z.len() as f64;
        let sigma2 = self.params.kernel_sigma * self.params.kernel_sigma;
        let mut k: Vec<f64> = cross
            .iter()
            .map(|c| {
                let d = (self.template_energy + zz - 2.0 * c.re).max(0.0);
                (-d / (sigma2 * numel)).exp()
            })
            .collect();
        let mut out: Vec<Complex64> = k.drain(..).map(|v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut out);
        out
    }

    fn response(&self, z: &[f64]) -> Vec<f64> {
        let mut kz = self.kernel_correlation(z);
        kz.iter_mut().zip(&self.alpha_hat).for_each(|(k, a)| *k *= a);
        self.fft.inverse(&mut kz);
        kz.iter().map(|c| c.re).collect()
    }

    /// Trains a fresh model on `bbox` in `frame`.
    pub fn init(frame: &Frame, bbox: &BBox, params: FilterParams) -> Result<Self> {
        params.validate()?;
        if !bbox.is_valid() || bbox.area() <= 0.0 {
            return Err(Error::invalid("tracker box must have positive area"));
        }
        if bbox.clip_to(frame.width() as f64, frame.height() as f64).is_none() {
            return Err(Error::invalid("tracker box lies outside the frame"));
        }
        let n = params.template_size;
        let fft = Fft2::shared(n);
        let mut model = FilterModel {
            params,
            target_size: (bbox.w, bbox.h),
            window: hann(n),
            template_features: Vec::new(),
            template_hat: Vec::new(),
            template_energy: 0.0,
            alpha_hat: Vec::new(),
            last_center: bbox.center(),
            baseline_peak: 0.0,
            fft,
        };
        let x = model.features(frame, model.last_center);
        model.template_energy = x.iter().map(|v| v * v).sum();
        model.template_hat = model.fft.forward_real(&x);
        model.template_features = x;

        let y_hat = model.fft.forward_real(&gaussian_label(n, params.output_sigma_factor * n as f64));
        let kxx_hat = model.kernel_correlation(&model.template_features);
        let lambda = params.regularization_lambda;
        model.alpha_hat = y_hat.iter().zip(&kxx_hat).map(|(y, k)| y / (k + lambda)).collect();

        let self_response = model.response(&model.template_features);
        model.baseline_peak = self_response.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(model)
    }

    /// Locates the target in `frame`, moving the stored center to the response peak.
    pub fn update(&mut self, frame: &Frame) -> CfOutput {
        let z = self.features(frame, self.last_center);
        let resp = self.response(&z);
        let n = self.params.template_size;
        let (pr, pc, peak) = argmax(&resp, n);
        let at = |r: usize, c: usize| resp[(r % n) * n + (c % n)];
        let dy = subpixel(at(pr + n - 1, pc), peak, at(pr + 1, pc));
        let dx = subpixel(at(pr, pc + n - 1), peak, at(pr, pc + 1));
        let half = (n / 2) as f64;
        let (sx, sy) = self.patch_scale();
        // label peaks at (n/2, n/2), so the displacement range is [-n/2, n/2)
        let shift_x = pc as f64 + dx - half;
        let shift_y = pr as f64 + dy - half;
        let center = (self.last_center.0 + shift_x * sx, self.last_center.1 + shift_y * sy);
        self.last_center = center;
        CfOutput {
            bbox: BBox::from_center(center.0, center.1, self.target_size.0, self.target_size.1),
            peak,
        }
    }
}

/// Row-major argmax; ties go to the smallest index.
fn argmax(values: &[f64], n: usize) -> (usize, usize, f64) {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    (best / n, best % n, values[best])
}

/// Vertex offset of the parabola through three equally spaced samples.
fn subpixel(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom >= 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

pub fn cf_init(frame: &Frame, bbox: &BBox, params: FilterParams) -> Result<FilterModel> {
    FilterModel::init(frame, bbox, params)
}

pub fn cf_update(model: &mut FilterModel, frame: &Frame) -> CfOutput {
    model.update(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRAY: [u8; 3] = [128, 128, 128];

    fn square_frame(w: u32, h: u32, x: u32, y: u32, side: u32, color: [u8; 3], bg: [u8; 3]) -> Frame {
        let mut f = Frame::filled(w, h, bg);
        for yy in y..y + side {
            for xx in x..x + side {
                f.put_pixel(xx, yy, color);
            }
        }
        f
    }

    #[test]
    fn rejects_bad_boxes_and_params() {
        let f = Frame::filled(64, 64, GRAY);
        assert!(cf_init(&f, &BBox::new(10.0, 10.0, 0.0, 5.0), FilterParams::default()).is_err());
        assert!(cf_init(&f, &BBox::new(100.0, 100.0, 5.0, 5.0), FilterParams::default()).is_err());
        let bad = FilterParams { template_size: 8, ..Default::default() };
        assert!(cf_init(&f, &BBox::new(10.0, 10.0, 5.0, 5.0), bad).is_err());
        let bad = FilterParams { padding: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_scene_is_self_consistent() {
        let f = square_frame(160, 120, 70, 50, 20, [255, 255, 255], [0, 0, 0]);
        let b = BBox::new(70.0, 50.0, 20.0, 20.0);
        let mut m = cf_init(&f, &b, FilterParams::default()).unwrap();
        assert!(m.baseline_peak() > 0.0);
        let out = cf_update(&mut m, &f);
        let (cx, cy) = out.bbox.center();
        assert!((cx - 80.0).abs() <= 0.5 && (cy - 60.0).abs() <= 0.5, "{cx},{cy}");
        assert!(out.peak >= 0.95 * m.baseline_peak());
    }

    #[test]
    fn uniform_frame_stays_finite() {
        let f = Frame::filled(100, 100, GRAY);
        let mut m = cf_init(&f, &BBox::new(40.0, 40.0, 20.0, 20.0), FilterParams::default()).unwrap();
        assert!(m.alpha_hat().iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        let out = cf_update(&mut m, &f);
        assert!(out.peak.is_finite());
        assert!(out.bbox.is_valid());
    }

    #[test]
    fn follows_a_translated_square() {
        let f0 = square_frame(200, 150, 80, 60, 24, [230, 40, 40], GRAY);
        let f1 = square_frame(200, 150, 83, 62, 24, [230, 40, 40], GRAY);
        let mut m = cf_init(&f0, &BBox::new(80.0, 60.0, 24.0, 24.0), FilterParams::default()).unwrap();
        let out = cf_update(&mut m, &f1);
        let (cx, cy) = out.bbox.center();
        assert!((cx - 95.0).abs() <= 1.0 && (cy - 74.0).abs() <= 1.0, "{cx},{cy}");
    }

    #[test]
    fn window_and_shapes() {
        let f = square_frame(120, 120, 50, 50, 20, [255, 255, 255], [0, 0, 0]);
        let m = cf_init(&f, &BBox::new(50.0, 50.0, 20.0, 20.0), FilterParams::default()).unwrap();
        let n = m.params().template_size;
        assert_eq!(m.window().len(), n * n);
        assert_eq!(m.template_features().len(), n * n);
        assert_eq!(m.alpha_hat().len(), n * n);
        assert!(m.window().iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn training_response_peaks_at_center() {
        let f = square_frame(120, 120, 50, 40, 20, [255, 255, 255], [0, 0, 0]);
        let m = cf_init(&f, &BBox::new(50.0, 40.0, 20.0, 20.0), FilterParams::default()).unwrap();
        let resp = m.response(m.template_features());
        let n = m.params().template_size;
        let (r, c, _) = argmax(&resp, n);
        assert_eq!((r, c), (n / 2, n / 2));
    }

    /// Spatial-domain Gaussian kernel over every circular shift, straight from the definition.
    fn brute_kernel(x: &[f64], z: &[f64], n: usize, sigma: f64) -> Vec<f64> {
        let mut k = vec![0.0; n * n];
        for dr in 0..n {
            for dc in 0..n {
                let mut d = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        let zv = z[((r + dr) % n) * n + (c + dc) % n];
                        d += (x[r * n + c] - zv).powi(2);
                    }
                }
                k[dr * n + dc] = (-d / (sigma * sigma * (n * n) as f64)).exp();
            }
        }
        k
    }

    fn small_model() -> (FilterModel, Frame) {
        let mut f = square_frame(60, 60, 22, 20, 12, [240, 200, 10], [20, 20, 60]);
        f.put_pixel(25, 24, [0, 255, 0]);
        let params = FilterParams { template_size: 16, ..Default::default() };
        (cf_init(&f, &BBox::new(22.0, 20.0, 12.0, 12.0), params).unwrap(), f)
    }

    #[test]
    fn fft_kernel_matches_spatial_definition() {
        let (m, f) = small_model();
        let n = 16;
        let z = m.features(&f, (30.0, 27.0));
        let mut k_hat = m.kernel_correlation(&z);
        m.fft.inverse(&mut k_hat);
        let brute = brute_kernel(m.template_features(), &z, n, m.params().kernel_sigma);
        for (a, b) in k_hat.iter().zip(&brute) {
            assert!((a.re - b).abs() < 1e-9, "{} vs {}", a.re, b);
            assert!(a.im.abs() < 1e-9);
        }
    }

    #[test]
    fn coefficients_solve_the_circulant_normal_equation() {
        let (m, _) = small_model();
        let n = 16;
        let mut alpha = m.alpha_hat().to_vec();
        m.fft.inverse(&mut alpha);
        let alpha: Vec<f64> = alpha.iter().map(|c| c.re).collect();
        let x = m.template_features();
        let kxx = brute_kernel(x, x, n, m.params().kernel_sigma);
        let y = gaussian_label(n, m.params().output_sigma_factor * n as f64);
        // (K + lambda I) alpha with K[i][j] = kxx[(j - i) mod n] per axis
        let mut sq_err = 0.0;
        for r in 0..n {
            for c in 0..n {
                let mut acc = m.params().regularization_lambda * alpha[r * n + c];
                for sr in 0..n {
                    for sc in 0..n {
                        let kr = (r + n - sr) % n;
                        let kc = (c + n - sc) % n;
                        acc += kxx[kr * n + kc] * alpha[sr * n + sc];
                    }
                }
                sq_err += (acc - y[r * n + c]).powi(2);
            }
        }
        let rms = (sq_err / (n * n) as f64).sqrt();
        assert!(rms < 1e-6, "rms {rms}");
    }

    #[test]
    fn deterministic_outputs() {
        let f0 = square_frame(200, 150, 80, 60, 24, [230, 40, 40], GRAY);
        let f1 = square_frame(200, 150, 84, 61, 24, [230, 40, 40], GRAY);
        let b = BBox::new(80.0, 60.0, 24.0, 24.0);
        let mut a = cf_init(&f0, &b, FilterParams::default()).unwrap();
        let mut c = cf_init(&f0, &b, FilterParams::default()).unwrap();
        let oa = cf_update(&mut a, &f1);
        let oc = cf_update(&mut c, &f1);
        assert_eq!(oa.bbox.x.to_bits(), oc.bbox.x.to_bits());
        assert_eq!(oa.peak.to_bits(), oc.peak.to_bits());
    }
}
