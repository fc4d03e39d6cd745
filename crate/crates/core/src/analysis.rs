//! Correction-error statistics: Laplace fit, histogram, radial spectrum,
//! and feature-map export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::io::save_gray;
use crate::nets::LceModel;
use crate::real::Real;
use crate::spectral::fft::Fft;
use crate::tensor::Tensor;

pub const HIST_BINS: usize = 201;
pub const HIST_RANGE: (f64, f64) = (-0.5, 0.5);
/// Radial bin width in normalised frequency (cycles per sample).
pub const RADIAL_BIN_WIDTH: f64 = 1.0 / 64.0;
/// Radius above which spectral energy counts as high frequency (half Nyquist).
pub const HIGH_FREQ_CUTOFF: f64 = 0.25;

/// `gt - est`, elementwise.
pub fn correction_error<T: Real>(est: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    if est.shape() != gt.shape() {
        return Err(Error::shape("correction_error", est.shape(), gt.shape()));
    }
    gt.zip_map(est, |g, e| g - e)
}

/// Maximum-likelihood Laplace fit: `(median, mean |x - median|)`.
pub fn laplace_fit(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("laplace_fit", "no samples"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mu = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let b = v.iter().map(|x| (x - mu).abs()).sum::<f64>() / n as f64;
    Ok((mu, b))
}

/// Counts over [`HIST_BINS`] equal bins spanning [`HIST_RANGE`]; values
/// outside the range land in the end bins.
pub fn histogram(values: &[f64]) -> Vec<u64> {
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut h = vec![0u64; HIST_BINS];
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() { 0.0 } else { k.clamp(0.0, (HIST_BINS - 1) as f64) };
        h[k as usize] += 1;
    }
    h
}

pub fn histogram_centers() -> Vec<f64> {
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    (0..HIST_BINS).map(|k| lo + (k as f64 + 0.5) * width).collect()
}

/// Radially binned power spectrum. Energies are `|X(u,v)|^2 / (H W)`, so
/// their total equals the spatial sum of squares.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialSpectrum {
    pub energy: Vec<f64>,
    pub log_magnitude_sum: Vec<f64>,
    pub count: Vec<u64>,
    pub high_energy: f64,
    pub ac_energy: f64,
}

impl RadialSpectrum {
    pub fn bins() -> usize {
        (0.5f64.sqrt() / RADIAL_BIN_WIDTH).ceil() as usize + 1
    }

    pub fn new() -> Self {
        let n = Self::bins();
        RadialSpectrum {
            energy: vec![0.0; n],
            log_magnitude_sum: vec![0.0; n],
            count: vec![0; n],
            high_energy: 0.0,
            ac_energy: 0.0,
        }
    }

    /// Accumulates one `H x W` plane.
    pub fn add_plane(&mut self, x: &[f64], h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || x.len() != h * w {
            return Err(Error::invalid("spectrum_radial", format!("degenerate {h}x{w} plane")));
        }
        let spec = dft2(x, h, w);
        let norm = 1.0 / (h * w) as f64;
        for u in 0..h {
            let fu = u.min(h - u) as f64 / h as f64;
            for v in 0..w {
                let fv = v.min(w - v) as f64 / w as f64;
                let r = (fu * fu + fv * fv).sqrt();
                let c = spec[u * w + v];
                let e = c.norm_sqr() * norm;
                let k = ((r / RADIAL_BIN_WIDTH).floor() as usize).min(self.energy.len() - 1);
                self.energy[k] += e;
                self.log_magnitude_sum[k] += (c.norm() + 1e-12).ln();
                self.count[k] += 1;
                if u != 0 || v != 0 {
                    self.ac_energy += e;
                    if r > HIGH_FREQ_CUTOFF {
                        self.high_energy += e;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_energy(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// Share of non-DC energy above [`HIGH_FREQ_CUTOFF`]; 0 when the AC
    /// energy is at round-off level (below `1e-20` of the total).
    pub fn high_freq_ratio(&self) -> f64 {
        if self.ac_energy > 1e-20 * self.total_energy() {
            self.high_energy / self.ac_energy
        } else {
            0.0
        }
    }

    pub fn mean_energy(&self, k: usize) -> f64 {
        if self.count[k] == 0 {
            0.0
        } else {
            self.energy[k] / self.count[k] as f64
        }
    }

    pub fn mean_log_magnitude(&self, k: usize) -> f64 {
        if self.count[k] == 0 {
            0.0
        } else {
            self.log_magnitude_sum[k] / self.count[k] as f64
        }
    }
}

impl Default for RadialSpectrum {
    fn default() -> Self {
        Self::new()
    }
}

impl Default for ErrorAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Full complex 2-D DFT of a real plane.
fn dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let (fr, fc) = (Fft::<f64>::new(w), Fft::<f64>::new(h));
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_mut(w) {
        fr.process(row, false);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for v in 0..w {
        for u in 0..h {
            col[u] = buf[u * w + v];
        }
        fc.process(&mut col, false);
        for u in 0..h {
            buf[u * w + v] = col[u];
        }
    }
    buf
}

/// Radial spectrum of a single `H x W` map.
pub fn spectrum_radial(map: &Tensor<f64>) -> Result<RadialSpectrum> {
    let &[h, w] = map.shape() else {
        return Err(Error::invalid("spectrum_radial", format!("expected H x W, got {:?}", map.shape())));
    };
    let mut s = RadialSpectrum::new();
    s.add_plane(map.data(), h, w)?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub mu: f64,
    pub b: f64,
    pub samples: usize,
    pub histogram: Vec<u64>,
    pub radial: RadialSpectrum,
    pub high_freq_ratio: f64,
}

/// Pools error maps (every channel plane) into one report.
#[derive(Clone, Debug)]
pub struct ErrorAccumulator {
    values: Vec<f64>,
    radial: RadialSpectrum,
}

impl ErrorAccumulator {
    pub fn new() -> Self {
        ErrorAccumulator {
            values: Vec::new(),
            radial: RadialSpectrum::new(),
        }
    }

    /// Adds a `... x H x W` error map; each trailing plane enters the spectrum.
    pub fn add<T: Real>(&mut self, err: &Tensor<T>) -> Result<()> {
        let r = err.rank();
        if r < 2 {
            return Err(Error::invalid("error report", "need at least two axes"));
        }
        let (h, w) = (err.shape()[r - 2], err.shape()[r - 1]);
        let vals: Vec<f64> = err.data().iter().map(|&v| Real::to_f64(v)).collect();
        for plane in vals.chunks(h * w) {
            self.radial.add_plane(plane, h, w)?;
        }
        self.values.extend(vals);
        Ok(())
    }

    pub fn finish(self) -> Result<ErrorReport> {
        let (mu, b) = laplace_fit(&self.values)?;
        Ok(ErrorReport {
            mu,
            b,
            samples: self.values.len(),
            histogram: histogram(&self.values),
            high_freq_ratio: self.radial.high_freq_ratio(),
            radial: self.radial,
        })
    }
}

impl ErrorReport {
    pub fn stats_tsv(&self, extra: &[(&str, f64)]) -> String {
        let mut s = String::from("stat\tvalue\n");
        let _ = writeln!(s, "mu\t{}", self.mu);
        let _ = writeln!(s, "b\t{}", self.b);
        let _ = writeln!(s, "high_freq_ratio\t{}", self.high_freq_ratio);
        let _ = writeln!(s, "samples\t{}", self.samples);
        let _ = writeln!(s, "total_energy\t{}", self.radial.total_energy());
        for (k, v) in extra {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    pub fn histogram_tsv(&self) -> String {
        let mut s = String::from("bin_center\tcount\n");
        for (c, n) in histogram_centers().iter().zip(&self.histogram) {
            let _ = writeln!(s, "{c:.6}\t{n}");
        }
        s
    }

    pub fn radial_tsv(&self) -> String {
        let r = &self.radial;
        let mut s = String::from("radius\tenergy\tmean_energy\tmean_log_magnitude\tcount\n");
        for k in 0..r.energy.len() {
            let _ = writeln!(
                s,
                "{:.6}\t{}\t{}\t{}\t{}",
                k as f64 * RADIAL_BIN_WIDTH,
                r.energy[k],
                r.mean_energy(k),
                r.mean_log_magnitude(k),
                r.count[k]
            );
        }
        s
    }

    /// Writes `{prefix}stats.tsv`, `{prefix}histogram.tsv` and `{prefix}radial.tsv`.
    pub fn write(&self, dir: &Path, prefix: &str, extra: &[(&str, f64)]) -> Result<Vec<PathBuf>> {
        let files = [
            (format!("{prefix}stats.tsv"), self.stats_tsv(extra)),
            (format!("{prefix}histogram.tsv"), self.histogram_tsv()),
            (format!("{prefix}radial.tsv"), self.radial_tsv()),
        ];
        files
            .into_iter()
            .map(|(name, text)| {
                let p = dir.join(name);
                crate::io::write_file(&p, text.as_bytes())?;
                Ok(p)
            })
            .collect()
    }
}

/// Writes each channel of the selected activations (batch item 0) as a
/// min-max normalised grayscale PNG named `{layer}_c{k:03}.png`.
pub fn dump_feature_maps(model: &LceModel<f32>, input: &Tensor<f32>, layers: &[&str], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if layers.is_empty() {
        return Ok(Vec::new());
    }
    let taps = model.taps(input, layers)?;
    let mut files = Vec::new();
    for (name, t) in &taps.maps {
        let (_, c, h, w) = t.dims4("dump_feature_maps")?;
        for k in 0..c {
            let plane = &t.data()[k * h * w..(k + 1) * h * w];
            let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let span = hi - lo;
            let norm: Vec<f32> = plane.iter().map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect();
            let path = out_dir.join(format!("{name}_c{k:03}.png"));
            save_gray(&path, &norm, h, w)?;
            files.push(path);
        }
    }
    Ok(files)
}
