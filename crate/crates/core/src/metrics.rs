//! Volume comparison: MSE, RMSE, NMSE, PSNR and Gaussian-window SSIM.
//!
//! Sums use the pairwise scheme from [`crate::scalar`], and slices are
//! reduced in slice order, so results do not depend on the worker count.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::scalar::{pairwise_sum, pairwise_sum_by, Real};
use crate::tensor::Tensor;
use crate::volume::{Channel, RadioMapVolume};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("ground truth is all zero; NMSE is undefined")]
    ZeroTruth,
    #[error("no voxels to compare")]
    Empty,
    #[error("slice {rows}x{cols} is smaller than the {window}x{window} SSIM window")]
    SliceTooSmall { rows: usize, cols: usize, window: usize },
    #[error("invalid SSIM config: {0}")]
    Config(String),
    #[error("prediction and truth differ in normalization state")]
    MixedNormalization,
    #[error("exclusion mask has {found} entries, expected {expected}")]
    MaskLength { expected: usize, found: usize },
}

/// PSNR in dB, or the marker for a perfect match (`mse = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64, l: f64) -> Self {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(10.0 * (l * l / mse).log10())
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:?}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub nmse: f64,
    pub psnr: Psnr,
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// `mse = mean((p - t)²)`, `nmse = Σ(t - p)² / Σt²`, `rmse = √mse`,
/// `psnr = 10 log10(L² / mse)`.
pub fn error_metrics<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>, l: f64) -> Result<ErrorMetrics, MetricsError> {
    if pred.shape() != truth.shape() {
        return Err(MetricsError::Shape(pred.shape().to_vec(), truth.shape().to_vec()));
    }
    error_metrics_slices(&to_f64(pred.data()), &to_f64(truth.data()), l)
}

fn error_metrics_slices(p: &[f64], t: &[f64], l: f64) -> Result<ErrorMetrics, MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sq = pairwise_sum_by(0, p.len(), |i| (p[i] - t[i]) * (p[i] - t[i]));
    let energy = pairwise_sum_by(0, t.len(), |i| t[i] * t[i]);
    if energy == 0.0 {
        return Err(MetricsError::ZeroTruth);
    }
    let mse = sq / p.len() as f64;
    Ok(ErrorMetrics { mse, rmse: mse.sqrt(), nmse: sq / energy, psnr: Psnr::from_mse(mse, l) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`.
    pub l: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, l: 1.0 }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(MetricsError::Config(format!("window {} must be odd", self.window)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.sigma > 0.0 && self.l > 0.0) {
            return Err(MetricsError::Config("k1, k2, sigma and L must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.l).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l).powi(2)
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> =
            (0..self.window).map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Separable Gaussian filter over valid positions of a row-major image.
fn filter_valid(img: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let w = g.len();
    let (or, oc) = (rows - w + 1, cols - w + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            let mut acc = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                acc += gk * img[r * cols + c + k];
            }
            tmp[r * oc + c] = acc;
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            let mut acc = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                acc += gk * tmp[(r + k) * oc + c];
            }
            out[r * oc + c] = acc;
        }
    }
    out
}

fn ssim_slices(x: &[f64], y: &[f64], rows: usize, cols: usize, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    cfg.validate()?;
    if rows < cfg.window || cols < cfg.window {
        return Err(MetricsError::SliceTooSmall { rows, cols, window: cfg.window });
    }
    let g = cfg.taps();
    let f = |v: &[f64]| filter_valid(v, rows, cols, &g);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let (mx, my) = (f(x), f(y));
    let (exx, eyy, exy) = (f(&prod(x, x)), f(&prod(y, y)), f(&prod(x, y)));
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let local: Vec<f64> = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let (vx, vy, cxy) = (exx[i] - ux * ux, eyy[i] - uy * uy, exy[i] - ux * uy);
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect();
    Ok(pairwise_sum(&local) / local.len() as f64)
}

/// Mean local SSIM of two `[rows, cols]` slices over valid window positions.
pub fn ssim<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    if pred.shape() != truth.shape() || pred.rank() != 2 {
        return Err(MetricsError::Shape(pred.shape().to_vec(), truth.shape().to_vec()));
    }
    let (r, c) = (pred.shape()[0], pred.shape()[1]);
    ssim_slices(&to_f64(pred.data()), &to_f64(truth.data()), r, c, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub nmse: f64,
    pub ssim: f64,
    pub psnr: Psnr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub channels: Vec<(Channel, ChannelMetrics)>,
    /// `mse`, `nmse`, `ssim`: unweighted channel means; `rmse` and `psnr`
    /// derived from the aggregate `mse`.
    pub aggregate: ChannelMetrics,
    pub voxels: usize,
    pub masked: bool,
    pub l: f64,
}

impl MetricReport {
    pub fn get(&self, c: Channel) -> Option<&ChannelMetrics> {
        self.channels.iter().find(|(ch, _)| *ch == c).map(|(_, m)| m)
    }

    /// `channel,metric,value` lines; the aggregate row uses channel
    /// `aggregate`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("channel,metric,value\n");
        let rows = self.channels.iter().map(|(c, m)| (c.tag(), m)).chain([("aggregate", &self.aggregate)]);
        for (tag, m) in rows {
            writeln!(out, "{tag},mse,{:?}", m.mse).unwrap();
            writeln!(out, "{tag},rmse,{:?}", m.rmse).unwrap();
            writeln!(out, "{tag},nmse,{:?}", m.nmse).unwrap();
            writeln!(out, "{tag},ssim,{:?}", m.ssim).unwrap();
            writeln!(out, "{tag},psnr,{}", m.psnr).unwrap();
        }
        writeln!(out, "all,voxels,{}", self.voxels).unwrap();
        out
    }
}

/// Per-channel error metrics over the whole volume plus SSIM per height
/// slice averaged over slices. Voxels flagged in `exclude` are dropped from
/// the error metrics and zeroed in both volumes for SSIM.
pub fn evaluate_volume<T: Real>(
    pred: &RadioMapVolume<T>,
    truth: &RadioMapVolume<T>,
    cfg: &SsimConfig,
    exclude: Option<&[bool]>,
) -> Result<MetricReport, MetricsError> {
    if pred.is_normalized() != truth.is_normalized() {
        return Err(MetricsError::MixedNormalization);
    }
    let (nx, ny, nz) = truth.dims();
    if pred.dims() != truth.dims() {
        let p = pred.dims();
        return Err(MetricsError::Shape(vec![p.0, p.1, p.2], vec![nx, ny, nz]));
    }
    if let Some(m) = exclude {
        if m.len() != truth.voxel_count() {
            return Err(MetricsError::MaskLength { expected: truth.voxel_count(), found: m.len() });
        }
    }
    cfg.validate()?;
    if nx < cfg.window || ny < cfg.window {
        return Err(MetricsError::SliceTooSmall { rows: nx, cols: ny, window: cfg.window });
    }
    let keep = |v: usize| exclude.is_none_or(|m| !m[v]);
    let mut channels = Vec::with_capacity(4);
    let mut voxels = 0;
    for c in Channel::ALL {
        let (p, t) = (to_f64(pred.channel(c).data()), to_f64(truth.channel(c).data()));
        let (pk, tk): (Vec<f64>, Vec<f64>) = (0..p.len()).filter(|&v| keep(v)).map(|v| (p[v], t[v])).unzip();
        voxels = pk.len();
        let e = error_metrics_slices(&pk, &tk, cfg.l)?;
        let slices: Vec<f64> = (0..nz)
            .into_par_iter()
            .map(|k| {
                let mut a = vec![0.0; nx * ny];
                let mut b = vec![0.0; nx * ny];
                for i in 0..nx {
                    for j in 0..ny {
                        let v = (i * ny + j) * nz + k;
                        if keep(v) {
                            a[i * ny + j] = p[v];
                            b[i * ny + j] = t[v];
                        }
                    }
                }
                ssim_slices(&a, &b, nx, ny, cfg)
            })
            .collect::<Result<_, _>>()?;
        let s = pairwise_sum(&slices) / nz as f64;
        channels.push((c, ChannelMetrics { mse: e.mse, rmse: e.rmse, nmse: e.nmse, ssim: s, psnr: e.psnr }));
    }
    let mean = |f: fn(&ChannelMetrics) -> f64| channels.iter().map(|(_, m)| f(m)).sum::<f64>() / channels.len() as f64;
    let mse = mean(|m| m.mse);
    let aggregate = ChannelMetrics {
        mse,
        rmse: mse.sqrt(),
        nmse: mean(|m| m.nmse),
        ssim: mean(|m| m.ssim),
        psnr: Psnr::from_mse(mse, cfg.l),
    };
    Ok(MetricReport { channels, aggregate, voxels, masked: exclude.is_some(), l: cfg.l })
}
