use rayon::prelude::*;

use crate::dataio::{fmt_float, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Rng;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelPolicy {
    /// SSIM of the luma planes.
    Luma,
    /// Mean of the per-channel SSIMs.
    ChannelMean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub channels: ChannelPolicy,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 255.0, channels: ChannelPolicy::Luma }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window).map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Pixel planes of an image under a channel policy, `[0, 255]` scale.
pub fn planes(img: &RgbImage, policy: ChannelPolicy) -> Vec<Vec<f64>> {
    let px = img.pixels();
    match policy {
        ChannelPolicy::Luma => vec![px.chunks(3).map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64).collect()],
        ChannelPolicy::ChannelMean => (0..3).map(|c| px.chunks(3).map(|p| p[c] as f64).collect()).collect(),
    }
}

/// Valid-position Gaussian filtering, rows then columns.
fn filter(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

struct PreparedPlane {
    values: Vec<f64>,
    mu: Vec<f64>,
    sq: Vec<f64>,
}

/// An image with its per-plane local means and second moments computed once.
pub struct PreparedImage {
    width: usize,
    height: usize,
    planes: Vec<PreparedPlane>,
}

impl PreparedImage {
    pub fn new(img: &RgbImage, cfg: &SsimConfig) -> Result<Self> {
        let (w, h) = (img.width(), img.height());
        if w < cfg.window || h < cfg.window {
            return Err(Error::InvalidConfig(format!("{w}x{h} image is smaller than the {0}x{0} SSIM window", cfg.window)));
        }
        let taps = cfg.taps();
        let planes = planes(img, cfg.channels)
            .into_iter()
            .map(|values| {
                let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
                PreparedPlane { mu: filter(&values, w, h, &taps), sq: filter(&squares, w, h, &taps), values }
            })
            .collect();
        Ok(Self { width: w, height: h, planes })
    }

    /// SSIM against another prepared image.
    pub fn ssim(&self, other: &PreparedImage, cfg: &SsimConfig) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch { lhs: (self.width, self.height), rhs: (other.width, other.height) });
        }
        let taps = cfg.taps();
        let (c1, c2) = (cfg.c1(), cfg.c2());
        let mut total = 0.0;
        for (a, b) in self.planes.iter().zip(&other.planes) {
            let prod: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
            let cross = filter(&prod, self.width, self.height, &taps);
            let mut sum = 0.0;
            for i in 0..cross.len() {
                let (ma, mb) = (a.mu[i], b.mu[i]);
                let va = a.sq[i] - ma * ma;
                let vb = b.sq[i] - mb * mb;
                let cov = cross[i] - ma * mb;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            total += sum / cross.len() as f64;
        }
        Ok(total / self.planes.len() as f64)
    }
}

/// Mean SSIM over all valid window positions.
pub fn ssim_pair(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch { lhs: (a.width(), a.height()), rhs: (b.width(), b.height()) });
    }
    PreparedImage::new(a, cfg)?.ssim(&PreparedImage::new(b, cfg)?, cfg)
}

/// How one generated image is scored against the real images of its class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingPolicy {
    /// Best match among the sampled real images.
    Max,
    /// Average over the sampled real images.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportConfig {
    pub ssim: SsimConfig,
    pub pairing: PairingPolicy,
    /// Maximum number of real images compared per class.
    pub real_cap: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { ssim: SsimConfig::default(), pairing: PairingPolicy::Max, real_cap: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimRow {
    pub class: String,
    pub max: f64,
    pub mean: f64,
    pub min: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SsimReport {
    pub rows: Vec<SsimRow>,
}

impl SsimReport {
    pub const HEADER: [&'static str; 4] = ["class", "max", "mean", "min"];

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| vec![r.class.clone(), fmt_float(r.max), fmt_float(r.mean), fmt_float(r.min)]).collect()
    }

    pub fn to_csv(&self) -> String {
        crate::dataio::csv_text(&Self::HEADER, &self.rows())
    }
}

/// Per-generated-image scores of one class, in generated order.
pub fn class_scores(generated: &[RgbImage], real: &[RgbImage], cfg: &ReportConfig, stream: u64) -> Result<Vec<f64>> {
    let mut idx: Vec<usize> = (0..real.len()).collect();
    if real.len() > cfg.real_cap {
        Rng::new(cfg.seed).fork(stream).shuffle(&mut idx);
        idx.truncate(cfg.real_cap.max(1));
        idx.sort_unstable();
    }
    let refs = idx.par_iter().map(|&i| PreparedImage::new(&real[i], &cfg.ssim)).collect::<Result<Vec<_>>>()?;
    generated
        .par_iter()
        .map(|g| {
            let g = PreparedImage::new(g, &cfg.ssim)?;
            let scores = refs.iter().map(|r| g.ssim(r, &cfg.ssim)).collect::<Result<Vec<_>>>()?;
            Ok(match cfg.pairing {
                PairingPolicy::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                PairingPolicy::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            })
        })
        .collect()
}

/// Max/mean/min of the per-generated-image scores for each class.
/// `classes[k]` names the pair `(generated[k], real[k])`.
pub fn ssim_report(classes: &[String], generated: &[Vec<RgbImage>], real: &[Vec<RgbImage>], cfg: &ReportConfig) -> Result<SsimReport> {
    if generated.len() != classes.len() || real.len() != classes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} classes but {} generated and {} real sets",
            classes.len(),
            generated.len(),
            real.len()
        )));
    }
    let mut rows = Vec::with_capacity(classes.len());
    for (k, class) in classes.iter().enumerate() {
        if generated[k].is_empty() || real[k].is_empty() {
            return Err(Error::EmptyClass(class.clone()));
        }
        let scores = class_scores(&generated[k], &real[k], cfg, k as u64)?;
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = (scores.iter().sum::<f64>() / scores.len() as f64).clamp(min, max);
        rows.push(SsimRow { class: class.clone(), max, mean, min });
    }
    Ok(SsimReport { rows })
}
