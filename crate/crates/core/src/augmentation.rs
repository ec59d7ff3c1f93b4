//! Photometric augmentations producing the input variants of the ensemble.
//!
//! All operators keep dimensions and channel count and are deterministic;
//! noise draws from a seeded counter-based generator so results are
//! reproducible bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentationError {
    #[error("unsupported augmentation spec: {0}")]
    UnsupportedSpec(String),
    #[error("invalid augmentation parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("roster: {0}")]
    Roster(String),
}

/// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, AugmentationError> {
        if width == 0 || height == 0 {
            return Err(AugmentationError::InvalidImage("zero dimension".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(AugmentationError::InvalidImage(format!(
                "{channels} channels"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(AugmentationError::InvalidImage(format!(
                "{} samples for {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, AugmentationError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn mean_sample(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Mean luma (ITU-R 601-2 weights for RGB).
    pub fn mean_luma(&self) -> f64 {
        if self.channels == 1 {
            return self.mean_sample();
        }
        let total: f64 = self
            .pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .sum();
        total / (self.width * self.height) as f64
    }

    fn map_samples(&self, f: impl Fn(u8) -> u8) -> Image {
        Image {
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[(y * self.width + x) * self.channels + c] as f64
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// One augmentation operator with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    Identity,
    Brightness { factor: f64 },
    Contrast { factor: f64 },
    EdgeEnhance,
    EdgeEnhanceMore,
    HistEqualize,
    GaussianBlur { radius: f64 },
    /// `variance` is on the [0, 1]-normalized intensity scale.
    GaussianNoise {
        variance: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl Augmentation {
    /// Short name, also the parse format: `contrast_1.5`, `noise_0.001`, `blur_2`, …
    pub fn name(&self) -> String {
        match self {
            Augmentation::Identity => "identity".into(),
            Augmentation::Brightness { factor } => format!("brightness_{factor}"),
            Augmentation::Contrast { factor } => format!("contrast_{factor}"),
            Augmentation::EdgeEnhance => "edge_enhance".into(),
            Augmentation::EdgeEnhanceMore => "edge_enhance_more".into(),
            Augmentation::HistEqualize => "hist_equalize".into(),
            Augmentation::GaussianBlur { radius } => format!("blur_{radius}"),
            Augmentation::GaussianNoise { variance, .. } => format!("noise_{variance}"),
        }
    }

    pub fn validate(&self) -> Result<(), AugmentationError> {
        let bad = |msg: String| Err(AugmentationError::InvalidParameter(msg));
        match *self {
            Augmentation::Brightness { factor } | Augmentation::Contrast { factor }
                if !(factor.is_finite() && factor >= 0.0) =>
            {
                bad(format!("factor {factor} must be finite and non-negative"))
            }
            Augmentation::GaussianBlur { radius } if !(radius.is_finite() && radius > 0.0) => {
                bad(format!("blur radius {radius} must be positive"))
            }
            Augmentation::GaussianNoise { variance, .. }
                if !(variance.is_finite() && variance >= 0.0) =>
            {
                bad(format!("noise variance {variance} must be non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Same operator with its noise stream re-keyed; other kinds are unchanged.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Augmentation::GaussianNoise { variance, .. } => {
                Augmentation::GaussianNoise { variance, seed }
            }
            other => other,
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, AugmentationError> {
        self.validate()?;
        Ok(match *self {
            Augmentation::Identity => img.clone(),
            Augmentation::Brightness { factor } => brightness(img, factor),
            Augmentation::Contrast { factor } => contrast(img, factor),
            Augmentation::EdgeEnhance => convolve3(img, 10.0, 2.0),
            Augmentation::EdgeEnhanceMore => convolve3(img, 9.0, 1.0),
            Augmentation::HistEqualize => hist_equalize(img),
            Augmentation::GaussianBlur { radius } => gaussian_blur(img, radius),
            Augmentation::GaussianNoise { variance, seed } => gaussian_noise(img, variance, seed),
        })
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Augmentation {
    type Err = AugmentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unsupported = || AugmentationError::UnsupportedSpec(s.to_string());
        let spec = match s {
            "identity" => Augmentation::Identity,
            "edge_enhance" => Augmentation::EdgeEnhance,
            "edge_enhance_more" => Augmentation::EdgeEnhanceMore,
            "hist_equalize" => Augmentation::HistEqualize,
            _ => {
                let (kind, param) = s.rsplit_once('_').ok_or_else(unsupported)?;
                let v: f64 = param.parse().map_err(|_| unsupported())?;
                match kind {
                    "brightness" => Augmentation::Brightness { factor: v },
                    "contrast" => Augmentation::Contrast { factor: v },
                    "blur" => Augmentation::GaussianBlur { radius: v },
                    "noise" => Augmentation::GaussianNoise {
                        variance: v,
                        seed: 0,
                    },
                    _ => return Err(unsupported()),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Roster entries may be written as short names or as full objects.
#[derive(Deserialize)]
#[serde(untagged)]
enum RosterEntry {
    Name(String),
    Spec(Augmentation),
}

/// Ranked list of augmentations; the first entry is normally `identity`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Roster(pub Vec<Augmentation>);

const DEFAULT_ROSTER: &str = include_str!("../data/roster.json");

impl Roster {
    pub fn parse_json(text: &str) -> Result<Self, AugmentationError> {
        let entries: Vec<RosterEntry> =
            serde_json::from_str(text).map_err(|e| AugmentationError::Roster(e.to_string()))?;
        let specs = entries
            .into_iter()
            .map(|e| match e {
                RosterEntry::Name(n) => n.parse(),
                RosterEntry::Spec(s) => s.validate().map(|_| s),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if specs.is_empty() {
            return Err(AugmentationError::Roster("empty roster".into()));
        }
        Ok(Roster(specs))
    }

    pub fn load(path: &Path) -> Result<Self, AugmentationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AugmentationError::Roster(format!("{}: {e}", path.display())))?;
        Self::parse_json(&text)
    }

    /// The full 18-entry ranked roster shipped in `data/roster.json`.
    pub fn default_ranked() -> Self {
        Self::parse_json(DEFAULT_ROSTER).expect("bundled roster is valid")
    }

    /// First `m` entries of the ranking.
    pub fn prefix(&self, m: usize) -> Result<Self, AugmentationError> {
        if m == 0 || m > self.0.len() {
            return Err(AugmentationError::Roster(format!(
                "M = {m} outside 1..={}",
                self.0.len()
            )));
        }
        Ok(Roster(self.0[..m].to_vec()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn specs(&self) -> &[Augmentation] {
        &self.0
    }
}

fn brightness(img: &Image, factor: f64) -> Image {
    img.map_samples(|p| quantize(p as f64 * factor))
}

fn contrast(img: &Image, factor: f64) -> Image {
    let mean = img.mean_luma().round();
    img.map_samples(|p| quantize(mean + factor * (p as f64 - mean)))
}

/// 3x3 kernel with `center` in the middle and -1 elsewhere, divided by `divisor`.
fn convolve3(img: &Image, center: f64, divisor: f64) -> Image {
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height as isize {
        for x in 0..img.width as isize {
            for c in 0..img.channels {
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let w = if dx == 0 && dy == 0 { center } else { -1.0 };
                        acc += w * img.at(x + dx, y + dy, c);
                    }
                }
                out.push(quantize(acc / divisor));
            }
        }
    }
    Image {
        pixels: out,
        ..img.clone()
    }
}

fn hist_equalize(img: &Image) -> Image {
    let n = img.width * img.height;
    let mut luts = Vec::with_capacity(img.channels);
    for c in 0..img.channels {
        let mut hist = [0usize; 256];
        for p in img.pixels.iter().skip(c).step_by(img.channels) {
            hist[*p as usize] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut run = 0;
        for v in 0..256 {
            run += hist[v];
            cdf[v] = run;
        }
        let cdf_min = cdf.iter().copied().find(|&x| x > 0).unwrap_or(0);
        let lut: Vec<u8> = (0..256)
            .map(|v| {
                if n == cdf_min {
                    v as u8
                } else {
                    quantize((cdf[v].saturating_sub(cdf_min)) as f64 * 255.0 / (n - cdf_min) as f64)
                }
            })
            .collect();
        luts.push(lut);
    }
    let pixels = img
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| luts[i % img.channels][p as usize])
        .collect();
    Image {
        pixels,
        ..img.clone()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Separable Gaussian with sigma = radius, replicate padding.
fn gaussian_blur(img: &Image, radius: f64) -> Image {
    let k = gaussian_kernel(radius);
    let half = (k.len() / 2) as isize;
    let (w, h, ch) = (img.width, img.height, img.channels);

    let mut horiz = vec![0.0f64; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                horiz[(y * w + x) * ch + c] = k
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| wt * img.at(x as isize + i as isize - half, y as isize, c))
                    .sum();
            }
        }
    }
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| {
                        let yy = (y as isize + i as isize - half).clamp(0, h as isize - 1) as usize;
                        wt * horiz[(yy * w + x) * ch + c]
                    })
                    .sum();
                out.push(quantize(v));
            }
        }
    }
    Image {
        pixels: out,
        ..img.clone()
    }
}

/// SplitMix64 evaluated at an arbitrary counter: output `i` of the stream
/// seeded with `seed`. Counter-based, so any sample can be regenerated alone.
pub fn splitmix64_at(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) from the top 53 bits.
fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal for sample `i`: Box–Muller on counters `2i` and `2i + 1`.
pub fn standard_normal_at(seed: u64, i: u64) -> f64 {
    let u1 = 1.0 - unit(splitmix64_at(seed, 2 * i));
    let u2 = unit(splitmix64_at(seed, 2 * i + 1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn gaussian_noise(img: &Image, variance: f64, seed: u64) -> Image {
    if variance == 0.0 {
        return img.clone();
    }
    let sd = variance.sqrt();
    let pixels = img
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let v = p as f64 / 255.0 + sd * standard_normal_at(seed, i as u64);
            quantize(v.clamp(0.0, 1.0) * 255.0)
        })
        .collect();
    Image {
        pixels,
        ..img.clone()
    }
}
