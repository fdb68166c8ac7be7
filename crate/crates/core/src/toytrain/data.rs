//! Synthetic scenes with controllable ambiguity and noise.
//!
//! Every pixel carries [`FEATURES`] smooth random feature channels in
//! `[-1, 1]`. The base motion is a fixed nonlinear function of the first
//! three channels. The fourth channel marks the ambiguous region (`c3 > 0`)
//! in bimodal scenes and drives the noise scale in noisy scenes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FlowField, ValidMask};

pub const FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    #[default]
    Unimodal,
    /// Inside the ambiguous region the motion is shifted by `+offset` or
    /// `-offset`, decided per scene by a fair coin that the features do not
    /// reveal.
    Bimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub mode: SceneMode,
    /// Maximum Laplace noise scale added to the ground truth; 0 disables
    /// noise. The per-pixel scale grows linearly with channel 3 from 5% to
    /// 100% of this value.
    pub noise: f64,
    /// Displacement between the two modes is `2 * offset`.
    pub offset: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            mode: SceneMode::Unimodal,
            noise: 0.0,
            offset: [2.0, 2.0],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::ZeroDimension {
                width: self.width,
                height: self.height,
            });
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument("noise must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    /// `width * height` rows of [`FEATURES`] columns, row-major pixels.
    pub features: Array2<f64>,
    pub gt: FlowField,
    pub mode: SceneMode,
    /// Which mode was realized (bimodal scenes only).
    pub latent: Option<bool>,
    pub ambiguous: Vec<bool>,
    /// Laplace scale of the noise injected at each pixel.
    pub noise_scale: Vec<f64>,
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> ValidMask {
        ValidMask::all(self.width, self.height).expect("scene dims are non-zero")
    }
}

/// Noise-free motion for one feature vector.
pub fn base_motion(c: &[f64]) -> (f64, f64) {
    (2.0 * c[0] + c[1] * c[2], 1.5 * c[1] - c[0] * c[2])
}

fn noise_scale(c3: f64, noise: f64) -> f64 {
    noise * (0.05 + 0.95 * 0.5 * (1.0 + c3))
}

fn laplace_sample(rng: &mut impl Rng, b: f64) -> f64 {
    let p: f64 = rng.random::<f64>() - 0.5;
    -b * p.signum() * (1.0 - 2.0 * p.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Smooth feature channels: one plane wave per channel with random
/// frequency (up to 1.5 cycles across the grid), orientation and phase.
pub fn random_features(rng: &mut impl Rng, width: usize, height: usize) -> Array2<f64> {
    let mut out = Array2::zeros((width * height, FEATURES));
    for c in 0..FEATURES {
        let fx: f64 = rng.random_range(-1.5..1.5);
        let fy: f64 = rng.random_range(-1.5..1.5);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..height {
            for x in 0..width {
                let t = std::f64::consts::TAU * (fx * x as f64 / width as f64 + fy * y as f64 / height as f64);
                out[[y * width + x, c]] = (t + phase).sin();
            }
        }
    }
    out
}

/// Draws a ground truth for fixed features: the latent mode (bimodal) and
/// the noise come from `rng`, everything else is a function of `features`.
pub fn realize(features: &Array2<f64>, config: &SceneConfig, rng: &mut impl Rng) -> Result<SyntheticScene> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    if features.dim() != (w * h, FEATURES) {
        return Err(Error::InvalidArgument(format!(
            "features have shape {:?}, expected ({}, {FEATURES})",
            features.dim(),
            w * h
        )));
    }
    let latent = match config.mode {
        SceneMode::Unimodal => None,
        SceneMode::Bimodal => Some(rng.random_bool(0.5)),
    };
    let sign = if latent == Some(true) { 1.0 } else { -1.0 };
    let n = w * h;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut ambiguous = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for row in features.rows() {
        let c = row.as_slice().expect("standard layout");
        let (mut a, mut b) = base_motion(c);
        let amb = config.mode == SceneMode::Bimodal && c[3] > 0.0;
        if amb {
            a += sign * config.offset[0];
            b += sign * config.offset[1];
        }
        let s = if config.noise > 0.0 {
            noise_scale(c[3], config.noise)
        } else {
            0.0
        };
        if s > 0.0 {
            a += laplace_sample(rng, s);
            b += laplace_sample(rng, s);
        }
        u.push(a);
        v.push(b);
        ambiguous.push(amb);
        scales.push(s);
    }
    Ok(SyntheticScene {
        width: w,
        height: h,
        features: features.clone(),
        gt: FlowField::new(w, h, u, v)?,
        mode: config.mode,
        latent,
        ambiguous,
        noise_scale: scales,
    })
}

/// `count` scenes, deterministic in `seed`.
pub fn generate_with(config: &SceneConfig, seed: u64, count: usize) -> Result<Vec<SyntheticScene>> {
    if count == 0 {
        return Err(Error::InvalidArgument("scene count must be >= 1".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let features = random_features(&mut rng, config.width, config.height);
            realize(&features, config, &mut rng)
        })
        .collect()
}

/// Default-sized noise-free scenes in the given mode.
pub fn generate_scenes(seed: u64, count: usize, mode: SceneMode) -> Result<Vec<SyntheticScene>> {
    generate_with(
        &SceneConfig {
            mode,
            ..SceneConfig::default()
        },
        seed,
        count,
    )
}
