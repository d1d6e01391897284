//! Preprocessing: bad-value and artifact-band imputation, plus the composite
//! Gaussian/uniform noise injector that produces high-noise inputs.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::spectral::{Spectrum, WavelengthGrid, ARTIFACT_BAND_UM};
use crate::{Error, Result};

/// Composite noise: each channel receives `g * (sigma_base + u)` with `g`
/// standard normal and `u` uniform on `[0, sigma_uniform_max]`. The uniform
/// term makes the noise magnitude vary from channel to channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_base: f64,
    pub sigma_uniform_max: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { sigma_base: 0.005, sigma_uniform_max: 0.005, seed: 7 }
    }
}

impl NoiseParams {
    /// A noiser that returns its input unchanged.
    pub fn identity() -> Self {
        Self { sigma_base: 0.0, sigma_uniform_max: 0.0, seed: 0 }
    }

    pub fn is_identity(&self) -> bool {
        self.sigma_base == 0.0 && self.sigma_uniform_max == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_base", self.sigma_base), ("sigma_uniform_max", self.sigma_uniform_max)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("noise {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Per-channel noise variance: E[(s + U)^2] = s^2 + s*a + a^2/3 for U ~ Unif(0, a).
    pub fn variance(&self) -> f64 {
        let (s, a) = (self.sigma_base, self.sigma_uniform_max);
        s * s + s * a + a * a / 3.0
    }
}

fn is_bad(v: f64) -> bool {
    !v.is_finite() || v > 1.0
}

/// Replaces non-finite values and values above one by linear interpolation
/// (in channel index) between the nearest good channels of the same segment.
/// Bad runs touching a segment end copy the nearest good value.
pub fn impute_bad_values(s: &Spectrum, grid: &WavelengthGrid) -> Result<Spectrum> {
    if s.values.len() != grid.len() {
        return Err(Error::Shape(format!("spectrum {} has {} channels, grid {}", s.id, s.values.len(), grid.len())));
    }
    let mut out = s.values.clone();
    for seg in grid.segments() {
        let good: Vec<usize> = seg.clone().filter(|&c| !is_bad(s.values[c])).collect();
        if good.is_empty() {
            return Err(Error::Data(format!(
                "spectrum {}: every channel in {}..{} is bad",
                s.id, seg.start, seg.end
            )));
        }
        for c in seg.clone().filter(|&c| is_bad(s.values[c])) {
            let next = good.partition_point(|&g| g < c);
            out[c] = match (next.checked_sub(1).map(|i| good[i]), good.get(next).copied()) {
                (Some(l), Some(r)) => {
                    let t = (c - l) as f64 / (r - l) as f64;
                    s.values[l] + t * (s.values[r] - s.values[l])
                }
                (Some(l), None) => s.values[l],
                (None, Some(r)) => s.values[r],
                (None, None) => unreachable!(),
            };
        }
    }
    Ok(s.with_values(out))
}

/// Replaces every channel with wavelength in `[lo, hi]` by linear
/// interpolation in wavelength between the nearest channels outside the band
/// on either side. Anchors are taken from the band's own segment.
pub fn impute_band(s: &Spectrum, grid: &WavelengthGrid, lo: f64, hi: f64) -> Spectrum {
    let band = grid.channel_range(lo, hi);
    if band.is_empty() {
        return s.clone();
    }
    let seg = grid.segment_of(band.start);
    let band = band.start..band.end.min(seg.end);
    let w = grid.wavelengths();
    let left = band.start.checked_sub(1).filter(|&c| c >= seg.start);
    let right = Some(band.end).filter(|&c| c < seg.end);
    let mut out = s.values.clone();
    for c in band {
        out[c] = match (left, right) {
            (Some(l), Some(r)) => {
                let t = (w[c] - w[l]) / (w[r] - w[l]);
                s.values[l] + t * (s.values[r] - s.values[l])
            }
            (Some(l), None) => s.values[l],
            (None, Some(r)) => s.values[r],
            (None, None) => s.values[c],
        };
    }
    s.with_values(out)
}

/// Imputes the residual atmospheric artifact band (1.91-2.08 µm).
pub fn impute_artifact_band(s: &Spectrum, grid: &WavelengthGrid) -> Spectrum {
    impute_band(s, grid, ARTIFACT_BAND_UM.0, ARTIFACT_BAND_UM.1)
}

/// Both imputation steps, bad values first.
pub fn preprocess(s: &Spectrum, grid: &WavelengthGrid) -> Result<Spectrum> {
    Ok(impute_artifact_band(&impute_bad_values(s, grid)?, grid))
}

/// Adds composite noise drawn from `rng`; independent across channels.
/// Noisy values are not clamped.
pub fn add_noise(s: &Spectrum, p: &NoiseParams, rng: &mut rng::Rng) -> Spectrum {
    if p.is_identity() {
        return s.clone();
    }
    let values = s
        .values
        .iter()
        .map(|&v| {
            let g: f64 = StandardNormal.sample(rng);
            let u = p.sigma_uniform_max * rng.random::<f64>();
            v + g * (p.sigma_base + u)
        })
        .collect();
    s.with_values(values)
}

/// Noises every spectrum with its own stream `(p.seed, id)`, so results do
/// not depend on ordering or thread count.
pub fn add_noise_all(spectra: &[Spectrum], p: &NoiseParams) -> Vec<Spectrum> {
    spectra.par_iter().map(|s| add_noise(s, p, &mut rng::stream(p.seed, s.id))).collect()
}

/// Caps values at one (optional post-noise clamping).
pub fn clamp_to_unit(s: &Spectrum) -> Spectrum {
    s.with_values(s.values.iter().map(|&v| v.min(1.0)).collect())
}
