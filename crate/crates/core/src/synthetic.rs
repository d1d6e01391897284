//! Synthetic scenes: labelled mineral spectra with Gaussian absorption
//! features on a sloped continuum, featureless "bland" spectra, and a
//! grouping into synthetic images that carries the train/val/test split.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::spectral::{Dataset, PixelKind, Spectrum, Split, WavelengthGrid};
use crate::{Error, Result};

/// Floor applied to generated reflectance so every clean value is strictly positive.
pub const MIN_REFLECTANCE: f64 = 1e-6;

/// Versioned default template library.
pub const DEFAULT_LIBRARY_JSON: &str = include_str!("../data/minerals_v1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionFeature {
    /// Band centre in µm.
    pub center: f64,
    /// Fractional depth relative to the continuum, in (0, 0.6].
    pub depth: f64,
    /// Gaussian sigma in µm, in [0.005, 0.2].
    pub width: f64,
}

impl AbsorptionFeature {
    fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        let w = grid.wavelengths();
        if !(self.center >= w[0] && self.center <= w[w.len() - 1]) {
            return Err(Error::Config(format!("feature centre {} µm outside the grid", self.center)));
        }
        if !(self.depth > 0.0 && self.depth <= 0.6) {
            return Err(Error::Config(format!("feature depth {} outside (0, 0.6]", self.depth)));
        }
        if !(0.005..=0.2).contains(&self.width) {
            return Err(Error::Config(format!("feature width {} µm outside [0.005, 0.2]", self.width)));
        }
        Ok(())
    }

    /// Multiplicative transmission factor at `um` for a given depth.
    fn factor(&self, um: f64, depth: f64) -> f64 {
        let d = um - self.center;
        1.0 - depth * (-d * d / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineralTemplate {
    pub class_id: u32,
    pub class_name: String,
    /// Continuum I/F at the first grid wavelength.
    pub continuum_level: f64,
    /// Continuum slope in I/F per µm.
    pub continuum_slope: f64,
    pub features: Vec<AbsorptionFeature>,
    /// Relative standard deviation applied per spectrum to the level and to each depth.
    pub intra_class_jitter: f64,
}

impl MineralTemplate {
    fn continuum(&self, level: f64, um: f64, origin: f64) -> f64 {
        level + self.continuum_slope * (um - origin)
    }

    /// Noise-free, jitter-free spectrum of the template.
    pub fn nominal(&self, grid: &WavelengthGrid) -> Vec<f64> {
        let origin = grid.wavelengths()[0];
        grid.wavelengths()
            .iter()
            .map(|&um| {
                self.features
                    .iter()
                    .fold(self.continuum(self.continuum_level, um, origin), |v, f| v * f.factor(um, f.depth))
            })
            .collect()
    }

    pub fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        for f in &self.features {
            f.validate(grid)?;
        }
        if !(self.intra_class_jitter >= 0.0 && self.intra_class_jitter.is_finite()) {
            return Err(Error::Config(format!("template {}: negative jitter", self.class_name)));
        }
        if self.nominal(grid).iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Config(format!(
                "template {} ({}): nominal spectrum leaves (0, 1]",
                self.class_id, self.class_name
            )));
        }
        Ok(())
    }
}

/// Featureless continuum spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandConfig {
    pub label: u32,
    pub continuum_level: f64,
    /// Relative standard deviation of the level.
    pub level_jitter: f64,
    /// Standard deviation of the slope, I/F per µm (zero mean).
    pub slope_sd: f64,
}

impl Default for BlandConfig {
    fn default() -> Self {
        Self { label: 6, continuum_level: 0.3, level_jitter: 0.1, slope_sd: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateLibrary {
    pub version: u32,
    pub templates: Vec<MineralTemplate>,
    pub bland: BlandConfig,
}

impl TemplateLibrary {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_LIBRARY_JSON).expect("bundled template library parses")
    }

    /// Reads a library from a JSON file of the same shape as the bundled one.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn default_split_fractions() -> [f64; 3] {
    [0.70, 0.15, 0.15]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub templates: Vec<MineralTemplate>,
    pub bland: BlandConfig,
    pub n_per_class: usize,
    pub n_bland: usize,
    pub n_groups: u32,
    /// Classes that may only occur in test groups.
    pub holdout_class_ids: Vec<u32>,
    /// Fractions of groups assigned to train, val and test.
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let lib = TemplateLibrary::builtin();
        Self {
            templates: lib.templates,
            bland: lib.bland,
            n_per_class: 3000,
            n_bland: 6000,
            n_groups: 20,
            holdout_class_ids: vec![4, 5],
            split_fractions: default_split_fractions(),
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        if self.n_groups < 3 {
            return Err(Error::Config(format!("n_groups = {} but at least 3 are required", self.n_groups)));
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.templates {
            t.validate(grid)?;
            if !ids.insert(t.class_id) {
                return Err(Error::Config(format!("duplicate class id {}", t.class_id)));
            }
        }
        if ids.contains(&self.bland.label) {
            return Err(Error::Config(format!("bland label {} collides with a mineral class", self.bland.label)));
        }
        for h in &self.holdout_class_ids {
            if !ids.contains(h) {
                return Err(Error::Config(format!("holdout class {h} is not a template class id")));
            }
        }
        let f = self.split_fractions;
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    /// Group ids per split: (train, val, test), each sorted.
    pub fn assign_groups(&self) -> Result<(Vec<u32>, Vec<u32>, Vec<u32>)> {
        let n = self.n_groups as usize;
        let n_val = (self.split_fractions[1] * n as f64).round() as usize;
        let n_test = (self.split_fractions[2] * n as f64).round() as usize;
        if n_val + n_test >= n {
            return Err(Error::Config(format!("split fractions leave no training group out of {n}")));
        }
        if n_test == 0 && !self.holdout_class_ids.is_empty() {
            return Err(Error::Config(format!(
                "holdout placement infeasible: held-out classes {:?} need at least one test group, split gives 0 of {n}",
                self.holdout_class_ids
            )));
        }
        let mut groups: Vec<u32> = (0..self.n_groups).collect();
        groups.shuffle(&mut rng::stream(rng::derive(self.seed, "splits"), 0));
        let mut train = groups[..n - n_val - n_test].to_vec();
        let mut val = groups[n - n_val - n_test..n - n_test].to_vec();
        let mut test = groups[n - n_test..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok((train, val, test))
    }
}

fn normal(rng: &mut rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one clean mineral spectrum. The level and every feature depth are
/// jittered by `intra_class_jitter` (relative); values are clamped into
/// `[MIN_REFLECTANCE, 1]`.
pub fn clean_spectrum(t: &MineralTemplate, grid: &WavelengthGrid, rng: &mut rng::Rng) -> Result<Spectrum> {
    t.validate(grid)?;
    let j = t.intra_class_jitter;
    let level = t.continuum_level * (1.0 + j * normal(rng));
    let depths: Vec<f64> = t.features.iter().map(|f| (f.depth * (1.0 + j * normal(rng))).clamp(0.0, 0.99)).collect();
    let origin = grid.wavelengths()[0];
    let values = grid
        .wavelengths()
        .iter()
        .map(|&um| {
            let v = t.features.iter().zip(&depths).fold(t.continuum(level, um, origin), |v, (f, &d)| v * f.factor(um, d));
            v.clamp(MIN_REFLECTANCE, 1.0)
        })
        .collect();
    Ok(Spectrum { id: 0, values, label: t.class_id, group_id: 0, kind: PixelKind::Mineral })
}

/// Draws one featureless spectrum.
pub fn bland_spectrum(b: &BlandConfig, grid: &WavelengthGrid, rng: &mut rng::Rng) -> Spectrum {
    let level = b.continuum_level * (1.0 + b.level_jitter * normal(rng));
    let slope = b.slope_sd * normal(rng);
    let origin = grid.wavelengths()[0];
    let values = grid
        .wavelengths()
        .iter()
        .map(|&um| (level + slope * (um - origin)).clamp(MIN_REFLECTANCE, 1.0))
        .collect();
    Spectrum { id: 0, values, label: b.label, group_id: 0, kind: PixelKind::Bland }
}

enum Source<'a> {
    Mineral(&'a MineralTemplate),
    Bland,
}

/// Generates the full scene. Spectrum `i` draws from random stream `i` of the
/// scene seed, so output is a pure function of `(cfg, grid)`.
pub fn generate_dataset(cfg: &SceneConfig, grid: &WavelengthGrid) -> Result<Dataset> {
    cfg.validate(grid)?;
    let (train, val, test) = cfg.assign_groups()?;
    let all_groups: Vec<u32> = (0..cfg.n_groups).collect();

    let mut plan: Vec<(Source, u32)> = Vec::with_capacity(cfg.templates.len() * cfg.n_per_class + cfg.n_bland);
    for t in &cfg.templates {
        let pool = if cfg.holdout_class_ids.contains(&t.class_id) { &test } else { &all_groups };
        plan.extend((0..cfg.n_per_class).map(|k| (Source::Mineral(t), pool[k % pool.len()])));
    }
    plan.extend((0..cfg.n_bland).map(|k| (Source::Bland, all_groups[k % all_groups.len()])));

    let spectra = plan
        .par_iter()
        .enumerate()
        .map(|(i, (src, group))| {
            let mut r = rng::stream(cfg.seed, i as u64);
            let mut s = match src {
                Source::Mineral(t) => clean_spectrum(t, grid, &mut r)?,
                Source::Bland => bland_spectrum(&cfg.bland, grid, &mut r),
            };
            s.id = i as u64;
            s.group_id = *group;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut splits = BTreeMap::new();
    for (groups, split) in [(&train, Split::Train), (&val, Split::Val), (&test, Split::Test)] {
        splits.extend(groups.iter().map(|&g| (g, split)));
    }
    let ds = Dataset { spectra, splits };
    ds.check_integrity(&cfg.holdout_class_ids)?;
    Ok(ds)
}
