//! Spectral data model: the fixed two-segment wavelength grid, single spectra
//! and grouped datasets with image-level splits.

pub mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{read_dataset, read_splits, read_wavelengths, write_dataset, write_splits, write_wavelengths};

/// Total number of channels in a spectrum.
pub const N_CHANNELS: usize = 350;

/// Channels in the first (short-wave) detector segment. The remaining
/// `N_CHANNELS - SEGMENT1_CHANNELS` channels form the second segment; the
/// split keeps the spacing of both segments close to 6.6 nm.
pub const SEGMENT1_CHANNELS: usize = 248;

pub const SEGMENT1_START_UM: f64 = 1.0210;
pub const SEGMENT1_END_UM: f64 = 2.6483;
pub const SEGMENT2_START_UM: f64 = 2.8070;
pub const SEGMENT2_END_UM: f64 = 3.4769;

/// Residual atmospheric artifact band, imputed during preprocessing.
pub const ARTIFACT_BAND_UM: (f64, f64) = (1.91, 2.08);

/// Wavelength axis in micrometres, split into two detector segments.
#[derive(Debug, Clone, PartialEq)]
pub struct WavelengthGrid {
    wavelengths: Vec<f64>,
    segment_break: usize,
}

fn linspace(start: f64, end: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { end } else { start + step * i as f64 })
}

impl WavelengthGrid {
    /// The default 350-channel grid: 248 uniformly spaced channels on
    /// [1.0210, 2.6483] µm followed by 102 on [2.8070, 3.4769] µm.
    pub fn build_default() -> Self {
        let wavelengths = linspace(SEGMENT1_START_UM, SEGMENT1_END_UM, SEGMENT1_CHANNELS)
            .chain(linspace(SEGMENT2_START_UM, SEGMENT2_END_UM, N_CHANNELS - SEGMENT1_CHANNELS))
            .collect();
        Self { wavelengths, segment_break: SEGMENT1_CHANNELS }
    }

    /// Builds a grid from tabulated wavelengths. The segment break is placed
    /// at the single gap wider than 0.1 µm.
    pub fn from_wavelengths(wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != N_CHANNELS {
            return Err(Error::Data(format!(
                "wavelength grid has {} entries, expected {N_CHANNELS}",
                wavelengths.len()
            )));
        }
        if wavelengths.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("wavelength grid contains non-finite entries".into()));
        }
        let mut segment_break = None;
        for i in 1..wavelengths.len() {
            let step = wavelengths[i] - wavelengths[i - 1];
            if step <= 0.0 {
                return Err(Error::Data(format!("wavelengths not increasing at channel {i}")));
            }
            if step > 0.1 {
                if segment_break.is_some() {
                    return Err(Error::Data("wavelength grid has more than one gap".into()));
                }
                segment_break = Some(i);
            }
        }
        let segment_break =
            segment_break.ok_or_else(|| Error::Data("wavelength grid has no detector gap".into()))?;
        Ok(Self { wavelengths, segment_break })
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths.is_empty()
    }

    /// Index of the first channel of the second segment.
    pub fn segment_break(&self) -> usize {
        self.segment_break
    }

    /// Channel ranges of the two detector segments.
    pub fn segments(&self) -> [Range<usize>; 2] {
        [0..self.segment_break, self.segment_break..self.len()]
    }

    /// The segment containing channel `idx`.
    pub fn segment_of(&self, idx: usize) -> Range<usize> {
        if idx < self.segment_break {
            0..self.segment_break
        } else {
            self.segment_break..self.len()
        }
    }

    /// Half-open range of channels whose wavelength lies in `[lo, hi]`.
    /// An empty range (`start == end`) is returned when no channel qualifies.
    pub fn channel_range(&self, lo: f64, hi: f64) -> Range<usize> {
        let start = self.wavelengths.partition_point(|&w| w < lo);
        let end = self.wavelengths.partition_point(|&w| w <= hi);
        start..end.max(start)
    }

    /// Channel whose wavelength is closest to `um` (lower index on ties).
    pub fn nearest_channel(&self, um: f64) -> usize {
        let mut best = 0;
        for (i, &w) in self.wavelengths.iter().enumerate() {
            if (w - um).abs() < (self.wavelengths[best] - um).abs() {
                best = i;
            }
        }
        best
    }

    /// Whether `um` lies inside the wavelength span of one of the segments.
    pub fn covers(&self, um: f64) -> bool {
        self.segments()
            .iter()
            .any(|r| um >= self.wavelengths[r.start] && um <= self.wavelengths[r.end - 1])
    }
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        Self::build_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelKind {
    Mineral,
    Bland,
}

impl PixelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PixelKind::Mineral => "mineral",
            PixelKind::Bland => "bland",
        }
    }
}

impl std::str::FromStr for PixelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mineral" => Ok(PixelKind::Mineral),
            "bland" => Ok(PixelKind::Bland),
            other => Err(Error::Data(format!("unknown pixel kind {other:?}"))),
        }
    }
}

/// One I/F reflectance spectrum with its class label and source group.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub id: u64,
    pub values: Vec<f64>,
    pub label: u32,
    /// Synthetic "image" the pixel belongs to; splits are assigned per group.
    pub group_id: u32,
    pub kind: PixelKind,
}

impl Spectrum {
    /// Copy of this spectrum's metadata carrying new values.
    pub fn with_values(&self, values: Vec<f64>) -> Spectrum {
        Spectrum { id: self.id, values, label: self.label, group_id: self.group_id, kind: self.kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Spectrum length differs from the grid.
    Length,
    NonFinite,
    /// Reflectance above one, the bad-value criterion.
    AboveOne,
    NonPositive,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Length => "length != grid length",
            Rule::NonFinite => "non-finite",
            Rule::AboveOne => "I/F > 1",
            Rule::NonPositive => "I/F <= 0",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `None` for whole-spectrum violations.
    pub channel: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.channel {
            Some(c) => write!(f, "channel {c}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// Checks a spectrum against the grid and the post-preprocessing value range
/// (0, 1]. Returns one entry per offending channel.
pub fn validate_spectrum(s: &Spectrum, grid: &WavelengthGrid) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.values.len() != grid.len() {
        out.push(Violation { channel: None, rule: Rule::Length });
    }
    for (c, &v) in s.values.iter().enumerate() {
        let rule = if !v.is_finite() {
            Rule::NonFinite
        } else if v > 1.0 {
            Rule::AboveOne
        } else if v <= 0.0 {
            Rule::NonPositive
        } else {
            continue;
        };
        out.push(Violation { channel: Some(c), rule });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// A collection of spectra plus the group → split assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub spectra: Vec<Spectrum>,
    pub splits: BTreeMap<u32, Split>,
}

impl Dataset {
    pub fn split_of(&self, s: &Spectrum) -> Option<Split> {
        self.splits.get(&s.group_id).copied()
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &Spectrum> + '_ {
        self.spectra.iter().filter(move |s| self.split_of(s) == Some(split))
    }

    /// Spectra of one split, cloned.
    pub fn subset(&self, split: Split) -> Vec<Spectrum> {
        self.iter_split(split).cloned().collect()
    }

    /// Same dataset with every spectrum's values replaced by `f`.
    pub fn map_values<F>(&self, f: F) -> Result<Dataset>
    where
        F: Fn(&Spectrum) -> Result<Vec<f64>> + Sync,
    {
        use rayon::prelude::*;
        let spectra = self
            .spectra
            .par_iter()
            .map(|s| f(s).map(|v| s.with_values(v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { spectra, splits: self.splits.clone() })
    }

    /// Checks split integrity: every group has a split, and every spectrum of
    /// a held-out class sits in a test group.
    pub fn check_integrity(&self, holdout_classes: &[u32]) -> Result<()> {
        for s in &self.spectra {
            let split = self
                .split_of(s)
                .ok_or_else(|| Error::Data(format!("group {} of spectrum {} has no split", s.group_id, s.id)))?;
            if holdout_classes.contains(&s.label) && split != Split::Test {
                return Err(Error::Data(format!(
                    "held-out class {} appears in {} split (spectrum {})",
                    s.label,
                    split.as_str(),
                    s.id
                )));
            }
        }
        Ok(())
    }
}
