//! Evaluation: reconstruction error, downstream classification scored
//! relative to clean data, ratioing and band-depth summary parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::spectral::{Spectrum, WavelengthGrid};
use crate::{Error, Result};

/// Channels averaged at each segment end to anchor the continuum line.
const CONTINUUM_ANCHOR: usize = 5;

/// Mean squared error over all spectra and channels. Spectra are matched by id.
pub fn denoise_mse(denoised: &[Spectrum], clean: &[Spectrum]) -> Result<f64> {
    if denoised.len() != clean.len() || denoised.is_empty() {
        return Err(Error::Data(format!(
            "cannot align {} denoised with {} clean spectra",
            denoised.len(),
            clean.len()
        )));
    }
    let by_id: HashMap<u64, &Spectrum> = clean.iter().map(|s| (s.id, s)).collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for d in denoised {
        let c = by_id.get(&d.id).ok_or_else(|| Error::Data(format!("no clean spectrum with id {}", d.id)))?;
        if c.values.len() != d.values.len() {
            return Err(Error::Shape(format!("spectrum {}: {} vs {} channels", d.id, d.values.len(), c.values.len())));
        }
        sum += d.values.iter().zip(&c.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += d.values.len();
    }
    Ok(sum / n as f64)
}

/// Divides each segment by the straight line through the mean of its first
/// and last few channels, so the continuum maps to about one.
pub fn continuum_remove(s: &Spectrum, grid: &WavelengthGrid) -> Result<Spectrum> {
    if s.values.len() != grid.len() {
        return Err(Error::Shape(format!("spectrum {} has {} channels", s.id, s.values.len())));
    }
    let w = grid.wavelengths();
    let mut out = Vec::with_capacity(s.values.len());
    for seg in grid.segments() {
        let k = CONTINUUM_ANCHOR.min(seg.len() / 2).max(1);
        let mean = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let (wl, v) = r.fold((0.0, 0.0), |(a, b), c| (a + w[c], b + s.values[c]));
            (wl / n, v / n)
        };
        let (w0, v0) = mean(seg.start..seg.start + k);
        let (w1, v1) = mean(seg.end - k..seg.end);
        for c in seg {
            let line = v0 + (v1 - v0) * (w[c] - w0) / (w1 - w0);
            if !(line > 0.0 && line.is_finite()) {
                return Err(Error::Numeric(format!("spectrum {}: degenerate continuum at channel {c}", s.id)));
            }
            out.push(s.values[c] / line);
        }
    }
    Ok(s.with_values(out))
}

/// Nearest-centroid classifier on continuum-removed spectra.
///
/// Stands in for the external downstream classifier: it is fitted on clean
/// training spectra only and applied unchanged to denoised data.
#[derive(Debug, Clone)]
pub struct NearestCentroid {
    centroids: BTreeMap<u32, Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit<'a, I>(train: I, grid: &WavelengthGrid) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Spectrum>,
    {
        let mut acc: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
        for s in train {
            let cr = continuum_remove(s, grid)?;
            let e = acc.entry(s.label).or_insert_with(|| (vec![0.0; cr.values.len()], 0));
            e.0.iter_mut().zip(&cr.values).for_each(|(a, v)| *a += v);
            e.1 += 1;
        }
        if acc.is_empty() {
            return Err(Error::Data("classifier needs at least one training spectrum".into()));
        }
        let centroids = acc
            .into_iter()
            .map(|(k, (sum, n))| (k, sum.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(Self { centroids })
    }

    /// Like [`fit`](Self::fit), but fails when one of `classes` has no training sample.
    pub fn fit_classes<'a, I>(train: I, classes: &[u32], grid: &WavelengthGrid) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Spectrum>,
    {
        let model = Self::fit(train, grid)?;
        if let Some(c) = classes.iter().find(|c| !model.centroids.contains_key(c)) {
            return Err(Error::Data(format!("class {c} has zero training samples")));
        }
        Ok(model)
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.centroids.keys().copied()
    }

    pub fn centroid(&self, class: u32) -> Option<&[f64]> {
        self.centroids.get(&class).map(Vec::as_slice)
    }

    /// Class with the nearest centroid; ties go to the lowest class id.
    pub fn predict(&self, s: &Spectrum, grid: &WavelengthGrid) -> Result<u32> {
        let cr = continuum_remove(s, grid)?;
        let mut best: Option<(u32, f64)> = None;
        for (&k, c) in &self.centroids {
            let d: f64 = c.iter().zip(&cr.values).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        Ok(best.expect("fitted classifier has centroids").0)
    }

    pub fn predict_all(&self, spectra: &[Spectrum], grid: &WavelengthGrid) -> Result<Vec<u32>> {
        use rayon::prelude::*;
        spectra.par_iter().map(|s| self.predict(s, grid)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl ClassificationMetrics {
    fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.f1, self.precision, self.recall]
    }
}

/// Accuracy and macro-averaged F1, precision and recall over the classes
/// present in `labels`. A class never predicted has precision 0.
pub fn classification_metrics(preds: &[u32], labels: &[u32]) -> Result<ClassificationMetrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Data(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let classes: std::collections::BTreeSet<u32> = labels.iter().copied().collect();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for &k in &classes {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == k && l == k).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == k).count() as f64;
        let actual = labels.iter().filter(|&&l| l == k).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / actual;
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let n = classes.len() as f64;
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / preds.len() as f64,
        f1: f_sum / n,
        precision: p_sum / n,
        recall: r_sum / n,
    })
}

/// Element-wise ratio of a method's metrics to those obtained on clean data.
pub fn relative_metrics(method: &ClassificationMetrics, ground_truth: &ClassificationMetrics) -> Result<ClassificationMetrics> {
    let names = ["accuracy", "f1", "precision", "recall"];
    let (m, g) = (method.as_array(), ground_truth.as_array());
    if let Some(i) = (0..4).find(|&i| !(g[i] > 0.0)) {
        return Err(Error::Numeric(format!("ground-truth {} is {}, relative metric undefined", names[i], g[i])));
    }
    Ok(ClassificationMetrics {
        accuracy: m[0] / g[0],
        f1: m[1] / g[1],
        precision: m[2] / g[2],
        recall: m[3] / g[3],
    })
}

/// Divides a pixel channel-wise by the channel-wise median of a bland pool.
pub fn ratio_spectra(pixel: &Spectrum, bland_pool: &[Spectrum]) -> Result<Spectrum> {
    if bland_pool.is_empty() {
        return Err(Error::Data("ratioing needs a non-empty bland pool".into()));
    }
    let n = pixel.values.len();
    if let Some(b) = bland_pool.iter().find(|b| b.values.len() != n) {
        return Err(Error::Shape(format!("bland spectrum {} has {} channels, pixel {n}", b.id, b.values.len())));
    }
    let mut col = Vec::with_capacity(bland_pool.len());
    let mut out = Vec::with_capacity(n);
    for c in 0..n {
        col.clear();
        col.extend(bland_pool.iter().map(|b| b.values[c]));
        col.sort_unstable_by(f64::total_cmp);
        let m = col.len();
        let med = if m % 2 == 1 { col[m / 2] } else { 0.5 * (col[m / 2 - 1] + col[m / 2]) };
        if med == 0.0 || !med.is_finite() {
            return Err(Error::Numeric(format!("bland median is {med} at channel {c}")));
        }
        out.push(pixel.values[c] / med);
    }
    Ok(pixel.with_values(out))
}

/// A band-depth summary parameter: `1 - R(center) / R*(center)` with `R*`
/// interpolated linearly between the two shoulders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDepthParam {
    pub name: String,
    pub center: f64,
    pub left: f64,
    pub right: f64,
}

impl BandDepthParam {
    pub fn new(name: &str, left: f64, center: f64, right: f64) -> Self {
        Self { name: name.into(), center, left, right }
    }

    /// Checks ordering and that all three wavelengths fall in one segment.
    pub fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        self.channels(grid).map(|_| ())
    }

    /// Default parameters matched to the bundled mineral templates.
    pub fn defaults() -> Vec<BandDepthParam> {
        vec![
            BandDepthParam::new("BD1400", 1.33, 1.41, 1.50),
            BandDepthParam::new("BD1900", 1.80, 1.875, 2.10),
            BandDepthParam::new("BD2300", 2.24, 2.305, 2.38),
        ]
    }

    fn channels(&self, grid: &WavelengthGrid) -> Result<[usize; 3]> {
        if !(self.left < self.center && self.center < self.right) {
            return Err(Error::Config(format!("{}: need left < center < right", self.name)));
        }
        for um in [self.left, self.center, self.right] {
            if !grid.covers(um) {
                return Err(Error::Config(format!("{}: {um} µm is outside the grid", self.name)));
            }
        }
        let idx = [self.left, self.center, self.right].map(|um| grid.nearest_channel(um));
        let seg = grid.segment_of(idx[1]);
        if !(seg.contains(&idx[0]) && seg.contains(&idx[2])) {
            return Err(Error::Config(format!("{}: wavelengths span the detector gap", self.name)));
        }
        Ok(idx)
    }
}

/// Median of the three channels centred on `c`, shifted to stay inside its segment.
fn sample3(values: &[f64], grid: &WavelengthGrid, c: usize) -> f64 {
    let seg = grid.segment_of(c);
    let lo = c.saturating_sub(1).max(seg.start).min(seg.end - 3);
    let mut v = [values[lo], values[lo + 1], values[lo + 2]];
    v.sort_unstable_by(f64::total_cmp);
    v[1]
}

pub fn band_depth(s: &Spectrum, p: &BandDepthParam, grid: &WavelengthGrid) -> Result<f64> {
    if s.values.len() != grid.len() {
        return Err(Error::Shape(format!("spectrum {} has {} channels", s.id, s.values.len())));
    }
    let [l, c, r] = p.channels(grid)?;
    let w = grid.wavelengths();
    let (rl, rc, rr) = (sample3(&s.values, grid, l), sample3(&s.values, grid, c), sample3(&s.values, grid, r));
    let t = (w[c] - w[l]) / (w[r] - w[l]);
    let continuum = rl + t * (rr - rl);
    if continuum == 0.0 {
        return Err(Error::Numeric(format!("spectrum {}: zero shoulder continuum for {}", s.id, p.name)));
    }
    Ok(1.0 - rc / continuum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub id: u64,
    pub depths: Vec<f64>,
    pub flag: bool,
}

/// Per-pixel band depths and detection flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub params: Vec<String>,
    pub threshold: f64,
    pub rows: Vec<DetectionRow>,
}

impl DetectionMap {
    pub fn detections(&self) -> usize {
        self.rows.iter().filter(|r| r.flag).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for p in &self.params {
            let _ = write!(out, ",{p}");
        }
        out.push_str(",flag\n");
        for r in &self.rows {
            let _ = write!(out, "{}", r.id);
            for d in &r.depths {
                let _ = write!(out, ",{d:.9e}");
            }
            let _ = writeln!(out, ",{}", r.flag);
        }
        out
    }
}

/// A pixel is flagged when any parameter's band depth exceeds `threshold`.
pub fn detection_map(spectra: &[Spectrum], params: &[BandDepthParam], threshold: f64, grid: &WavelengthGrid) -> Result<DetectionMap> {
    let rows = spectra
        .iter()
        .map(|s| {
            let depths = params.iter().map(|p| band_depth(s, p, grid)).collect::<Result<Vec<_>>>()?;
            let flag = depths.iter().any(|&d| d > threshold);
            Ok(DetectionRow { id: s.id, depths, flag })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionMap { params: params.iter().map(|p| p.name.clone()).collect(), threshold, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcropCounts {
    /// Pixels flagged in the reference data.
    pub reference: usize,
    /// Flagged in both.
    pub true_detections: usize,
    /// Flagged in the reference only.
    pub missed: usize,
    /// Flagged in the candidate only.
    pub spurious: usize,
}

impl OutcropCounts {
    /// Fraction of reference detections recovered (1 when there are none).
    pub fn recall(&self) -> f64 {
        if self.reference == 0 {
            1.0
        } else {
            self.true_detections as f64 / self.reference as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcropReport {
    pub reference: DetectionMap,
    pub candidate: DetectionMap,
    pub counts: OutcropCounts,
}

/// Compares detections on a candidate (e.g. denoised) set against the
/// matching reference (clean) pixels.
pub fn outcrop_report(
    candidate: &[Spectrum],
    reference: &[Spectrum],
    params: &[BandDepthParam],
    threshold: f64,
    grid: &WavelengthGrid,
) -> Result<OutcropReport> {
    let cand = detection_map(candidate, params, threshold, grid)?;
    let refm = detection_map(reference, params, threshold, grid)?;
    let ref_flags: HashMap<u64, bool> = refm.rows.iter().map(|r| (r.id, r.flag)).collect();
    let mut counts = OutcropCounts { reference: refm.detections(), true_detections: 0, missed: 0, spurious: 0 };
    for r in &cand.rows {
        let truth = *ref_flags.get(&r.id).ok_or_else(|| Error::Data(format!("no reference pixel with id {}", r.id)))?;
        match (truth, r.flag) {
            (true, true) => counts.true_detections += 1,
            (true, false) => counts.missed += 1,
            (false, true) => counts.spurious += 1,
            (false, false) => {}
        }
    }
    Ok(OutcropReport { reference: refm, candidate: cand, counts })
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Reconstruction MSE against clean data; `None` for the clean reference itself.
    pub mse: Option<f64>,
    pub absolute: ClassificationMetrics,
    pub relative: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MethodRow>,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Fixed-width table: MSE plus relative classification metrics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} | {:>10} | {:>8} {:>8} {:>9} {:>8}",
            "Data", "MSE", "Rel.Acc", "Rel.F1", "Rel.Prec", "Rel.Rec"
        );
        let _ = writeln!(out, "{}", "-".repeat(70));
        for r in &self.rows {
            let mse = r.mse.map_or("N/A".to_string(), |m| format!("{m:.2e}"));
            let rel = r.relative;
            let _ = writeln!(
                out,
                "{:<16} | {:>10} | {:>8.2} {:>8.2} {:>9.2} {:>8.2}",
                r.method, mse, rel.accuracy, rel.f1, rel.precision, rel.recall
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,mse,accuracy,f1,precision,recall,rel_accuracy,rel_f1,rel_precision,rel_recall\n",
        );
        for r in &self.rows {
            let mse = r.mse.map_or(String::new(), |m| format!("{m:.9e}"));
            let (a, rel) = (r.absolute, r.relative);
            let _ = writeln!(
                out,
                "{},{mse},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.method, a.accuracy, a.f1, a.precision, a.recall, rel.accuracy, rel.f1, rel.precision, rel.recall
            );
        }
        out
    }
}

/// Builds the evaluation table. `clean` is the reference test set;
/// `methods` pairs a method name with its denoised version of `clean`.
pub fn evaluate(
    classifier: &NearestCentroid,
    clean: &[Spectrum],
    methods: &[(String, Vec<Spectrum>)],
    grid: &WavelengthGrid,
) -> Result<EvalReport> {
    let labels: Vec<u32> = clean.iter().map(|s| s.label).collect();
    let gt = classification_metrics(&classifier.predict_all(clean, grid)?, &labels)?;
    let mut rows = vec![MethodRow {
        method: "ground_truth".into(),
        mse: None,
        absolute: gt,
        relative: relative_metrics(&gt, &gt)?,
    }];
    for (name, denoised) in methods {
        let by_id: HashMap<u64, &Spectrum> = denoised.iter().map(|s| (s.id, s)).collect();
        let aligned = clean
            .iter()
            .map(|c| by_id.get(&c.id).map(|s| (*s).clone()).ok_or_else(|| Error::Data(format!("{name}: missing spectrum {}", c.id))))
            .collect::<Result<Vec<_>>>()?;
        let abs = classification_metrics(&classifier.predict_all(&aligned, grid)?, &labels)?;
        rows.push(MethodRow {
            method: name.clone(),
            mse: Some(denoise_mse(&aligned, clean)?),
            absolute: abs,
            relative: relative_metrics(&abs, &gt)?,
        });
    }
    Ok(EvalReport { rows })
}
