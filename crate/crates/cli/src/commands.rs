use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use n2n4m::baselines::{cotcat_like, sg_filter};
use n2n4m::eval::{detection_map, evaluate, outcrop_report, NearestCentroid};
use n2n4m::nn::{self, Checkpoint, LossHistory, ModelConfig, PairSet, Precision, Real, TrainingMeta, UNet};
use n2n4m::preprocess::{add_noise_all, preprocess};
use n2n4m::spectral::{self, Dataset, PixelKind, Spectrum, Split, WavelengthGrid};
use n2n4m::synthetic::generate_dataset;
use rayon::prelude::*;

use crate::config::{RunConfig, Target};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sg,
    CotcatLike,
    N2n4m,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sg, Method::CotcatLike, Method::N2n4m];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sg => "sg",
            Method::CotcatLike => "cotcat_like",
            Method::N2n4m => "n2n4m",
        }
    }

    pub fn parse(s: &str) -> CliResult<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown method `{s}` (expected sg, cotcat_like or n2n4m)")))
    }
}

/// File layout under the configured directories.
pub struct Layout {
    pub clean: PathBuf,
    pub wavelengths: PathBuf,
    pub splits: PathBuf,
    pub noisy: PathBuf,
    pub noisy_target: PathBuf,
    dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_history: PathBuf,
    reports: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        let d = cfg.dataset_dir();
        let c = cfg.checkpoint_dir();
        Self {
            clean: d.join("clean.csv"),
            wavelengths: d.join("wavelengths.csv"),
            splits: d.join("splits.csv"),
            noisy: d.join("noisy.csv"),
            noisy_target: d.join("noisy_target.csv"),
            checkpoint: c.join("model.ckpt"),
            loss_history: c.join("loss_history.csv"),
            dataset: d,
            reports: cfg.reports_dir(),
        }
    }

    pub fn denoised(&self, m: Method) -> PathBuf {
        self.dataset.join(format!("denoised_{}.csv", m.name()))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports.join(name)
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("n2n4m: {}", msg.as_ref());
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_spectra(path: &Path, spectra: &[Spectrum]) -> CliResult {
    ensure_parent(path)?;
    Ok(spectral::write_dataset(path, spectra)?)
}

fn require(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("missing {what}: {} (run the earlier pipeline steps first)", path.display())))
    }
}

fn read_spectra(path: &Path, what: &str) -> CliResult<Vec<Spectrum>> {
    require(path, what)?;
    Ok(spectral::read_dataset(path)?)
}

/// The wavelength sidecar when present, the default grid otherwise.
fn grid(layout: &Layout) -> CliResult<WavelengthGrid> {
    if layout.wavelengths.is_file() {
        Ok(spectral::read_wavelengths(&layout.wavelengths)?)
    } else {
        Ok(WavelengthGrid::build_default())
    }
}

fn check_lengths(spectra: &[Spectrum], grid: &WavelengthGrid, path: &Path) -> CliResult {
    if let Some(s) = spectra.iter().find(|s| s.values.len() != grid.len()) {
        return Err(CliError::data(format!(
            "{}: spectrum {} has {} values, expected {}",
            path.display(),
            s.id,
            s.values.len(),
            grid.len()
        )));
    }
    Ok(())
}

pub fn gen(cfg: &RunConfig, dry_run: bool) -> CliResult {
    let grid = WavelengthGrid::build_default();
    cfg.validate(&grid)?;
    let scene = cfg.scene()?;
    let total = scene.templates.len() * scene.n_per_class + scene.n_bland;
    let layout = Layout::new(cfg);
    if dry_run {
        println!("dry run: would generate {total} spectra into {}", layout.clean.display());
        return Ok(());
    }
    let mut ds = generate_dataset(&scene, &grid)?;
    if cfg.scene.preprocess {
        ds = ds.map_values(|s| preprocess(s, &grid).map(|p| p.values))?;
    }
    write_spectra(&layout.clean, &ds.spectra)?;
    spectral::write_wavelengths(&layout.wavelengths, &grid)?;
    spectral::write_splits(&layout.splits, &ds.splits)?;
    write_text(&layout.clean.with_file_name("run_config.json"), &cfg.to_json())?;
    let count = |sp: Split| ds.iter_split(sp).count();
    log(format!(
        "wrote {} spectra (train {}, val {}, test {}) to {}",
        ds.spectra.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        layout.clean.display()
    ));
    Ok(())
}

pub fn noise(cfg: &RunConfig, input: Option<PathBuf>, output: Option<PathBuf>, dry_run: bool) -> CliResult {
    cfg.validate(&WavelengthGrid::build_default())?;
    let layout = Layout::new(cfg);
    let input = input.unwrap_or_else(|| layout.clean.clone());
    let output = output.unwrap_or_else(|| layout.noisy.clone());
    let clean = read_spectra(&input, "clean dataset")?;
    if dry_run {
        println!("dry run: would add noise to {} spectra into {}", clean.len(), output.display());
        return Ok(());
    }
    write_spectra(&output, &add_noise_all(&clean, &cfg.noise()))?;
    log(format!("wrote {} noisy spectra to {}", clean.len(), output.display()));
    if cfg.train.target == Target::Noisy {
        write_spectra(&layout.noisy_target, &add_noise_all(&clean, &cfg.target_noise()))?;
        log(format!("wrote independent noisy targets to {}", layout.noisy_target.display()));
    }
    Ok(())
}

fn split_pairs(ds: &Dataset, inputs: &[Spectrum], targets: &[Spectrum], split: Split) -> CliResult<PairSet> {
    let ids: std::collections::HashSet<u64> = ds.iter_split(split).map(|s| s.id).collect();
    let pick = |set: &[Spectrum]| set.iter().filter(|s| ids.contains(&s.id)).cloned().collect::<Vec<_>>();
    let inp = pick(inputs);
    if inp.len() != ids.len() {
        return Err(CliError::data(format!(
            "noisy inputs cover {} of {} {} spectra",
            inp.len(),
            ids.len(),
            split.as_str()
        )));
    }
    Ok(PairSet::from_spectra(&inp, &pick(targets))?)
}

fn run_training<T: Real>(
    model: UNet<T>,
    meta: &TrainingMeta,
    train: &PairSet,
    val: &PairSet,
    cfg: &RunConfig,
) -> CliResult<(Checkpoint, LossHistory)> {
    let tc = cfg.train();
    let out = nn::train(model, meta, train, val, &tc, |r| {
        log(format!("epoch {:>3}  train_mse {:.4e}  val_mse {:.4e}", r.epoch, r.train_mse, r.val_mse));
    })?;
    if out.stopped_early {
        log(format!("early stop after epoch {}", out.meta.epochs_run));
    }
    Ok((Checkpoint::from_model(&out.model, out.meta), out.history))
}

pub fn train(cfg: &RunConfig, resume: bool, dry_run: bool) -> CliResult {
    let grid_default = WavelengthGrid::build_default();
    cfg.validate(&grid_default)?;
    let model_cfg = cfg.model();
    if dry_run {
        println!("parameters: {}", model_cfg.parameter_count());
        return Ok(());
    }
    let layout = Layout::new(cfg);
    require(&layout.splits, "split manifest")?;
    require(&layout.clean, "clean dataset")?;
    let ds = Dataset::read(&layout.clean, &layout.splits)?;
    let noisy = read_spectra(&layout.noisy, "noisy dataset")?;
    let targets = match cfg.train.target {
        Target::Clean => ds.spectra.clone(),
        Target::Noisy => read_spectra(&layout.noisy_target, "noisy target dataset")?,
    };
    let train_pairs = split_pairs(&ds, &noisy, &targets, Split::Train)?;
    let val_pairs = split_pairs(&ds, &noisy, &targets, Split::Val)?;
    log(format!("training on {} pairs, validating on {}", train_pairs.len(), val_pairs.len()));

    let (start, meta) = if resume {
        let ckpt = Checkpoint::load(&layout.checkpoint)?;
        let expected = ModelConfig { scaling: model_cfg.scaling.or(ckpt.model.scaling), ..model_cfg.clone() };
        if ckpt.model != expected {
            return Err(CliError::config(format!(
                "model section does not match checkpoint {}",
                layout.checkpoint.display()
            )));
        }
        log(format!("resuming after epoch {}", ckpt.training.epochs_run));
        (Some(ckpt.clone()), ckpt.training)
    } else {
        (None, TrainingMeta::default())
    };
    let (ckpt, history) = match cfg.train.precision {
        Precision::F32 => {
            let model = match &start {
                Some(c) => c.to_model::<f32>()?,
                None => UNet::<f32>::new(model_cfg)?,
            };
            run_training(model, &meta, &train_pairs, &val_pairs, cfg)?
        }
        Precision::F64 => {
            let model = match &start {
                Some(c) => c.to_model::<f64>()?,
                None => UNet::<f64>::new(model_cfg)?,
            };
            run_training(model, &meta, &train_pairs, &val_pairs, cfg)?
        }
    };
    ensure_parent(&layout.checkpoint)?;
    ckpt.save(&layout.checkpoint)?;
    let mut full = if resume && layout.loss_history.is_file() {
        LossHistory::read(&layout.loss_history)?
    } else {
        LossHistory::default()
    };
    full.records.extend(history.records);
    full.write(&layout.loss_history)?;
    log(format!(
        "saved {} (best epoch {:?}, val_mse {:?})",
        layout.checkpoint.display(),
        ckpt.training.best_epoch,
        ckpt.training.best_val_loss
    ));
    Ok(())
}

/// Runs one denoiser over `spectra`.
pub fn apply_method(cfg: &RunConfig, layout: &Layout, m: Method, spectra: &[Spectrum], grid: &WavelengthGrid) -> CliResult<Vec<Spectrum>> {
    match m {
        Method::Sg => Ok(spectra.par_iter().map(|s| sg_filter(s, &cfg.sg, grid)).collect::<n2n4m::Result<_>>()?),
        Method::CotcatLike => {
            Ok(spectra.par_iter().map(|s| cotcat_like(s, &cfg.cotcat_like, grid)).collect::<n2n4m::Result<_>>()?)
        }
        Method::N2n4m => {
            require(&layout.checkpoint, "checkpoint")?;
            let model = Checkpoint::load(&layout.checkpoint)?.to_model::<f32>()?;
            Ok(nn::denoise(&model, spectra)?)
        }
    }
}

pub fn denoise(cfg: &RunConfig, method: &str, input: Option<PathBuf>, output: Option<PathBuf>, dry_run: bool) -> CliResult {
    let m = Method::parse(method)?;
    let layout = Layout::new(cfg);
    let grid = grid(&layout)?;
    cfg.validate(&grid)?;
    let input = input.unwrap_or_else(|| layout.noisy.clone());
    let output = output.unwrap_or_else(|| layout.denoised(m));
    let spectra = read_spectra(&input, "input dataset")?;
    check_lengths(&spectra, &grid, &input)?;
    if dry_run {
        println!("dry run: would denoise {} spectra with {} into {}", spectra.len(), m.name(), output.display());
        return Ok(());
    }
    let out = apply_method(cfg, &layout, m, &spectra, &grid)?;
    write_spectra(&output, &out)?;
    log(format!("wrote {} {}-denoised spectra to {}", out.len(), m.name(), output.display()));
    Ok(())
}

fn test_subset(set: Vec<Spectrum>, ids: &HashMap<u64, usize>) -> Vec<Spectrum> {
    set.into_iter().filter(|s| ids.contains_key(&s.id)).collect()
}

pub fn eval(cfg: &RunConfig, methods: Option<Vec<String>>, dry_run: bool) -> CliResult {
    let layout = Layout::new(cfg);
    let grid = grid(&layout)?;
    cfg.validate(&grid)?;
    require(&layout.splits, "split manifest")?;
    require(&layout.clean, "clean dataset")?;
    let ds = Dataset::read(&layout.clean, &layout.splits)?;
    check_lengths(&ds.spectra, &grid, &layout.clean)?;

    let mut candidates: Vec<(String, PathBuf)> = Vec::new();
    match methods {
        Some(list) => {
            for name in list {
                let path = if name == "noisy" { layout.noisy.clone() } else { layout.denoised(Method::parse(&name)?) };
                require(&path, &format!("{name} dataset"))?;
                candidates.push((name, path));
            }
        }
        None => {
            if layout.noisy.is_file() {
                candidates.push(("noisy".into(), layout.noisy.clone()));
            }
            for m in Method::ALL {
                if layout.denoised(m).is_file() {
                    candidates.push((m.name().into(), layout.denoised(m)));
                }
            }
        }
    }
    if candidates.iter().all(|(n, _)| n == "noisy") {
        return Err(CliError::data(format!(
            "no denoised datasets found in {} (run `denoise` first)",
            layout.clean.parent().unwrap_or(Path::new(".")).display()
        )));
    }
    if dry_run {
        let names: Vec<&str> = candidates.iter().map(|(n, _)| n.as_str()).collect();
        println!("dry run: would evaluate {}", names.join(", "));
        return Ok(());
    }

    let classifier = NearestCentroid::fit(ds.iter_split(Split::Train), &grid)?;
    let clean_test = ds.subset(Split::Test);
    let ids: HashMap<u64, usize> = clean_test.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut sets = Vec::new();
    for (name, path) in &candidates {
        let set = read_spectra(path, name)?;
        check_lengths(&set, &grid, path)?;
        sets.push((name.clone(), test_subset(set, &ids)));
    }
    let report = evaluate(&classifier, &clean_test, &sets, &grid)?;
    write_text(&layout.report("eval.csv"), &report.to_csv())?;
    write_text(&layout.report("eval.txt"), &report.to_table())?;
    print!("{}", report.to_table());

    let params = &cfg.band_depth.params;
    let threshold = cfg.band_depth.threshold;
    let kinds: BTreeMap<u64, PixelKind> = clean_test.iter().map(|s| (s.id, s.kind)).collect();
    let mut csv = String::from("method,pixels,reference,true_detections,missed,spurious,recall,bland_pixels,bland_spurious\n");
    for (name, set) in &sets {
        let rep = outcrop_report(set, &clean_test, params, threshold, &grid)?;
        let bland_pixels = kinds.values().filter(|k| **k == PixelKind::Bland).count();
        let bland_spurious = rep
            .candidate
            .rows
            .iter()
            .filter(|r| r.flag && kinds.get(&r.id) == Some(&PixelKind::Bland))
            .count();
        let c = rep.counts;
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{:.6},{bland_pixels},{bland_spurious}",
            set.len(),
            c.reference,
            c.true_detections,
            c.missed,
            c.spurious,
            c.recall()
        );
    }
    write_text(&layout.report("outcrops.csv"), &csv)?;
    log(format!("wrote reports to {}", layout.report("").display()));
    Ok(())
}

pub fn summary(
    cfg: &RunConfig,
    param: &str,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    dry_run: bool,
) -> CliResult {
    let layout = Layout::new(cfg);
    let grid = grid(&layout)?;
    cfg.validate(&grid)?;
    let p = cfg.band_depth_param(param)?.clone();
    let input = input.unwrap_or_else(|| layout.clean.clone());
    let output = output.unwrap_or_else(|| layout.report(&format!("summary_{param}.csv")));
    let spectra = read_spectra(&input, "input dataset")?;
    check_lengths(&spectra, &grid, &input)?;
    if dry_run {
        println!("dry run: would compute {param} for {} spectra into {}", spectra.len(), output.display());
        return Ok(());
    }
    let map = detection_map(&spectra, &[p], cfg.band_depth.threshold, &grid)?;
    write_text(&output, &map.to_csv())?;
    log(format!(
        "{param}: {} of {} pixels above {} written to {}",
        map.detections(),
        spectra.len(),
        cfg.band_depth.threshold,
        output.display()
    ));
    Ok(())
}
