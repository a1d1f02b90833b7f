//! The pipeline stages. Each command reads its inputs from and writes its
//! outputs to the run's output directory (see `Layout`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use elastolab_core::field::{ComplexField, FieldMetadata, ScalarField};
use elastolab_core::io::{read_complex, read_scalar, write_field};
use elastolab_core::mmdi::mmdi_invert;
use elastolab_core::patch::{extract_training, PatchSet};
use elastolab_core::phantom::{sample_spec_with, PhantomClass, PhantomSpec};
use elastolab_core::rng;
use elastolab_core::stats::{
    erode_labels, evaluate_case, read_report, roi_stats, summarize, support_roi, write_report, CaseMaps, EvalPair,
    ReportRow,
};
use elastolab_core::wavesolve::simulate_with;
use elastolab_dimenet::{checkpoint, dime_invert, train, Error as ModelError};
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{self, case_id, Layout, Provenance};
use crate::plot;

/// Seed stream offset for per-phantom seeds; one stream per class.
const PHANTOM_SEED_STREAM: u64 = 100;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mmdi,
    Dime,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mmdi => "mmdi",
            Method::Dime => "dime",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmdi" => Ok(Method::Mmdi),
            "dime" => Ok(Method::Dime),
            other => Err(CliError::validation(format!("unknown method `{other}` (expected mmdi or dime)"))),
        }
    }
}

/// Per-phantom seeds: a deterministic sequence per (run seed, class).
pub fn phantom_seeds(seed: u64, class: PhantomClass, count: usize) -> Vec<u64> {
    let index = PhantomClass::ALL.iter().position(|&c| c == class).unwrap_or(0) as u64;
    let mut rng = rng::stream(seed, PHANTOM_SEED_STREAM + index);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Samples `count` phantoms of `class`, writing each spec as JSON and its
/// stiffness map as MREG. Returns the spec paths.
pub fn cmd_phantom(cfg: &RunConfig, class: PhantomClass, count: usize) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(CliError::validation("count must be at least 1"));
    }
    let out = Layout::new(&cfg.out);
    let prov = Provenance::new("phantom", cfg);
    let seeds = phantom_seeds(cfg.seed, class, count);
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let case = format!("{class}_{i:03}");
            let spec = sample_spec_with(class, seed, &cfg.phantom)?;
            let (mu, _) = spec.render()?;
            let path = out.spec(&case);
            layout::write_artifact(&path, serde_json::to_string_pretty(&spec)?, &prov)?;
            let meta = FieldMetadata::new(cfg.solver.frequency_hz, cfg.solver.density_kg_m3, class, seed)?
                .with_config_hash(cfg.hash());
            write_field(&mu, &meta, &out.phantom_map(&case))?;
            Ok(path)
        })
        .collect()
}

/// Every phantom spec in the output directory.
pub fn default_specs(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let specs = layout::list(&Layout::new(&cfg.out).phantoms(), ".json")?;
    Ok(specs
        .into_iter()
        .filter(|p| {
            let name = p.to_string_lossy();
            !name.ends_with(".meta.json") && !name.ends_with(".mreg.json")
        })
        .collect())
}

pub fn read_spec(path: &Path) -> Result<PhantomSpec> {
    let spec: PhantomSpec = serde_json::from_slice(&layout::read(path)?)?;
    spec.validate()?;
    Ok(spec)
}

/// Forward-solves each phantom spec, writing the displacement field and the
/// ground-truth stiffness on the output grid. Returns displacement paths.
pub fn cmd_simulate(cfg: &RunConfig, specs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if specs.is_empty() {
        return Err(CliError::validation("no phantom specs to simulate"));
    }
    let out = Layout::new(&cfg.out);
    layout::create_dir(&out.fields())?;
    specs
        .par_iter()
        .map(|path| {
            let case = case_id(path, ".json")?;
            let spec = read_spec(path)?;
            let (u, gt) = simulate_with(&spec, &cfg.solver)?;
            let meta = FieldMetadata::new(cfg.solver.frequency_hz, cfg.solver.density_kg_m3, spec.class, spec.seed)?
                .with_config_hash(cfg.hash());
            let u_path = out.displacement(&case);
            write_field(&u, &meta, &u_path)?;
            write_field(&gt, &meta, &out.ground_truth(&case))?;
            Ok(u_path)
        })
        .collect()
}

/// Number of fields per split: validation and test get the floor of their
/// share, training takes the remainder. A split with a positive fraction
/// must not come out empty.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let share = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let (val, test) = (share(fractions[1]), share(fractions[2]));
    if val + test > n {
        return Err(CliError::validation(format!("split {fractions:?} does not fit {n} fields")));
    }
    Ok([n - val - test, val, test])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case: String,
    pub class: PhantomClass,
    pub split: String,
    pub source_id: u32,
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub fractions: [f64; 3],
    pub stratified: bool,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&layout::read(path)?)?)
    }

    pub fn cases(&self, split: &str) -> Vec<String> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.case.clone()).collect()
    }
}

struct SourceField {
    case: String,
    class: PhantomClass,
    u: ComplexField,
    gt: ScalarField,
}

fn load_source(out: &Layout, path: &Path) -> Result<SourceField> {
    let case = case_id(path, ".u.mreg")?;
    let (u, meta) = read_complex(path)?;
    let (gt, _) = read_scalar(&out.ground_truth(&case))?;
    if !u.same_grid(&gt) {
        return Err(CliError::validation(format!("{case}: displacement and ground truth grids differ")));
    }
    Ok(SourceField { case, class: meta.phantom_class, u, gt })
}

/// Splits source fields (never patches) into train/validation/test, tiles
/// each split into training patches and records the assignment.
pub fn cmd_dataset(cfg: &RunConfig, fields: &[PathBuf]) -> Result<Manifest> {
    let out = Layout::new(&cfg.out);
    let mut paths = fields.to_vec();
    paths.sort();
    paths.dedup();
    let sources = paths.par_iter().map(|p| load_source(&out, p)).collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<bool, Vec<usize>> = BTreeMap::new();
    for (i, s) in sources.iter().enumerate() {
        let key = cfg.eval.stratify && s.class.has_inclusions();
        groups.entry(key).or_default().push(i);
    }
    let mut rng = rng::stream(cfg.seed, rng::SPLIT_STREAM);
    let mut assignment = vec![0usize; sources.len()];
    let mut totals = [0usize; 3];
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let counts = split_counts(members.len(), cfg.eval.split)?;
        let mut k = 0;
        for (split, &count) in counts.iter().enumerate() {
            for &m in &members[k..k + count] {
                assignment[m] = split;
            }
            k += count;
            totals[split] += count;
        }
    }
    for (split, name) in SPLITS.iter().enumerate() {
        if cfg.eval.split[split] > 0.0 && totals[split] == 0 {
            return Err(CliError::validation(format!(
                "{} fields cannot fill the {name} split at fractions {:?}",
                sources.len(),
                cfg.eval.split
            )));
        }
    }

    let p = &cfg.patch;
    let tiled = sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| Ok(extract_training(&s.u, &s.gt, p.train_size, p.train_stride, p.exclusion_threshold, i as u32)?))
        .collect::<Result<Vec<PatchSet>>>()?;

    let prov = Provenance::new("dataset", cfg);
    for (split, name) in SPLITS.iter().enumerate() {
        let mut set = PatchSet {
            patches: Vec::new(),
            patch_size: p.train_size,
            stride: p.train_stride,
            exclusion_threshold: p.exclusion_threshold,
        };
        for (i, t) in tiled.iter().enumerate() {
            if assignment[i] == split {
                set.patches.extend(t.patches.iter().cloned());
            }
        }
        layout::write_artifact(&out.patches(name), set.to_bytes()?, &prov)?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        fractions: cfg.eval.split,
        stratified: cfg.eval.stratify,
        entries: sources
            .iter()
            .enumerate()
            .map(|(i, s)| ManifestEntry {
                case: s.case.clone(),
                class: s.class,
                split: SPLITS[assignment[i]].to_string(),
                source_id: i as u32,
                patches: tiled[i].len(),
            })
            .collect(),
    };
    layout::write_artifact(&out.manifest(), serde_json::to_string_pretty(&manifest)?, &prov)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains on the dataset's train/val patch sets and writes the best
/// checkpoint plus the loss history. On divergence the last good
/// parameters are saved as `last_good.dimc` before the error is returned.
pub fn cmd_train(cfg: &RunConfig, mut on_epoch: impl FnMut(&elastolab_dimenet::train::EpochRecord)) -> Result<TrainSummary> {
    let out = Layout::new(&cfg.out);
    let train_set = PatchSet::from_bytes(&layout::read(&out.patches("train"))?)?;
    let val_set = PatchSet::from_bytes(&layout::read(&out.patches("val"))?)?;
    let net = &cfg.train.network;
    let tcfg = &cfg.train.optimizer;
    let prov = Provenance::new("train", cfg);
    let outcome = match train::train_with_progress(net, &train_set, &val_set, tcfg, &mut on_epoch) {
        Ok(o) => o,
        Err(ModelError::Divergence { epoch, last_good }) => {
            let path = out.model().join("last_good.dimc");
            layout::write_artifact(&path, checkpoint::encode(net, &last_good)?, &prov)?;
            return Err(ModelError::Divergence { epoch, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let path = out.checkpoint();
    layout::write_artifact(&path, checkpoint::encode(net, &outcome.params)?, &prov)?;
    layout::write_artifact(&out.history(), train::history_csv(&outcome.history), &prov)?;
    Ok(TrainSummary {
        checkpoint: path,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    })
}

/// Displacement files of the test split when a manifest exists, otherwise
/// every simulated field.
pub fn default_fields(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = Layout::new(&cfg.out);
    if out.manifest().exists() {
        let manifest = Manifest::read(&out.manifest())?;
        return Ok(manifest.cases("test").iter().map(|c| out.displacement(c)).collect());
    }
    layout::list(&out.fields(), ".u.mreg")
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertSummary {
    pub case: String,
    pub method: Method,
    pub map: PathBuf,
    /// Mean stiffness in Pa over the eroded ground-truth support when a
    /// ground truth exists, else over the whole map.
    pub roi_mean: f64,
    pub roi: &'static str,
}

impl fmt::Display for InvertSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: ROI mean {:.1} Pa ({}) -> {}", self.case, self.method, self.roi_mean, self.roi, self.map.display())
    }
}

/// Reconstructs a stiffness map for each displacement field.
pub fn cmd_invert(
    cfg: &RunConfig,
    method: Method,
    fields: &[PathBuf],
    checkpoint_path: Option<&Path>,
) -> Result<Vec<InvertSummary>> {
    if fields.is_empty() {
        return Err(CliError::validation("no displacement fields to invert"));
    }
    let out = Layout::new(&cfg.out);
    let model = match method {
        Method::Dime => {
            let path = checkpoint_path.map(Path::to_path_buf).unwrap_or_else(|| out.checkpoint());
            if !path.exists() {
                return Err(CliError::validation(format!(
                    "checkpoint {} not found; run `elastolab train` first or pass --checkpoint <file>",
                    path.display()
                )));
            }
            Some(checkpoint::load(&path)?)
        }
        Method::Mmdi => None,
    };
    layout::create_dir(&out.maps())?;
    fields
        .par_iter()
        .map(|path| {
            let case = case_id(path, ".u.mreg")?;
            let (u, meta) = read_complex(path)?;
            let map = match &model {
                Some((net, params)) => dime_invert(net, params, &u, cfg.patch.infer_size, cfg.patch.infer_stride)?,
                None => {
                    let mut icfg = cfg.mmdi.inversion.clone();
                    icfg.density = meta.density_kg_m3;
                    icfg.frequency = meta.frequency_hz;
                    mmdi_invert(&u, &cfg.mmdi.filter, &icfg)?.stiffness
                }
            };
            let map_path = out.stiffness_map(&case, method.name());
            write_field(&map, &meta.clone().with_config_hash(cfg.hash()), &map_path)?;
            let gt_path = out.ground_truth(&case);
            let (roi_mean, roi) = if gt_path.exists() {
                let (gt, _) = read_scalar(&gt_path)?;
                (roi_stats(&map, &support_roi(&gt)?)?.0, "ground-truth support")
            } else {
                (map.values().iter().sum::<f64>() / map.len() as f64, "full field")
            };
            Ok(InvertSummary { case, method, map: map_path, roi_mean, roi })
        })
        .collect()
}

/// Region labels on the ground-truth grid: 1 for background, `i + 2` for
/// inclusion `i`, restricted to the nonzero support and eroded by 2 pixels.
pub fn roi_labels(spec: Option<&PhantomSpec>, gt: &ScalarField) -> Result<ScalarField> {
    let Some(spec) = spec else {
        return Ok(support_roi(gt)?);
    };
    let h = gt.spacing();
    let labels = ScalarField::from_fn(gt.height(), gt.width(), h, |r, c| {
        if gt.get(r, c) == 0.0 {
            return 0.0;
        }
        spec.inclusion_at(c as f64 * h, r as f64 * h).map_or(1.0, |i| (i + 2) as f64)
    })?;
    Ok(erode_labels(&labels, 2)?)
}

/// Cases of the test split when a manifest exists, otherwise every case
/// with both stiffness maps.
pub fn default_cases(cfg: &RunConfig) -> Result<Vec<String>> {
    let out = Layout::new(&cfg.out);
    if out.manifest().exists() {
        return Ok(Manifest::read(&out.manifest())?.cases("test"));
    }
    let mut cases = Vec::new();
    for path in layout::list(&out.maps(), ".dime.mreg")? {
        let case = case_id(&path, ".dime.mreg")?;
        if out.stiffness_map(&case, "mmdi").exists() {
            cases.push(case);
        }
    }
    Ok(cases)
}

/// Per-case comparison rows followed by across-case rows (case `ALL`)
/// built from each case's whole-ROI means.
pub fn cmd_evaluate(cfg: &RunConfig, cases: &[String]) -> Result<(PathBuf, Vec<ReportRow>)> {
    if cases.is_empty() {
        return Err(CliError::validation("no cases to evaluate"));
    }
    let out = Layout::new(&cfg.out);
    let per_case = cases
        .par_iter()
        .map(|case| {
            let read = |p: PathBuf| read_scalar(&p).map(|(f, _)| f);
            let gt = read(out.ground_truth(case))?;
            let dime = read(out.stiffness_map(case, "dime"))?;
            let mmdi = read(out.stiffness_map(case, "mmdi"))?;
            if !dime.same_grid(&gt) || !mmdi.same_grid(&gt) {
                return Err(CliError::validation(format!("{case}: stiffness maps and ground truth grids differ")));
            }
            let spec_path = out.spec(case);
            let spec = if spec_path.exists() { Some(read_spec(&spec_path)?) } else { None };
            let labels = roi_labels(spec.as_ref(), &gt)?;
            Ok(evaluate_case(case, CaseMaps { dime: &dime, mmdi: &mmdi, gt: &gt }, &labels)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ReportRow> = per_case.into_iter().flatten().collect();
    let mut by_pair: BTreeMap<String, Vec<EvalPair>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.roi_id == "all") {
        by_pair.entry(r.method_pair.clone()).or_default().push(EvalPair::new(r.mean_est, r.mean_ref, r.case_id.clone()));
    }
    if cases.len() >= 2 {
        for (pair, values) in &by_pair {
            rows.push(summarize("all", pair, values)?);
        }
    }
    let mut bytes = Vec::new();
    write_report(&rows, &mut bytes)?;
    let path = out.report_csv();
    layout::write_artifact(&path, bytes, &Provenance::new("evaluate", cfg))?;
    Ok((path, rows))
}

/// Renders stiffness maps and wave fields of every reported case as PNG,
/// one scatter + Bland-Altman SVG per method pair, and the across-case
/// summary CSV. Returns the written files.
pub fn cmd_report(cfg: &RunConfig, report: Option<&Path>) -> Result<Vec<PathBuf>> {
    let out = Layout::new(&cfg.out);
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| out.report_csv());
    let rows = read_report(&layout::read(&report_path)?)?;
    if rows.is_empty() {
        return Err(CliError::validation(format!("{} has no rows", report_path.display())));
    }
    let dir = out.report();
    let prov = Provenance::new("report", cfg);
    let mut written = Vec::new();

    let cases: Vec<String> = {
        let mut c: Vec<String> = rows.iter().filter(|r| r.case_id != "ALL").map(|r| r.case_id.clone()).collect();
        c.dedup();
        c
    };
    let images = cases
        .par_iter()
        .map(|case| {
            let mut files = Vec::new();
            for (kind, path) in [
                ("gt", out.ground_truth(case)),
                ("dime", out.stiffness_map(case, "dime")),
                ("mmdi", out.stiffness_map(case, "mmdi")),
            ] {
                if path.exists() {
                    let (map, _) = read_scalar(&path)?;
                    let target = dir.join(format!("{case}_{kind}.png"));
                    layout::write_artifact(&target, plot::stiffness_png(&map)?, &prov)?;
                    files.push(target);
                }
            }
            let u_path = out.displacement(case);
            if u_path.exists() {
                let (u, _) = read_complex(&u_path)?;
                let target = dir.join(format!("{case}_wave.png"));
                layout::write_artifact(&target, plot::wave_png(&u)?, &prov)?;
                files.push(target);
            }
            Ok(files)
        })
        .collect::<Result<Vec<_>>>()?;
    written.extend(images.into_iter().flatten());

    let mut by_pair: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.case_id != "ALL" && r.roi_id == "all") {
        by_pair.entry(&r.method_pair).or_default().push((r.mean_ref, r.mean_est));
    }
    for (pair, points) in &by_pair {
        let target = dir.join(format!("{pair}.svg"));
        layout::write_artifact(&target, plot::pair_svg(pair, points), &prov)?;
        written.push(target);
    }
    let summary: Vec<ReportRow> = rows.iter().filter(|r| r.case_id == "ALL").cloned().collect();
    let mut bytes = Vec::new();
    write_report(&summary, &mut bytes)?;
    let target = dir.join("summary.csv");
    layout::write_artifact(&target, bytes, &prov)?;
    written.push(target);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_with_remainder_to_train() {
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(split_counts(60, [0.7, 0.1, 0.2]).unwrap(), [42, 6, 12]);
        assert_eq!(split_counts(40, [0.7, 0.1, 0.2]).unwrap(), [28, 4, 8]);
        assert_eq!(split_counts(7, [0.5, 0.25, 0.25]).unwrap(), [5, 1, 1]);
        assert_eq!(split_counts(2, [0.8, 0.1, 0.1]).unwrap(), [2, 0, 0]);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("dime".parse::<Method>().unwrap(), Method::Dime);
        assert_eq!("mmdi".parse::<Method>().unwrap(), Method::Mmdi);
        assert!("fem".parse::<Method>().is_err());
    }

    #[test]
    fn phantom_seeds_differ_by_class_and_repeat_by_seed() {
        let a = phantom_seeds(1, PhantomClass::Homogeneous, 3);
        assert_eq!(a, phantom_seeds(1, PhantomClass::Homogeneous, 3));
        assert_ne!(a, phantom_seeds(1, PhantomClass::TwoRandomInclusions, 3));
        assert_ne!(a, phantom_seeds(2, PhantomClass::Homogeneous, 3));
        assert_eq!(a.len(), 3);
    }
}
