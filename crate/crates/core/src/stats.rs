//! Agreement statistics between stiffness estimates and references: ROI
//! summaries, Pearson/Spearman correlation, OLS fit and Bland-Altman limits.
//! Standard deviations use the sample (n - 1) convention throughout.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

const LOA_Z: f64 = 1.96;

/// Paired scalar observation in kPa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub estimate: f64,
    pub reference: f64,
    pub label: String,
}

impl EvalPair {
    pub fn new(estimate: f64, reference: f64, label: impl Into<String>) -> Self {
        Self { estimate, reference, label: label.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub ols_slope: f64,
    pub ols_intercept: f64,
    pub r_squared: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean and sample standard deviation of `map` where `mask` is nonzero.
pub fn roi_stats(map: &ScalarField, mask: &ScalarField) -> Result<(f64, f64)> {
    if !map.same_grid(mask) {
        return Err(Error::validation("map and mask grids differ"));
    }
    let selected: Vec<f64> =
        map.values().iter().zip(mask.values()).filter(|(_, &m)| m != 0.0).map(|(&v, _)| v).collect();
    if selected.len() < 2 {
        return Err(Error::validation(format!("ROI selects {} pixels, need at least 2", selected.len())));
    }
    Ok((mean(&selected), sample_std(&selected)))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation and OLS fit of estimate (y) on reference (x).
pub fn correlations(pairs: &[EvalPair]) -> Result<Correlations> {
    if pairs.len() < 3 {
        return Err(Error::validation(format!("need at least 3 pairs, got {}", pairs.len())));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.reference).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.estimate).collect();
    let degenerate = || Error::validation("zero variance in estimate or reference");
    let pearson_r = pearson(&x, &y).ok_or_else(degenerate)?;
    let spearman_rho = pearson(&ranks(&x), &ranks(&y)).ok_or_else(degenerate)?;

    let (mx, my) = (mean(&x), mean(&y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let ols_slope = sxy / sxx;
    let ols_intercept = my - ols_slope * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - (ols_intercept + ols_slope * a)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    Ok(Correlations { pearson_r, spearman_rho, ols_slope, ols_intercept, r_squared: 1.0 - ss_res / ss_tot })
}

pub fn bland_altman(pairs: &[EvalPair]) -> Result<BlandAltman> {
    if pairs.len() < 3 {
        return Err(Error::validation(format!("Bland-Altman needs at least 3 pairs, got {}", pairs.len())));
    }
    let d: Vec<f64> = pairs.iter().map(|p| p.estimate - p.reference).collect();
    let bias = mean(&d);
    let spread = LOA_Z * sample_std(&d);
    Ok(BlandAltman { bias, loa_low: bias - spread, loa_high: bias + spread, n: d.len() })
}

/// Keeps mask pixels whose whole (2r+1)^2 neighbourhood is inside the grid
/// and carries the same nonzero label.
pub fn erode_labels(labels: &ScalarField, radius: usize) -> Result<ScalarField> {
    let (h, w) = labels.shape();
    ScalarField::from_fn(h, w, labels.spacing(), |r, c| {
        let label = labels.get(r, c);
        if label == 0.0 || r < radius || c < radius || r + radius >= h || c + radius >= w {
            return 0.0;
        }
        for rr in r - radius..=r + radius {
            for cc in c - radius..=c + radius {
                if labels.get(rr, cc) != label {
                    return 0.0;
                }
            }
        }
        label
    })
}

/// Default phantom ROI: nonzero ground-truth support eroded by 2 pixels.
pub fn support_roi(gt: &ScalarField) -> Result<ScalarField> {
    erode_labels(&gt.map(|v| if v != 0.0 { 1.0 } else { 0.0 })?, 2)
}

/// One line of the CSV report. Statistics that are undefined for the data
/// (for example a correlation against a constant reference) are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case_id: String,
    pub roi_id: String,
    pub method_pair: String,
    pub n: usize,
    pub mean_est: f64,
    pub mean_ref: f64,
    pub std_est: f64,
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub ba_bias: Option<f64>,
    pub ba_lo: Option<f64>,
    pub ba_hi: Option<f64>,
}

impl ReportRow {
    /// Summary of paired values; `n` counts the pairs.
    pub fn from_pairs(case_id: &str, roi_id: &str, method_pair: &str, pairs: &[EvalPair]) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::validation(format!("{case_id}/{roi_id}: need at least 2 values")));
        }
        let est: Vec<f64> = pairs.iter().map(|p| p.estimate).collect();
        let reference: Vec<f64> = pairs.iter().map(|p| p.reference).collect();
        let corr = correlations(pairs).ok();
        let ba = bland_altman(pairs).ok();
        Ok(Self {
            case_id: case_id.into(),
            roi_id: roi_id.into(),
            method_pair: method_pair.into(),
            n: pairs.len(),
            mean_est: mean(&est),
            mean_ref: mean(&reference),
            std_est: sample_std(&est),
            pearson_r: corr.map(|c| c.pearson_r),
            spearman_rho: corr.map(|c| c.spearman_rho),
            slope: corr.map(|c| c.ols_slope),
            intercept: corr.map(|c| c.ols_intercept),
            r2: corr.map(|c| c.r_squared),
            ba_bias: ba.map(|b| b.bias),
            ba_lo: ba.map(|b| b.loa_low),
            ba_hi: ba.map(|b| b.loa_high),
        })
    }
}

pub const PAIR_DIME_GT: &str = "dime_vs_gt";
pub const PAIR_MMDI_GT: &str = "mmdi_vs_gt";
pub const PAIR_DIME_MMDI: &str = "dime_vs_mmdi";

/// Co-registered stiffness maps of one case, all in Pa.
#[derive(Debug, Clone, Copy)]
pub struct CaseMaps<'a> {
    pub dime: &'a ScalarField,
    pub mmdi: &'a ScalarField,
    pub gt: &'a ScalarField,
}

impl CaseMaps<'_> {
    pub fn pairs(&self) -> [(&'static str, &ScalarField, &ScalarField); 3] {
        [(PAIR_DIME_GT, self.dime, self.gt), (PAIR_MMDI_GT, self.mmdi, self.gt), (PAIR_DIME_MMDI, self.dime, self.mmdi)]
    }
}

fn roi_name(label: f64) -> String {
    format!("R{}", label as i64)
}

/// Pixelwise comparison rows (values in kPa) for the whole ROI ("all") and
/// for each labelled region with at least 2 pixels. ROI pixels outside the
/// nonzero ground-truth support are ignored.
pub fn evaluate_case(case_id: &str, maps: CaseMaps<'_>, roi_labels: &ScalarField) -> Result<Vec<ReportRow>> {
    for m in [maps.dime, maps.mmdi, maps.gt] {
        if !m.same_grid(roi_labels) {
            return Err(Error::validation(format!("{case_id}: map and ROI grids differ")));
        }
    }
    let labels: BTreeSet<i64> =
        roi_labels.values().iter().filter(|&&l| l != 0.0).map(|&l| l as i64).collect();
    let in_roi = |i: usize| roi_labels.values()[i] != 0.0 && maps.gt.values()[i] != 0.0;
    let all: Vec<usize> = (0..roi_labels.len()).filter(|&i| in_roi(i)).collect();
    if all.len() < 2 {
        return Err(Error::validation(format!("{case_id}: ROI selects {} pixels", all.len())));
    }
    let mut regions = vec![("all".to_string(), all)];
    if labels.len() > 1 {
        for &l in &labels {
            let idx: Vec<usize> = (0..roi_labels.len()).filter(|&i| in_roi(i) && roi_labels.values()[i] as i64 == l).collect();
            if idx.len() >= 2 {
                regions.push((roi_name(l as f64), idx));
            }
        }
    }
    let mut rows = Vec::new();
    for (name, est, reference) in maps.pairs() {
        for (roi, idx) in &regions {
            let pairs: Vec<EvalPair> = idx
                .iter()
                .map(|&i| EvalPair::new(est.values()[i] * 1e-3, reference.values()[i] * 1e-3, ""))
                .collect();
            rows.push(ReportRow::from_pairs(case_id, roi, name, &pairs)?);
        }
    }
    Ok(rows)
}

/// Across-case rows: one `EvalPair` per case (for example ROI means).
pub fn summarize(roi_id: &str, method_pair: &str, pairs: &[EvalPair]) -> Result<ReportRow> {
    ReportRow::from_pairs("ALL", roi_id, method_pair, pairs)
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_report(bytes: &[u8]) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_reader(bytes);
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
