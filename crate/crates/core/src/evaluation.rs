//! Segmentation quality measurement: per-organ Dice, Recall, Precision,
//! Average Hausdorff Distance over surface voxels, trimap-band dice curves,
//! and aggregation across subjects and runs.
//!
//! Conventions (documented, applied consistently):
//!
//! * Dice of two empty masks is 1; recall/precision with an empty
//!   denominator are 1.
//! * Average Hausdorff Distance is computed between the *surface* voxel
//!   sets of the class masks (mask minus its erosion). A class with an
//!   empty surface on either side is a missing organ: reported as absent
//!   and excluded from means with an explicit count.
//! * Distances are in voxel units; an optional isotropic spacing factor
//!   converts to millimeters.

use serde::{Deserialize, Serialize};

use crate::morphology::{edt_squared, erode, trimap_band, StructuringElement, TrimapBand};
use crate::volume::LabelVolume;
use crate::{Error, Result};

/// Confusion counts of one class between prediction and ground truth.
fn confusion(pred: &LabelVolume, gt: &LabelVolume, class: usize) -> (u64, u64, u64) {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fneg = 0u64;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let p = p as usize == class;
        let g = g as usize == class;
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    (tp, fp, fneg)
}

fn check_shapes(pred: &LabelVolume, gt: &LabelVolume) -> Result<()> {
    if pred.shape != gt.shape {
        return Err(Error::ShapeMismatch(format!(
            "prediction {} vs ground truth {}",
            pred.shape, gt.shape
        )));
    }
    Ok(())
}

/// Dice overlap `2|P∩G| / (|P|+|G|)` of one class; both-empty scores 1.
pub fn dice_score(pred: &LabelVolume, gt: &LabelVolume, class: usize) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (tp, fp, fneg) = confusion(pred, gt, class);
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Recall `TP/(TP+FN)` and precision `TP/(TP+FP)` of one class;
/// empty denominators score 1.
pub fn recall_precision(pred: &LabelVolume, gt: &LabelVolume, class: usize) -> Result<(f64, f64)> {
    check_shapes(pred, gt)?;
    let (tp, fp, fneg) = confusion(pred, gt, class);
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    Ok((recall, precision))
}

/// Surface voxels of a binary mask: the mask minus its erosion
/// (26-connectivity, radius 1; outside the volume counts as background).
fn surface(mask: &[u8], shape: crate::volume::VolumeShape) -> Vec<u8> {
    let eroded = erode(mask, shape, &StructuringElement::default());
    mask.iter().zip(&eroded).map(|(&m, &e)| m & !e & 1).collect()
}

/// Average Hausdorff Distance between the class-`class` surfaces:
/// `1/2 * (mean_p min_g d(p,g) + mean_g min_p d(g,p))`, Euclidean, voxel
/// units (times `spacing` when given). `None` when either surface is empty
/// (missing organ).
pub fn avg_hausdorff(
    pred: &LabelVolume,
    gt: &LabelVolume,
    class: usize,
    spacing: Option<f64>,
) -> Result<Option<f64>> {
    check_shapes(pred, gt)?;
    let shape = pred.shape;
    let sp = surface(&pred.class_mask(class), shape);
    let sg = surface(&gt.class_mask(class), shape);
    if sp.iter().all(|&v| v == 0) || sg.iter().all(|&v| v == 0) {
        return Ok(None);
    }
    let dist_to_g = edt_squared(&sg, shape)?;
    let dist_to_p = edt_squared(&sp, shape)?;
    let directed = |surf: &[u8], dist: &[f64]| -> f64 {
        let mut total = 0.0f64;
        let mut count = 0u64;
        for (i, &s) in surf.iter().enumerate() {
            if s != 0 {
                total += dist[i].sqrt();
                count += 1;
            }
        }
        total / count as f64
    };
    let ahd = 0.5 * (directed(&sp, &dist_to_g) + directed(&sg, &dist_to_p));
    Ok(Some(ahd * spacing.unwrap_or(1.0)))
}

/// How trimap scores compare the two segmentations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimapMode {
    /// Mean foreground dice of label agreement restricted to the
    /// ground-truth band (primary reading).
    LabelAgreement,
    /// Dice of the two band masks themselves (alternative reading).
    BandOverlap,
}

/// Mean foreground dice over all classes `>= 1` (both-empty scores 1).
pub fn mean_foreground_dice(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    check_shapes(pred, gt)?;
    let classes = gt.num_classes();
    if classes < 2 {
        return Err(Error::InvalidArgument("no foreground classes".into()));
    }
    let mut total = 0.0;
    for c in 1..classes {
        total += dice_score(pred, gt, c)?;
    }
    Ok(total / (classes - 1) as f64)
}

fn masked_dice(pred: &LabelVolume, gt: &LabelVolume, band: &TrimapBand, class: usize) -> f64 {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fneg = 0u64;
    for ((&p, &g), &b) in pred.data.iter().zip(&gt.data).zip(&band.mask) {
        if b == 0 {
            continue;
        }
        let p = p as usize == class;
        let g = g as usize == class;
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Trimap dice at one band width. `LabelAgreement` restricts both label
/// volumes to the ground-truth trimap band and computes mean foreground
/// dice there (voxels outside the band are ignored); `BandOverlap` compares
/// the prediction's and ground truth's band masks directly. `None` when the
/// band is empty.
pub fn trimap_dice(
    pred: &LabelVolume,
    gt: &LabelVolume,
    width: usize,
    mode: TrimapMode,
) -> Result<Option<f64>> {
    check_shapes(pred, gt)?;
    match mode {
        TrimapMode::LabelAgreement => {
            let band = trimap_band(gt, width)?;
            if band.mask.iter().all(|&v| v == 0) {
                return Ok(None);
            }
            let classes = gt.num_classes();
            let mut total = 0.0;
            for c in 1..classes {
                total += masked_dice(pred, gt, &band, c);
            }
            Ok(Some(total / (classes - 1) as f64))
        }
        TrimapMode::BandOverlap => {
            let band_p = trimap_band(pred, width)?;
            let band_g = trimap_band(gt, width)?;
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut fneg = 0u64;
            for (&p, &g) in band_p.mask.iter().zip(&band_g.mask) {
                match (p != 0, g != 0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                return Ok(None);
            }
            Ok(Some(2.0 * tp as f64 / denom as f64))
        }
    }
}

/// Metrics of one organ in one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerOrganMetrics {
    pub class: usize,
    pub name: String,
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    /// Voxel units unless a spacing factor was applied; absent when the
    /// organ surface is missing in prediction or ground truth.
    pub avg_hausdorff: Option<f64>,
}

/// All per-organ metrics of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub id: String,
    pub organs: Vec<PerOrganMetrics>,
    /// Mean foreground dice over all organs.
    pub mean_dice: f64,
}

/// Per-organ Dice, Recall, Precision, and Average Hausdorff Distance of one
/// subject (foreground classes only).
pub fn evaluate_subject(
    id: &str,
    pred: &LabelVolume,
    gt: &LabelVolume,
    spacing: Option<f64>,
) -> Result<SubjectMetrics> {
    check_shapes(pred, gt)?;
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "class count mismatch: {} vs {}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    let mut organs = Vec::new();
    for class in 1..gt.num_classes() {
        let dice = dice_score(pred, gt, class)?;
        let (recall, precision) = recall_precision(pred, gt, class)?;
        let avg_hausdorff = avg_hausdorff(pred, gt, class, spacing)?;
        organs.push(PerOrganMetrics {
            class,
            name: gt.class_table[class].clone(),
            dice,
            recall,
            precision,
            avg_hausdorff,
        });
    }
    let mean_dice = organs.iter().map(|o| o.dice).sum::<f64>() / organs.len() as f64;
    Ok(SubjectMetrics { id: id.to_string(), organs, mean_dice })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Aggregated statistics of one organ across subjects and runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganStat {
    pub class: usize,
    pub name: String,
    pub dice: MeanStd,
    pub recall: MeanStd,
    pub precision: MeanStd,
    /// Absent if the organ was missing in every subject of every run.
    pub avg_hausdorff: Option<MeanStd>,
    /// Number of (subject, run) evaluations where the organ was missing.
    pub missing: usize,
}

/// Grand (organ-averaged) statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrandStat {
    pub dice: MeanStd,
    pub recall: MeanStd,
    pub precision: MeanStd,
    pub avg_hausdorff: Option<MeanStd>,
}

/// One point of the trimap-dice curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimapPoint {
    pub width: usize,
    pub mean_dice: f64,
}

/// Aggregated evaluation report: per-subject entries (per run), per-organ
/// means with std, grand means, and optionally the trimap curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `runs[r][s]` = subject `s` of run `r`; means are recomputable from
    /// these entries.
    pub runs: Vec<Vec<SubjectMetrics>>,
    pub per_organ: Vec<OrganStat>,
    pub grand: GrandStat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trimap: Option<Vec<TrimapPoint>>,
}

/// Aggregates per-subject metrics: organ-wise mean over subjects within
/// each run, then mean and std across runs; grand statistics average the
/// per-organ means. Missing organs are excluded from Hausdorff means with
/// an explicit count.
pub fn aggregate(runs: Vec<Vec<SubjectMetrics>>, class_table: &[String]) -> Result<MetricsReport> {
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(Error::InvalidArgument("aggregate requires at least one subject per run".into()));
    }
    let classes = class_table.len();
    let mut per_organ = Vec::new();
    for class in 1..classes {
        let mut dice_runs = Vec::new();
        let mut recall_runs = Vec::new();
        let mut precision_runs = Vec::new();
        let mut hd_runs = Vec::new();
        let mut missing = 0usize;
        for run in &runs {
            let mut dice = Vec::new();
            let mut recall = Vec::new();
            let mut precision = Vec::new();
            let mut hd = Vec::new();
            for subj in run {
                let organ = subj
                    .organs
                    .iter()
                    .find(|o| o.class == class)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "subject `{}` lacks metrics for class {class}",
                            subj.id
                        ))
                    })?;
                dice.push(organ.dice);
                recall.push(organ.recall);
                precision.push(organ.precision);
                match organ.avg_hausdorff {
                    Some(v) => hd.push(v),
                    None => missing += 1,
                }
            }
            dice_runs.push(mean_std(&dice).mean);
            recall_runs.push(mean_std(&recall).mean);
            precision_runs.push(mean_std(&precision).mean);
            if !hd.is_empty() {
                hd_runs.push(mean_std(&hd).mean);
            }
        }
        per_organ.push(OrganStat {
            class,
            name: class_table[class].clone(),
            dice: mean_std(&dice_runs),
            recall: mean_std(&recall_runs),
            precision: mean_std(&precision_runs),
            avg_hausdorff: (!hd_runs.is_empty()).then(|| mean_std(&hd_runs)),
            missing,
        });
    }
    // grand statistics: organ-mean per run, then across runs
    let grand_of = |extract: &dyn Fn(&SubjectMetrics, usize) -> Option<f64>| -> Vec<f64> {
        runs.iter()
            .map(|run| {
                let mut organ_means = Vec::new();
                for class in 1..classes {
                    let vals: Vec<f64> =
                        run.iter().filter_map(|s| extract(s, class)).collect();
                    if !vals.is_empty() {
                        organ_means.push(mean_std(&vals).mean);
                    }
                }
                mean_std(&organ_means).mean
            })
            .collect()
    };
    let organ_value = |s: &SubjectMetrics, class: usize, f: &dyn Fn(&PerOrganMetrics) -> Option<f64>| {
        s.organs.iter().find(|o| o.class == class).and_then(f)
    };
    let dice_g = grand_of(&|s, c| organ_value(s, c, &|o| Some(o.dice)));
    let recall_g = grand_of(&|s, c| organ_value(s, c, &|o| Some(o.recall)));
    let precision_g = grand_of(&|s, c| organ_value(s, c, &|o| Some(o.precision)));
    let hd_present = runs
        .iter()
        .any(|run| run.iter().any(|s| s.organs.iter().any(|o| o.avg_hausdorff.is_some())));
    let grand = GrandStat {
        dice: mean_std(&dice_g),
        recall: mean_std(&recall_g),
        precision: mean_std(&precision_g),
        avg_hausdorff: hd_present
            .then(|| mean_std(&grand_of(&|s, c| organ_value(s, c, &|o| o.avg_hausdorff)))),
    };
    Ok(MetricsReport { runs, per_organ, grand, trimap: None })
}

/// Mean trimap dice over subjects at each width (subjects with an empty
/// band are skipped).
pub fn trimap_curve(
    pairs: &[(&LabelVolume, &LabelVolume)],
    widths: &[usize],
    mode: TrimapMode,
) -> Result<Vec<TrimapPoint>> {
    let mut out = Vec::with_capacity(widths.len());
    for &w in widths {
        let mut values = Vec::new();
        for (pred, gt) in pairs {
            if let Some(d) = trimap_dice(pred, gt, w, mode)? {
                values.push(d);
            }
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!("trimap band empty at width {w}")));
        }
        out.push(TrimapPoint { width: w, mean_dice: mean_std(&values).mean });
    }
    Ok(out)
}

/// Per-organ CSV (one row per organ plus a grand-mean row).
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from(
        "organ,dice_mean,dice_std,avg_hd_mean,avg_hd_std,recall_mean,recall_std,precision_mean,precision_std,missing\n",
    );
    let fmt_opt = |m: &Option<MeanStd>| match m {
        Some(v) => format!("{:.6},{:.6}", v.mean, v.std),
        None => ",".to_string(),
    };
    for organ in &report.per_organ {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{}\n",
            organ.name,
            organ.dice.mean,
            organ.dice.std,
            fmt_opt(&organ.avg_hausdorff),
            organ.recall.mean,
            organ.recall.std,
            organ.precision.mean,
            organ.precision.std,
            organ.missing,
        ));
    }
    out.push_str(&format!(
        "MEAN,{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},\n",
        report.grand.dice.mean,
        report.grand.dice.std,
        fmt_opt(&report.grand.avg_hausdorff),
        report.grand.recall.mean,
        report.grand.recall.std,
        report.grand.precision.mean,
        report.grand.precision.std,
    ));
    out
}
