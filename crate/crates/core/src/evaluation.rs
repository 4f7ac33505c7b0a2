//! Metrics, intra/inter-participant protocols, experiment runner, two-way
//! ANOVA and pairwise tests, and the text report formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::models::{train_regressor, ModelConfig};
use crate::postsignal::{detect_stance, extract_peaks, peak_errors, smooth_estimate, PeakErrors, PeakPair};
use crate::preprocess::{GaitCycleWindow, WindowSet};
use crate::types::{speed_tag, ChannelManifest, FeatureSet, FootSide};

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            what: "reference vs estimate",
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

pub fn rmse(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let ss: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (e - r) * (e - r))
        .sum();
    Ok((ss / reference.len() as f64).sqrt())
}

fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// RMSE over the range of the reference, in percent.
pub fn nrmse(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let e = rmse(reference, estimate)?;
    let r = range(reference);
    if !(r > 0.0) {
        return Err(Error::ZeroRange);
    }
    Ok(100.0 * e / r)
}

/// Pearson correlation with population moments.
pub fn pearson_r(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let me = estimate.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let (a, b) = (r - mr, e - me);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::ConstantSeries);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Intra,
    Inter,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Intra => "intra",
            Protocol::Inter => "inter",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "intra" => Ok(Protocol::Intra),
            "inter" => Ok(Protocol::Inter),
            o => Err(Error::Config(format!("unknown protocol `{o}`"))),
        }
    }
}

pub const INTRA_TRAIN_FRACTION: f64 = 0.7;

/// Train and test window indices of one fold. Every fold belongs to one
/// subject: intra folds train and test on that subject, inter folds test on
/// it and train on everyone else.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub id: usize,
    pub subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

fn subjects_of(windows: &[GaitCycleWindow]) -> Vec<String> {
    windows
        .iter()
        .map(|w| w.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn speed_key(speed: f64) -> i64 {
    (speed * 1000.0).round() as i64
}

/// Builds the fold list. Intra splits each (subject, speed) group of cycles
/// 70/30 with the train count rounded up; inter leaves one subject out per
/// fold.
pub fn make_split(windows: &[GaitCycleWindow], protocol: Protocol, seed: u64) -> Result<SplitPlan> {
    let subjects = subjects_of(windows);
    let need = match protocol {
        Protocol::Intra => 1,
        Protocol::Inter => 2,
    };
    if subjects.len() < need {
        return Err(Error::TooFewSubjects {
            got: subjects.len(),
            need,
        });
    }
    let mut folds = Vec::with_capacity(subjects.len());
    match protocol {
        Protocol::Inter => {
            for (id, s) in subjects.iter().enumerate() {
                let (test, train): (Vec<usize>, Vec<usize>) =
                    (0..windows.len()).partition(|&i| &windows[i].subject_id == s);
                folds.push(Fold {
                    id,
                    subject: s.clone(),
                    train,
                    test,
                });
            }
        }
        Protocol::Intra => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut groups: BTreeMap<(&str, i64), Vec<usize>> = BTreeMap::new();
            for (i, w) in windows.iter().enumerate() {
                groups
                    .entry((w.subject_id.as_str(), speed_key(w.speed)))
                    .or_default()
                    .push(i);
            }
            let mut per_subject: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
            for ((s, _), mut idx) in groups {
                idx.sort_by_key(|&i| (windows[i].foot, windows[i].cycle_index, i));
                idx.shuffle(&mut rng);
                let n_train = (INTRA_TRAIN_FRACTION * idx.len() as f64 - 1e-9).ceil() as usize;
                let entry = per_subject.entry(s).or_default();
                entry.0.extend_from_slice(&idx[..n_train]);
                entry.1.extend_from_slice(&idx[n_train..]);
            }
            for (id, (s, (mut train, mut test))) in per_subject.into_iter().enumerate() {
                train.sort_unstable();
                test.sort_unstable();
                folds.push(Fold {
                    id,
                    subject: s.to_string(),
                    train,
                    test,
                });
            }
        }
    }
    Ok(SplitPlan {
        protocol,
        seed,
        folds,
    })
}

impl SplitPlan {
    /// Checks the realized plan: no window in both sets of a fold, and for
    /// inter folds no training window from the test subject.
    pub fn verify(&self, windows: &[GaitCycleWindow]) -> Result<()> {
        for f in &self.folds {
            let train: BTreeSet<usize> = f.train.iter().copied().collect();
            if f.test.iter().any(|i| train.contains(i)) {
                return Err(Error::Config(format!("fold {} shares windows between train and test", f.id)));
            }
            if self.protocol == Protocol::Inter {
                let leaked = f
                    .train
                    .iter()
                    .filter(|&&i| windows[i].subject_id == f.subject)
                    .count();
                if leaked > 0 {
                    return Err(Error::Config(format!(
                        "fold {}: test subject {} appears in {leaked} training windows",
                        f.id, f.subject
                    )));
                }
                if f.test.iter().any(|&i| windows[i].subject_id != f.subject) {
                    return Err(Error::Config(format!("fold {}: foreign subject in test set", f.id)));
                }
            }
        }
        Ok(())
    }
}

/// What produces the estimates.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Model(Box<ModelConfig>),
    /// returns the reference itself
    Oracle,
    Constant(f64),
}

impl Predictor {
    pub fn label(&self) -> String {
        match self {
            Predictor::Model(c) => c.kind.to_string(),
            Predictor::Oracle => "oracle".into(),
            Predictor::Constant(_) => "constant".into(),
        }
    }

    fn smoothed(&self) -> bool {
        matches!(self, Predictor::Model(c) if c.kind.is_pointwise())
    }
}

/// Zero-phase smoothing for pointwise models; recurrent and reference
/// predictors pass through untouched.
pub fn postprocess(predictor: &Predictor, estimate: &[f64]) -> Result<Vec<f64>> {
    if predictor.smoothed() {
        smooth_estimate(estimate)
    } else {
        Ok(estimate.to_vec())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOptions {
    /// deterministic subsample of each fold's training windows
    pub max_train_windows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    pub fold: usize,
    pub subject_id: String,
    pub speed: f64,
    pub foot: FootSide,
    pub cycle_index: u32,
    pub reference: Vec<f64>,
    pub estimate: Vec<f64>,
    pub rmse: f64,
    pub nrmse: Option<f64>,
    pub r: Option<f64>,
    pub ref_peaks: Option<PeakPair>,
    pub est_peaks: Option<PeakPair>,
    pub peak_errors: Option<PeakErrors>,
}

/// Metrics of one (subject, speed) cell over its pooled test cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub subject: String,
    pub speed: f64,
    pub model: String,
    pub feature_set: FeatureSet,
    pub protocol: Protocol,
    /// BW
    pub rmse: f64,
    /// %BW
    pub nrmse: f64,
    pub r: Option<f64>,
    pub wap_err: Option<f64>,
    pub pop_err: Option<f64>,
    /// mean absolute delay, %GC
    pub wap_delay: Option<f64>,
    pub pop_delay: Option<f64>,
    pub n_cycles: usize,
    pub n_peak_cycles: usize,
    /// range of the pooled reference, BW
    pub ref_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: impl Iterator<Item = f64>) -> Option<MeanStd> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

/// Mean ± sample std over cells of one speed, or over every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// `None` for the global row
    pub speed: Option<f64>,
    pub rmse: MeanStd,
    pub nrmse: MeanStd,
    pub r: Option<MeanStd>,
    pub wap_err: Option<MeanStd>,
    pub pop_err: Option<MeanStd>,
    pub wap_delay: Option<MeanStd>,
    pub pop_delay: Option<MeanStd>,
    pub n_cells: usize,
}

impl SummaryRow {
    fn from_rows(speed: Option<f64>, rows: &[&MetricRow]) -> SummaryRow {
        let pick = |f: fn(&MetricRow) -> Option<f64>| MeanStd::of(rows.iter().filter_map(|r| f(r)));
        SummaryRow {
            speed,
            rmse: MeanStd::of(rows.iter().map(|r| r.rmse)).unwrap(),
            nrmse: MeanStd::of(rows.iter().map(|r| r.nrmse)).unwrap(),
            r: pick(|r| r.r),
            wap_err: pick(|r| r.wap_err),
            pop_err: pick(|r| r.pop_err),
            wap_delay: pick(|r| r.wap_delay),
            pop_delay: pick(|r| r.pop_delay),
            n_cells: rows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub id: usize,
    pub subject: String,
    pub n_train: usize,
    pub n_test: usize,
    pub train_subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub model: String,
    pub feature_set: FeatureSet,
    pub protocol: Protocol,
    pub folds: Vec<FoldSummary>,
    pub cycles: Vec<CycleResult>,
    pub rows: Vec<MetricRow>,
    pub speed_rows: Vec<SummaryRow>,
    pub global: SummaryRow,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(fold as u64 + 1)
}

fn evaluate_cycle(fold: usize, w: &GaitCycleWindow, estimate: Vec<f64>) -> Result<CycleResult> {
    let n = w.valid_length;
    let reference = w.y[..n].to_vec();
    let estimate = estimate[..n].to_vec();
    let ref_peaks = detect_stance(&reference)
        .and_then(|s| extract_peaks(&reference, s, n))
        .ok();
    let est_peaks = detect_stance(&estimate)
        .and_then(|s| extract_peaks(&estimate, s, n))
        .ok();
    let pe = match (&ref_peaks, &est_peaks) {
        (Some(a), Some(b)) => Some(peak_errors(a, b)),
        _ => None,
    };
    Ok(CycleResult {
        fold,
        subject_id: w.subject_id.clone(),
        speed: w.speed,
        foot: w.foot,
        cycle_index: w.cycle_index,
        rmse: rmse(&reference, &estimate)?,
        nrmse: nrmse(&reference, &estimate).ok(),
        r: pearson_r(&reference, &estimate).ok(),
        reference,
        estimate,
        ref_peaks,
        est_peaks,
        peak_errors: pe,
    })
}

fn run_fold(
    selected: &[GaitCycleWindow],
    fold: &Fold,
    predictor: &Predictor,
    fs: FeatureSet,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<Vec<CycleResult>> {
    let test: Vec<GaitCycleWindow> = fold.test.iter().map(|&i| selected[i].clone()).collect();
    let raw: Vec<Vec<f64>> = match predictor {
        Predictor::Oracle => test.iter().map(|w| w.y.clone()).collect(),
        Predictor::Constant(c) => test.iter().map(|w| vec![*c; w.y.len()]).collect(),
        Predictor::Model(cfg) => {
            let mut train_idx = fold.train.clone();
            if let Some(cap) = opts.max_train_windows {
                if train_idx.len() > cap {
                    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(seed, fold.id) ^ 0xcafe);
                    train_idx.shuffle(&mut rng);
                    train_idx.truncate(cap);
                    train_idx.sort_unstable();
                }
            }
            let train: Vec<GaitCycleWindow> = train_idx.iter().map(|&i| selected[i].clone()).collect();
            let mut cfg = (**cfg).clone();
            cfg.feature_set = fs;
            cfg.train.seed = fold_seed(seed, fold.id);
            cfg.forest.seed = fold_seed(seed, fold.id);
            let manifest = ChannelManifest::for_feature_set(fs);
            let (model, log) = train_regressor(&train, &manifest, &cfg)?;
            log::info!(
                "{} {fs} fold {} ({}): {} train windows, final loss {:?}",
                cfg.kind,
                fold.id,
                fold.subject,
                train.len(),
                log.epoch_losses.last()
            );
            model.predict(&test)?
        }
    };
    test.iter()
        .zip(raw)
        .map(|(w, est)| {
            let n = w.valid_length;
            let mut full = postprocess(predictor, &est[..n])?;
            full.resize(est.len(), 0.0);
            evaluate_cycle(fold.id, w, full)
        })
        .collect()
}

fn cell_row(
    cycles: &[&CycleResult],
    model: &str,
    fs: FeatureSet,
    protocol: Protocol,
) -> Result<MetricRow> {
    let reference: Vec<f64> = cycles.iter().flat_map(|c| c.reference.iter().copied()).collect();
    let estimate: Vec<f64> = cycles.iter().flat_map(|c| c.estimate.iter().copied()).collect();
    let peaks: Vec<&PeakErrors> = cycles.iter().filter_map(|c| c.peak_errors.as_ref()).collect();
    let mean = |f: fn(&PeakErrors) -> f64| {
        (!peaks.is_empty()).then(|| peaks.iter().map(|p| f(p)).sum::<f64>() / peaks.len() as f64)
    };
    let e = rmse(&reference, &estimate)?;
    let rr = range(&reference);
    Ok(MetricRow {
        subject: cycles[0].subject_id.clone(),
        speed: cycles[0].speed,
        model: model.to_string(),
        feature_set: fs,
        protocol,
        rmse: e,
        nrmse: nrmse(&reference, &estimate)?,
        r: pearson_r(&reference, &estimate).ok(),
        wap_err: mean(|p| p.wap_error),
        pop_err: mean(|p| p.pop_error),
        wap_delay: mean(|p| p.wap_delay.abs()),
        pop_delay: mean(|p| p.pop_delay.abs()),
        n_cycles: cycles.len(),
        n_peak_cycles: peaks.len(),
        ref_range: rr,
    })
}

/// Trains and evaluates every fold of `plan` for one predictor and feature
/// set. Folds run in parallel; results are ordered by fold id.
pub fn run_experiment(
    set: &WindowSet,
    plan: &SplitPlan,
    predictor: &Predictor,
    fs: FeatureSet,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    plan.verify(&set.windows)?;
    let wanted = ChannelManifest::for_feature_set(fs);
    let idx = wanted.indices_in(&set.manifest)?;
    let selected: Vec<GaitCycleWindow> = set.windows.iter().map(|w| w.select(&idx)).collect();

    let per_fold = plan
        .folds
        .par_iter()
        .map(|f| run_fold(&selected, f, predictor, fs, plan.seed, opts))
        .collect::<Result<Vec<_>>>()?;
    let cycles: Vec<CycleResult> = per_fold.into_iter().flatten().collect();

    let folds = plan
        .folds
        .iter()
        .map(|f| FoldSummary {
            id: f.id,
            subject: f.subject.clone(),
            n_train: f.train.len(),
            n_test: f.test.len(),
            train_subjects: f
                .train
                .iter()
                .map(|&i| set.windows[i].subject_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        })
        .collect();

    let label = predictor.label();
    let mut cells: BTreeMap<(String, i64), Vec<&CycleResult>> = BTreeMap::new();
    for c in &cycles {
        cells
            .entry((c.subject_id.clone(), speed_key(c.speed)))
            .or_default()
            .push(c);
    }
    let rows = cells
        .values()
        .map(|cs| cell_row(cs, &label, fs, plan.protocol))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let speeds: BTreeSet<i64> = rows.iter().map(|r| speed_key(r.speed)).collect();
    let speed_rows = speeds
        .iter()
        .map(|&k| {
            let rs: Vec<&MetricRow> = rows.iter().filter(|r| speed_key(r.speed) == k).collect();
            SummaryRow::from_rows(Some(rs[0].speed), &rs)
        })
        .collect();
    let all: Vec<&MetricRow> = rows.iter().collect();
    let global = SummaryRow::from_rows(None, &all);
    Ok(ExperimentResult {
        model: label,
        feature_set: fs,
        protocol: plan.protocol,
        folds,
        cycles,
        rows,
        speed_rows,
        global,
    })
}

impl ExperimentResult {
    /// Mean RMSE of each subject over its speed cells, ordered by subject.
    pub fn subject_rmse(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.subject.clone()).or_default();
            e.0 += r.rmse;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }
}

/// Sum in ascending order, so the result does not depend on input order.
fn ordered_sum(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaRow {
    pub source: String,
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
    pub f: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    /// factor A, factor B, interaction, residual
    pub rows: Vec<AnovaRow>,
    /// set when every observation is equal
    pub no_variance: bool,
}

/// Balanced two-way fixed-effects ANOVA with interaction. Observations are
/// `(level of A, level of B, value)`.
pub fn anova_two_way(obs: &[(String, String, f64)]) -> Result<AnovaTable> {
    let mut cells: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for (a, b, y) in obs {
        if !y.is_finite() {
            return Err(Error::NonFiniteInput("anova_two_way"));
        }
        cells.entry((a.as_str(), b.as_str())).or_default().push(*y);
    }
    let la: BTreeSet<&str> = cells.keys().map(|k| k.0).collect();
    let lb: BTreeSet<&str> = cells.keys().map(|k| k.1).collect();
    if la.len() < 2 || lb.len() < 2 {
        return Err(Error::DegenerateDesign("each factor needs at least 2 levels".into()));
    }
    if cells.len() != la.len() * lb.len() {
        return Err(Error::DegenerateDesign("some factor combinations have no observations".into()));
    }
    let n = cells.values().next().unwrap().len();
    if n < 2 || cells.values().any(|c| c.len() != n) {
        return Err(Error::DegenerateDesign(
            "design must be balanced with at least 2 observations per cell".into(),
        ));
    }
    let (a, b, nf) = (la.len() as f64, lb.len() as f64, n as f64);
    let cell_mean: BTreeMap<(&str, &str), f64> =
        cells.iter().map(|(k, v)| (*k, ordered_sum(v) / nf)).collect();
    let all: Vec<f64> = cells.values().flatten().copied().collect();
    let grand = ordered_sum(&all) / all.len() as f64;
    let mean_a: BTreeMap<&str, f64> = la
        .iter()
        .map(|&i| {
            let v: Vec<f64> = lb.iter().map(|&j| cell_mean[&(i, j)]).collect();
            (i, ordered_sum(&v) / b)
        })
        .collect();
    let mean_b: BTreeMap<&str, f64> = lb
        .iter()
        .map(|&j| {
            let v: Vec<f64> = la.iter().map(|&i| cell_mean[&(i, j)]).collect();
            (j, ordered_sum(&v) / a)
        })
        .collect();
    let ss_a = nf * b * ordered_sum(&mean_a.values().map(|m| (m - grand).powi(2)).collect::<Vec<_>>());
    let ss_b = nf * a * ordered_sum(&mean_b.values().map(|m| (m - grand).powi(2)).collect::<Vec<_>>());
    let inter: Vec<f64> = cell_mean
        .iter()
        .map(|((i, j), m)| (m - mean_a[i] - mean_b[j] + grand).powi(2))
        .collect();
    let ss_ab = nf * ordered_sum(&inter);
    let resid: Vec<f64> = cells
        .iter()
        .flat_map(|(k, v)| v.iter().map(move |y| (y, k)))
        .map(|(y, k)| (y - cell_mean[k]).powi(2))
        .collect();
    let ss_e = ordered_sum(&resid);
    let df_e = a * b * (nf - 1.0);
    let ms_e = ss_e / df_e;
    let no_variance = all.iter().all(|&y| y == all[0]);

    let effect = |source: &str, ss: f64, df: f64| -> AnovaRow {
        let ms = ss / df;
        let (f, p) = if no_variance {
            (Some(0.0), Some(1.0))
        } else if ms_e > 0.0 {
            let f = ms / ms_e;
            let dist = FisherSnedecor::new(df, df_e).expect("positive degrees of freedom");
            (Some(f), Some(dist.sf(f)))
        } else if ms > 0.0 {
            (Some(f64::INFINITY), Some(0.0))
        } else {
            (Some(0.0), Some(1.0))
        };
        AnovaRow {
            source: source.into(),
            ss,
            df,
            ms,
            f,
            p,
        }
    };
    if no_variance {
        log::warn!("anova: all observations equal (NoVariance); F = 0, p = 1 reported");
    }
    Ok(AnovaTable {
        rows: vec![
            effect("A", ss_a, a - 1.0),
            effect("B", ss_b, b - 1.0),
            effect("A:B", ss_ab, (a - 1.0) * (b - 1.0)),
            AnovaRow {
                source: "Residual".into(),
                ss: ss_e,
                df: df_e,
                ms: ms_e,
                f: None,
                p: None,
            },
        ],
        no_variance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub p: f64,
    /// Bonferroni over all pairs, capped at 1
    pub p_adjusted: f64,
}

fn paired_t(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "paired groups",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::DegenerateDesign("paired test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = ordered_sum(&d) / n;
    let var = ordered_sum(&d.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
    Ok((t, (2.0 * dist.sf(t.abs())).min(1.0)))
}

/// Paired t-tests between every pair of groups (pairs aligned by position)
/// with Bonferroni correction.
pub fn pairwise_compare(groups: &BTreeMap<String, Vec<f64>>) -> Result<Vec<PairwiseResult>> {
    let names: Vec<&String> = groups.keys().collect();
    let m = names.len() * names.len().saturating_sub(1) / 2;
    let mut out = Vec::with_capacity(m);
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let (t, p) = paired_t(&groups[names[i]], &groups[names[j]])?;
            out.push(PairwiseResult {
                a: names[i].clone(),
                b: names[j].clone(),
                t,
                p,
                p_adjusted: (p * m as f64).min(1.0),
            });
        }
    }
    Ok(out)
}

/// ANOVA observations and paired groups from a grid of experiments: one
/// observation per (model, feature set, subject) = that subject's mean RMSE.
pub fn rmse_design(results: &[&ExperimentResult]) -> (Vec<(String, String, f64)>, BTreeMap<String, Vec<f64>>) {
    let mut obs = Vec::new();
    let mut keyed: BTreeMap<String, BTreeMap<(FeatureSet, String), f64>> = BTreeMap::new();
    for r in results {
        for (s, v) in r.subject_rmse() {
            obs.push((r.model.clone(), r.feature_set.to_string(), v));
            keyed
                .entry(r.model.clone())
                .or_default()
                .insert((r.feature_set, s), v);
        }
    }
    let groups = keyed
        .into_iter()
        .map(|(k, m)| (k, m.into_values().collect()))
        .collect();
    (obs, groups)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub const METRIC_HEADER: [&str; 16] = [
    "protocol",
    "model",
    "feature_set",
    "subject",
    "speed_mps",
    "rmse_bw",
    "nrmse_pct",
    "r",
    "wap_err_bw",
    "pop_err_bw",
    "wap_delay_pct_gc",
    "pop_delay_pct_gc",
    "n_cycles",
    "n_peak_cycles",
    "ref_range_bw",
    "nrmse_x_range_bw",
];

/// Tab-separated metric table, one row per (subject, speed) cell.
pub fn write_metric_table<W: Write>(mut w: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(w, "{}", METRIC_HEADER.join("\t"))?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{:.1}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            r.protocol,
            r.model,
            r.feature_set,
            r.subject,
            r.speed,
            r.rmse,
            r.nrmse,
            opt(r.r),
            opt(r.wap_err),
            opt(r.pop_err),
            opt(r.wap_delay),
            opt(r.pop_delay),
            r.n_cycles,
            r.n_peak_cycles,
            r.ref_range,
            r.nrmse / 100.0 * r.ref_range
        )?;
    }
    Ok(())
}

fn write_mean_std<W: Write>(w: &mut W, key: &str, v: Option<MeanStd>) -> std::io::Result<()> {
    match v {
        Some(m) => writeln!(w, "{key} = {{ mean = {:.6}, std = {:.6} }}", m.mean, m.std),
        None => writeln!(w, "# {key}: not available"),
    }
}

fn write_summary_row<W: Write>(w: &mut W, header: &str, s: &SummaryRow) -> std::io::Result<()> {
    writeln!(w, "\n[{header}]")?;
    writeln!(w, "cells = {}", s.n_cells)?;
    write_mean_std(w, "rmse_bw", Some(s.rmse))?;
    write_mean_std(w, "nrmse_pct", Some(s.nrmse))?;
    write_mean_std(w, "r", s.r)?;
    write_mean_std(w, "wap_err_bw", s.wap_err)?;
    write_mean_std(w, "pop_err_bw", s.pop_err)?;
    write_mean_std(w, "wap_delay_pct_gc", s.wap_delay)?;
    write_mean_std(w, "pop_delay_pct_gc", s.pop_delay)
}

fn fnum(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.9}"),
        Some(x) if x > 0.0 => "inf".into(),
        Some(_) => "-inf".into(),
        None => "nan".into(),
    }
}

/// ANOVA over (model, feature set) and pairwise model comparisons of one
/// protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolStats {
    pub protocol: Protocol,
    pub anova: Option<AnovaTable>,
    pub pairwise: Vec<PairwiseResult>,
}

/// Runs the statistics on every protocol of `results` whose grid allows
/// them: ANOVA needs two models and two feature sets, pairwise tests two
/// models. Designs that cannot be analysed are logged and skipped.
pub fn protocol_stats(results: &[ExperimentResult]) -> Vec<ProtocolStats> {
    let protocols: BTreeSet<Protocol> = results.iter().map(|r| r.protocol).collect();
    let mut out = Vec::new();
    for p in protocols {
        let rs: Vec<&ExperimentResult> = results.iter().filter(|r| r.protocol == p).collect();
        let (obs, groups) = rmse_design(&rs);
        let anova = match anova_two_way(&obs) {
            Ok(t) => Some(t),
            Err(e) => {
                log::info!("{p}: no ANOVA ({e})");
                None
            }
        };
        let pairwise = if groups.len() >= 2 {
            pairwise_compare(&groups).unwrap_or_else(|e| {
                log::info!("{p}: no pairwise tests ({e})");
                Vec::new()
            })
        } else {
            Vec::new()
        };
        if anova.is_some() || !pairwise.is_empty() {
            out.push(ProtocolStats {
                protocol: p,
                anova,
                pairwise,
            });
        }
    }
    out
}

/// Nested key-value (TOML) summary: per-speed and global rows of every
/// experiment, folds, and the statistics when present.
pub fn write_summary<W: Write>(mut w: W, results: &[ExperimentResult], stats: &[ProtocolStats]) -> std::io::Result<()> {
    writeln!(w, "# mean and sample std over (subject, speed) cells")?;
    for r in results {
        let base = format!("{}.{}.{}", r.protocol, r.model, r.feature_set);
        writeln!(w, "\n[{base}]")?;
        writeln!(w, "folds = {}", r.folds.len())?;
        writeln!(w, "test_cycles = {}", r.cycles.len())?;
        for f in &r.folds {
            writeln!(
                w,
                "fold_{} = {{ test_subject = \"{}\", train_windows = {}, test_windows = {}, train_subjects = [{}] }}",
                f.id,
                f.subject,
                f.n_train,
                f.n_test,
                f.train_subjects
                    .iter()
                    .map(|s| format!("\"{s}\""))
                    .collect::<Vec<_>>()
                    .join(", ")
            )?;
        }
        for s in &r.speed_rows {
            let tag = speed_tag(s.speed.unwrap_or_default());
            write_summary_row(&mut w, &format!("{base}.speed_{tag}"), s)?;
        }
        write_summary_row(&mut w, &format!("{base}.global"), &r.global)?;
    }
    for st in stats {
        // response: per-subject mean RMSE (BW)
        if let Some(a) = &st.anova {
            writeln!(w, "\n[anova.{}]", st.protocol)?;
            writeln!(w, "response = \"subject_mean_rmse_bw\"")?;
            writeln!(w, "factor_a = \"model\"\nfactor_b = \"feature_set\"")?;
            writeln!(w, "no_variance = {}", a.no_variance)?;
            for row in &a.rows {
                let key = match row.source.as_str() {
                    "A" => "model",
                    "B" => "feature_set",
                    "A:B" => "interaction",
                    _ => "residual",
                };
                writeln!(
                    w,
                    "{key} = {{ ss = {}, df = {}, ms = {}, f = {}, p = {} }}",
                    fnum(Some(row.ss)),
                    row.df,
                    fnum(Some(row.ms)),
                    fnum(row.f),
                    fnum(row.p)
                )?;
            }
        }
        if !st.pairwise.is_empty() {
            writeln!(w, "\n[pairwise.{}]", st.protocol)?;
            writeln!(w, "correction = \"bonferroni\"")?;
            for p in &st.pairwise {
                writeln!(
                    w,
                    "{}_vs_{} = {{ t = {}, p = {}, p_adjusted = {} }}",
                    p.a,
                    p.b,
                    fnum(Some(p.t)),
                    fnum(Some(p.p)),
                    fnum(Some(p.p_adjusted))
                )?;
            }
        }
    }
    Ok(())
}

pub const TRACE_HEADER: &str = "subject\tspeed_mps\tfoot\tcycle\tfold\tvalid_length\tsample\treference_bw\testimate_bw";

/// One row per sample of every evaluated cycle.
pub fn write_cycle_traces<W: Write>(mut w: W, result: &ExperimentResult) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for c in &result.cycles {
        for (i, (r, e)) in c.reference.iter().zip(&c.estimate).enumerate() {
            writeln!(
                w,
                "{}\t{:.1}\t{}\t{}\t{}\t{}\t{i}\t{r:.6}\t{e:.6}",
                c.subject_id,
                c.speed,
                c.foot,
                c.cycle_index,
                c.fold,
                c.reference.len()
            )?;
        }
    }
    Ok(())
}

/// Reference and estimate of one cycle read back from a trace dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCycle {
    pub subject_id: String,
    pub speed: f64,
    pub foot: String,
    pub cycle_index: u32,
    pub reference: Vec<f64>,
    pub estimate: Vec<f64>,
}

/// Parses the output of [`write_cycle_traces`].
pub fn read_cycle_traces(text: &str, path: &std::path::Path) -> Result<Vec<TraceCycle>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::parse(path, "unexpected trace header"));
    }
    let mut out: Vec<TraceCycle> = Vec::new();
    let mut last_key: Option<(String, String, String, String, String)> = None;
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", n + 2));
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let key = (f[0].to_string(), f[1].to_string(), f[2].to_string(), f[3].to_string(), f[4].to_string());
        if last_key.as_ref() != Some(&key) {
            out.push(TraceCycle {
                subject_id: f[0].to_string(),
                speed: num(f[1])?,
                foot: f[2].to_string(),
                cycle_index: f[3].parse().map_err(|_| bad("bad cycle index"))?,
                reference: Vec::new(),
                estimate: Vec::new(),
            });
            last_key = Some(key);
        }
        let c = out.last_mut().unwrap();
        c.reference.push(num(f[7])?);
        c.estimate.push(num(f[8])?);
    }
    Ok(out)
}

pub const PEAK_HEADER: &str = "subject\tspeed_mps\tfoot\tcycle\tref_wap_bw\tref_wap_gc\test_wap_bw\test_wap_gc\tref_pop_bw\tref_pop_gc\test_pop_bw\test_pop_gc\twap_delay_pct_gc\tpop_delay_pct_gc";

/// Peak table with signed delays; cycles without peaks in either signal
/// show `NA`.
pub fn write_peak_table<W: Write>(mut w: W, result: &ExperimentResult) -> std::io::Result<()> {
    writeln!(w, "{PEAK_HEADER}")?;
    for c in &result.cycles {
        write!(w, "{}\t{:.1}\t{}\t{}", c.subject_id, c.speed, c.foot, c.cycle_index)?;
        match (&c.ref_peaks, &c.est_peaks, &c.peak_errors) {
            (Some(a), Some(b), Some(e)) => writeln!(
                w,
                "\t{:.6}\t{:.4}\t{:.6}\t{:.4}\t{:.6}\t{:.4}\t{:.6}\t{:.4}\t{:.4}\t{:.4}",
                a.wap_value,
                a.wap_time,
                b.wap_value,
                b.wap_time,
                a.pop_value,
                a.pop_time,
                b.pop_value,
                b.pop_time,
                e.wap_delay,
                e.pop_delay
            )?,
            _ => writeln!(w, "{}", "\tNA".repeat(10))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::WINDOW_LEN;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn rmse_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[], &[]), Err(Error::Empty)));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn nrmse_examples() {
        let r = [0.0, 2.0, 1.0, 0.5];
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        let e: Vec<f64> = r.iter().map(|v| v + 0.1).collect();
        assert!((nrmse(&r, &e).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(nrmse(&[1.0; 4], &[1.0; 4]), Err(Error::ZeroRange)));
    }

    #[test]
    fn pearson_examples() {
        let r = [0.1, 0.9, 0.4, 1.3, 0.0];
        assert!((pearson_r(&r, &r).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((pearson_r(&r, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson_r(&r, &[2.0; 5]), Err(Error::ConstantSeries)));
    }

    #[test]
    fn metrics_agree_with_textbook_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(2..60);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let nf = n as f64;
            let mut se = 0.0;
            for i in 0..n {
                se += (a[i] - b[i]).powi(2);
            }
            let e = (se / nf).sqrt();
            assert!((rmse(&a, &b).unwrap() - e).abs() < 1e-12);
            let mut lo = a[0];
            let mut hi = a[0];
            for &x in &a {
                lo = if x < lo { x } else { lo };
                hi = if x > hi { x } else { hi };
            }
            assert!((nrmse(&a, &b).unwrap() - e / (hi - lo) * 100.0).abs() < 1e-12);
            // raw-moment form
            let (sx, sy): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let sxy: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let sxx: f64 = a.iter().map(|x| x * x).sum();
            let syy: f64 = b.iter().map(|y| y * y).sum();
            let r = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
            assert!((pearson_r(&a, &b).unwrap() - r).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rmse_homogeneous(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40), c in -10.0f64..10.0) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let base = rmse(&a, &b).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| c * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| c * x).collect();
            prop_assert!((rmse(&sa, &sb).unwrap() - c.abs() * base).abs() <= 1e-12 * (1.0 + base * c.abs()));
        }
    }

    fn window(subject: &str, speed: f64, foot: FootSide, k: u32, y: Vec<f64>, valid: usize) -> GaitCycleWindow {
        let c = FeatureSet::T3.channel_count();
        GaitCycleWindow {
            subject_id: subject.into(),
            speed,
            foot,
            cycle_index: k,
            x: (0..c * WINDOW_LEN).map(|i| (i % 17) as f64).collect(),
            y,
            valid_length: valid,
        }
    }

    fn bump(valid: usize, amp: f64) -> Vec<f64> {
        let stance = valid * 6 / 10;
        (0..WINDOW_LEN)
            .map(|t| {
                if t < stance {
                    let p = t as f64 / stance as f64;
                    amp * (std::f64::consts::PI * p).sin() * (1.0 + 0.3 * (3.0 * std::f64::consts::PI * p).sin().abs())
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn toy_set(subjects: usize, per_cell: usize) -> WindowSet {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut windows = Vec::new();
        for s in 0..subjects {
            for &sp in &[0.7, 1.0, 1.4] {
                for k in 0..per_cell {
                    let valid = rng.gen_range(100..130);
                    let foot = if k % 2 == 0 { FootSide::Left } else { FootSide::Right };
                    windows.push(window(
                        &format!("S{:02}", s + 1),
                        sp,
                        foot,
                        k as u32,
                        bump(valid, rng.gen_range(1.0..1.3)),
                        valid,
                    ));
                }
            }
        }
        WindowSet {
            manifest: ChannelManifest::for_feature_set(FeatureSet::T3),
            windows,
        }
    }

    #[test]
    fn inter_split_leaves_one_subject_out() {
        let set = toy_set(8, 4);
        let plan = make_split(&set.windows, Protocol::Inter, 1).unwrap();
        assert_eq!(plan.folds.len(), 8);
        plan.verify(&set.windows).unwrap();
        let tested: BTreeSet<&str> = plan.folds.iter().map(|f| f.subject.as_str()).collect();
        assert_eq!(tested.len(), 8);
        for f in &plan.folds {
            assert!(f.train.iter().all(|&i| set.windows[i].subject_id != f.subject));
            assert!(f.test.iter().all(|&i| set.windows[i].subject_id == f.subject));
            assert_eq!(f.train.len() + f.test.len(), set.windows.len());
        }
        assert!(matches!(
            make_split(&set.windows[..12], Protocol::Inter, 1),
            Err(Error::TooFewSubjects { .. })
        ));
    }

    #[test]
    fn intra_split_counts() {
        let mut set = toy_set(2, 100);
        set.windows.truncate(100);
        let plan = make_split(&set.windows, Protocol::Intra, 3).unwrap();
        assert_eq!(plan.folds.len(), 1);
        assert_eq!(plan.folds[0].train.len(), 70);
        assert_eq!(plan.folds[0].test.len(), 30);
        assert_eq!(plan, make_split(&set.windows, Protocol::Intra, 3).unwrap());
        assert_ne!(plan, make_split(&set.windows, Protocol::Intra, 4).unwrap());
    }

    proptest! {
        #[test]
        fn intra_split_is_seventy_thirty_per_cell(per_cell in 1usize..40, seed in 0u64..1000) {
            let set = toy_set(3, per_cell);
            let plan = make_split(&set.windows, Protocol::Intra, seed).unwrap();
            plan.verify(&set.windows).unwrap();
            for f in &plan.folds {
                for sp in [0.7, 1.0, 1.4] {
                    let count = |v: &[usize]| v.iter().filter(|&&i| set.windows[i].speed == sp).count();
                    let (tr, te) = (count(&f.train), count(&f.test));
                    prop_assert_eq!(tr + te, per_cell);
                    let target = 0.7 * per_cell as f64;
                    prop_assert!(tr as f64 >= target - 1e-9 && (tr as f64) < target + 1.0);
                }
                prop_assert!(f.train.iter().chain(&f.test).all(|&i| set.windows[i].subject_id == f.subject));
            }
        }
    }

    #[test]
    fn verify_rejects_leaky_plan() {
        let set = toy_set(3, 2);
        let mut plan = make_split(&set.windows, Protocol::Inter, 0).unwrap();
        let leak = plan.folds[0].test[0];
        plan.folds[0].train.push(leak);
        assert!(plan.verify(&set.windows).is_err());
    }

    #[test]
    fn oracle_is_perfect() {
        let set = toy_set(3, 6);
        for protocol in [Protocol::Intra, Protocol::Inter] {
            let plan = make_split(&set.windows, protocol, 0).unwrap();
            let res = run_experiment(&set, &plan, &Predictor::Oracle, FeatureSet::T3, &ExperimentOptions::default()).unwrap();
            for r in &res.rows {
                assert_eq!(r.rmse, 0.0);
                assert_eq!(r.r, Some(1.0));
                assert_eq!(r.wap_delay, Some(0.0));
            }
            assert_eq!(res.global.rmse.mean, 0.0);
        }
    }

    #[test]
    fn constant_predictor_matches_brute_force() {
        let set = toy_set(3, 6);
        let plan = make_split(&set.windows, Protocol::Intra, 5).unwrap();
        let res = run_experiment(&set, &plan, &Predictor::Constant(0.5), FeatureSet::T2, &ExperimentOptions::default())
            .unwrap();
        for row in &res.rows {
            let (mut ss, mut n) = (0.0, 0usize);
            for f in &plan.folds {
                for &i in &f.test {
                    let w = &set.windows[i];
                    if w.subject_id == row.subject && w.speed == row.speed {
                        for v in &w.y[..w.valid_length] {
                            ss += (v - 0.5) * (v - 0.5);
                            n += 1;
                        }
                    }
                }
            }
            assert!((row.rmse - (ss / n as f64).sqrt()).abs() < 1e-12);
            assert!((row.nrmse / 100.0 * row.ref_range - row.rmse).abs() < 1e-12);
            assert_eq!(row.r, None);
        }
        // equal subject counts per speed: mean of speed rows == global
        let m: f64 = res.speed_rows.iter().map(|s| s.rmse.mean).sum::<f64>() / res.speed_rows.len() as f64;
        assert!((m - res.global.rmse.mean).abs() < 1e-12);
    }

    #[test]
    fn only_pointwise_models_are_smoothed() {
        use crate::models::{ModelConfig, ModelKind};
        let x: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let lstm = Predictor::Model(Box::new(ModelConfig {
            kind: ModelKind::Lstm,
            ..ModelConfig::default()
        }));
        assert_eq!(postprocess(&lstm, &x).unwrap(), x);
        assert_eq!(postprocess(&Predictor::Oracle, &x).unwrap(), x);
        for kind in [ModelKind::Mlp, ModelKind::Rf] {
            let p = Predictor::Model(Box::new(ModelConfig {
                kind,
                ..ModelConfig::default()
            }));
            assert_eq!(postprocess(&p, &x).unwrap(), smooth_estimate(&x).unwrap());
        }
    }

    fn textbook() -> Vec<(String, String, f64)> {
        let data = [
            ("a1", "b1", [4.1, 5.3, 6.0]),
            ("a1", "b2", [6.2, 7.9, 7.1]),
            ("a2", "b1", [5.0, 5.8, 4.4]),
            ("a2", "b2", [9.3, 8.8, 10.1]),
        ];
        data.iter()
            .flat_map(|(a, b, v)| v.iter().map(move |y| (a.to_string(), b.to_string(), *y)))
            .collect()
    }

    #[test]
    fn anova_matches_reference_table() {
        // reference: statsmodels ols('y ~ C(A)*C(B)') + anova_lm
        let t = anova_two_way(&textbook()).unwrap();
        let expect = [
            (3.853333333333345, 1.0, 5.997405966277581, 0.04000154772957516),
            (29.453333333333376, 1.0, 45.84176394293134, 0.00014201717509734733),
            (4.320000000000006, 1.0, 6.723735408560322, 0.03196286676549195),
        ];
        for (row, (ss, df, f, p)) in t.rows.iter().zip(expect) {
            assert!((row.ss - ss).abs() < 1e-9, "{} ss {}", row.source, row.ss);
            assert_eq!(row.df, df);
            assert!((row.f.unwrap() - f).abs() < 1e-9, "{} F {:?}", row.source, row.f);
            assert!((row.p.unwrap() - p).abs() < 1e-9, "{} p {:?}", row.source, row.p);
        }
        assert!((t.rows[3].ss - 5.139999999999999).abs() < 1e-9);
        assert_eq!(t.rows[3].df, 8.0);
    }

    #[test]
    fn anova_all_equal_reports_no_variance() {
        let obs: Vec<(String, String, f64)> = textbook().into_iter().map(|(a, b, _)| (a, b, 0.3)).collect();
        let t = anova_two_way(&obs).unwrap();
        assert!(t.no_variance);
        for r in &t.rows[..3] {
            assert_eq!((r.f, r.p), (Some(0.0), Some(1.0)));
        }
    }

    #[test]
    fn anova_rejects_degenerate_designs() {
        let mut obs = textbook();
        obs.pop();
        assert!(matches!(anova_two_way(&obs), Err(Error::DegenerateDesign(_))));
        let one: Vec<_> = textbook().into_iter().filter(|o| o.0 == "a1").collect();
        assert!(matches!(anova_two_way(&one), Err(Error::DegenerateDesign(_))));
    }

    proptest! {
        #[test]
        fn anova_order_invariant(seed in 0u64..500) {
            let mut obs = textbook();
            let base = anova_two_way(&obs).unwrap();
            obs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(anova_two_way(&obs).unwrap(), base);
        }
    }

    #[test]
    fn paired_t_matches_reference() {
        // reference: scipy.stats.ttest_rel
        let a = vec![0.031, 0.042, 0.028, 0.05, 0.037, 0.045];
        let b = vec![0.035, 0.047, 0.027, 0.058, 0.041, 0.049];
        let (t, p) = paired_t(&a, &b).unwrap();
        assert!((t + 3.3806170189140667).abs() < 1e-9);
        assert!((p - 0.019660976348717944).abs() < 1e-9);
        let mut g = BTreeMap::new();
        g.insert("lstm".to_string(), a.clone());
        g.insert("mlp".to_string(), b.clone());
        g.insert("rf".to_string(), b.iter().map(|v| v * 1.01).collect());
        let res = pairwise_compare(&g).unwrap();
        assert_eq!(res.len(), 3);
        assert!((res[0].p_adjusted - 3.0 * p).abs() < 1e-12);
        assert!(res.iter().all(|r| r.p_adjusted <= 1.0));
    }

    proptest! {
        #[test]
        fn pairwise_order_invariant(vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 3..12), seed in 0u64..100) {
            let mk = |v: &[(f64, f64, f64)]| {
                let mut g = BTreeMap::new();
                g.insert("a".to_string(), v.iter().map(|x| x.0).collect::<Vec<_>>());
                g.insert("b".to_string(), v.iter().map(|x| x.1).collect());
                g.insert("c".to_string(), v.iter().map(|x| x.2).collect());
                g
            };
            let base = pairwise_compare(&mk(&vals)).unwrap();
            let mut perm = vals.clone();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(pairwise_compare(&mk(&perm)).unwrap(), base);
        }
    }

    #[test]
    fn metric_table_header_and_invariant() {
        let set = toy_set(2, 4);
        let plan = make_split(&set.windows, Protocol::Intra, 0).unwrap();
        let res = run_experiment(&set, &plan, &Predictor::Constant(0.4), FeatureSet::T1, &ExperimentOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        write_metric_table(&mut buf, &res.rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRIC_HEADER.join("\t"));
        for (line, row) in lines.zip(&res.rows) {
            assert_eq!(line.split('\t').count(), METRIC_HEADER.len());
            assert!((row.nrmse / 100.0 * row.ref_range - row.rmse).abs() < 1e-12);
        }
        let mut s = Vec::new();
        write_summary(&mut s, &[res], &[]).unwrap();
        let parsed: toml::Value = toml::from_str(&String::from_utf8(s).unwrap()).unwrap();
        assert!(parsed["intra"]["constant"]["T1"]["global"]["rmse_bw"]["mean"].as_float().is_some());
    }
}
