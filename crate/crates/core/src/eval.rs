//! Dice scoring and fold-wise aggregation.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::BinaryMask;
use crate::error::Result;
use crate::flags::{push_unique, Flag};
use crate::pipeline::{CaseRun, Diagnostics};
use crate::scalar::Scalar;

/// `2|a ∩ b| / (|a| + |b|)`, with two empty masks scoring 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Mean and population standard deviation.
pub fn moments(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub id: String,
    pub organ: String,
    pub fold: u32,
    pub dice: Option<f64>,
    pub coarse_dice: Option<f64>,
    pub flags: Vec<Flag>,
    pub error: Option<String>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrganSummary {
    pub organ: String,
    pub cases: usize,
    /// Mean Dice per fold.
    pub fold_means: BTreeMap<u32, f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overall {
    pub fold_means: BTreeMap<u32, f64>,
    /// Mean of the organ means.
    pub mean: f64,
    /// Population std of the per-fold means (averaged over organs).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub both_empty_dice: f64,
    pub aggregation: &'static str,
    pub std: &'static str,
}

impl Default for ReportMeta {
    fn default() -> Self {
        Self {
            both_empty_dice: 1.0,
            aggregation: "case dice -> mean per (organ, fold) -> moments across folds",
            std: "population",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub organs: Vec<OrganSummary>,
    pub overall: Overall,
    pub failed: usize,
    pub skipped: usize,
    pub flags: Vec<Flag>,
    pub cases: Vec<CaseRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per organ plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let folds: Vec<u32> = self.overall.fold_means.keys().copied().collect();
        let mut out = String::from("organ,cases,mean,std");
        folds.iter().for_each(|f| out.push_str(&format!(",fold{f}")));
        out.push('\n');
        let fmt = |v: Option<&f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for o in &self.organs {
            out.push_str(&format!("{},{},{:.6},{:.6}", o.organ, o.cases, o.mean, o.std));
            folds
                .iter()
                .for_each(|f| out.push_str(&format!(",{}", fmt(o.fold_means.get(f)))));
            out.push('\n');
        }
        let cases: usize = self.organs.iter().map(|o| o.cases).sum();
        out.push_str(&format!(
            "mean,{},{:.6},{:.6}",
            cases, self.overall.mean, self.overall.std
        ));
        folds
            .iter()
            .for_each(|f| out.push_str(&format!(",{}", fmt(self.overall.fold_means.get(f)))));
        out.push('\n');
        out
    }
}

pub fn record<T: Scalar>(run: &CaseRun<T>) -> CaseRecord {
    let mut rec = CaseRecord {
        id: run.meta.id.clone(),
        organ: run.meta.organ.clone(),
        fold: run.meta.fold,
        dice: None,
        coarse_dice: None,
        flags: Vec::new(),
        error: None,
        diagnostics: None,
    };
    match &run.result {
        Err(e) => rec.error = Some(format!("{}: {e}", e.kind())),
        Ok(out) => {
            rec.flags = out.diagnostics.flags.clone();
            rec.diagnostics = Some(out.diagnostics.clone());
            match &run.ground_truth {
                None => push_unique(&mut rec.flags, Flag::MissingGroundTruth),
                Some(gt) => match (dice(&out.final_mask, gt), dice(&out.coarse, gt)) {
                    (Ok(d), Ok(c)) => {
                        if out.final_mask.is_empty() && gt.is_empty() {
                            push_unique(&mut rec.flags, Flag::BothEmptyDice);
                        }
                        rec.dice = Some(d);
                        rec.coarse_dice = Some(c);
                    }
                    (Err(e), _) | (_, Err(e)) => rec.error = Some(format!("{}: {e}", e.kind())),
                },
            }
        }
    }
    rec
}

/// Aggregates per-case records into organ and overall fold statistics.
pub fn summarize(cases: Vec<CaseRecord>) -> EvalReport {
    let mut by_organ: BTreeMap<&str, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for c in &cases {
        if let Some(d) = c.dice {
            by_organ.entry(&c.organ).or_default().entry(c.fold).or_default().push(d);
        }
    }
    let organs: Vec<OrganSummary> = by_organ
        .iter()
        .map(|(organ, folds)| {
            let fold_means: BTreeMap<u32, f64> = folds.iter().map(|(&f, v)| (f, moments(v).0)).collect();
            let (mean, std) = moments(&fold_means.values().copied().collect::<Vec<_>>());
            OrganSummary {
                organ: organ.to_string(),
                cases: folds.values().map(Vec::len).sum(),
                fold_means,
                mean,
                std,
            }
        })
        .collect();

    let mut per_fold: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for o in &organs {
        o.fold_means
            .iter()
            .for_each(|(&f, &m)| per_fold.entry(f).or_default().push(m));
    }
    let fold_means: BTreeMap<u32, f64> = per_fold.iter().map(|(&f, v)| (f, moments(v).0)).collect();
    let std = moments(&fold_means.values().copied().collect::<Vec<_>>()).1;
    let mean = moments(&organs.iter().map(|o| o.mean).collect::<Vec<_>>()).0;

    let mut flags = Vec::new();
    if fold_means.len() == 1 {
        flags.push(Flag::SingleFold);
    }
    EvalReport {
        meta: ReportMeta::default(),
        failed: cases.iter().filter(|c| c.error.is_some()).count(),
        skipped: cases.iter().filter(|c| c.error.is_none() && c.dice.is_none()).count(),
        organs,
        overall: Overall { fold_means, mean, std },
        flags,
        cases,
    }
}

pub fn evaluate<T: Scalar>(runs: &[CaseRun<T>]) -> EvalReport {
    summarize(runs.iter().map(record).collect())
}

/// Mean final Dice over cases that produced one; failed cases count as 0.
pub fn mean_dice<T: Scalar>(runs: &[CaseRun<T>]) -> f64 {
    let scores: Vec<f64> = runs
        .iter()
        .filter_map(|r| match &r.result {
            Err(_) => Some(0.0),
            Ok(out) => r
                .ground_truth
                .as_ref()
                .map(|gt| dice(&out.final_mask, gt).unwrap_or(0.0)),
        })
        .collect();
    moments(&scores).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(n: usize, on: impl Fn(usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(1, n, |_, c| on(c))
    }

    #[test]
    fn dice_examples() {
        let a = mask_with(200, |c| c < 100);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask_with(200, |c| c >= 100)).unwrap(), 0.0);
        assert_eq!(dice(&a, &mask_with(200, |c| (50..150).contains(&c))).unwrap(), 0.5);
        assert_eq!(dice(&BinaryMask::new(1, 4), &BinaryMask::new(1, 4)).unwrap(), 1.0);
        assert!(dice(&a, &BinaryMask::new(2, 100)).is_err());
    }

    fn rec(organ: &str, fold: u32, d: f64) -> CaseRecord {
        CaseRecord {
            id: format!("{organ}-{fold}-{d}"),
            organ: organ.into(),
            fold,
            dice: Some(d),
            coarse_dice: Some(d),
            flags: vec![],
            error: None,
            diagnostics: None,
        }
    }

    #[test]
    fn two_fold_moments() {
        let r = summarize(vec![rec("liver", 0, 0.6), rec("liver", 1, 0.8)]);
        assert!((r.organs[0].mean - 0.7).abs() < 1e-15);
        assert!((r.organs[0].std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_and_single_fold() {
        let r = summarize(vec![rec("liver", 0, 1.0), rec("liver", 0, 1.0), rec("spleen", 0, 1.0)]);
        assert!(r.organs.iter().all(|o| o.mean == 1.0 && o.std == 0.0));
        assert_eq!(r.flags, vec![Flag::SingleFold]);
        assert_eq!(r.overall.mean, 1.0);
    }

    #[test]
    fn fold_means_precede_moments() {
        // Fold 0 has two cases (0.2, 0.4 -> 0.3), fold 1 one case (0.9).
        let r = summarize(vec![rec("rk", 0, 0.2), rec("rk", 0, 0.4), rec("rk", 1, 0.9)]);
        assert!((r.organs[0].mean - 0.6).abs() < 1e-15);
        assert!((r.organs[0].std - 0.3).abs() < 1e-15);
        assert!(r
            .to_csv()
            .starts_with("organ,cases,mean,std,fold0,fold1\nrk,3,0.600000,0.300000"));
    }
}
