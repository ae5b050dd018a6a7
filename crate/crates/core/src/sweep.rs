//! Negative-band sweep over `alpha` with `beta = alpha - 1.5`.

use serde::Serialize;

use crate::config::{PipelineConfig, Preset};
use crate::data::CaseInputs;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::pipeline::{run_all, CaseMeta};
use crate::scalar::Scalar;
use crate::segmenter::Segmenter;

pub const BAND_WIDTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub mean_dice: f64,
    pub std: f64,
    pub failed: usize,
}

pub fn sweep_alpha<T, L>(
    metas: &[CaseMeta],
    load: L,
    cfg: &PipelineConfig,
    segmenter: &dyn Segmenter,
    alphas: &[f64],
    workers: usize,
) -> Result<Vec<SweepRow>>
where
    T: Scalar,
    L: Fn(usize) -> Result<CaseInputs<T>> + Sync,
{
    if alphas.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let mut c = cfg.with_preset(Preset::Custom);
            c.selection.alpha = alpha;
            c.selection.beta = alpha - BAND_WIDTH;
            let report = evaluate(&run_all(metas, &load, &c, segmenter, workers)?);
            Ok(SweepRow {
                alpha,
                beta: c.selection.beta,
                mean_dice: report.overall.mean,
                std: report.overall.std,
                failed: report.failed,
            })
        })
        .collect()
}

/// Index of the first row with the highest mean Dice.
pub fn argmax(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, b)) if b >= r.mean_dice => best,
            _ => Some((i, r.mean_dice)),
        })
        .map(|(i, _)| i)
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,beta,mean_dice,std,failed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.alpha, r.beta, r.mean_dice, r.std, r.failed
        ));
    }
    out
}

/// Line chart of mean Dice against alpha.
pub fn to_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.alpha), hi.max(r.alpha))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |a: f64| PAD + (a - lo) / span * (W - 2.0 * PAD);
    let y = |d: f64| H - PAD - d.clamp(0.0, 1.0) * (H - 2.0 * PAD);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    svg.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    for t in 0..=5 {
        let d = t as f64 / 5.0;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1:.1}\" x2=\"{2}\" y2=\"{1:.1}\" stroke=\"#ddd\"/><text x=\"{3}\" y=\"{4:.1}\" text-anchor=\"end\">{d:.1}</text>\n",
            PAD,
            y(d),
            W - PAD,
            PAD - 6.0,
            y(d) + 4.0
        ));
    }
    for r in rows {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x(r.alpha),
            H - PAD + 16.0,
            r.alpha
        ));
    }
    let points: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.1},{:.1}", x(r.alpha), y(r.mean_dice)))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    for r in rows {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#1f77b4\"/>\n",
            x(r.alpha),
            y(r.mean_dice)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">alpha (beta = alpha - 1.5)</text>\n<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">mean Dice</text>\n</svg>\n",
        W / 2.0,
        H - 10.0,
        H / 2.0,
        H / 2.0
    ));
    svg
}
