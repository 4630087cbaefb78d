//! CSV series for plotting, one file per figure intent.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use netcarto_core::metrics::RocPoint;

use crate::csvio::format_matrix_csv;

#[derive(Debug, Clone, PartialEq)]
pub enum PlotSeries {
    /// Mean NRE per observed-link count.
    NreVsS(Vec<(usize, f64)>),
    Roc(Vec<RocPoint>),
    /// Consensus residual per round.
    ConsensusTrace(Vec<f64>),
    /// Paths x time, true and predicted.
    DelayHeatmap { truth: DMatrix<f64>, predicted: DMatrix<f64> },
}

impl PlotSeries {
    pub fn key(&self) -> &'static str {
        match self {
            PlotSeries::NreVsS(_) => "nre_vs_S",
            PlotSeries::Roc(_) => "roc",
            PlotSeries::ConsensusTrace(_) => "consensus_trace",
            PlotSeries::DelayHeatmap { .. } => "delay_heatmap",
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            PlotSeries::NreVsS(v) => v.is_empty(),
            PlotSeries::Roc(v) => v.is_empty(),
            PlotSeries::ConsensusTrace(v) => v.is_empty(),
            PlotSeries::DelayHeatmap { truth, .. } => truth.is_empty(),
        }
    }
}

fn table(header: &str, mut rows: Vec<((f64, f64), String)>) -> String {
    rows.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    let mut out = format!("{header}\n");
    for (_, line) in rows {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Renders the series as `(file name, contents)` pairs.
pub fn render(series: &PlotSeries) -> Result<Vec<(String, String)>> {
    if series.is_empty() {
        bail!("cannot emit {}: empty series", series.key());
    }
    let key = series.key();
    Ok(match series {
        PlotSeries::NreVsS(points) => {
            vec![(format!("{key}.csv"), table("S,nre", points.iter().map(|&(s, v)| ((s as f64, 0.0), format!("{s},{v:?}"))).collect()))]
        }
        PlotSeries::Roc(points) => {
            let rows = points.iter().map(|p| ((p.fpr, p.tpr), format!("{:?},{:?},{:?}", p.fpr, p.tpr, p.threshold))).collect();
            vec![(format!("{key}.csv"), table("fpr,tpr,threshold", rows))]
        }
        PlotSeries::ConsensusTrace(values) => {
            let rows = values.iter().enumerate().map(|(k, v)| ((k as f64, 0.0), format!("{},{v:?}", k + 1))).collect();
            vec![(format!("{key}.csv"), table("round,residual", rows))]
        }
        PlotSeries::DelayHeatmap { truth, predicted } => {
            if truth.shape() != predicted.shape() {
                bail!("delay heatmap: truth is {:?} but prediction is {:?}", truth.shape(), predicted.shape());
            }
            vec![
                (format!("{key}_true.csv"), format_matrix_csv(truth, None)),
                (format!("{key}_predicted.csv"), format_matrix_csv(predicted, None)),
            ]
        }
    })
}

/// Writes the series into `dir` and returns the created paths.
pub fn emit_plot_data(dir: &Path, series: &PlotSeries) -> Result<Vec<PathBuf>> {
    let files = render(series)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    files
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}
