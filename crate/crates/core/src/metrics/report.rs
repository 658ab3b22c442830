use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ActivationMatrix, SourceTag};
use crate::error::{Error, Result};
use crate::numerics::mean_stderr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SemiMatch,
    SoftMatch,
    Ridge,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::SemiMatch, Metric::SoftMatch, Metric::Ridge];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SemiMatch => "semi_match",
            Metric::SoftMatch => "soft_match",
            Metric::Ridge => "ridge",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "semi_match" => Ok(Metric::SemiMatch),
            "soft_match" => Ok(Metric::SoftMatch),
            "ridge" => Ok(Metric::Ridge),
            other => Err(Error::Config(format!(
                "unknown metric `{other}` (expected semi_match, soft_match or ridge)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub experiment_id: String,
    pub metric: Metric,
    pub source_tag: SourceTag,
    pub target_tag: SourceTag,
    pub per_fold_scores: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    /// Ridge penalty chosen per fold; `None` for matching metrics.
    pub alpha_selected: Vec<Option<f64>>,
    pub pruned_src: usize,
    pub pruned_tgt: usize,
}

impl AlignmentReport {
    pub fn new(
        metric: Metric,
        source_tag: SourceTag,
        target_tag: SourceTag,
        per_fold_scores: Vec<f64>,
        alpha_selected: Vec<Option<f64>>,
        pruned: (usize, usize),
    ) -> Self {
        let (mean, stderr) = mean_stderr(&per_fold_scores);
        Self {
            experiment_id: String::new(),
            metric,
            source_tag,
            target_tag,
            per_fold_scores,
            mean,
            stderr,
            alpha_selected,
            pruned_src: pruned.0,
            pruned_tgt: pruned.1,
        }
    }

    pub(crate) fn from_matching(metric: Metric, a: &ActivationMatrix, b: &ActivationMatrix, scores: Vec<f64>) -> Self {
        let alphas = vec![None; scores.len()];
        Self::new(metric, a.source_tag, b.source_tag, scores, alphas, (a.pruned, b.pruned))
    }

    pub fn with_experiment(mut self, id: impl Into<String>) -> Self {
        self.experiment_id = id.into();
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    experiment_id: String,
    metric: Metric,
    source_tag: SourceTag,
    target_tag: SourceTag,
    fold: usize,
    score: f64,
    alpha_selected: Option<f64>,
    pruned_src: usize,
    pruned_tgt: usize,
}

/// One CSV row per fold of every report.
pub fn write_reports_csv<W: Write>(reports: &[AlignmentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for (fold, (&score, &alpha)) in r.per_fold_scores.iter().zip(&r.alpha_selected).enumerate() {
            w.serialize(CsvRow {
                experiment_id: r.experiment_id.clone(),
                metric: r.metric,
                source_tag: r.source_tag,
                target_tag: r.target_tag,
                fold,
                score,
                alpha_selected: alpha,
                pruned_src: r.pruned_src,
                pruned_tgt: r.pruned_tgt,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Regroups per-fold rows into reports, in order of first appearance.
pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<AlignmentReport>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out: Vec<AlignmentReport> = Vec::new();
    for row in rd.deserialize() {
        let row: CsvRow = row?;
        let key = (&row.experiment_id, row.metric, row.source_tag, row.target_tag);
        let existing = out
            .iter_mut()
            .find(|r| (&r.experiment_id, r.metric, r.source_tag, r.target_tag) == key);
        let report = match existing {
            Some(r) => r,
            None => {
                out.push(
                    AlignmentReport::new(
                        row.metric,
                        row.source_tag,
                        row.target_tag,
                        Vec::new(),
                        Vec::new(),
                        (row.pruned_src, row.pruned_tgt),
                    )
                    .with_experiment(row.experiment_id.clone()),
                );
                out.last_mut().expect("just pushed")
            }
        };
        if row.fold != report.per_fold_scores.len() {
            return Err(Error::Format(format!(
                "report {}/{}: fold {} out of order",
                row.experiment_id, row.metric, row.fold
            )));
        }
        report.per_fold_scores.push(row.score);
        report.alpha_selected.push(row.alpha_selected);
    }
    for r in &mut out {
        let (mean, stderr) = mean_stderr(&r.per_fold_scores);
        r.mean = mean;
        r.stderr = stderr;
    }
    Ok(out)
}
