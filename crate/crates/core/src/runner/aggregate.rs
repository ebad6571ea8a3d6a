//! Pure fold from run records to summary and taxonomy reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_records, RunError, RunRecord, RECORDS_FILE};
use crate::metrics::{prf, ErrorLabel};
use crate::tasks::Setting;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub task_type: String,
    pub strategy: String,
    pub version: u8,
    pub metrics: BTreeMap<String, Stat>,
    /// Counts pooled over the group's single-step records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled: Option<Pooled>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyRow {
    pub setting: Setting,
    pub strategy: String,
    pub version: u8,
    pub cove: bool,
    pub records: usize,
    pub provider_errors: usize,
    pub invalid: usize,
    pub invalid_rate: f64,
    pub retrieval_errors: usize,
    /// Wrong retrievals among executable queries.
    pub retrieval_error_rate: f64,
    /// Share of retrieval errors the validator never flagged (CoVe runs only).
    pub non_detected_rate: Option<f64>,
    pub labels: BTreeMap<ErrorLabel, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Vec<SummaryGroup>,
    pub taxonomy: Vec<TaxonomyRow>,
}

fn record_metrics(r: &RunRecord) -> Vec<(&'static str, f64)> {
    let mut m = vec![
        ("bleu", r.eval.text.bleu),
        ("meteor", r.eval.text.meteor),
        ("rouge_l", r.eval.text.rouge_l),
        ("executable", if r.eval.execution.executable { 1.0 } else { 0.0 }),
    ];
    if let Some(s) = &r.eval.retrieval {
        m.extend([("precision", s.precision), ("recall", s.recall), ("f1", s.f1)]);
    }
    if let Some(p) = &r.eval.paths {
        m.extend([
            ("exact_precision", p.precision),
            ("exact_recall", p.recall),
            ("exact_f1", p.f1),
            ("ppr", p.ppr),
        ]);
    }
    m
}

pub fn aggregate_records(records: &[RunRecord]) -> Report {
    type GroupKey = (String, String, u8);
    let mut values: BTreeMap<GroupKey, BTreeMap<&'static str, Vec<f64>>> = BTreeMap::new();
    let mut pooled: BTreeMap<GroupKey, (usize, usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.provider_error.is_none()) {
        let key = (r.task_type.clone(), r.strategy.clone(), r.version);
        let g = values.entry(key.clone()).or_default();
        for (name, v) in record_metrics(r) {
            g.entry(name).or_default().push(v);
        }
        if let Some(s) = &r.eval.retrieval {
            let p = pooled.entry(key).or_default();
            p.0 += s.tp;
            p.1 += s.fp;
            p.2 += s.fn_;
        }
    }
    let summary = values
        .into_iter()
        .map(|(key, metrics)| {
            let pooled = pooled.get(&key).map(|&(tp, fp, fn_)| {
                let (precision, recall, f1) = prf(tp, fp, fn_);
                Pooled {
                    tp,
                    fp,
                    fn_,
                    precision,
                    recall,
                    f1,
                }
            });
            SummaryGroup {
                task_type: key.0,
                strategy: key.1,
                version: key.2,
                metrics: metrics
                    .into_iter()
                    .map(|(k, xs)| (k.to_string(), Stat::of(&xs)))
                    .collect(),
                pooled,
            }
        })
        .collect();

    let mut tax: BTreeMap<(Setting, String, u8, bool), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        tax.entry((r.setting, r.strategy.clone(), r.version, r.cove))
            .or_default()
            .push(r);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let taxonomy = tax
        .into_iter()
        .map(|((setting, strategy, version, cove), rs)| {
            let provider_errors = rs.iter().filter(|r| r.provider_error.is_some()).count();
            let scored: Vec<&&RunRecord> = rs.iter().filter(|r| r.provider_error.is_none()).collect();
            let mut labels: BTreeMap<ErrorLabel, usize> =
                ErrorLabel::ALL.iter().map(|&l| (l, 0)).collect();
            for r in &scored {
                if let Some(l) = r.eval.error_label {
                    *labels.entry(l).or_default() += 1;
                }
            }
            let invalid = labels[&ErrorLabel::InvalidQuery];
            let executable = scored.iter().filter(|r| r.eval.execution.executable).count();
            let wrong: Vec<&&&RunRecord> = scored
                .iter()
                .filter(|r| r.eval.execution.executable && r.eval.error_label.is_some())
                .collect();
            let non_detected_rate = cove.then(|| {
                let missed = wrong
                    .iter()
                    .filter(|r| !r.trace.as_ref().is_some_and(|t| t.flagged()))
                    .count();
                ratio(missed, wrong.len())
            });
            TaxonomyRow {
                setting,
                strategy,
                version,
                cove,
                records: rs.len(),
                provider_errors,
                invalid,
                invalid_rate: ratio(invalid, scored.len()),
                retrieval_errors: wrong.len(),
                retrieval_error_rate: ratio(wrong.len(), executable),
                non_detected_rate,
                labels,
            }
        })
        .collect();
    Report { summary, taxonomy }
}

pub fn summary_csv(report: &Report) -> String {
    let mut out = String::from("task_type,strategy,version,metric,mean,std,n\n");
    for g in &report.summary {
        for (name, s) in &g.metrics {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                g.task_type, g.strategy, g.version, name, s.mean, s.std, s.n
            ));
        }
    }
    out
}

pub fn taxonomy_csv(report: &Report) -> String {
    let mut out = String::from(
        "setting,strategy,version,cove,records,provider_errors,invalid,invalid_rate,retrieval_errors,retrieval_error_rate,non_detected_rate",
    );
    for l in ErrorLabel::ALL {
        out.push(',');
        out.push_str(l.as_str());
    }
    out.push('\n');
    for t in &report.taxonomy {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            t.setting.as_str(),
            t.strategy,
            t.version,
            t.cove,
            t.records,
            t.provider_errors,
            t.invalid,
            t.invalid_rate,
            t.retrieval_errors,
            t.retrieval_error_rate,
            t.non_detected_rate.map(|x| x.to_string()).unwrap_or_default(),
        ));
        for l in ErrorLabel::ALL {
            out.push_str(&format!(",{}", t.labels.get(&l).copied().unwrap_or(0)));
        }
        out.push('\n');
    }
    out
}

/// Writes `summary.csv`, `summary.json` and `taxonomy.csv` next to the
/// records of `run_dir`.
pub fn aggregate(run_dir: &Path) -> Result<Report, RunError> {
    let path = run_dir.join(RECORDS_FILE);
    if !path.exists() {
        return Err(RunError::Empty(run_dir.display().to_string()));
    }
    let records = read_records(&path)?;
    if records.is_empty() {
        return Err(RunError::Empty(run_dir.display().to_string()));
    }
    let report = aggregate_records(&records);
    write_report(&report, run_dir)?;
    Ok(report)
}

pub fn write_report(report: &Report, dir: &Path) -> Result<(), RunError> {
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))
    };
    write("summary.csv", summary_csv(report))?;
    let json = serde_json::to_string_pretty(&report.summary).map_err(|e| RunError::Io(e.to_string()))?;
    write("summary.json", json + "\n")?;
    write("taxonomy.csv", taxonomy_csv(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{RetrievalScores, TextScores};
    use crate::runner::{Evaluation, Execution};

    fn rec(id: &str, f1_counts: (usize, usize, usize), label: Option<ErrorLabel>) -> RunRecord {
        RunRecord {
            instance_id: id.into(),
            task_type: "t".into(),
            setting: Setting::SingleStep,
            strategy: "zs".into(),
            version: 1,
            cove: false,
            exemplars: vec![],
            raw_reply: None,
            final_query: None,
            trace: None,
            eval: Evaluation {
                execution: Execution {
                    executable: label != Some(ErrorLabel::InvalidQuery),
                    rows: 1,
                    error: None,
                },
                text: TextScores::default(),
                retrieval: Some(RetrievalScores::from_counts(f1_counts.0, f1_counts.1, f1_counts.2)),
                paths: None,
                error_label: label,
            },
            provider_error: None,
        }
    }

    #[test]
    fn single_record_has_zero_std() {
        let r = aggregate_records(&[rec("a", (1, 1, 1), Some(ErrorLabel::Other))]);
        let f1 = r.summary[0].metrics["f1"];
        assert_eq!((f1.mean, f1.std, f1.n), (0.5, 0.0, 1));
    }

    #[test]
    fn taxonomy_accounts() {
        let recs = [
            rec("a", (1, 0, 0), None),
            rec("b", (0, 0, 2), Some(ErrorLabel::ReactantsMissing)),
            rec("c", (0, 0, 2), Some(ErrorLabel::InvalidQuery)),
        ];
        let r = aggregate_records(&recs);
        let t = &r.taxonomy[0];
        assert_eq!((t.records, t.invalid, t.retrieval_errors), (3, 1, 1));
        assert_eq!(t.retrieval_error_rate, 0.5);
        assert!(t.labels.values().sum::<usize>() <= t.records);
        let pooled = r.summary[0].pooled.as_ref().unwrap();
        assert_eq!((pooled.tp, pooled.fn_), (1, 4));
        assert_eq!(summary_csv(&r), summary_csv(&aggregate_records(&recs)));
    }
}
