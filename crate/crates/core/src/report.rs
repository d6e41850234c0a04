//! Aggregation of intervention records with cluster-bootstrap uncertainty.
//!
//! Each example contributes several records per checkpoint (one per
//! repetition), so the bootstrap resamples example-level means rather than
//! raw records.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::intervene::{HypothesisKind, InterventionRecord, TargetKind};
use crate::stats::bootstrap_mean_ci;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Prior,
    Posterior,
    Pmi,
    Mrr,
    DeltaMrr,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Prior,
        MetricKind::Posterior,
        MetricKind::Pmi,
        MetricKind::Mrr,
        MetricKind::DeltaMrr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Prior => "prior",
            MetricKind::Posterior => "posterior",
            MetricKind::Pmi => "pmi",
            MetricKind::Mrr => "mrr",
            MetricKind::DeltaMrr => "delta-mrr",
        }
    }

    /// The per-record value of this metric. MRR metrics use reciprocal
    /// ranks; their group means are the usual mean reciprocal ranks.
    pub fn of(&self, record: &InterventionRecord) -> f64 {
        match self {
            MetricKind::Prior => record.prior_logprob,
            MetricKind::Posterior => record.posterior_logprob,
            MetricKind::Pmi => record.pmi,
            MetricKind::Mrr => 1.0 / record.posterior_rank as f64,
            MetricKind::DeltaMrr => {
                1.0 / record.posterior_rank as f64 - 1.0 / record.prior_rank as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub checkpoint_step: u64,
    pub hypothesis: HypothesisKind,
    pub target: TargetKind,
    pub metric: MetricKind,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Number of records behind this row.
    pub n: usize,
}

fn hyp_order(h: HypothesisKind) -> u8 {
    match h {
        HypothesisKind::Super => 0,
        HypothesisKind::Sub => 1,
        HypothesisKind::Relation => 2,
    }
}

fn target_order(t: TargetKind) -> u8 {
    match t {
        TargetKind::Correct => 0,
        TargetKind::Control => 1,
    }
}

/// Aggregate records into (step, hypothesis, target, metric) rows with
/// cluster-bootstrap 95% intervals over example-level means. Output order is
/// deterministic; bootstrap streams are seeded per group, so re-running on
/// the same records is byte-reproducible.
pub fn aggregate(
    records: &[InterventionRecord],
    bootstrap_resamples: usize,
    seed: u64,
) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to aggregate".into()));
    }

    // (step, hyp, target) -> example id -> record values
    let mut groups: BTreeMap<(u64, u8, u8), BTreeMap<u32, Vec<&InterventionRecord>>> =
        BTreeMap::new();
    for record in records {
        groups
            .entry((record.checkpoint_step, hyp_order(record.hypothesis), target_order(record.target)))
            .or_default()
            .entry(record.example_id)
            .or_default()
            .push(record);
    }

    let mut rows = Vec::new();
    for ((step, hyp_idx, target_idx), by_example) in &groups {
        let hypothesis = [HypothesisKind::Super, HypothesisKind::Sub, HypothesisKind::Relation]
            [*hyp_idx as usize];
        let target = [TargetKind::Correct, TargetKind::Control][*target_idx as usize];
        let n: usize = by_example.values().map(|v| v.len()).sum();
        for (metric_idx, metric) in MetricKind::ALL.into_iter().enumerate() {
            let cluster_means: Vec<f64> = by_example
                .values()
                .map(|list| {
                    list.iter().map(|r| metric.of(r)).sum::<f64>() / list.len() as f64
                })
                .collect();
            let group_seed = seed
                ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                ^ ((*hyp_idx as u64) << 8)
                ^ ((*target_idx as u64) << 16)
                ^ ((metric_idx as u64) << 24);
            let ci = bootstrap_mean_ci(&cluster_means, bootstrap_resamples, group_seed)?;
            rows.push(AggregateRow {
                checkpoint_step: *step,
                hypothesis,
                target,
                metric,
                mean: ci.mean,
                lower: ci.lower,
                upper: ci.upper,
                n,
            });
        }
    }
    Ok(rows)
}

pub const AGGREGATE_HEADER: &str =
    "checkpoint_step,hypothesis_type,target_kind,metric,mean,lower,upper,n";

pub fn write_aggregates(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.checkpoint_step,
            r.hypothesis.as_str(),
            r.target.as_str(),
            r.metric.as_str(),
            r.mean,
            r.lower,
            r.upper,
            r.n
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        step: u64,
        example: u32,
        hyp: HypothesisKind,
        target: TargetKind,
        pmi: f64,
        prior_rank: u32,
        posterior_rank: u32,
    ) -> InterventionRecord {
        InterventionRecord {
            checkpoint_step: step,
            example_id: example,
            minibatch_id: 0,
            hypothesis: hyp,
            target,
            prior_logprob: -2.0,
            posterior_logprob: -2.0 + pmi,
            pmi,
            prior_rank,
            posterior_rank,
        }
    }

    #[test]
    fn constant_records_give_zero_width_intervals() {
        let records: Vec<InterventionRecord> = (0..6)
            .map(|i| record(0, i, HypothesisKind::Sub, TargetKind::Correct, 0.25, 4, 2))
            .collect();
        let rows = aggregate(&records, 200, 1).unwrap();
        assert_eq!(rows.len(), MetricKind::ALL.len());
        for row in &rows {
            assert_eq!(row.lower, row.mean);
            assert_eq!(row.upper, row.mean);
            assert_eq!(row.n, 6);
        }
        let pmi_row = rows.iter().find(|r| r.metric == MetricKind::Pmi).unwrap();
        assert_eq!(pmi_row.mean, 0.25);
        let mrr = rows.iter().find(|r| r.metric == MetricKind::Mrr).unwrap();
        assert_eq!(mrr.mean, 0.5);
        let delta = rows.iter().find(|r| r.metric == MetricKind::DeltaMrr).unwrap();
        assert_eq!(delta.mean, 0.25);
    }

    #[test]
    fn mean_of_three_examples() {
        let records = vec![
            record(0, 0, HypothesisKind::Super, TargetKind::Correct, 1.0, 1, 1),
            record(0, 1, HypothesisKind::Super, TargetKind::Correct, 2.0, 1, 1),
            record(0, 2, HypothesisKind::Super, TargetKind::Correct, 3.0, 1, 1),
        ];
        let rows = aggregate(&records, 200, 2).unwrap();
        let pmi = rows.iter().find(|r| r.metric == MetricKind::Pmi).unwrap();
        assert_eq!(pmi.mean, 2.0);
        assert!(pmi.lower <= pmi.mean && pmi.mean <= pmi.upper);
    }

    #[test]
    fn cluster_means_weight_examples_equally() {
        // example 0 has 3 records of pmi 0, example 1 has 1 record of pmi 4;
        // cluster bootstrap means average example means: (0 + 4) / 2 = 2
        let mut records = vec![
            record(0, 0, HypothesisKind::Sub, TargetKind::Control, 0.0, 1, 1),
            record(0, 0, HypothesisKind::Sub, TargetKind::Control, 0.0, 1, 1),
            record(0, 0, HypothesisKind::Sub, TargetKind::Control, 0.0, 1, 1),
        ];
        records.push(record(0, 1, HypothesisKind::Sub, TargetKind::Control, 4.0, 1, 1));
        let rows = aggregate(&records, 200, 3).unwrap();
        let pmi = rows.iter().find(|r| r.metric == MetricKind::Pmi).unwrap();
        assert_eq!(pmi.mean, 2.0);
        assert_eq!(pmi.n, 4);
    }

    #[test]
    fn aggregation_is_deterministic() {
        let records: Vec<InterventionRecord> = (0..20)
            .map(|i| {
                record(
                    (i % 2) as u64,
                    i % 5,
                    HypothesisKind::Relation,
                    if i % 2 == 0 { TargetKind::Correct } else { TargetKind::Control },
                    (i as f64) * 0.1,
                    1 + i % 3,
                    1 + (i + 1) % 4,
                )
            })
            .collect();
        let a = aggregate(&records, 300, 9).unwrap();
        let b = aggregate(&records, 300, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(aggregate(&[], 200, 0).is_err());
    }

    #[test]
    fn aggregate_csv_written_with_header() {
        let records =
            vec![record(0, 0, HypothesisKind::Super, TargetKind::Correct, 0.5, 2, 1)];
        let rows = aggregate(&records, 100, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.csv");
        write_aggregates(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(AGGREGATE_HEADER));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }
}
