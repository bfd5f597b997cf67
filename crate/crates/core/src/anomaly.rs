//! Deviation analysis between simulated (intended) and observed (actual)
//! utilization.
//!
//! Per subject, both series are aligned on a common grid and the signed
//! deviation `sim - observed` is scanned for runs of at least
//! `min_consecutive` buckets whose magnitude exceeds `abs_threshold`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{align, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum AnomalyError {
    #[error("no subject appears in both the simulated and the observed series")]
    NoMatchingSubjects,
    #[error("invalid deviation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct DeviationParams {
    #[serde(rename = "stepMicros")]
    pub step_us: u64,
    pub abs_threshold: f64,
    pub min_consecutive: usize,
}

impl Default for DeviationParams {
    fn default() -> Self {
        DeviationParams {
            step_us: 5_000_000,
            abs_threshold: 0.15,
            min_consecutive: 3,
        }
    }
}

impl DeviationParams {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if self.step_us == 0 {
            return Err(AnomalyError::InvalidParams("stepMicros must be positive".into()));
        }
        if !(self.abs_threshold > 0.0 && self.abs_threshold <= 1.0) {
            return Err(AnomalyError::InvalidParams("absThreshold must lie in (0, 1]".into()));
        }
        if self.min_consecutive == 0 {
            return Err(AnomalyError::InvalidParams("minConsecutive must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnomalyInterval {
    #[serde(rename = "startMicros")]
    pub start_us: u64,
    #[serde(rename = "endMicros")]
    pub end_us: u64,
    /// Mean of `sim - observed` over the interval's buckets.
    pub mean_signed_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubjectDeviation {
    pub subject: String,
    #[serde(rename = "windowStartMicros")]
    pub window_start_us: u64,
    #[serde(rename = "windowEndMicros")]
    pub window_end_us: u64,
    pub max_abs_deviation: f64,
    pub mean_abs_deviation: f64,
    pub sim_mean: f64,
    pub observed_mean: f64,
    pub anomaly_intervals: Vec<AnomalyInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    SimulatedOnly,
    ObservedOnly,
    DisjointCoverage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub subject: String,
    pub kind: GapKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviationReport {
    pub params: DeviationParams,
    pub anomalous: bool,
    pub subjects: Vec<SubjectDeviation>,
    pub coverage_gaps: Vec<CoverageGap>,
}

impl DeviationReport {
    pub fn subject(&self, name: &str) -> Option<&SubjectDeviation> {
        self.subjects.iter().find(|s| s.subject == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .subjects
            .iter()
            .map(|s| s.subject.len())
            .chain(self.coverage_gaps.iter().map(|g| g.subject.len()))
            .max()
            .unwrap_or(7)
            .max(7);
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  anomalies",
            "subject", "sim", "observed", "mean|d|", "max|d|"
        );
        for s in &self.subjects {
            let intervals = if s.anomaly_intervals.is_empty() {
                "-".to_string()
            } else {
                s.anomaly_intervals
                    .iter()
                    .map(|iv| {
                        format!(
                            "[{:.1}s, {:.1}s) {:+.3}",
                            iv.start_us.saturating_sub(s.window_start_us) as f64 / 1e6,
                            iv.end_us.saturating_sub(s.window_start_us) as f64 / 1e6,
                            iv.mean_signed_deviation
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {}",
                s.subject, s.sim_mean, s.observed_mean, s.mean_abs_deviation, s.max_abs_deviation, intervals
            );
        }
        for gap in &self.coverage_gaps {
            let what = match gap.kind {
                GapKind::SimulatedOnly => "simulated only",
                GapKind::ObservedOnly => "observed only",
                GapKind::DisjointCoverage => "no overlapping coverage",
            };
            let _ = writeln!(out, "{:<width$}  coverage gap: {what}", gap.subject);
        }
        let _ = writeln!(out, "verdict: {}", if self.anomalous { "ANOMALY" } else { "ok" });
        out
    }
}

/// Maximal runs of at least `min_len` consecutive indices where `flag` holds,
/// as half-open index ranges.
pub(crate) fn runs(flags: &[bool], min_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len {
                    out.push((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn compare_pair(sim: &TimeSeries, observed: &TimeSeries, params: &DeviationParams) -> Option<SubjectDeviation> {
    let (a, b) = align(sim, observed, params.step_us).ok()?;
    let deviations: Vec<f64> = a.values.iter().zip(&b.values).map(|(s, o)| s - o).collect();
    let n = deviations.len().max(1) as f64;
    let flags: Vec<bool> = deviations.iter().map(|d| d.abs() > params.abs_threshold).collect();
    let anomaly_intervals = runs(&flags, params.min_consecutive)
        .into_iter()
        .map(|(lo, hi)| AnomalyInterval {
            start_us: a.t0_us + lo as u64 * params.step_us,
            end_us: a.t0_us + hi as u64 * params.step_us,
            mean_signed_deviation: deviations[lo..hi].iter().sum::<f64>() / (hi - lo) as f64,
        })
        .collect();
    Some(SubjectDeviation {
        subject: sim.subject.clone(),
        window_start_us: a.t0_us,
        window_end_us: sim.end_us().min(observed.end_us()),
        max_abs_deviation: deviations.iter().fold(0.0, |m, d| m.max(d.abs())),
        mean_abs_deviation: deviations.iter().map(|d| d.abs()).sum::<f64>() / n,
        sim_mean: a.mean(),
        observed_mean: b.mean(),
        anomaly_intervals,
    })
}

/// Compares simulated against observed series subject by subject.
pub fn detect_deviations(
    sim: &[TimeSeries],
    observed: &[TimeSeries],
    params: &DeviationParams,
) -> Result<DeviationReport, AnomalyError> {
    params.validate()?;
    let sim_by: BTreeMap<&str, &TimeSeries> = sim.iter().map(|s| (s.subject.as_str(), s)).collect();
    let obs_by: BTreeMap<&str, &TimeSeries> = observed.iter().map(|s| (s.subject.as_str(), s)).collect();
    if !sim_by.keys().any(|k| obs_by.contains_key(k)) {
        return Err(AnomalyError::NoMatchingSubjects);
    }

    let mut subjects = Vec::new();
    let mut coverage_gaps = Vec::new();
    for (name, s) in &sim_by {
        match obs_by.get(name) {
            Some(o) => match compare_pair(s, o, params) {
                Some(dev) => subjects.push(dev),
                None => coverage_gaps.push(CoverageGap {
                    subject: name.to_string(),
                    kind: GapKind::DisjointCoverage,
                }),
            },
            None => coverage_gaps.push(CoverageGap {
                subject: name.to_string(),
                kind: GapKind::SimulatedOnly,
            }),
        }
    }
    for name in obs_by.keys().filter(|k| !sim_by.contains_key(*k)) {
        coverage_gaps.push(CoverageGap {
            subject: name.to_string(),
            kind: GapKind::ObservedOnly,
        });
    }
    coverage_gaps.sort_by(|a, b| a.subject.cmp(&b.subject));

    Ok(DeviationReport {
        params: params.clone(),
        anomalous: subjects.iter().any(|s| !s.anomaly_intervals.is_empty()),
        subjects,
        coverage_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEP: u64 = 5_000_000;

    fn series(subject: &str, values: Vec<f64>) -> TimeSeries {
        TimeSeries::utilization(subject, 0, 1_000_000, values)
    }

    #[test]
    fn identical_inputs_have_no_anomalies() {
        let s = vec![series("a", vec![0.3; 60]), series("b", vec![0.9; 60])];
        let r = detect_deviations(&s, &s, &DeviationParams::default()).unwrap();
        assert!(!r.anomalous);
        assert!(r
            .subjects
            .iter()
            .all(|d| d.max_abs_deviation == 0.0 && d.anomaly_intervals.is_empty()));
    }

    #[test]
    fn drop_to_base_load_is_flagged() {
        // 180 s at 1 s resolution; the observed side falls to 0.05 at 60 s.
        let sim = vec![series("vm", vec![0.6; 180])];
        let obs: Vec<f64> = (0..180).map(|t| if t < 60 { 0.6 } else { 0.05 }).collect();
        let observed = vec![series("vm", obs.clone())];
        let r = detect_deviations(&sim, &observed, &DeviationParams::default()).unwrap();

        // Oracle: direct scan of 5 s buckets.
        let buckets: Vec<f64> = (0..36)
            .map(|k| (0..5).map(|i| 0.6 - obs[k * 5 + i]).sum::<f64>() / 5.0)
            .collect();
        let first = buckets.iter().position(|d| d.abs() > 0.15).unwrap();
        assert_eq!(first, 12);

        assert!(r.anomalous);
        let ivs = &r.subject("vm").unwrap().anomaly_intervals;
        assert_eq!(ivs.len(), 1);
        assert_eq!(ivs[0].start_us, first as u64 * STEP);
        assert!(ivs[0].start_us.abs_diff(60_000_000) <= 3 * STEP);
        assert_eq!(ivs[0].end_us, 180_000_000);
        assert!((ivs[0].mean_signed_deviation - 0.55).abs() < 1e-9);
    }

    #[test]
    fn offset_below_threshold_is_ignored() {
        let sim = vec![series("vm", vec![0.4; 60])];
        let observed = vec![series("vm", vec![0.5; 60])];
        let r = detect_deviations(&sim, &observed, &DeviationParams::default()).unwrap();
        assert!(!r.anomalous);
        assert!((r.subjects[0].mean_abs_deviation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn short_spikes_need_persistence() {
        let mut obs = vec![0.2; 60];
        for v in &mut obs[10..20] {
            *v = 0.9;
        }
        let r = detect_deviations(
            &[series("vm", vec![0.2; 60])],
            &[series("vm", obs)],
            &DeviationParams::default(),
        )
        .unwrap();
        // 10 s of deviation covers only two 5 s buckets.
        assert!(!r.anomalous);
    }

    #[test]
    fn coverage_gaps_and_errors() {
        let sim = vec![series("a", vec![0.1; 10]), series("b", vec![0.1; 10])];
        let observed = vec![
            series("a", vec![0.1; 10]),
            TimeSeries::utilization("b", 100_000_000, 1_000_000, vec![0.1; 10]),
            series("c", vec![0.1; 10]),
        ];
        let r = detect_deviations(&sim, &observed, &DeviationParams::default()).unwrap();
        assert_eq!(r.subjects.len(), 1);
        assert_eq!(
            r.coverage_gaps,
            vec![
                CoverageGap {
                    subject: "b".into(),
                    kind: GapKind::DisjointCoverage
                },
                CoverageGap {
                    subject: "c".into(),
                    kind: GapKind::ObservedOnly
                },
            ]
        );
        assert_eq!(
            detect_deviations(&sim, &[series("z", vec![0.0])], &DeviationParams::default()),
            Err(AnomalyError::NoMatchingSubjects)
        );
        let bad = DeviationParams {
            abs_threshold: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            detect_deviations(&sim, &sim, &bad),
            Err(AnomalyError::InvalidParams(_))
        ));
    }

    #[test]
    fn run_extraction() {
        let f = [true, true, false, true, true, true, false, true];
        assert_eq!(runs(&f, 1), vec![(0, 2), (3, 6), (7, 8)]);
        assert_eq!(runs(&f, 3), vec![(3, 6)]);
        assert!(runs(&[], 1).is_empty());
    }

    #[test]
    fn table_mentions_every_subject() {
        let sim = vec![series("alpha", vec![0.6; 30])];
        let observed = vec![series("alpha", vec![0.0; 30]), series("beta", vec![0.0; 30])];
        let r = detect_deviations(&sim, &observed, &DeviationParams::default()).unwrap();
        let table = r.render_table();
        assert!(table.contains("alpha") && table.contains("beta") && table.contains("ANOMALY"));
    }
}
