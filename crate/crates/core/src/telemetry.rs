//! Trace and metric data model, file ingestion, and step-function resampling.
//!
//! Series are interpreted as step functions: sample `i` holds over
//! `[t0 + i * step, t0 + (i + 1) * step)`. Every resampling operation in the
//! crate computes time-weighted means over that interpretation, so integrals
//! are preserved across different sampling grids.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::ClusterSnapshot;

/// Metric name used for CPU utilization series.
pub const CPU_UTILIZATION: &str = "cpu_utilization";

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("malformed document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("malformed record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("record {index}: {message}")]
    Validation { index: usize, message: String },
    #[error("duplicate span id {0:?}")]
    DuplicateSpanId(String),
    #[error("step must be positive")]
    ZeroStep,
    #[error("series {a:?} and {b:?} have no overlapping coverage")]
    EmptyOverlap { a: String, b: String },
    #[error("span {span_id:?} references instance {instance:?} absent from the snapshot")]
    UnknownInstance { span_id: String, instance: String },
    #[error("metric subject {0:?} is neither a node nor a pod of the snapshot")]
    UnknownSubject(String),
}

impl TelemetryError {
    fn from_json(err: serde_json::Error) -> Self {
        TelemetryError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Server,
    Client,
}

/// One recorded execution of a service operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    #[serde(rename = "traceId")]
    pub trace_id: String,
    #[serde(rename = "spanId")]
    pub span_id: String,
    #[serde(rename = "parentSpanId", default, skip_serializing_if = "Option::is_none")]
    pub parent_span_id: Option<String>,
    pub operation: String,
    #[serde(rename = "serviceInstance")]
    pub service_instance: String,
    pub node: String,
    #[serde(rename = "startMicros")]
    pub start_us: u64,
    #[serde(rename = "durationMicros")]
    pub duration_us: u64,
    pub kind: SpanKind,
}

impl Span {
    pub fn end_us(&self) -> u64 {
        self.start_us + self.duration_us
    }
}

/// Fixed-step samples of one metric for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub subject: String,
    pub metric: String,
    #[serde(rename = "t0Micros")]
    pub t0_us: u64,
    #[serde(rename = "stepMicros")]
    pub step_us: u64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        subject: impl Into<String>,
        metric: impl Into<String>,
        t0_us: u64,
        step_us: u64,
        values: Vec<f64>,
    ) -> Self {
        TimeSeries {
            subject: subject.into(),
            metric: metric.into(),
            t0_us,
            step_us,
            values,
        }
    }

    pub fn utilization(subject: impl Into<String>, t0_us: u64, step_us: u64, values: Vec<f64>) -> Self {
        Self::new(subject, CPU_UTILIZATION, t0_us, step_us, values)
    }

    /// Exclusive end of the covered range.
    pub fn end_us(&self) -> u64 {
        self.t0_us + self.step_us * self.values.len() as u64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_utilization(&self) -> bool {
        self.metric.ends_with("utilization")
    }

    /// Integral of the step function over its coverage, in value·µs.
    pub fn integral(&self) -> f64 {
        self.values.iter().map(|v| v * self.step_us as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.step_us == 0 {
            return Err(format!("series {:?}: stepMicros must be positive", self.subject));
        }
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(format!("series {:?}: value {i} is not finite", self.subject));
            }
            if self.is_utilization() && !(0.0..=1.0).contains(v) {
                return Err(format!(
                    "series {:?}: utilization value {v} at index {i} outside [0, 1]",
                    self.subject
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TraceDocument<T> {
    spans: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct MetricsDocument<T> {
    series: Vec<T>,
}

/// Parses a trace document, returning spans ordered by start time, then span id.
pub fn parse_traces(text: &str) -> Result<Vec<Span>, TelemetryError> {
    let doc: TraceDocument<serde_json::Value> = serde_json::from_str(text).map_err(TelemetryError::from_json)?;
    let mut seen = BTreeSet::new();
    let mut spans = Vec::with_capacity(doc.spans.len());
    for (index, raw) in doc.spans.into_iter().enumerate() {
        let span: Span = serde_json::from_value(raw).map_err(|e| TelemetryError::Record {
            index,
            message: e.to_string(),
        })?;
        if span.duration_us == 0 {
            return Err(TelemetryError::Validation {
                index,
                message: format!("span {:?} has non-positive duration", span.span_id),
            });
        }
        if !seen.insert(span.span_id.clone()) {
            return Err(TelemetryError::DuplicateSpanId(span.span_id));
        }
        spans.push(span);
    }
    sort_spans(&mut spans);
    Ok(spans)
}

pub(crate) fn sort_spans(spans: &mut [Span]) {
    spans.sort_by(|a, b| a.start_us.cmp(&b.start_us).then_with(|| a.span_id.cmp(&b.span_id)));
}

pub fn write_traces(spans: &[Span]) -> String {
    let doc = TraceDocument { spans: spans.to_vec() };
    serde_json::to_string_pretty(&doc).expect("spans serialize")
}

pub fn parse_metrics(text: &str) -> Result<Vec<TimeSeries>, TelemetryError> {
    let doc: MetricsDocument<serde_json::Value> = serde_json::from_str(text).map_err(TelemetryError::from_json)?;
    doc.series
        .into_iter()
        .enumerate()
        .map(|(index, raw)| {
            let series: TimeSeries = serde_json::from_value(raw).map_err(|e| TelemetryError::Record {
                index,
                message: e.to_string(),
            })?;
            series
                .validate()
                .map_err(|message| TelemetryError::Validation { index, message })?;
            Ok(series)
        })
        .collect()
}

pub fn write_metrics(series: &[TimeSeries]) -> String {
    let doc = MetricsDocument {
        series: series.to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("series serialize")
}

/// Accumulates a time-weighted mean over step-function segments.
///
/// When every contributing segment carries the same value and the segments
/// cover the whole window, that value is returned unchanged, so constant
/// regions survive resampling bit for bit.
#[derive(Debug, Default)]
pub(crate) struct StepMean {
    weighted: f64,
    covered: u64,
    uniform: Option<f64>,
    mixed: bool,
}

impl StepMean {
    pub(crate) fn add(&mut self, value: f64, duration_us: u64) {
        if duration_us == 0 {
            return;
        }
        self.weighted += value * duration_us as f64;
        self.covered += duration_us;
        match self.uniform {
            None if !self.mixed => self.uniform = Some(value),
            Some(u) if u.to_bits() != value.to_bits() => {
                self.uniform = None;
                self.mixed = true;
            }
            _ => {}
        }
    }

    /// Mean over `window_us`, treating uncovered time as zero.
    pub(crate) fn over(&self, window_us: u64) -> f64 {
        match self.uniform {
            Some(u) if self.covered == window_us => u,
            _ if window_us == 0 => 0.0,
            _ => self.weighted / window_us as f64,
        }
    }

    /// Mean over covered time only.
    pub(crate) fn over_covered(&self) -> f64 {
        self.over(self.covered)
    }
}

/// Time-weighted means of `series` over consecutive buckets of `step_us`
/// starting at `origin_us` and ending at `end_us`. A trailing partial bucket
/// and any bucket only partly covered by the input are averaged over covered
/// time. Buckets with no coverage at all yield 0.
fn bucket_means(series: &TimeSeries, origin_us: u64, end_us: u64, step_us: u64) -> Vec<f64> {
    let mut out = Vec::new();
    if end_us <= origin_us {
        return out;
    }
    let n = (end_us - origin_us).div_ceil(step_us);
    out.reserve(n as usize);
    let s0 = series.t0_us;
    let ds = series.step_us;
    for k in 0..n {
        let lo = origin_us + k * step_us;
        let hi = (lo + step_us).min(end_us);
        let mut acc = StepMean::default();
        if hi > s0 && !series.values.is_empty() {
            let first = lo.saturating_sub(s0) / ds;
            let last = ((hi - s0).div_ceil(ds)).min(series.values.len() as u64);
            for i in first..last {
                let seg_lo = s0 + i * ds;
                let seg_hi = seg_lo + ds;
                let overlap = hi.min(seg_hi).saturating_sub(lo.max(seg_lo));
                acc.add(series.values[i as usize], overlap);
            }
        }
        out.push(acc.over_covered());
    }
    out
}

/// Resamples a series to a new step, keeping `t0` and the covered range.
pub fn resample(series: &TimeSeries, new_step_us: u64) -> Result<TimeSeries, TelemetryError> {
    if new_step_us == 0 || series.step_us == 0 {
        return Err(TelemetryError::ZeroStep);
    }
    let values = bucket_means(series, series.t0_us, series.end_us(), new_step_us);
    Ok(TimeSeries {
        subject: series.subject.clone(),
        metric: series.metric.clone(),
        t0_us: series.t0_us,
        step_us: new_step_us,
        values,
    })
}

/// Resamples both series onto a common grid over their overlapping window.
pub fn align(a: &TimeSeries, b: &TimeSeries, step_us: u64) -> Result<(TimeSeries, TimeSeries), TelemetryError> {
    if step_us == 0 || a.step_us == 0 || b.step_us == 0 {
        return Err(TelemetryError::ZeroStep);
    }
    let lo = a.t0_us.max(b.t0_us);
    let hi = a.end_us().min(b.end_us());
    if hi <= lo {
        return Err(TelemetryError::EmptyOverlap {
            a: a.subject.clone(),
            b: b.subject.clone(),
        });
    }
    let cut = |s: &TimeSeries| TimeSeries {
        subject: s.subject.clone(),
        metric: s.metric.clone(),
        t0_us: lo,
        step_us,
        values: bucket_means(s, lo, hi, step_us),
    };
    Ok((cut(a), cut(b)))
}

/// Everything the mirror consumes from one observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryBundle {
    pub spans: Vec<Span>,
    pub metrics: Vec<TimeSeries>,
    pub snapshot: ClusterSnapshot,
}

impl TelemetryBundle {
    pub fn new(
        mut spans: Vec<Span>,
        metrics: Vec<TimeSeries>,
        snapshot: ClusterSnapshot,
    ) -> Result<Self, TelemetryError> {
        for span in &spans {
            if snapshot.pod(&span.service_instance).is_none() {
                return Err(TelemetryError::UnknownInstance {
                    span_id: span.span_id.clone(),
                    instance: span.service_instance.clone(),
                });
            }
        }
        for series in &metrics {
            if snapshot.pod(&series.subject).is_none() && snapshot.node(&series.subject).is_none() {
                return Err(TelemetryError::UnknownSubject(series.subject.clone()));
            }
        }
        sort_spans(&mut spans);
        Ok(TelemetryBundle {
            spans,
            metrics,
            snapshot,
        })
    }
}
