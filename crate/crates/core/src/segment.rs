//! Phase segmentation of power traces.
//!
//! Samples are smoothed with a centered moving average, classified by power
//! level (off, below idle, idle band, above idle), and grouped into runs.
//! Run boundaries are then moved onto the sharpest raw power step nearby,
//! runs shorter than `min_segment_s` are folded into the neighbor with the
//! closer mean power, and finally boot and shutdown phases are recognised by
//! their position around off periods.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Interval, PowerTrace, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseLabel {
    Off,
    Boot,
    Idle,
    Task,
    Shutdown,
    Unknown,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 6] = [
        PhaseLabel::Off,
        PhaseLabel::Boot,
        PhaseLabel::Idle,
        PhaseLabel::Task,
        PhaseLabel::Shutdown,
        PhaseLabel::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::Off => "off",
            PhaseLabel::Boot => "boot",
            PhaseLabel::Idle => "idle",
            PhaseLabel::Task => "task",
            PhaseLabel::Shutdown => "shutdown",
            PhaseLabel::Unknown => "unknown",
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for PhaseLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhaseLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown phase label `{s}`"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace lasts {duration_s} s, shorter than min_segment_s = {min_segment_s} s")]
    TooShort { duration_s: f64, min_segment_s: f64 },
    #[error("{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    #[serde(default = "defaults::off_threshold")]
    pub off_threshold_w: f64,
    /// Idle level is device specific, so there is no default band.
    pub idle_band_w: (f64, f64),
    #[serde(default = "defaults::min_segment")]
    pub min_segment_s: f64,
    #[serde(default = "defaults::smoothing")]
    pub smoothing_window_s: f64,
    /// Longest above-idle blip right before power-off that counts as shutdown.
    #[serde(default = "defaults::shutdown_max")]
    pub shutdown_max_s: f64,
}

mod defaults {
    pub fn off_threshold() -> f64 {
        0.1
    }
    pub fn min_segment() -> f64 {
        1.0
    }
    pub fn smoothing() -> f64 {
        0.5
    }
    pub fn shutdown_max() -> f64 {
        5.0
    }
}

impl SegmentationConfig {
    pub fn new(idle_low_w: f64, idle_high_w: f64) -> Self {
        SegmentationConfig {
            off_threshold_w: defaults::off_threshold(),
            idle_band_w: (idle_low_w, idle_high_w),
            min_segment_s: defaults::min_segment(),
            smoothing_window_s: defaults::smoothing(),
            shutdown_max_s: defaults::shutdown_max(),
        }
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |field, reason: &str| {
            Err(SegmentError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        let (lo, hi) = self.idle_band_w;
        if !(self.off_threshold_w.is_finite() && self.off_threshold_w > 0.0) {
            return bad("off_threshold_w", "must be > 0");
        }
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return bad("idle_band_w", "need 0 < low < high");
        }
        if lo < self.off_threshold_w {
            return bad("idle_band_w", "low edge must not be below off_threshold_w");
        }
        if !(self.min_segment_s.is_finite() && self.min_segment_s > 0.0) {
            return bad("min_segment_s", "must be > 0");
        }
        if !(self.smoothing_window_s.is_finite() && self.smoothing_window_s >= 0.0) {
            return bad("smoothing_window_s", "must be >= 0");
        }
        if !(self.shutdown_max_s.is_finite() && self.shutdown_max_s >= 0.0) {
            return bad("shutdown_max_s", "must be >= 0");
        }
        Ok(())
    }
}

/// A labeled, contiguous phase of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(flatten)]
    pub interval: Interval,
    pub label: PhaseLabel,
    pub energy_j: f64,
    pub mean_power_w: f64,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.interval.duration()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Off,
    Low,
    Idle,
    High,
}

#[derive(Debug, Clone)]
struct Run {
    level: Level,
    label: PhaseLabel,
    t0: f64,
    t1: f64,
}

impl Run {
    fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Splits `trace` into labeled segments that tile its whole extent.
pub fn segment(trace: &PowerTrace, cfg: &SegmentationConfig) -> Result<Vec<Segment>, SegmentError> {
    cfg.validate()?;
    let ext = trace.extent().ok_or(SegmentError::EmptyTrace)?;
    let eps = 1e-9 * cfg.min_segment_s.max(1.0);
    if trace.len() < 2 || ext.duration() < cfg.min_segment_s - eps {
        return Err(SegmentError::TooShort {
            duration_s: ext.duration(),
            min_segment_s: cfg.min_segment_s,
        });
    }
    let samples = trace.samples();
    let smoothed = moving_average(samples, cfg.smoothing_window_s);
    let classify = |p: f64| {
        let (lo, hi) = cfg.idle_band_w;
        if p < cfg.off_threshold_w {
            Level::Off
        } else if p < lo {
            Level::Low
        } else if p <= hi {
            Level::Idle
        } else {
            Level::High
        }
    };

    let mut runs: Vec<Run> = Vec::new();
    for (i, &p) in smoothed.iter().enumerate() {
        let level = classify(p);
        match runs.last_mut() {
            Some(run) if run.level == level => {}
            Some(run) => {
                let b = 0.5 * (samples[i - 1].t + samples[i].t);
                run.t1 = b;
                runs.push(Run {
                    level,
                    label: PhaseLabel::Unknown,
                    t0: b,
                    t1: b,
                });
            }
            None => runs.push(Run {
                level,
                label: PhaseLabel::Unknown,
                t0: ext.t0,
                t1: ext.t0,
            }),
        }
    }
    if let Some(last) = runs.last_mut() {
        last.t1 = ext.t1;
    }

    snap_boundaries(&mut runs, samples, cfg.smoothing_window_s);
    let mut runs = drop_degenerate(runs);
    merge_short_runs(&mut runs, trace, cfg.min_segment_s - eps);
    label_runs(&mut runs, cfg.shutdown_max_s);

    let mut segments: Vec<Segment> = Vec::with_capacity(runs.len());
    for run in runs {
        match segments.last_mut() {
            Some(prev) if prev.label == run.label => prev.interval.t1 = run.t1,
            _ => segments.push(Segment {
                interval: Interval {
                    t0: run.t0,
                    t1: run.t1,
                },
                label: run.label,
                energy_j: 0.0,
                mean_power_w: 0.0,
            }),
        }
    }
    for seg in &mut segments {
        seg.energy_j = trace.energy(seg.interval);
        seg.mean_power_w = seg.energy_j / seg.duration_s();
    }
    Ok(segments)
}

/// Centered moving average: mean of all samples within `window_s / 2`.
fn moving_average(samples: &[Sample], window_s: f64) -> Vec<f64> {
    let half = 0.5 * window_s;
    if half <= 0.0 {
        return samples.iter().map(|s| s.p).collect();
    }
    let mut prefix = Vec::with_capacity(samples.len() + 1);
    prefix.push(0.0);
    for s in samples {
        prefix.push(prefix.last().unwrap() + s.p);
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    samples
        .iter()
        .map(|s| {
            while samples[lo].t < s.t - half {
                lo += 1;
            }
            while hi < samples.len() && samples[hi].t <= s.t + half {
                hi += 1;
            }
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Moves each run boundary onto the largest raw power step of the matching
/// direction within the smoothing reach around it.
fn snap_boundaries(runs: &mut [Run], samples: &[Sample], window_s: f64) {
    let mut floor = runs.first().map_or(0.0, |r| r.t0);
    let end = runs.last().map_or(0.0, |r| r.t1);
    for k in 0..runs.len().saturating_sub(1) {
        let b = runs[k].t1;
        let rising = runs[k + 1].level > runs[k].level;
        // sample pair straddling b
        let j = samples.partition_point(|s| s.t < b).clamp(1, samples.len() - 1);
        let reach = 0.5 * window_s + (samples[j].t - samples[j - 1].t);
        let lo = samples.partition_point(|s| s.t < b - reach).max(1);
        let hi = samples.partition_point(|s| s.t <= b + reach).min(samples.len());
        let mut best: Option<(f64, f64)> = None;
        for i in lo..hi {
            let mid = 0.5 * (samples[i - 1].t + samples[i].t);
            if (mid - b).abs() > reach {
                continue;
            }
            let step = samples[i].p - samples[i - 1].p;
            let signed = if rising { step } else { -step };
            if signed > 0.0 && best.is_none_or(|(s, _)| signed > s) {
                best = Some((signed, mid));
            }
        }
        let snapped = best.map_or(b, |(_, mid)| mid).clamp(floor, end);
        runs[k].t1 = snapped;
        runs[k + 1].t0 = snapped;
        floor = snapped;
    }
}

fn drop_degenerate(runs: Vec<Run>) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::with_capacity(runs.len());
    for run in runs {
        if run.duration() <= 0.0 {
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.level == run.level => prev.t1 = run.t1,
            Some(prev) => {
                // keep the tiling contiguous across a dropped run
                prev.t1 = run.t0;
                out.push(run);
            }
            None => out.push(run),
        }
    }
    out
}

fn merge_short_runs(runs: &mut Vec<Run>, trace: &PowerTrace, min_s: f64) {
    let mean = |r: &Run| trace.energy(Interval { t0: r.t0, t1: r.t1 }) / r.duration();
    loop {
        if runs.len() < 2 {
            return;
        }
        let Some(k) = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.duration() < min_s)
            .min_by(|a, b| a.1.duration().total_cmp(&b.1.duration()))
            .map(|(k, _)| k)
        else {
            return;
        };
        let m = mean(&runs[k]);
        let into_left = match (k.checked_sub(1), runs.get(k + 1)) {
            (Some(l), Some(right)) => (mean(&runs[l]) - m).abs() <= (mean(right) - m).abs(),
            (Some(_), None) => true,
            _ => false,
        };
        let short = runs.remove(k);
        let target = if into_left {
            runs[k - 1].t1 = short.t1;
            k - 1
        } else {
            runs[k].t0 = short.t0;
            k
        };
        // coalesce with same-level neighbors of the grown run
        if target + 1 < runs.len() && runs[target + 1].level == runs[target].level {
            let next = runs.remove(target + 1);
            runs[target].t1 = next.t1;
        }
        if target > 0 && runs[target - 1].level == runs[target].level {
            let cur = runs.remove(target);
            runs[target - 1].t1 = cur.t1;
        }
    }
}

fn label_runs(runs: &mut [Run], shutdown_max_s: f64) {
    for run in runs.iter_mut() {
        run.label = match run.level {
            Level::Off => PhaseLabel::Off,
            Level::Low => PhaseLabel::Unknown,
            Level::Idle => PhaseLabel::Idle,
            Level::High => PhaseLabel::Task,
        };
    }
    // boot: activity after an off period, up to the first return to idle
    let mut k = 0;
    while k + 1 < runs.len() {
        if runs[k].level == Level::Off && matches!(runs[k + 1].level, Level::Low | Level::High) {
            let stop = (k + 1..runs.len())
                .find(|&m| matches!(runs[m].level, Level::Idle | Level::Off))
                .unwrap_or(runs.len());
            if stop == runs.len() || runs[stop].level == Level::Idle {
                for run in &mut runs[k + 1..stop] {
                    run.label = PhaseLabel::Boot;
                }
            }
            k = stop;
        } else {
            k += 1;
        }
    }
    // shutdown: short blip between an active phase and power-off
    for k in 1..runs.len().saturating_sub(1) {
        let blip = matches!(runs[k].label, PhaseLabel::Task | PhaseLabel::Unknown);
        let before_ok = !matches!(runs[k - 1].label, PhaseLabel::Off | PhaseLabel::Boot);
        if blip
            && before_ok
            && runs[k + 1].level == Level::Off
            && runs[k].duration() <= shutdown_max_s
        {
            runs[k].label = PhaseLabel::Shutdown;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub count: usize,
    pub energy_j: f64,
    pub duration_s: f64,
}

/// Per-label totals; every label is present, with zeros when unused.
pub fn phase_report(segments: &[Segment]) -> BTreeMap<PhaseLabel, PhaseTotals> {
    let mut report: BTreeMap<PhaseLabel, PhaseTotals> = PhaseLabel::ALL
        .into_iter()
        .map(|l| (l, PhaseTotals::default()))
        .collect();
    for seg in segments {
        let entry = report.entry(seg.label).or_default();
        entry.count += 1;
        entry.energy_j += seg.energy_j;
        entry.duration_s += seg.duration_s();
    }
    report
}

/// Index of the most energetic segment carrying `label`.
pub fn most_energetic(segments: &[Segment], label: PhaseLabel) -> Option<usize> {
    segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == label)
        .max_by(|a, b| a.1.energy_j.total_cmp(&b.1.energy_j))
        .map(|(i, _)| i)
}

pub fn write_segments_csv<W: Write>(segments: &[Segment], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t0,t1,label,energy_j,mean_power_w")?;
    for s in segments {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.interval.t0, s.interval.t1, s.label, s.energy_j, s.mean_power_w
        )?;
    }
    Ok(())
}
