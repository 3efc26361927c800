//! Power traces: timestamped power samples, CSV ingestion and interval energy.
//!
//! Energy over an interval is the trapezoidal integral of the piecewise-linear
//! interpolant through the samples, clipped to the trace extent. No resampling
//! is performed; irregular sample spacing is integrated as-is.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal rail voltage used when a trace does not specify one.
pub const DEFAULT_VOLTAGE: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: timestamp {t} does not increase (previous {prev})")]
    NonIncreasing { line: usize, t: f64, prev: f64 },
    #[error("line {line}: negative {what} {value}")]
    Negative { line: usize, what: &'static str, value: f64 },
    #[error("missing header (expected `t_s,power_w` or `t_s,current_a`)")]
    MissingHeader,
    #[error("line {line}: unknown header `{header}` (expected `t_s,power_w` or `t_s,current_a`)")]
    UnknownHeader { line: usize, header: String },
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("invalid nominal voltage {0}")]
    InvalidVoltage(f64),
    #[error("interval [{t0}, {t1}] has zero duration after clipping to the trace")]
    ZeroDuration { t0: f64, t1: f64 },
    #[error("invalid interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is not `PartialEq`; keep only its message.
#[derive(Debug, Error, PartialEq)]
#[error("i/o error: {0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::Io(IoError(e.to_string()))
    }
}

/// One power reading: `t` seconds since trace start, `p` watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub p: f64,
}

impl Sample {
    pub fn new(t: f64, p: f64) -> Self {
        Sample { t, p }
    }
}

/// Closed time interval `[t0, t1]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub t0: f64,
    pub t1: f64,
}

impl Interval {
    pub fn new(t0: f64, t1: f64) -> Result<Self, TraceError> {
        if !(t0.is_finite() && t1.is_finite()) || t0 > t1 {
            return Err(TraceError::InvalidInterval { t0, t1 });
        }
        Ok(Interval { t0, t1 })
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t0 <= t && t <= self.t1
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.3}, {:.3}] s", self.t0, self.t1)
    }
}

/// An ordered sequence of power samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTrace {
    samples: Vec<Sample>,
    nominal_voltage: f64,
}

impl Default for PowerTrace {
    fn default() -> Self {
        PowerTrace {
            samples: Vec::new(),
            nominal_voltage: DEFAULT_VOLTAGE,
        }
    }
}

impl PowerTrace {
    /// Builds a trace at the default 5 V rail, checking sample invariants.
    pub fn new(samples: Vec<Sample>) -> Result<Self, TraceError> {
        Self::with_voltage(samples, DEFAULT_VOLTAGE)
    }

    pub fn with_voltage(samples: Vec<Sample>, nominal_voltage: f64) -> Result<Self, TraceError> {
        if !(nominal_voltage.is_finite() && nominal_voltage > 0.0) {
            return Err(TraceError::InvalidVoltage(nominal_voltage));
        }
        for (index, s) in samples.iter().enumerate() {
            if !s.t.is_finite() || !s.p.is_finite() {
                return Err(TraceError::InvalidSample {
                    index,
                    reason: "non-finite value".into(),
                });
            }
            if s.p < 0.0 {
                return Err(TraceError::InvalidSample {
                    index,
                    reason: format!("negative power {}", s.p),
                });
            }
            if s.t < 0.0 {
                return Err(TraceError::InvalidSample {
                    index,
                    reason: format!("negative time {}", s.t),
                });
            }
            if index > 0 && s.t <= samples[index - 1].t {
                return Err(TraceError::InvalidSample {
                    index,
                    reason: format!("time {} does not increase", s.t),
                });
            }
        }
        Ok(PowerTrace {
            samples,
            nominal_voltage,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn nominal_voltage(&self) -> f64 {
        self.nominal_voltage
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[first t, last t]`, or `None` for an empty trace.
    pub fn extent(&self) -> Option<Interval> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        Some(Interval {
            t0: first.t,
            t1: last.t,
        })
    }

    pub fn duration(&self) -> f64 {
        self.extent().map_or(0.0, |iv| iv.duration())
    }

    pub fn peak_power(&self) -> f64 {
        self.samples.iter().map(|s| s.p).fold(0.0, f64::max)
    }

    /// Linear interpolation of power at `t`; clamps to the end samples.
    pub fn power_at(&self, t: f64) -> f64 {
        let s = &self.samples;
        match s.len() {
            0 => 0.0,
            1 => s[0].p,
            _ => {
                if t <= s[0].t {
                    return s[0].p;
                }
                let last = s[s.len() - 1];
                if t >= last.t {
                    return last.p;
                }
                // s[i-1].t <= t < s[i].t
                let i = s.partition_point(|x| x.t <= t);
                lerp(s[i - 1], s[i], t)
            }
        }
    }

    /// Trapezoidal energy (J) over `over`, clipped to the trace extent.
    pub fn energy(&self, over: Interval) -> f64 {
        let s = &self.samples;
        if s.len() < 2 {
            return 0.0;
        }
        let a = over.t0.max(s[0].t);
        let b = over.t1.min(s[s.len() - 1].t);
        if b <= a {
            return 0.0;
        }
        // first sample strictly after a, first sample at or after b
        let i = s.partition_point(|x| x.t <= a);
        let j = s.partition_point(|x| x.t < b);
        let mut prev = Sample::new(a, lerp(s[i - 1], s[i], a));
        let mut total = 0.0;
        for &cur in &s[i..j] {
            total += trapezoid(prev, cur);
            prev = cur;
        }
        let end = Sample::new(b, lerp(s[j - 1], s[j], b));
        total + trapezoid(prev, end)
    }

    pub fn total_energy(&self) -> f64 {
        self.extent().map_or(0.0, |iv| self.energy(iv))
    }

    /// Mean power (W) over `over` after clipping.
    pub fn average_power(&self, over: Interval) -> Result<f64, TraceError> {
        let clipped = self.clip(over);
        match clipped {
            Some(iv) if iv.duration() > 0.0 => Ok(self.energy(iv) / iv.duration()),
            _ => Err(TraceError::ZeroDuration {
                t0: over.t0,
                t1: over.t1,
            }),
        }
    }

    /// Intersection of `over` with the trace extent.
    pub fn clip(&self, over: Interval) -> Option<Interval> {
        let ext = self.extent()?;
        let t0 = over.t0.max(ext.t0);
        let t1 = over.t1.min(ext.t1);
        (t0 <= t1).then_some(Interval { t0, t1 })
    }

    /// Copy with every power multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self, TraceError> {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample::new(s.t, s.p * k))
            .collect();
        Self::with_voltage(samples, self.nominal_voltage)
    }

    /// Writes the trace in the `t_s,power_w` CSV format.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if self.nominal_voltage != DEFAULT_VOLTAGE {
            writeln!(out, "# voltage={}", self.nominal_voltage)?;
        }
        writeln!(out, "t_s,power_w")?;
        for s in &self.samples {
            writeln!(out, "{},{}", s.t, s.p)?;
        }
        Ok(())
    }
}

fn lerp(a: Sample, b: Sample, t: f64) -> f64 {
    if t <= a.t {
        return a.p;
    }
    if t >= b.t {
        return b.p;
    }
    a.p + (b.p - a.p) * (t - a.t) / (b.t - a.t)
}

fn trapezoid(a: Sample, b: Sample) -> f64 {
    0.5 * (a.p + b.p) * (b.t - a.t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Power,
    Current,
}

/// Parses a trace CSV stream.
///
/// The first non-comment line is the header, `t_s,power_w` or
/// `t_s,current_a`. Lines starting with `#` are comments; a `# voltage=<V>`
/// directive before the first data row sets the nominal voltage, which is
/// also used to convert current columns to watts.
pub fn ingest_trace<R: BufRead>(source: R) -> Result<PowerTrace, TraceError> {
    let mut column = None;
    let mut voltage = DEFAULT_VOLTAGE;
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(comment) = text.strip_prefix('#') {
            if let Some(v) = parse_voltage_directive(comment, line_no)? {
                if !rows.is_empty() {
                    return Err(TraceError::Malformed {
                        line: line_no,
                        reason: "voltage directive after first data row".into(),
                    });
                }
                voltage = v;
            }
            continue;
        }
        let Some(col) = column else {
            column = Some(parse_header(text, line_no)?);
            continue;
        };
        let (t, value) = parse_row(text, line_no)?;
        if value < 0.0 {
            return Err(TraceError::Negative {
                line: line_no,
                what: match col {
                    Column::Power => "power",
                    Column::Current => "current",
                },
                value,
            });
        }
        if t < 0.0 {
            return Err(TraceError::Negative {
                line: line_no,
                what: "time",
                value: t,
            });
        }
        if let Some(&(_, prev, _)) = rows.last() {
            if t <= prev {
                return Err(TraceError::NonIncreasing {
                    line: line_no,
                    t,
                    prev,
                });
            }
        }
        rows.push((line_no, t, value));
    }

    let column = column.ok_or(TraceError::MissingHeader)?;
    let samples = rows
        .into_iter()
        .map(|(_, t, v)| match column {
            Column::Power => Sample::new(t, v),
            Column::Current => Sample::new(t, v * voltage),
        })
        .collect();
    PowerTrace::with_voltage(samples, voltage)
}

/// Convenience wrapper over [`ingest_trace`] for in-memory text.
pub fn parse_trace(text: &str) -> Result<PowerTrace, TraceError> {
    ingest_trace(text.as_bytes())
}

fn parse_voltage_directive(comment: &str, line: usize) -> Result<Option<f64>, TraceError> {
    let Some(rest) = comment.trim().strip_prefix("voltage") else {
        return Ok(None);
    };
    let Some(value) = rest.trim_start().strip_prefix('=') else {
        return Ok(None);
    };
    let v: f64 = value.trim().parse().map_err(|_| TraceError::Malformed {
        line,
        reason: format!("bad voltage `{}`", value.trim()),
    })?;
    if !(v.is_finite() && v > 0.0) {
        return Err(TraceError::Malformed {
            line,
            reason: format!("voltage must be positive, got {v}"),
        });
    }
    Ok(Some(v))
}

fn parse_header(text: &str, line: usize) -> Result<Column, TraceError> {
    let cols: Vec<&str> = text.split(',').map(str::trim).collect();
    match cols.as_slice() {
        ["t_s", "power_w"] => Ok(Column::Power),
        ["t_s", "current_a"] => Ok(Column::Current),
        _ => Err(TraceError::UnknownHeader {
            line,
            header: text.to_string(),
        }),
    }
}

fn parse_row(text: &str, line: usize) -> Result<(f64, f64), TraceError> {
    let mut fields = text.split(',').map(str::trim);
    let (Some(t), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(TraceError::Malformed {
            line,
            reason: format!("expected 2 fields in `{text}`"),
        });
    };
    let parse = |s: &str| -> Result<f64, TraceError> {
        let x: f64 = s.parse().map_err(|_| TraceError::Malformed {
            line,
            reason: format!("not a number: `{s}`"),
        })?;
        if !x.is_finite() {
            return Err(TraceError::Malformed {
                line,
                reason: format!("non-finite value `{s}`"),
            });
        }
        Ok(x)
    };
    Ok((parse(t)?, parse(v)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trace(points: &[(f64, f64)]) -> PowerTrace {
        PowerTrace::new(points.iter().map(|&(t, p)| Sample::new(t, p)).collect()).unwrap()
    }

    #[test]
    fn current_rows_convert_to_watts() {
        let tr = parse_trace("t_s,current_a\n0.0,0.40\n1.0,0.42\n").unwrap();
        assert_eq!(tr.len(), 2);
        assert_relative_eq!(tr.samples()[0].p, 2.0);
        assert_relative_eq!(tr.samples()[1].p, 2.1);
    }

    #[test]
    fn voltage_directive_applies() {
        let tr = parse_trace("# voltage=3.3\nt_s,current_a\n0,1\n1,2\n").unwrap();
        assert_eq!(tr.nominal_voltage(), 3.3);
        assert_relative_eq!(tr.samples()[1].p, 6.6);
    }

    #[test]
    fn voltage_directive_after_data_is_rejected() {
        let err = parse_trace("t_s,current_a\n0,1\n# voltage=3.3\n1,2\n").unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 3, .. }));
    }

    #[test]
    fn header_only_is_empty() {
        let tr = parse_trace("# testbed log\nt_s,power_w\n").unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.total_energy(), 0.0);
    }

    #[test]
    fn backwards_time_names_line() {
        let err = parse_trace("t_s,power_w\n0,1\n2,1\n1,1\n").unwrap_err();
        assert_eq!(
            err,
            TraceError::NonIncreasing {
                line: 4,
                t: 1.0,
                prev: 2.0
            }
        );
        assert!(err.to_string().starts_with("line 4"));
    }

    #[test]
    fn malformed_and_negative_rows() {
        assert!(matches!(
            parse_trace("t_s,power_w\n0,abc\n"),
            Err(TraceError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            parse_trace("t_s,power_w\n0,1,2\n"),
            Err(TraceError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            parse_trace("t_s,current_a\n0,-0.1\n"),
            Err(TraceError::Negative { line: 2, what: "current", .. })
        ));
        assert!(matches!(
            parse_trace("time,watts\n"),
            Err(TraceError::UnknownHeader { line: 1, .. })
        ));
        assert_eq!(parse_trace("# nothing\n"), Err(TraceError::MissingHeader));
    }

    #[test]
    fn rectangle_and_triangle() {
        let flat = trace(&[(0.0, 2.0), (10.0, 2.0)]);
        assert_relative_eq!(flat.energy(Interval::new(0.0, 10.0).unwrap()), 20.0);
        let ramp = trace(&[(0.0, 0.0), (10.0, 2.0)]);
        assert_relative_eq!(ramp.energy(Interval::new(0.0, 10.0).unwrap()), 10.0);
    }

    #[test]
    fn clipping_and_degenerate() {
        let flat = trace(&[(0.0, 2.0), (5.0, 2.0), (10.0, 2.0)]);
        assert_relative_eq!(flat.energy(Interval::new(-5.0, 50.0).unwrap()), 20.0);
        assert_relative_eq!(flat.energy(Interval::new(2.5, 7.5).unwrap()), 10.0);
        assert_eq!(flat.energy(Interval::new(3.0, 3.0).unwrap()), 0.0);
        assert_eq!(flat.energy(Interval::new(20.0, 30.0).unwrap()), 0.0);
        assert_eq!(PowerTrace::default().energy(Interval::new(0.0, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn average_power() {
        let flat = trace(&[(0.0, 2.0), (3.0, 2.0), (10.0, 2.0)]);
        let avg = flat.average_power(Interval::new(1.0, 9.0).unwrap()).unwrap();
        assert_relative_eq!(avg, 2.0, epsilon = 1e-12);
        assert!(matches!(
            flat.average_power(Interval::new(4.0, 4.0).unwrap()),
            Err(TraceError::ZeroDuration { .. })
        ));
        assert!(flat.average_power(Interval::new(11.0, 12.0).unwrap()).is_err());
    }

    #[test]
    fn invalid_samples_rejected() {
        assert!(PowerTrace::new(vec![Sample::new(0.0, -1.0)]).is_err());
        assert!(PowerTrace::new(vec![Sample::new(1.0, 1.0), Sample::new(1.0, 1.0)]).is_err());
        assert!(PowerTrace::new(vec![Sample::new(f64::NAN, 1.0)]).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tr = trace(&[(0.0, 1.5), (0.25, 2.0), (1.0, 0.125)]);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        assert_eq!(ingest_trace(buf.as_slice()).unwrap(), tr);
    }

    #[test]
    fn power_at_interpolates() {
        let tr = trace(&[(0.0, 0.0), (2.0, 4.0)]);
        assert_relative_eq!(tr.power_at(0.5), 1.0);
        assert_eq!(tr.power_at(-1.0), 0.0);
        assert_eq!(tr.power_at(3.0), 4.0);
    }
}
