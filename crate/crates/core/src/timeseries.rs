//! Multivariate CPS series: data model, CSV ingestion, min-max scaling,
//! and sliding-window extraction of supervised pairs.
//!
//! CSV format (bit-exact contract): header `t,s0..s{m-1},a0..a{k-1},label`,
//! UTF-8, `.` decimal separator, label in `{0, 1, -1}`. The label column
//! may be absent, in which case every point is labeled unknown.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point-level ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomalous,
    Unknown,
}

impl Label {
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            -1 => Ok(Label::Unknown),
            other => Err(Error::InvalidArgument(format!(
                "label must be 0, 1, or -1, got {other}"
            ))),
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
            Label::Unknown => -1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One sampling tick: sensor measurements, actuator states, and a label.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePoint {
    pub t: i64,
    pub sensors: Vec<f64>,
    pub actuators: Vec<f64>,
    pub label: Label,
}

/// An ordered, uniformly ticked multivariate series.
///
/// Invariants checked at construction: non-empty, consistent channel
/// counts, and `t` strictly increasing by one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    points: Vec<TimePoint>,
    m: usize,
    k: usize,
}

impl TimeSeries {
    pub fn new(points: Vec<TimePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("time series has no points".into()));
        }
        let m = points[0].sensors.len();
        let k = points[0].actuators.len();
        for (i, p) in points.iter().enumerate() {
            if p.sensors.len() != m {
                return Err(Error::ShapeMismatch {
                    context: format!("sensor count at point {i}"),
                    expected: m,
                    got: p.sensors.len(),
                });
            }
            if p.actuators.len() != k {
                return Err(Error::ShapeMismatch {
                    context: format!("actuator count at point {i}"),
                    expected: k,
                    got: p.actuators.len(),
                });
            }
            if i > 0 && p.t != points[i - 1].t + 1 {
                return Err(Error::InvalidArgument(format!(
                    "tick at point {i} is {} but previous tick is {}; ticks must increase by 1",
                    p.t,
                    points[i - 1].t
                )));
            }
        }
        Ok(TimeSeries { points, m, k })
    }

    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty series
    }

    /// Sensor channel count.
    pub fn num_sensors(&self) -> usize {
        self.m
    }

    /// Actuator channel count.
    pub fn num_actuators(&self) -> usize {
        self.k
    }

    /// Total channel count (sensors then actuators).
    pub fn num_channels(&self) -> usize {
        self.m + self.k
    }

    /// Channel value at a point: sensors first, then actuators.
    pub fn channel(&self, point: usize, ch: usize) -> f64 {
        let p = &self.points[point];
        if ch < self.m {
            p.sensors[ch]
        } else {
            p.actuators[ch - self.m]
        }
    }

    /// Contiguous sub-series over `[start, end)` (point indices).
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "invalid slice [{start}, {end}) of series with {} points",
                self.points.len()
            )));
        }
        TimeSeries::new(self.points[start..end].to_vec())
    }
}

/// One supervised sample: a flattened window, the window-end actuator
/// state, and the next-step sensor target.
///
/// The window covers points `[i, i+w-1]` flattened time-major (all
/// channels of step `i`, then step `i+1`, ...; within a step sensors
/// precede actuators). `u` is the actuator vector at `i+w-1`, `y` the
/// sensor vector at `i+w`, and `label` the label of point `i+w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub label: Label,
}

impl WindowPair {
    /// Sensor channel count, from the target length.
    pub fn num_sensors(&self) -> usize {
        self.y.len()
    }

    /// Actuator channel count.
    pub fn num_actuators(&self) -> usize {
        self.u.len()
    }

    /// Window length in time steps.
    pub fn window_len(&self) -> usize {
        let per_step = self.y.len() + self.u.len();
        debug_assert!(per_step > 0 && self.x.len().is_multiple_of(per_step));
        self.x.len() / per_step
    }

    /// Channel values of one window step (sensors then actuators).
    pub fn step(&self, d: usize) -> &[f64] {
        let per_step = self.y.len() + self.u.len();
        &self.x[d * per_step..(d + 1) * per_step]
    }

    /// Sensor slice of the final window step.
    pub fn last_step_sensors(&self) -> &[f64] {
        let per_step = self.y.len() + self.u.len();
        let start = (self.window_len() - 1) * per_step;
        &self.x[start..start + self.y.len()]
    }

    /// The window one step ahead, approximated from this pair alone: the
    /// first step is dropped and a step holding the target sensors is
    /// appended, with the actuator state carried over unchanged.
    pub fn next_window_zoh(&self) -> Vec<f64> {
        let per_step = self.y.len() + self.u.len();
        let mut out = Vec::with_capacity(self.x.len());
        out.extend_from_slice(&self.x[per_step..]);
        out.extend_from_slice(&self.y);
        out.extend_from_slice(&self.u);
        out
    }
}

/// Per-channel min/max over a reference set, sensors first then actuators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fit over every point of several series (channel layouts must match).
    pub fn fit_many(series: &[&TimeSeries]) -> Result<NormStats> {
        let first = series
            .first()
            .ok_or_else(|| Error::EmptyInput("no series to fit normalization on".into()))?;
        let channels = first.num_channels();
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for s in series {
            if s.num_channels() != channels {
                return Err(Error::ShapeMismatch {
                    context: "channel count across series".into(),
                    expected: channels,
                    got: s.num_channels(),
                });
            }
            for p in 0..s.len() {
                for ch in 0..channels {
                    let v = s.channel(p, ch);
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        Ok(NormStats { min, max })
    }
}

/// Fit per-channel min/max over the selected point indices.
pub fn fit_norm(series: &TimeSeries, subset: &[usize]) -> Result<NormStats> {
    if subset.is_empty() {
        return Err(Error::EmptyInput("normalization subset is empty".into()));
    }
    let channels = series.num_channels();
    let mut min = vec![f64::INFINITY; channels];
    let mut max = vec![f64::NEG_INFINITY; channels];
    for &idx in subset {
        if idx >= series.len() {
            return Err(Error::InvalidArgument(format!(
                "subset index {idx} out of range for series of length {}",
                series.len()
            )));
        }
        for ch in 0..channels {
            let v = series.channel(idx, ch);
            min[ch] = min[ch].min(v);
            max[ch] = max[ch].max(v);
        }
    }
    Ok(NormStats { min, max })
}

/// Min-max scale each channel to `[0, 1]` under the given stats.
///
/// Values outside the fitted range extrapolate linearly (no clamping);
/// constant channels map to 0.
pub fn apply_norm(series: &TimeSeries, stats: &NormStats) -> Result<TimeSeries> {
    if stats.min.len() != series.num_channels() {
        return Err(Error::ShapeMismatch {
            context: "normalization stats channels".into(),
            expected: series.num_channels(),
            got: stats.min.len(),
        });
    }
    let m = series.num_sensors();
    let scale_one = |v: f64, ch: usize| {
        let range = stats.max[ch] - stats.min[ch];
        if range == 0.0 {
            0.0
        } else {
            (v - stats.min[ch]) / range
        }
    };
    let points = series
        .points()
        .iter()
        .map(|p| TimePoint {
            t: p.t,
            sensors: p
                .sensors
                .iter()
                .enumerate()
                .map(|(i, &v)| scale_one(v, i))
                .collect(),
            actuators: p
                .actuators
                .iter()
                .enumerate()
                .map(|(i, &v)| scale_one(v, m + i))
                .collect(),
            label: p.label,
        })
        .collect();
    TimeSeries::new(points)
}

/// Invert `apply_norm` under the same stats (constant channels come back
/// as their fitted minimum).
pub fn invert_norm(series: &TimeSeries, stats: &NormStats) -> Result<TimeSeries> {
    if stats.min.len() != series.num_channels() {
        return Err(Error::ShapeMismatch {
            context: "normalization stats channels".into(),
            expected: series.num_channels(),
            got: stats.min.len(),
        });
    }
    let m = series.num_sensors();
    let unscale_one = |v: f64, ch: usize| {
        let range = stats.max[ch] - stats.min[ch];
        stats.min[ch] + v * range
    };
    let points = series
        .points()
        .iter()
        .map(|p| TimePoint {
            t: p.t,
            sensors: p
                .sensors
                .iter()
                .enumerate()
                .map(|(i, &v)| unscale_one(v, i))
                .collect(),
            actuators: p
                .actuators
                .iter()
                .enumerate()
                .map(|(i, &v)| unscale_one(v, m + i))
                .collect(),
            label: p.label,
        })
        .collect();
    TimeSeries::new(points)
}

/// Extract every supervised pair for window length `w`.
///
/// A series of length `n` yields exactly `n - w` pairs, in order.
pub fn sliding_pairs(series: &TimeSeries, w: usize) -> Result<Vec<WindowPair>> {
    if w == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if series.len() <= w {
        return Err(Error::TooFew {
            context: "series length for sliding windows".into(),
            needed: w + 1,
            got: series.len(),
        });
    }
    let m = series.num_sensors();
    let k = series.num_actuators();
    let points = series.points();
    let mut pairs = Vec::with_capacity(series.len() - w);
    for i in 0..(series.len() - w) {
        let mut x = Vec::with_capacity(w * (m + k));
        for step in &points[i..i + w] {
            x.extend_from_slice(&step.sensors);
            x.extend_from_slice(&step.actuators);
        }
        let target = &points[i + w];
        pairs.push(WindowPair {
            x,
            u: points[i + w - 1].actuators.clone(),
            y: target.sensors.clone(),
            label: target.label,
        });
    }
    Ok(pairs)
}

/// Parse a series from the CSV contract.
pub fn load_csv(path: &Path) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

/// Parse a series from CSV text (see module docs for the format).
pub fn parse_csv(text: &str) -> Result<TimeSeries> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::CsvHeader("file is empty".into()))?;
    let (m, k, has_label) = parse_header(header)?;
    let expected_cols = 1 + m + k + usize::from(has_label);

    let mut points = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1; // 1-based, counting the header as line 1
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::CsvParse {
                line: line_no,
                reason: format!("expected {expected_cols} columns, found {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::CsvParse {
                line: line_no,
                reason: format!("{what} value `{s}` is not numeric"),
            })
        };
        let t = fields[0].trim().parse::<i64>().map_err(|_| Error::CsvParse {
            line: line_no,
            reason: format!("tick `{}` is not an integer", fields[0]),
        })?;
        let mut sensors = Vec::with_capacity(m);
        for f in &fields[1..1 + m] {
            sensors.push(parse_f64(f, "sensor")?);
        }
        let mut actuators = Vec::with_capacity(k);
        for f in &fields[1 + m..1 + m + k] {
            actuators.push(parse_f64(f, "actuator")?);
        }
        let label = if has_label {
            let code = fields[1 + m + k]
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::CsvParse {
                    line: line_no,
                    reason: format!("label `{}` is not an integer", fields[1 + m + k]),
                })?;
            Label::from_code(code).map_err(|e| Error::CsvParse {
                line: line_no,
                reason: e.to_string(),
            })?
        } else {
            Label::Unknown
        };
        points.push(TimePoint {
            t,
            sensors,
            actuators,
            label,
        });
    }
    TimeSeries::new(points)
}

fn parse_header(header: &str) -> Result<(usize, usize, bool)> {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(Error::CsvHeader(format!(
            "first column must be `t`, got `{}`",
            cols.first().unwrap_or(&"")
        )));
    }
    let mut i = 1;
    let mut m = 0;
    while i < cols.len() && cols[i] == format!("s{m}") {
        m += 1;
        i += 1;
    }
    let mut k = 0;
    while i < cols.len() && cols[i] == format!("a{k}") {
        k += 1;
        i += 1;
    }
    let has_label = i < cols.len() && cols[i] == "label";
    if has_label {
        i += 1;
    }
    if i != cols.len() {
        return Err(Error::CsvHeader(format!(
            "unexpected column `{}`; header must be t,s0..s{{m-1}},a0..a{{k-1}},label",
            cols[i]
        )));
    }
    Ok((m, k, has_label))
}

/// Render a series in the CSV contract (always includes the label column).
pub fn to_csv(series: &TimeSeries) -> String {
    let m = series.num_sensors();
    let k = series.num_actuators();
    let mut out = String::from("t");
    for i in 0..m {
        out.push_str(&format!(",s{i}"));
    }
    for i in 0..k {
        out.push_str(&format!(",a{i}"));
    }
    out.push_str(",label\n");
    for p in series.points() {
        out.push_str(&p.t.to_string());
        for v in &p.sensors {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        for v in &p.actuators {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push(',');
        out.push_str(&p.label.to_string());
        out.push('\n');
    }
    out
}

/// Write a series to disk in the CSV contract.
pub fn write_csv(series: &TimeSeries, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(series))?;
    Ok(())
}

/// Shortest round-trippable decimal rendering of a double.
pub fn format_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}
