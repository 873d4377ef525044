//! Mean angle error at fixed horizons, the zero-velocity baseline, and result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::LieVector;

/// Horizons reported in result tables, in milliseconds.
pub const STANDARD_MILLIS: [u32; 8] = [80, 160, 320, 400, 560, 640, 720, 1000];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("sequence has {len} frames, horizon needs {needed}")]
    SequenceTooShort { len: usize, needed: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid horizon grid: {0}")]
    Grid(String),
    #[error("no evaluation samples")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Horizons as milliseconds and the 1-based predicted-frame index each maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonGrid {
    millis: Vec<u32>,
    frames: Vec<usize>,
}

impl HorizonGrid {
    /// Frame index `round(ms · fps / 1000)` for each horizon.
    pub fn new(millis: &[u32], fps: f64) -> Result<Self, EvalError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(EvalError::Grid(format!("fps must be positive, got {fps}")));
        }
        let frames: Vec<usize> = millis.iter().map(|&ms| (ms as f64 * fps / 1000.0).round() as usize).collect();
        if frames.is_empty() || frames[0] == 0 || frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Grid(format!(
                "frame indices {frames:?} at {fps} fps are not strictly increasing from 1"
            )));
        }
        Ok(Self { millis: millis.to_vec(), frames })
    }

    pub fn standard(fps: f64) -> Result<Self, EvalError> {
        Self::new(&STANDARD_MILLIS, fps)
    }

    pub fn millis(&self) -> &[u32] {
        &self.millis
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Largest frame index, i.e. the number of predicted frames required.
    pub fn max_frame(&self) -> usize {
        *self.frames.last().expect("grid is non-empty")
    }

    /// The horizons reachable with `available` predicted frames.
    pub fn truncated(&self, available: usize) -> Option<Self> {
        let n = self.frames.iter().take_while(|&&f| f <= available).count();
        (n > 0).then(|| Self { millis: self.millis[..n].to_vec(), frames: self.frames[..n].to_vec() })
    }
}

/// `(1/K) Σ_z ‖a_z - b_z‖`.
pub fn frame_error(a: &LieVector, b: &LieVector) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).norm()).sum();
    sum / a.len() as f64
}

/// Per-horizon error of one predicted continuation. Frame `n` of the grid is
/// `pred[n - 1]`.
pub fn mae(pred: &[LieVector], target: &[LieVector], grid: &HorizonGrid) -> Result<Vec<f64>, EvalError> {
    let needed = grid.max_frame();
    for len in [pred.len(), target.len()] {
        if len < needed {
            return Err(EvalError::SequenceTooShort { len, needed });
        }
    }
    let k = target[0].len();
    if k == 0 {
        return Err(EvalError::Dimension("frames have no entries".into()));
    }
    grid.frames()
        .iter()
        .map(|&n| {
            let (p, t) = (&pred[n - 1], &target[n - 1]);
            if p.len() != k || t.len() != k {
                return Err(EvalError::Dimension(format!("frame {n}: {} vs {} entries", p.len(), t.len())));
            }
            Ok(frame_error(p, t))
        })
        .collect()
}

/// Per-horizon error averaged over `(pred, target)` samples.
pub fn mean_mae(samples: &[(&[LieVector], &[LieVector])], grid: &HorizonGrid) -> Result<Vec<f64>, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut total = vec![0.0; grid.len()];
    for (p, t) in samples {
        for (acc, v) in total.iter_mut().zip(mae(p, t, grid)?) {
            *acc += v;
        }
    }
    Ok(total.into_iter().map(|v| v / samples.len() as f64).collect())
}

/// `horizon` copies of the last observed frame.
pub fn zero_velocity(observed: &[LieVector], horizon: usize) -> Result<Vec<LieVector>, EvalError> {
    let last = observed.last().ok_or(EvalError::Empty)?;
    Ok(vec![last.clone(); horizon])
}

/// Error table keyed by `(activity, method)`; rows are kept sorted by activity,
/// then method. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    millis: Vec<u32>,
    rows: BTreeMap<(String, String), Vec<Option<f64>>>,
}

impl EvalReport {
    pub fn new(millis: &[u32]) -> Self {
        Self { millis: millis.to_vec(), rows: BTreeMap::new() }
    }

    pub fn standard() -> Self {
        Self::new(&STANDARD_MILLIS)
    }

    pub fn millis(&self) -> &[u32] {
        &self.millis
    }

    /// Stores `values` for the listed horizons; other columns of the row stay as they were.
    pub fn insert(&mut self, activity: &str, method: &str, millis: &[u32], values: &[f64]) -> Result<(), EvalError> {
        if millis.len() != values.len() {
            return Err(EvalError::Dimension(format!("{} horizons, {} values", millis.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(EvalError::Dimension(format!("error values must be finite and non-negative, got {v}")));
        }
        let cols: Vec<usize> = millis
            .iter()
            .map(|ms| {
                self.millis
                    .iter()
                    .position(|m| m == ms)
                    .ok_or_else(|| EvalError::Grid(format!("report has no {ms} ms column")))
            })
            .collect::<Result<_, _>>()?;
        let row = self
            .rows
            .entry((activity.to_string(), method.to_string()))
            .or_insert_with(|| vec![None; self.millis.len()]);
        for (c, &v) in cols.into_iter().zip(values) {
            row[c] = Some(v);
        }
        Ok(())
    }

    pub fn get(&self, activity: &str, method: &str) -> Option<&[Option<f64>]> {
        self.rows.get(&(activity.to_string(), method.to_string())).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &str, &[Option<f64>])> {
        self.rows.iter().map(|((a, m), v)| (a.as_str(), m.as_str(), v.as_slice()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("activity,method");
        for ms in &self.millis {
            write!(out, ",h{ms}").unwrap();
        }
        out.push('\n');
        for (activity, method, values) in self.rows() {
            out.push_str(activity);
            out.push(',');
            out.push_str(method);
            for v in values {
                match v {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => out.push_str(",_"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(EvalError::Empty)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "activity" || cols[1] != "method" {
            return Err(EvalError::Parse { line: 1, message: "expected header `activity,method,h<ms>,...`".into() });
        }
        let millis = cols[2..]
            .iter()
            .map(|c| c.strip_prefix('h').and_then(|ms| ms.parse::<u32>().ok()))
            .collect::<Option<Vec<u32>>>()
            .ok_or_else(|| EvalError::Parse { line: 1, message: format!("bad horizon column in `{header}`") })?;
        let mut report = Self::new(&millis);
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(EvalError::Parse {
                    line: idx + 1,
                    message: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let mut present = (Vec::new(), Vec::new());
            for (ms, f) in millis.iter().zip(&fields[2..]) {
                if *f == "_" {
                    continue;
                }
                let v =
                    f.parse::<f64>().map_err(|e| EvalError::Parse { line: idx + 1, message: format!("`{f}`: {e}") })?;
                present.0.push(*ms);
                present.1.push(v);
            }
            report
                .rows
                .entry((fields[0].to_string(), fields[1].to_string()))
                .or_insert_with(|| vec![None; millis.len()]);
            report
                .insert(fields[0], fields[1], &present.0, &present.1)
                .map_err(|e| EvalError::Parse { line: idx + 1, message: e.to_string() })?;
        }
        Ok(report)
    }

    /// Fixed-width text table with three decimals.
    pub fn to_table(&self) -> String {
        let labels: Vec<String> = self.millis.iter().map(|ms| format!("{ms}ms")).collect();
        let wa = self.rows().map(|r| r.0.len()).chain([8]).max().unwrap_or(8);
        let wm = self.rows().map(|r| r.1.len()).chain([6]).max().unwrap_or(6);
        let mut out = format!("{:<wa$}  {:<wm$}", "activity", "method");
        for l in &labels {
            write!(out, "  {l:>7}").unwrap();
        }
        out.push('\n');
        for (activity, method, values) in self.rows() {
            write!(out, "{activity:<wa$}  {method:<wm$}").unwrap();
            for v in values {
                match v {
                    Some(v) => write!(out, "  {v:>7.3}").unwrap(),
                    None => write!(out, "  {:>7}", "_").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}
