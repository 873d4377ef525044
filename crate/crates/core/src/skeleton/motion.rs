use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SkeletonError, SkeletonTopology};
use crate::geometry::{pose_to_lie, JointPositions, LieVector};

/// On-disk motion formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionFormat {
    /// Header `fps=<n>`, then one row per frame with x,y,z per joint.
    CsvJoints,
    /// Header `fps=<n>,k=<K>`, then one row per frame with 3 values per rotation entry.
    CsvLie,
}

impl FromStr for MotionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv-joints" => Ok(MotionFormat::CsvJoints),
            "csv-lie" => Ok(MotionFormat::CsvLie),
            other => Err(format!("unknown motion format `{other}` (expected csv-joints or csv-lie)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotionData {
    Joints(Vec<JointPositions>),
    Lie(Vec<LieVector>),
}

impl MotionData {
    fn kind(&self) -> &'static str {
        match self {
            MotionData::Joints(_) => "joint-position",
            MotionData::Lie(_) => "rotation-vector",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub data: MotionData,
    pub subject: String,
    pub activity: String,
}

/// Observed frames followed by the frames to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub start: usize,
    pub observed: Vec<LieVector>,
    pub target: Vec<LieVector>,
}

impl MotionSequence {
    pub fn from_lie(fps: f64, frames: Vec<LieVector>) -> Self {
        Self { fps, data: MotionData::Lie(frames), subject: String::new(), activity: String::new() }
    }

    pub fn from_joints(fps: f64, frames: Vec<JointPositions>) -> Self {
        Self { fps, data: MotionData::Joints(frames), subject: String::new(), activity: String::new() }
    }

    pub fn with_labels(mut self, subject: &str, activity: &str) -> Self {
        self.subject = subject.to_string();
        self.activity = activity.to_string();
        self
    }

    pub fn len(&self) -> usize {
        match &self.data {
            MotionData::Joints(f) => f.len(),
            MotionData::Lie(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn format(&self) -> MotionFormat {
        match self.data {
            MotionData::Joints(_) => MotionFormat::CsvJoints,
            MotionData::Lie(_) => MotionFormat::CsvLie,
        }
    }

    pub fn lie_frames(&self) -> Result<&[LieVector], SkeletonError> {
        match &self.data {
            MotionData::Lie(f) => Ok(f),
            other => Err(SkeletonError::WrongFrameKind { expected: "rotation-vector", found: other.kind() }),
        }
    }

    pub fn joint_frames(&self) -> Result<&[JointPositions], SkeletonError> {
        match &self.data {
            MotionData::Joints(f) => Ok(f),
            other => Err(SkeletonError::WrongFrameKind { expected: "joint-position", found: other.kind() }),
        }
    }

    /// Converts joint-position frames to rotation vectors.
    pub fn to_lie(&self, topo: &SkeletonTopology) -> Result<MotionSequence, SkeletonError> {
        let frames = self.joint_frames()?.iter().map(|j| pose_to_lie(j, topo)).collect::<Result<Vec<_>, _>>()?;
        Ok(MotionSequence {
            fps: self.fps,
            data: MotionData::Lie(frames),
            subject: self.subject.clone(),
            activity: self.activity.clone(),
        })
    }

    pub fn load(
        path: impl AsRef<Path>,
        format: MotionFormat,
        topo: Option<&SkeletonTopology>,
    ) -> Result<Self, SkeletonError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SkeletonError::Io { path: path.as_ref().display().to_string(), message: e.to_string() })?;
        Self::parse(&text, format, topo)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SkeletonError> {
        std::fs::write(path.as_ref(), self.to_csv())
            .map_err(|e| SkeletonError::Io { path: path.as_ref().display().to_string(), message: e.to_string() })
    }

    /// Parses either CSV format. With a topology, the row width is checked against it.
    pub fn parse(text: &str, format: MotionFormat, topo: Option<&SkeletonTopology>) -> Result<Self, SkeletonError> {
        let parse_err = |line: usize, message: String| SkeletonError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;

        let mut fps = None;
        let mut k = None;
        let mut subject = String::new();
        let mut activity = String::new();
        for field in header.split(',') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| parse_err(header_line, format!("header field `{field}` is not key=value")))?;
            match key.trim() {
                "fps" => {
                    let v = value
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| parse_err(header_line, format!("fps `{value}`: {e}")))?;
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(parse_err(header_line, format!("fps must be positive, got {v}")));
                    }
                    fps = Some(v);
                }
                "k" => {
                    k = Some(
                        value
                            .trim()
                            .parse::<usize>()
                            .map_err(|e| parse_err(header_line, format!("k `{value}`: {e}")))?,
                    )
                }
                "subject" => subject = value.trim().to_string(),
                "activity" => activity = value.trim().to_string(),
                other => return Err(parse_err(header_line, format!("unknown header key `{other}`"))),
            }
        }
        let fps = fps.ok_or_else(|| parse_err(header_line, "header lacks fps=<n>".into()))?;
        let width = match (format, k) {
            (MotionFormat::CsvJoints, Some(_)) => {
                return Err(parse_err(
                    header_line,
                    "header declares k=, which marks a csv-lie file, not csv-joints".into(),
                ))
            }
            (MotionFormat::CsvJoints, None) => topo.map(|t| 3 * t.joint_count()),
            (MotionFormat::CsvLie, None) => return Err(parse_err(header_line, "csv-lie header lacks k=<K>".into())),
            (MotionFormat::CsvLie, Some(k)) => {
                if let Some(t) = topo {
                    if t.entry_count() != k {
                        return Err(SkeletonError::DimensionMismatch { expected: t.entry_count(), got: k });
                    }
                }
                Some(3 * k)
            }
        };

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = width;
        for (line_no, line) in lines {
            let row = line
                .split(',')
                .enumerate()
                .map(|(col, v)| {
                    v.trim().parse::<f64>().map_err(|e| parse_err(line_no, format!("column {}: `{v}`: {e}", col + 1)))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let expected = *width.get_or_insert(row.len());
            if row.len() != expected || expected % 3 != 0 {
                return Err(parse_err(
                    line_no,
                    format!("expected {expected} values (a multiple of 3), got {}", row.len()),
                ));
            }
            rows.push(row);
        }

        let data = match format {
            MotionFormat::CsvJoints => MotionData::Joints(
                rows.iter().map(|r| r.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()).collect(),
            ),
            MotionFormat::CsvLie => MotionData::Lie(
                rows.iter().map(|r| LieVector::from_flat(r).expect("row width is a multiple of 3")).collect(),
            ),
        };
        Ok(Self { fps, data, subject, activity })
    }

    /// Serializes with shortest round-trip float formatting, so reloading is bit-exact.
    pub fn to_csv(&self) -> String {
        let mut out = format!("fps={}", self.fps);
        if let MotionData::Lie(frames) = &self.data {
            let k = frames.first().map_or(0, LieVector::len);
            write!(out, ",k={k}").expect("write to string");
        }
        if !self.subject.is_empty() {
            write!(out, ",subject={}", self.subject).expect("write to string");
        }
        if !self.activity.is_empty() {
            write!(out, ",activity={}", self.activity).expect("write to string");
        }
        out.push('\n');
        let mut push_row = |values: &mut dyn Iterator<Item = f64>| {
            let cells: Vec<String> = values.map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        };
        match &self.data {
            MotionData::Joints(frames) => {
                for f in frames {
                    push_row(&mut f.iter().flat_map(|p| [p.x, p.y, p.z]));
                }
            }
            MotionData::Lie(frames) => {
                for f in frames {
                    push_row(&mut f.flatten().into_iter());
                }
            }
        }
        out
    }
}

/// Replaces the topology's bone lengths with the per-bone mean over every frame.
///
/// Each bone's samples are summed in sorted order, so the result does not depend
/// on the order of `seqs`.
pub fn normalize_lengths(seqs: &[MotionSequence], topo: &SkeletonTopology) -> Result<SkeletonTopology, SkeletonError> {
    let bones = topo.bones();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); bones.len()];
    for seq in seqs {
        for frame in seq.joint_frames()? {
            if frame.len() != topo.joint_count() {
                return Err(SkeletonError::DimensionMismatch { expected: topo.joint_count(), got: frame.len() });
            }
            for (s, &(a, b)) in samples.iter_mut().zip(&bones) {
                s.push((frame[b] - frame[a]).norm());
            }
        }
    }
    if samples.first().is_none_or(Vec::is_empty) {
        return Err(SkeletonError::EmptyInput);
    }
    let means: Vec<f64> = samples
        .iter_mut()
        .map(|s| {
            s.sort_by(f64::total_cmp);
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    topo.clone().with_lengths(&means)
}

/// Decimates by the integer stride `round(fps / target_fps)`.
pub fn resample_fps(seq: &MotionSequence, target_fps: f64) -> Result<MotionSequence, SkeletonError> {
    if target_fps.is_nan() || target_fps <= 0.0 || seq.fps < target_fps {
        return Err(SkeletonError::UnsupportedRate { fps: seq.fps, target: target_fps });
    }
    let stride = (seq.fps / target_fps).round() as usize;
    let data = match &seq.data {
        MotionData::Joints(f) => MotionData::Joints(f.iter().step_by(stride).cloned().collect()),
        MotionData::Lie(f) => MotionData::Lie(f.iter().step_by(stride).cloned().collect()),
    };
    Ok(MotionSequence {
        fps: seq.fps / stride as f64,
        data,
        subject: seq.subject.clone(),
        activity: seq.activity.clone(),
    })
}

/// Draws `count` window start offsets uniformly from `[0, len - observed - horizon]`.
pub fn window_offsets<R: Rng + ?Sized>(
    len: usize,
    observed: usize,
    horizon: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SkeletonError> {
    if observed < 2 {
        return Err(SkeletonError::InvalidArgument(format!(
            "a window needs at least 2 observed frames, got {observed}"
        )));
    }
    let needed = observed + horizon;
    if len < needed {
        return Err(SkeletonError::SequenceTooShort { len, needed });
    }
    let max = len - needed;
    Ok((0..count).map(|_| rng.random_range(0..=max)).collect())
}

/// Samples windows with replacement from a seeded generator.
pub fn sample_windows(
    seq: &MotionSequence,
    observed: usize,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SampleWindow>, SkeletonError> {
    sample_windows_with(seq, observed, horizon, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_windows_with<R: Rng + ?Sized>(
    seq: &MotionSequence,
    observed: usize,
    horizon: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SampleWindow>, SkeletonError> {
    let frames = seq.lie_frames()?;
    let offsets = window_offsets(frames.len(), observed, horizon, count, rng)?;
    Ok(offsets
        .into_iter()
        .map(|start| SampleWindow {
            start,
            observed: frames[start..start + observed].to_vec(),
            target: frames[start + observed..start + observed + horizon].to_vec(),
        })
        .collect())
}
