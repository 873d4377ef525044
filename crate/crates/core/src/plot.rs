//! Stick-figure strips as standalone SVG.

use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{lie_to_pose, GeometryError, JointPositions, RootConfig};
use crate::skeleton::{MotionData, MotionSequence, SkeletonTopology};

/// Chain stroke colors, cycled by chain index.
pub const CHAIN_COLORS: [&str; 5] = ["black", "gold", "green", "darkcyan", "darkviolet"];

const PANEL: f64 = 160.0;
const MARGIN: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlotError {
    #[error("no frames selected")]
    NoFrames,
    #[error("frame {index} is out of range for a {len}-frame sequence")]
    FrameOutOfRange { index: usize, len: usize },
    #[error("frame has {got} joints, topology has {expected}")]
    JointCount { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Joint positions for the selected frames; rotation frames go through forward
/// kinematics from the topology's rest anchor.
pub fn frame_poses(
    seq: &MotionSequence,
    topo: &SkeletonTopology,
    frames: &[usize],
) -> Result<Vec<JointPositions>, PlotError> {
    if frames.is_empty() {
        return Err(PlotError::NoFrames);
    }
    let len = seq.len();
    if let Some(&index) = frames.iter().find(|&&i| i >= len) {
        return Err(PlotError::FrameOutOfRange { index, len });
    }
    let root = RootConfig::rest(topo);
    frames
        .iter()
        .map(|&i| match &seq.data {
            MotionData::Joints(f) => {
                if f[i].len() != topo.joint_count() {
                    return Err(PlotError::JointCount { expected: topo.joint_count(), got: f[i].len() });
                }
                Ok(f[i].clone())
            }
            MotionData::Lie(f) => Ok(lie_to_pose(&f[i], topo, &root)?),
        })
        .collect()
}

/// One panel per selected frame, left to right, all drawn at a shared scale so
/// every joint lands inside its panel. The view looks down the z axis.
pub fn render_svg(seq: &MotionSequence, topo: &SkeletonTopology, frames: &[usize]) -> Result<String, PlotError> {
    let poses = frame_poses(seq, topo, frames)?;
    let root = topo.root_joint();
    let rel: Vec<Vec<Vector3<f64>>> = poses.iter().map(|p| p.iter().map(|j| j - p[root]).collect()).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for j in rel.iter().flatten() {
        for a in 0..2 {
            lo[a] = lo[a].min(j[a]);
            hi[a] = hi[a].max(j[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (PANEL - 2.0 * MARGIN) / extent;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let width = PANEL * rel.len() as f64;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.3}" height="{PANEL:.3}" viewBox="0 0 {width:.3} {PANEL:.3}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect x="0" y="0" width="{width:.3}" height="{PANEL:.3}" fill="white"/>"#).unwrap();
    for (panel, (joints, frame)) in rel.iter().zip(frames).enumerate() {
        let cx = PANEL * (panel as f64 + 0.5);
        let cy = PANEL / 2.0;
        let at = |v: &Vector3<f64>| (cx + (v[0] - mid[0]) * scale, cy - (v[1] - mid[1]) * scale);
        writeln!(out, r#"<g class="figure" data-frame="{frame}">"#).unwrap();
        for (c, chain) in topo.chains().iter().enumerate() {
            let color = CHAIN_COLORS[c % CHAIN_COLORS.len()];
            for pair in chain.joints().windows(2) {
                let (x1, y1) = at(&joints[pair[0]]);
                let (x2, y2) = at(&joints[pair[1]]);
                writeln!(
                    out,
                    r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="{color}" stroke-width="2"/>"#
                )
                .unwrap();
            }
        }
        for j in joints {
            let (x, y) = at(j);
            writeln!(out, r#"<circle cx="{x:.3}" cy="{y:.3}" r="1.5" fill="dimgray"/>"#).unwrap();
        }
        writeln!(out, "</g>").unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}
