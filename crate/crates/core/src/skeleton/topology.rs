use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use super::SkeletonError;
use crate::geometry::UnitVec3;

/// Which decoder branch predicts a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChainRole {
    Spine,
    Arm,
    Leg,
}

impl ChainRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChainRole::Spine => "spine",
            ChainRole::Arm => "arm",
            ChainRole::Leg => "leg",
        }
    }
}

impl fmt::Display for ChainRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChainRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spine" => Ok(ChainRole::Spine),
            "arm" => Ok(ChainRole::Arm),
            "leg" => Ok(ChainRole::Leg),
            other => Err(format!("unknown chain role `{other}` (expected spine, arm or leg)")),
        }
    }
}

/// One kinematic chain: joints root-to-tip, one bone between each consecutive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    role: ChainRole,
    label: Option<String>,
    joints: Vec<usize>,
    lengths: Vec<f64>,
    rest: Option<UnitVec3>,
}

impl Chain {
    pub fn role(&self) -> ChainRole {
        self.role
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// Joint indices, attachment joint first.
    pub fn joints(&self) -> &[usize] {
        &self.joints
    }

    /// Bone lengths, root-to-tip.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn bone_count(&self) -> usize {
        self.joints.len() - 1
    }

    /// Number of rotation entries this chain contributes.
    pub fn entry_count(&self) -> usize {
        self.bone_count() - 1
    }

    /// First bone direction used when no observed pose anchors the chain.
    pub fn rest_direction(&self) -> UnitVec3 {
        self.rest.unwrap_or_else(|| self.default_rest())
    }

    fn default_rest(&self) -> UnitVec3 {
        match self.role {
            ChainRole::Spine => UnitVec3::y_axis(),
            _ => {
                let side = if self.label.as_deref().is_some_and(|l| l.contains("left")) { 1.0 } else { -1.0 };
                UnitVec3::normalize(Vector3::new(side, 0.0, 0.0)).expect("axis vector")
            }
        }
    }
}

/// Per-chain shape of a rotation vector: role and entry count, in chain-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainLayout {
    chains: Vec<(ChainRole, usize)>,
}

impl ChainLayout {
    pub fn new(chains: Vec<(ChainRole, usize)>) -> Self {
        Self { chains }
    }

    pub fn chains(&self) -> &[(ChainRole, usize)] {
        &self.chains
    }

    /// Total number of entries `K`.
    pub fn entry_count(&self) -> usize {
        self.chains.iter().map(|(_, k)| k).sum()
    }

    /// Entry index range of each chain.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.chains
            .iter()
            .map(|(_, k)| {
                let r = start..start + k;
                start += k;
                r
            })
            .collect()
    }

    /// Previous entry in the same chain, `None` for the first entry of a chain.
    pub fn spatial_predecessors(&self) -> Vec<Option<usize>> {
        self.ranges().into_iter().flat_map(|r| r.clone().map(move |j| (j > r.start).then(|| j - 1))).collect()
    }
}

impl fmt::Display for ChainLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.chains.iter().map(|(r, k)| format!("{r}:{k}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ChainLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chains = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (role, k) = part.split_once(':').ok_or_else(|| format!("layout entry `{part}` is not role:count"))?;
            let k = k.trim().parse::<usize>().map_err(|e| format!("layout entry `{part}`: {e}"))?;
            chains.push((role.trim().parse()?, k));
        }
        if chains.is_empty() {
            return Err("empty chain layout".into());
        }
        Ok(Self { chains })
    }
}

/// Kinematic tree made of chains. The first joint of the first chain is the root;
/// every other chain starts at a joint placed by an earlier chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joints: Vec<String>,
    chains: Vec<Chain>,
}

const HUMAN: &str = include_str!("../../assets/human17.topo");
const MOUSE: &str = include_str!("../../assets/mouse.topo");
const SINGLE_CHAIN: &str = include_str!("../../assets/single_chain.topo");
const TINY: &str = include_str!("../../assets/tiny.topo");

impl SkeletonTopology {
    /// Shipped five-chain human skeleton (17 bones, K = 12).
    pub fn human() -> Self {
        Self::parse(HUMAN).expect("bundled human topology is valid")
    }

    /// Shipped mouse-like skeleton: spine, two forelimbs and two hind limbs.
    pub fn mouse() -> Self {
        Self::parse(MOUSE).expect("bundled mouse topology is valid")
    }

    /// Single chain of four unit bones (K = 3), used as a test rig.
    pub fn single_chain() -> Self {
        Self::parse(SINGLE_CHAIN).expect("bundled single-chain topology is valid")
    }

    /// Two chains of three bones each (K = 4), an arm and a leg.
    pub fn tiny() -> Self {
        Self::parse(TINY).expect("bundled tiny topology is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SkeletonError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SkeletonError::Io { path: path.as_ref().display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, id: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == id)
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn root_joint(&self) -> usize {
        self.chains[0].joints[0]
    }

    pub fn bone_count(&self) -> usize {
        self.chains.iter().map(Chain::bone_count).sum()
    }

    /// `K = Σ_c (bones in chain c - 1)`.
    pub fn entry_count(&self) -> usize {
        self.chains.iter().map(Chain::entry_count).sum()
    }

    pub fn layout(&self) -> ChainLayout {
        ChainLayout::new(self.chains.iter().map(|c| (c.role, c.entry_count())).collect())
    }

    /// Length of the bone each rotation entry orients (the child bone of the pair).
    pub fn entry_lengths(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.lengths[1..].iter().copied()).collect()
    }

    /// All bones as `(start joint, end joint)`, chain-major.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.chains.iter().flat_map(|c| c.joints.windows(2).map(|w| (w[0], w[1]))).collect()
    }

    /// Replaces bone lengths, chain-major; must supply one positive length per bone.
    pub fn with_lengths(mut self, lengths: &[f64]) -> Result<Self, SkeletonError> {
        if lengths.len() != self.bone_count() {
            return Err(SkeletonError::DimensionMismatch { expected: self.bone_count(), got: lengths.len() });
        }
        if let Some(bad) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(SkeletonError::Validation(format!("bone length {bad} is not positive")));
        }
        let mut it = lengths.iter().copied();
        for chain in &mut self.chains {
            for l in &mut chain.lengths {
                *l = it.next().expect("count checked");
            }
        }
        Ok(self)
    }

    /// Replaces the rest direction of every chain's first bone.
    pub fn with_rest_directions(mut self, dirs: &[UnitVec3]) -> Result<Self, SkeletonError> {
        if dirs.len() != self.chains.len() {
            return Err(SkeletonError::DimensionMismatch { expected: self.chains.len(), got: dirs.len() });
        }
        for (chain, d) in self.chains.iter_mut().zip(dirs) {
            chain.rest = Some(*d);
        }
        Ok(self)
    }

    /// Parses the line-oriented topology format.
    pub fn parse(text: &str) -> Result<Self, SkeletonError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Joints,
            Chains,
            Lengths,
            Rest,
        }
        let parse_err = |line: usize, message: String| SkeletonError::Parse { line, message };

        let mut section = Section::None;
        let mut joints: Vec<String> = Vec::new();
        let mut raw_chains: Vec<(usize, ChainRole, Option<String>, Vec<String>)> = Vec::new();
        let mut raw_lengths: Vec<(usize, String, String, f64)> = Vec::new();
        let mut raw_rest: Vec<(usize, String, String, Vector3<f64>)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[joints]" => Section::Joints,
                    "[chains]" => Section::Chains,
                    "[lengths]" => Section::Lengths,
                    "[rest]" => Section::Rest,
                    other => return Err(parse_err(line_no, format!("unknown section {other}"))),
                };
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match section {
                Section::None => return Err(parse_err(line_no, "content before the first section".into())),
                Section::Joints => {
                    if fields.len() != 1 {
                        return Err(parse_err(line_no, format!("expected one joint id, got `{line}`")));
                    }
                    if joints.iter().any(|j| j == fields[0]) {
                        return Err(parse_err(line_no, format!("duplicate joint `{}`", fields[0])));
                    }
                    joints.push(fields[0].to_string());
                }
                Section::Chains => {
                    let (head, rest) = line
                        .split_once(':')
                        .ok_or_else(|| parse_err(line_no, "chain line needs `role: joints...`".into()))?;
                    let (role, label) = match head.trim().split_once('.') {
                        Some((r, l)) => (r, Some(l.to_string())),
                        None => (head.trim(), None),
                    };
                    let role = role.parse::<ChainRole>().map_err(|m| parse_err(line_no, m))?;
                    let ids = rest.split_whitespace().map(String::from).collect();
                    raw_chains.push((line_no, role, label, ids));
                }
                Section::Lengths => {
                    if fields.len() != 3 {
                        return Err(parse_err(line_no, "length line needs `from to length`".into()));
                    }
                    let len = fields[2]
                        .parse::<f64>()
                        .map_err(|e| parse_err(line_no, format!("length `{}`: {e}", fields[2])))?;
                    raw_lengths.push((line_no, fields[0].into(), fields[1].into(), len));
                }
                Section::Rest => {
                    if fields.len() != 5 {
                        return Err(parse_err(line_no, "rest line needs `from to x y z`".into()));
                    }
                    let mut xyz = [0.0; 3];
                    for (slot, f) in xyz.iter_mut().zip(&fields[2..]) {
                        *slot = f.parse::<f64>().map_err(|e| parse_err(line_no, format!("coordinate `{f}`: {e}")))?;
                    }
                    raw_rest.push((line_no, fields[0].into(), fields[1].into(), Vector3::from(xyz)));
                }
            }
        }

        let invalid = |m: String| SkeletonError::Validation(m);
        if raw_chains.is_empty() {
            return Err(invalid("topology declares no chains".into()));
        }
        let lookup = |id: &str, line: usize| {
            joints.iter().position(|j| j == id).ok_or_else(|| parse_err(line, format!("undeclared joint `{id}`")))
        };

        let mut placed = vec![false; joints.len()];
        let mut chains = Vec::with_capacity(raw_chains.len());
        for (c, (line, role, label, ids)) in raw_chains.into_iter().enumerate() {
            if ids.len() < 2 {
                return Err(invalid(format!("chain on line {line} needs at least two joints")));
            }
            let idx = ids.iter().map(|id| lookup(id, line)).collect::<Result<Vec<_>, _>>()?;
            if c == 0 {
                placed[idx[0]] = true;
            } else if !placed[idx[0]] {
                return Err(invalid(format!(
                    "chain on line {line} starts at `{}`, which no earlier chain reaches",
                    ids[0]
                )));
            }
            for (id, &j) in ids.iter().zip(&idx).skip(1) {
                if placed[j] {
                    return Err(invalid(format!(
                        "joint `{id}` on line {line} is already placed; chains must form a tree"
                    )));
                }
                placed[j] = true;
            }
            let bones = idx.len() - 1;
            chains.push(Chain { role, label, joints: idx, lengths: vec![1.0; bones], rest: None });
        }
        if let Some(j) = placed.iter().position(|p| !p) {
            return Err(invalid(format!("joint `{}` is not connected to any chain", joints[j])));
        }

        let find_bone = |chains: &[Chain], from: usize, to: usize| {
            chains
                .iter()
                .enumerate()
                .find_map(|(c, ch)| ch.joints.windows(2).position(|w| w[0] == from && w[1] == to).map(|b| (c, b)))
        };
        let mut seen = vec![Vec::new(); chains.len()];
        for (c, ch) in chains.iter().enumerate() {
            seen[c] = vec![false; ch.bone_count()];
        }
        for (line, from, to, len) in &raw_lengths {
            let (f, t) = (lookup(from, *line)?, lookup(to, *line)?);
            let (c, b) =
                find_bone(&chains, f, t).ok_or_else(|| invalid(format!("line {line}: `{from} {to}` is not a bone")))?;
            if !(*len > 0.0 && len.is_finite()) {
                return Err(invalid(format!("line {line}: bone `{from} {to}` has length {len}")));
            }
            chains[c].lengths[b] = *len;
            seen[c][b] = true;
        }
        if !raw_lengths.is_empty() {
            if let Some((c, b)) = seen.iter().enumerate().find_map(|(c, s)| s.iter().position(|x| !x).map(|b| (c, b))) {
                let j = &chains[c].joints;
                return Err(invalid(format!("missing length for bone `{} {}`", joints[j[b]], joints[j[b + 1]])));
            }
        }
        for (line, from, to, dir) in raw_rest {
            let (f, t) = (lookup(&from, line)?, lookup(&to, line)?);
            let c = chains
                .iter()
                .position(|ch| ch.joints[0] == f && ch.joints[1] == t)
                .ok_or_else(|| invalid(format!("line {line}: `{from} {to}` is not a chain's first bone")))?;
            chains[c].rest =
                Some(UnitVec3::normalize(dir).map_err(|_| invalid(format!("line {line}: zero rest direction")))?);
        }

        Ok(Self { joints, chains })
    }

    /// Serializes back into the topology format, including lengths and any rest directions.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[joints]\n");
        for j in &self.joints {
            out.push_str(j);
            out.push('\n');
        }
        out.push_str("\n[chains]\n");
        for c in &self.chains {
            let ids: Vec<&str> = c.joints.iter().map(|&j| self.joints[j].as_str()).collect();
            match &c.label {
                Some(l) => out.push_str(&format!("{}.{}: {}\n", c.role, l, ids.join(" "))),
                None => out.push_str(&format!("{}: {}\n", c.role, ids.join(" "))),
            }
        }
        out.push_str("\n[lengths]\n");
        for c in &self.chains {
            for (w, len) in c.joints.windows(2).zip(&c.lengths) {
                out.push_str(&format!("{} {} {}\n", self.joints[w[0]], self.joints[w[1]], len));
            }
        }
        let rest: Vec<&Chain> = self.chains.iter().filter(|c| c.rest.is_some()).collect();
        if !rest.is_empty() {
            out.push_str("\n[rest]\n");
            for c in rest {
                let d = c.rest.expect("filtered").into_inner();
                out.push_str(&format!(
                    "{} {} {} {} {}\n",
                    self.joints[c.joints[0]], self.joints[c.joints[1]], d.x, d.y, d.z
                ));
            }
        }
        out
    }
}
