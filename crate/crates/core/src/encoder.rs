//! Hierarchical recurrent encoder over the frame × entry grid.
//!
//! Every cell `(i, j)` holds a hidden and a memory vector. A layer updates all
//! cells at once from the previous layer's states: the temporal neighbours
//! `(i-1, j)`, `(i, j)`, `(i+1, j)`, the previous entry of the same chain
//! `(i, j-1)`, the global spatial state of frame `i` and the global temporal
//! state of entry `j`. The two global states are then refreshed from the new
//! cells. Out-of-grid neighbours are zero vectors, and one parameter set is
//! shared by every cell and layer.
//!
//! The implementation works on row-stacked batches: row `(b·F + i)·K + j` holds
//! cell `(i, j)` of sample `b`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::geometry::LieVector;
use crate::model::{gate, EncoderConfig, EncoderParams, GlobalGate, GlobalParams, ModelError, CELL_GATES};
use crate::skeleton::ChainLayout;

/// Row bookkeeping for a batch of `frames x entries` grids.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    pub batch: usize,
    pub frames: usize,
    pub entries: usize,
    spatial_pred: Vec<Option<usize>>,
}

impl Grid {
    pub fn new(batch: usize, frames: usize, layout: &ChainLayout) -> Self {
        Self { batch, frames, entries: layout.entry_count(), spatial_pred: layout.spatial_predecessors() }
    }

    pub fn cells(&self) -> usize {
        self.frames * self.entries
    }

    pub fn rows(&self) -> usize {
        self.batch * self.cells()
    }

    /// Member rows of each `(b, j)` group, frames in order; group index `b·K + j`.
    pub fn temporal_groups(&self) -> Vec<Vec<usize>> {
        let (f, k) = (self.frames, self.entries);
        (0..self.batch).flat_map(|b| (0..k).map(move |j| (0..f).map(|i| (b * f + i) * k + j).collect())).collect()
    }

    /// Member rows of each `(b, i)` group, entries in order; group index `b·F + i`.
    pub fn spatial_groups(&self) -> Vec<Vec<usize>> {
        let (f, k) = (self.frames, self.entries);
        (0..self.batch * f).map(|bi| (0..k).map(|j| bi * k + j).collect()).collect()
    }

    fn split(&self, row: usize) -> (usize, usize, usize) {
        let (f, k) = (self.frames, self.entries);
        (row / (f * k), (row / k) % f, row % k)
    }
}

/// Gather indices for a local update over `rows`, in that order.
struct Plan {
    rows: Vec<usize>,
    identity: bool,
    left: Vec<Option<usize>>,
    right: Vec<Option<usize>>,
    spatial: Vec<Option<usize>>,
    frame_group: Vec<Option<usize>>,
    entry_group: Vec<Option<usize>>,
    /// Maps results back to canonical row order when `rows` is a permutation.
    inverse: Option<Vec<Option<usize>>>,
}

impl Plan {
    fn new(grid: &Grid, rows: Vec<usize>) -> Self {
        let (f, k) = (grid.frames, grid.entries);
        let identity = rows.len() == grid.rows() && rows.iter().enumerate().all(|(a, &b)| a == b);
        let mut plan = Plan {
            identity,
            left: Vec::with_capacity(rows.len()),
            right: Vec::with_capacity(rows.len()),
            spatial: Vec::with_capacity(rows.len()),
            frame_group: Vec::with_capacity(rows.len()),
            entry_group: Vec::with_capacity(rows.len()),
            inverse: None,
            rows: Vec::new(),
        };
        for &r in &rows {
            let (b, i, j) = grid.split(r);
            plan.left.push((i > 0).then(|| r - k));
            plan.right.push((i + 1 < f).then(|| r + k));
            plan.spatial.push(grid.spatial_pred[j].map(|p| r - j + p));
            plan.frame_group.push(Some(b * f + i));
            plan.entry_group.push(Some(b * k + j));
        }
        if !identity && rows.len() == grid.rows() {
            let mut inv = vec![None; rows.len()];
            for (pos, &r) in rows.iter().enumerate() {
                inv[r] = Some(pos);
            }
            plan.inverse = Some(inv);
        }
        plan.rows = rows;
        plan
    }

    fn select(&self, tape: &mut Tape, v: Var) -> Result<Var, ModelError> {
        if self.identity {
            Ok(v)
        } else {
            Ok(tape.gather_rows(v, self.rows.iter().map(|&r| Some(r)).collect())?)
        }
    }
}

/// Encoder states recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StateVars {
    pub h: Var,
    pub c: Var,
    pub g_t: Var,
    pub c_gt: Var,
    pub g_s: Var,
    pub c_gs: Var,
}

/// Layer-0 states: every cell starts from its embedded pose, the global states
/// from means of those embeddings.
pub(crate) fn embed(
    tape: &mut Tape,
    pose: Var,
    p: &EncoderParams<Var>,
    grid: &Grid,
    config: &EncoderConfig,
) -> Result<StateVars, ModelError> {
    let lin = tape.matmul(pose, p.embed_weight)?;
    let e = tape.add(lin, p.embed_bias)?;
    let h = config.hidden;
    let g_t = if config.disable_global_temporal {
        tape.leaf(Tensor::zeros(&[grid.batch * grid.entries, h]))
    } else {
        let s = tape.segment_sum(e, grid.temporal_groups())?;
        tape.scale(s, 1.0 / grid.frames as f64)
    };
    let g_s = if config.disable_global_spatial {
        tape.leaf(Tensor::zeros(&[grid.batch * grid.frames, h]))
    } else {
        let s = tape.segment_sum(e, grid.spatial_groups())?;
        tape.scale(s, 1.0 / grid.entries as f64)
    };
    Ok(StateVars { h: e, c: e, g_t, c_gt: g_t, g_s, c_gs: g_s })
}

/// New `(h, c)` for the rows in `plan`, from the previous layer's states.
fn local_step(
    tape: &mut Tape,
    pose: Var,
    prev: &StateVars,
    p: &EncoderParams<Var>,
    config: &EncoderConfig,
    plan: &Plan,
) -> Result<(Var, Var), ModelError> {
    let hd = config.hidden;
    let x = plan.select(tape, pose)?;
    let h_same = plan.select(tape, prev.h)?;
    let c_same = plan.select(tape, prev.c)?;
    let h_left = tape.gather_rows(prev.h, plan.left.clone())?;
    let h_right = tape.gather_rows(prev.h, plan.right.clone())?;
    let h_spatial = tape.gather_rows(prev.h, plan.spatial.clone())?;
    let c_left = tape.gather_rows(prev.c, plan.left.clone())?;
    let c_right = tape.gather_rows(prev.c, plan.right.clone())?;
    let c_spatial = tape.gather_rows(prev.c, plan.spatial.clone())?;
    let neighbours = tape.concat_cols(&[h_left, h_right, h_same])?;

    let mut terms = vec![
        tape.matmul(x, p.cell.pose)?,
        tape.matmul(neighbours, p.cell.temporal)?,
        tape.matmul(h_spatial, p.cell.spatial)?,
    ];
    let mut global_cells = Vec::new();
    if !config.disable_global_spatial {
        let g = tape.gather_rows(prev.g_s, plan.frame_group.clone())?;
        terms.push(tape.matmul(g, p.cell.global_spatial)?);
        global_cells.push((gate::GLOBAL_SPATIAL, tape.gather_rows(prev.c_gs, plan.frame_group.clone())?));
    }
    if !config.disable_global_temporal {
        let g = tape.gather_rows(prev.g_t, plan.entry_group.clone())?;
        terms.push(tape.matmul(g, p.cell.global_temporal)?);
        global_cells.push((gate::GLOBAL_TEMPORAL, tape.gather_rows(prev.c_gt, plan.entry_group.clone())?));
    }
    let summed = tape.add_all(&terms)?;
    let pre = tape.add(summed, p.cell.bias)?;

    let sig_block = tape.slice_cols(pre, 0, gate::CANDIDATE * hd)?;
    let sig = tape.sigmoid(sig_block);
    let gate_of = |tape: &mut Tape, g: usize| tape.slice_cols(sig, g * hd, (g + 1) * hd);
    let cand_pre = tape.slice_cols(pre, gate::CANDIDATE * hd, CELL_GATES * hd)?;
    let candidate = tape.tanh(cand_pre);

    let mut cell_terms = Vec::with_capacity(7);
    for (g, c) in [(gate::LEFT, c_left), (gate::SAME, c_same), (gate::RIGHT, c_right), (gate::SPATIAL, c_spatial)]
        .into_iter()
        .chain(global_cells)
    {
        let gv = gate_of(tape, g)?;
        cell_terms.push(tape.mul(gv, c)?);
    }
    let input = gate_of(tape, gate::INPUT)?;
    cell_terms.insert(0, tape.mul(input, candidate)?);
    let c_new = tape.add_all(&cell_terms)?;
    let out = gate_of(tape, gate::OUTPUT)?;
    let squashed = tape.tanh(c_new);
    let h_new = tape.mul(out, squashed)?;

    match &plan.inverse {
        Some(inv) => Ok((tape.gather_rows(h_new, inv.clone())?, tape.gather_rows(c_new, inv.clone())?)),
        None => Ok((h_new, c_new)),
    }
}

/// Refreshes one family of global states from the new cells of its groups.
///
/// `member_group[r]` is the group of row `r`; `groups[g]` lists its rows.
#[allow(clippy::too_many_arguments)]
fn global_step(
    tape: &mut Tape,
    h: Var,
    c: Var,
    g_prev: Var,
    c_prev: Var,
    p: &GlobalParams<Var>,
    member_group: Vec<Option<usize>>,
    groups: Vec<Vec<usize>>,
    group_size: usize,
) -> Result<(Var, Var), ModelError> {
    let g_rows = tape.gather_rows(g_prev, member_group)?;
    let a = tape.matmul(h, p.cell.hidden)?;
    let b = tape.matmul(g_rows, p.cell.state)?;
    let ab = tape.add(a, b)?;
    let pre = tape.add(ab, p.cell.bias)?;
    let per_cell = tape.sigmoid(pre);
    let kept = tape.mul(per_cell, c)?;
    let cell_sum = tape.segment_sum(kept, groups.clone())?;

    let h_sum = tape.segment_sum(h, groups)?;
    let h_mean = tape.scale(h_sum, 1.0 / group_size as f64);
    let sigmoid_gate = |tape: &mut Tape, q: &GlobalGate<Var>| -> Result<Var, ModelError> {
        let a = tape.matmul(h_mean, q.hidden)?;
        let b = tape.matmul(g_prev, q.state)?;
        let ab = tape.add(a, b)?;
        let pre = tape.add(ab, q.bias)?;
        Ok(tape.sigmoid(pre))
    };
    let keep = sigmoid_gate(tape, &p.keep)?;
    let out = sigmoid_gate(tape, &p.output)?;

    let carried = tape.mul(keep, c_prev)?;
    let c_new = tape.add(cell_sum, carried)?;
    let squashed = tape.tanh(c_new);
    let g_new = tape.mul(out, squashed)?;
    Ok((g_new, c_new))
}

fn temporal_step(
    tape: &mut Tape,
    h: Var,
    c: Var,
    prev: &StateVars,
    p: &EncoderParams<Var>,
    grid: &Grid,
) -> Result<(Var, Var), ModelError> {
    let member = (0..grid.rows())
        .map(|r| {
            let (b, _, j) = grid.split(r);
            Some(b * grid.entries + j)
        })
        .collect();
    global_step(tape, h, c, prev.g_t, prev.c_gt, &p.temporal, member, grid.temporal_groups(), grid.frames)
}

fn spatial_step(
    tape: &mut Tape,
    h: Var,
    c: Var,
    prev: &StateVars,
    p: &EncoderParams<Var>,
    grid: &Grid,
) -> Result<(Var, Var), ModelError> {
    let member = (0..grid.rows()).map(|r| Some(r / grid.entries)).collect();
    global_step(tape, h, c, prev.g_s, prev.c_gs, &p.spatial, member, grid.spatial_groups(), grid.entries)
}

/// Runs the full encoder. `order`, if given, is the within-sample cell visitation
/// order (a permutation of `0..frames·entries`) applied to every sample.
pub(crate) fn encode_vars(
    tape: &mut Tape,
    pose: Var,
    p: &EncoderParams<Var>,
    grid: &Grid,
    config: &EncoderConfig,
    order: Option<&[usize]>,
) -> Result<StateVars, ModelError> {
    let rows: Vec<usize> = match order {
        Some(o) => {
            check_permutation(o, grid.cells())?;
            (0..grid.batch).flat_map(|b| o.iter().map(move |&cell| b * grid.cells() + cell)).collect()
        }
        None => (0..grid.rows()).collect(),
    };
    let plan = Plan::new(grid, rows);
    let mut state = embed(tape, pose, p, grid, config)?;
    for _ in 0..config.layers {
        let (h, c) = local_step(tape, pose, &state, p, config, &plan)?;
        let (g_t, c_gt) = if config.disable_global_temporal {
            (state.g_t, state.c_gt)
        } else {
            temporal_step(tape, h, c, &state, p, grid)?
        };
        let (g_s, c_gs) = if config.disable_global_spatial {
            (state.g_s, state.c_gs)
        } else {
            spatial_step(tape, h, c, &state, p, grid)?
        };
        state = StateVars { h, c, g_t, c_gt, g_s, c_gs };
    }
    Ok(state)
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), ModelError> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(ModelError::Dimension(format!("visitation order has {} cells, grid has {n}", order.len())));
    }
    for &o in order {
        if o >= n || std::mem::replace(&mut seen[o], true) {
            return Err(ModelError::Dimension(format!("visitation order is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// Stacks frames into a `(frames·K) x 3` pose matrix, rows frame-major.
pub(crate) fn pose_matrix(frames: &[&LieVector], entries: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(frames.len() * entries * 3);
    for f in frames {
        if f.len() != entries {
            return Err(ModelError::Dimension(format!(
                "frame has {} rotation entries, model expects {entries}",
                f.len()
            )));
        }
        data.extend(f.flatten());
    }
    Ok(Tensor::matrix(frames.len() * entries, 3, data)?)
}

/// Encoder states of a single sample after some number of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    frames: usize,
    entries: usize,
    hidden: usize,
    /// `(frames·K) x H`, row `i·K + j`.
    pub h: Tensor,
    pub c: Tensor,
    /// `K x H`, one row per entry.
    pub g_t: Tensor,
    pub c_gt: Tensor,
    /// `frames x H`, one row per frame.
    pub g_s: Tensor,
    pub c_gs: Tensor,
}

impl EncoderState {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn h_at(&self, i: usize, j: usize) -> &[f64] {
        self.h.row_slice(i * self.entries + j)
    }

    pub fn c_at(&self, i: usize, j: usize) -> &[f64] {
        self.c.row_slice(i * self.entries + j)
    }

    fn from_vars(tape: &Tape, v: &StateVars, frames: usize, entries: usize, hidden: usize) -> Self {
        Self {
            frames,
            entries,
            hidden,
            h: tape.value(v.h).clone(),
            c: tape.value(v.c).clone(),
            g_t: tape.value(v.g_t).clone(),
            c_gt: tape.value(v.c_gt).clone(),
            g_s: tape.value(v.g_s).clone(),
            c_gs: tape.value(v.c_gs).clone(),
        }
    }

    fn bind(&self, tape: &mut Tape) -> StateVars {
        StateVars {
            h: tape.leaf(self.h.clone()),
            c: tape.leaf(self.c.clone()),
            g_t: tape.leaf(self.g_t.clone()),
            c_gt: tape.leaf(self.c_gt.clone()),
            g_s: tape.leaf(self.g_s.clone()),
            c_gs: tape.leaf(self.c_gs.clone()),
        }
    }
}

/// A configured encoder bound to its parameters.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    pub params: &'a EncoderParams<Tensor>,
    pub config: &'a EncoderConfig,
    pub layout: &'a ChainLayout,
}

impl Encoder<'_> {
    fn setup(&self, tape: &mut Tape, frames: &[LieVector]) -> Result<(Grid, Var, EncoderParams<Var>), ModelError> {
        if frames.is_empty() {
            return Err(ModelError::Dimension("encoder needs at least one frame".into()));
        }
        let k = self.layout.entry_count();
        let refs: Vec<&LieVector> = frames.iter().collect();
        let pose = tape.leaf(pose_matrix(&refs, k)?);
        let p = self.params.map("encoder", &mut |_, t| tape.leaf(t.clone()));
        Ok((Grid::new(1, frames.len(), self.layout), pose, p))
    }

    fn state(&self, tape: &Tape, v: &StateVars, frames: usize) -> EncoderState {
        EncoderState::from_vars(tape, v, frames, self.layout.entry_count(), self.config.hidden)
    }

    /// Layer-0 states for the encoder input frames.
    pub fn init_states(&self, frames: &[LieVector]) -> Result<EncoderState, ModelError> {
        let mut tape = Tape::new();
        let (grid, pose, p) = self.setup(&mut tape, frames)?;
        let v = embed(&mut tape, pose, &p, &grid, self.config)?;
        Ok(self.state(&tape, &v, frames.len()))
    }

    /// Runs all layers.
    pub fn encode(&self, frames: &[LieVector]) -> Result<EncoderState, ModelError> {
        self.encode_in_order(frames, None)
    }

    /// Runs all layers, visiting cells in the given order within each layer.
    pub fn encode_in_order(&self, frames: &[LieVector], order: Option<&[usize]>) -> Result<EncoderState, ModelError> {
        let mut tape = Tape::new();
        let (grid, pose, p) = self.setup(&mut tape, frames)?;
        let v = encode_vars(&mut tape, pose, &p, &grid, self.config, order)?;
        Ok(self.state(&tape, &v, frames.len()))
    }

    /// One local update of cell `(i, j)` from the states in `prev`.
    pub fn local_cell_step(
        &self,
        prev: &EncoderState,
        frames: &[LieVector],
        i: usize,
        j: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let (grid, pose, p) = self.setup(&mut tape, frames)?;
        if i >= grid.frames || j >= grid.entries {
            return Err(ModelError::Dimension(format!("cell ({i}, {j}) is outside the grid")));
        }
        let sv = prev.bind(&mut tape);
        let plan = Plan::new(&grid, vec![i * grid.entries + j]);
        let (h, c) = local_step(&mut tape, pose, &sv, &p, self.config, &plan)?;
        Ok((tape.value(h).data().to_vec(), tape.value(c).data().to_vec()))
    }

    /// New global temporal states `(g_t, c_gt)`, `K x H`, from the new cells `h`, `c`
    /// and the previous global states in `prev`.
    pub fn global_temporal_step(
        &self,
        prev: &EncoderState,
        h: &Tensor,
        c: &Tensor,
    ) -> Result<(Tensor, Tensor), ModelError> {
        self.global(prev, h, c, true)
    }

    /// New global spatial states `(g_s, c_gs)`, `frames x H`.
    pub fn global_spatial_step(
        &self,
        prev: &EncoderState,
        h: &Tensor,
        c: &Tensor,
    ) -> Result<(Tensor, Tensor), ModelError> {
        self.global(prev, h, c, false)
    }

    fn global(
        &self,
        prev: &EncoderState,
        h: &Tensor,
        c: &Tensor,
        temporal: bool,
    ) -> Result<(Tensor, Tensor), ModelError> {
        let mut tape = Tape::new();
        let grid = Grid::new(1, prev.frames, self.layout);
        let p = self.params.map("encoder", &mut |_, t| tape.leaf(t.clone()));
        let sv = prev.bind(&mut tape);
        let (hv, cv) = (tape.leaf(h.clone()), tape.leaf(c.clone()));
        let (g, cg) = if temporal {
            temporal_step(&mut tape, hv, cv, &sv, &p, &grid)?
        } else {
            spatial_step(&mut tape, hv, cv, &sv, &p, &grid)?
        };
        Ok((tape.value(g).clone(), tape.value(cg).clone()))
    }
}
