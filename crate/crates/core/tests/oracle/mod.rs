//! Loop-based reference model written straight from the cell equations. Shares
//! nothing with the library beyond reading parameter tensors by name.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;
use std::f64::consts::PI;

use sthrn::autodiff::Tensor;
use sthrn::model::{ModelConfig, ModelParams};
use sthrn::skeleton::ChainRole;

pub type V = Vec<f64>;

pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: V,
}

impl Mat {
    fn from(t: &Tensor) -> Self {
        Mat { rows: t.shape()[0], cols: t.shape()[1], data: t.data().to_vec() }
    }

    /// Row vector times matrix.
    pub fn left(&self, x: &[f64]) -> V {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                y[c] += x[r] * self.data[r * self.cols + c];
            }
        }
        y
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn add(a: &[f64], b: &[f64]) -> V {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> V {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn scale(a: &[f64], s: f64) -> V {
    a.iter().map(|x| x * s).collect()
}

pub struct Params(HashMap<String, Mat>);

impl Params {
    pub fn new(p: &ModelParams<Tensor>) -> Self {
        Params(p.named().into_iter().map(|(n, t)| (n, Mat::from(t))).collect())
    }

    pub fn get(&self, name: &str) -> &Mat {
        self.0.get(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    pub fn bias(&self, name: &str) -> V {
        self.get(name).data.clone()
    }

    pub fn has(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }
}

/// Per-layer encoder states, indexed `[frame][entry]`, `[entry]` and `[frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Enc {
    pub h: Vec<Vec<V>>,
    pub c: Vec<Vec<V>>,
    pub g_t: Vec<V>,
    pub c_gt: Vec<V>,
    pub g_s: Vec<V>,
    pub c_gs: Vec<V>,
}

pub struct Oracle<'a> {
    pub p: Params,
    pub cfg: &'a ModelConfig,
    /// Previous entry of the same chain.
    pub pred: Vec<Option<usize>>,
}

impl<'a> Oracle<'a> {
    pub fn new(params: &ModelParams<Tensor>, cfg: &'a ModelConfig) -> Self {
        let mut pred = Vec::new();
        for &(_, k) in cfg.layout.chains() {
            for z in 0..k {
                pred.push(if z == 0 { None } else { Some(pred.len() - 1) });
            }
        }
        Oracle { p: Params::new(params), cfg, pred }
    }

    fn hd(&self) -> usize {
        self.cfg.encoder.hidden
    }

    pub fn embed(&self, frames: &[Vec<[f64; 3]>]) -> Enc {
        let (f, k) = (frames.len(), frames[0].len());
        let w = self.p.get("encoder.embed.weight");
        let b = self.p.bias("encoder.embed.bias");
        let e: Vec<Vec<V>> = frames.iter().map(|fr| fr.iter().map(|x| add(&w.left(x), &b)).collect()).collect();
        let zero = vec![0.0; self.hd()];
        let g_t: Vec<V> = if self.cfg.encoder.disable_global_temporal {
            vec![zero.clone(); k]
        } else {
            (0..k).map(|j| scale(&(0..f).fold(zero.clone(), |a, i| add(&a, &e[i][j])), 1.0 / f as f64)).collect()
        };
        let g_s: Vec<V> = if self.cfg.encoder.disable_global_spatial {
            vec![zero.clone(); f]
        } else {
            (0..f).map(|i| scale(&(0..k).fold(zero.clone(), |a, j| add(&a, &e[i][j])), 1.0 / k as f64)).collect()
        };
        Enc { h: e.clone(), c: e, c_gt: g_t.clone(), g_t, c_gs: g_s.clone(), g_s }
    }

    /// New `(h, c)` of cell `(i, j)`.
    pub fn cell(&self, prev: &Enc, frames: &[Vec<[f64; 3]>], i: usize, j: usize) -> (V, V) {
        let hd = self.hd();
        let f = frames.len();
        let zero = vec![0.0; hd];
        let at = |m: &Vec<Vec<V>>, i: Option<usize>, j: Option<usize>| match (i, j) {
            (Some(i), Some(j)) => m[i][j].clone(),
            _ => zero.clone(),
        };
        let left = (i > 0).then(|| i - 1);
        let right = (i + 1 < f).then_some(i + 1);
        let sp = self.pred[j];
        let mut neighbours = at(&prev.h, left, Some(j));
        neighbours.extend(at(&prev.h, right, Some(j)));
        neighbours.extend(prev.h[i][j].clone());

        let mut pre = add(&self.p.get("encoder.cell.pose").left(&frames[i][j]), &self.p.bias("encoder.cell.bias"));
        pre = add(&pre, &self.p.get("encoder.cell.temporal").left(&neighbours));
        pre = add(&pre, &self.p.get("encoder.cell.spatial").left(&at(&prev.h, Some(i), sp)));
        let use_gs = !self.cfg.encoder.disable_global_spatial;
        let use_gt = !self.cfg.encoder.disable_global_temporal;
        if use_gs {
            pre = add(&pre, &self.p.get("encoder.cell.global_spatial").left(&prev.g_s[i]));
        }
        if use_gt {
            pre = add(&pre, &self.p.get("encoder.cell.global_temporal").left(&prev.g_t[j]));
        }
        let block = |g: usize| pre[g * hd..(g + 1) * hd].to_vec();
        let sg = |g: usize| block(g).into_iter().map(sigmoid).collect::<V>();
        let cand: V = block(8).into_iter().map(f64::tanh).collect();

        let mut c = mul(&sg(0), &cand);
        c = add(&c, &mul(&sg(1), &at(&prev.c, left, Some(j))));
        c = add(&c, &mul(&sg(2), &prev.c[i][j]));
        c = add(&c, &mul(&sg(3), &at(&prev.c, right, Some(j))));
        c = add(&c, &mul(&sg(4), &at(&prev.c, Some(i), sp)));
        if use_gs {
            c = add(&c, &mul(&sg(5), &prev.c_gs[i]));
        }
        if use_gt {
            c = add(&c, &mul(&sg(6), &prev.c_gt[j]));
        }
        let h = mul(&sg(7), &c.iter().map(|x| x.tanh()).collect::<V>());
        (h, c)
    }

    /// One global state from its member cells: `(g, c_g)`.
    fn global(&self, prefix: &str, hs: &[V], cs: &[V], g_prev: &V, c_prev: &V) -> (V, V) {
        let gate = |name: &str, x: &V| -> V {
            let pre = add(
                &add(
                    &self.p.get(&format!("{prefix}.{name}.hidden")).left(x),
                    &self.p.get(&format!("{prefix}.{name}.state")).left(g_prev),
                ),
                &self.p.bias(&format!("{prefix}.{name}.bias")),
            );
            pre.into_iter().map(sigmoid).collect()
        };
        let mut c = vec![0.0; self.hd()];
        for (h, cm) in hs.iter().zip(cs) {
            c = add(&c, &mul(&gate("cell", h), cm));
        }
        let mean = scale(&hs.iter().fold(vec![0.0; self.hd()], |a, h| add(&a, h)), 1.0 / hs.len() as f64);
        c = add(&c, &mul(&gate("keep", &mean), c_prev));
        let g = mul(&gate("output", &mean), &c.iter().map(|x| x.tanh()).collect::<V>());
        (g, c)
    }

    pub fn temporal(&self, prev: &Enc, h: &[Vec<V>], c: &[Vec<V>], j: usize) -> (V, V) {
        let hs: Vec<V> = h.iter().map(|r| r[j].clone()).collect();
        let cs: Vec<V> = c.iter().map(|r| r[j].clone()).collect();
        self.global("encoder.global_temporal", &hs, &cs, &prev.g_t[j], &prev.c_gt[j])
    }

    pub fn spatial(&self, prev: &Enc, h: &[Vec<V>], c: &[Vec<V>], i: usize) -> (V, V) {
        self.global("encoder.global_spatial", &h[i], &c[i], &prev.g_s[i], &prev.c_gs[i])
    }

    pub fn layer(&self, prev: &Enc, frames: &[Vec<[f64; 3]>]) -> Enc {
        let (f, k) = (frames.len(), frames[0].len());
        let mut h = vec![vec![V::new(); k]; f];
        let mut c = h.clone();
        for i in 0..f {
            for j in 0..k {
                let (hn, cn) = self.cell(prev, frames, i, j);
                h[i][j] = hn;
                c[i][j] = cn;
            }
        }
        let (mut g_t, mut c_gt) = (prev.g_t.clone(), prev.c_gt.clone());
        if !self.cfg.encoder.disable_global_temporal {
            for j in 0..k {
                (g_t[j], c_gt[j]) = self.temporal(prev, &h, &c, j);
            }
        }
        let (mut g_s, mut c_gs) = (prev.g_s.clone(), prev.c_gs.clone());
        if !self.cfg.encoder.disable_global_spatial {
            for i in 0..f {
                (g_s[i], c_gs[i]) = self.spatial(prev, &h, &c, i);
            }
        }
        Enc { h, c, g_t, c_gt, g_s, c_gs }
    }

    pub fn encode(&self, frames: &[Vec<[f64; 3]>]) -> Enc {
        let mut s = self.embed(frames);
        for _ in 0..self.cfg.encoder.layers {
            s = self.layer(&s, frames);
        }
        s
    }

    fn lstm(&self, prefix: &str, x: &[f64], (h, c): &(V, V)) -> (V, V) {
        let w = h.len();
        let z = add(
            &add(&self.p.get(&format!("{prefix}.input")).left(x), &self.p.get(&format!("{prefix}.recurrent")).left(h)),
            &self.p.bias(&format!("{prefix}.bias")),
        );
        let i: V = z[..w].iter().map(|&v| sigmoid(v)).collect();
        let f: V = z[w..2 * w].iter().map(|&v| sigmoid(v)).collect();
        let g: V = z[2 * w..3 * w].iter().map(|v| v.tanh()).collect();
        let o: V = z[3 * w..].iter().map(|&v| sigmoid(v)).collect();
        let c_new = add(&mul(&f, c), &mul(&i, &g));
        let h_new = mul(&o, &c_new.iter().map(|v| v.tanh()).collect::<V>());
        (h_new, c_new)
    }

    /// Decoder stages in order: overall, spine, then arm and leg when present
    /// (or the two plain layers).
    pub fn init_decoder(&self, enc: &Enc) -> Vec<(V, V)> {
        let f = enc.h.len() as f64;
        let k = enc.h[0].len();
        let mut h0 = V::new();
        let mut c0 = V::new();
        let mut h1 = V::new();
        for j in 0..k {
            let hs = enc.h.iter().fold(vec![0.0; self.hd()], |a, r| add(&a, &r[j]));
            let cs = enc.c.iter().fold(vec![0.0; self.hd()], |a, r| add(&a, &r[j]));
            h0.extend(scale(&hs, 1.0 / f));
            c0.extend(scale(&cs, 1.0 / f));
            h1.extend(scale(&add(&hs, &enc.g_t[j]), 1.0 / (f + 1.0)));
        }
        let mut out = vec![(h0, c0.clone()), (h1, c0)];
        if !self.cfg.decoder.replace_lstm {
            let lh = self.cfg.limb_hidden();
            for role in ["arm", "leg"] {
                if self.p.has(&format!("decoder.{role}.input")) {
                    out.push((vec![0.0; lh], vec![0.0; lh]));
                }
            }
        }
        out
    }

    pub fn decode_step(&self, state: &[(V, V)], w_prev: &[f64]) -> (Vec<(V, V)>, V) {
        let mut next = Vec::new();
        let delta = if self.cfg.decoder.replace_lstm {
            let a = self.lstm("decoder.lstm.0", w_prev, &state[0]);
            let b = self.lstm("decoder.lstm.1", &a.0, &state[1]);
            let d = add(&self.p.get("decoder.projection.weight").left(&b.0), &self.p.bias("decoder.projection.bias"));
            next.push(a);
            next.push(b);
            d
        } else {
            let overall = self.lstm("decoder.overall", w_prev, &state[0]);
            let spine = self.lstm("decoder.spine", &overall.0, &state[1]);
            let mut limb_in = overall.0.clone();
            limb_in.extend(spine.0.clone());
            let mut slot = 2;
            let mut limb = |role: &str| {
                self.p.has(&format!("decoder.{role}.input")).then(|| {
                    let s = self.lstm(&format!("decoder.{role}"), &limb_in, &state[slot]);
                    slot += 1;
                    s
                })
            };
            let arm = limb("arm");
            let leg = limb("leg");
            let mut d = V::new();
            for (c, &(role, k)) in self.cfg.layout.chains().iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let src = match role {
                    ChainRole::Spine => &spine.0,
                    ChainRole::Arm => &arm.as_ref().unwrap().0,
                    ChainRole::Leg => &leg.as_ref().unwrap().0,
                };
                d.extend(add(
                    &self.p.get(&format!("decoder.projection.{c}.weight")).left(src),
                    &self.p.bias(&format!("decoder.projection.{c}.bias")),
                ));
            }
            next.push(overall);
            next.push(spine);
            next.extend(arm);
            next.extend(leg);
            d
        };
        let sum = add(w_prev, &delta);
        let w: V = sum.chunks(3).flat_map(wrap).collect();
        (next, w)
    }

    pub fn predict(&self, observed: &[Vec<[f64; 3]>], horizon: usize) -> Vec<V> {
        let t = observed.len();
        let enc = self.encode(&observed[..t - 1]);
        let mut state = self.init_decoder(&enc);
        let mut w: V = observed[t - 1].iter().flatten().copied().collect();
        let mut out = Vec::new();
        for _ in 0..horizon {
            let (s, wn) = self.decode_step(&state, &w);
            state = s;
            w = wn.clone();
            out.push(wn);
        }
        out
    }
}

/// Equivalent rotation vector with norm at most π.
pub fn wrap(v: &[f64]) -> V {
    let theta = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if theta <= PI {
        return v.to_vec();
    }
    let mut reduced = theta % (2.0 * PI);
    if reduced > PI {
        reduced -= 2.0 * PI;
    }
    v.iter().map(|x| x / theta * reduced).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
