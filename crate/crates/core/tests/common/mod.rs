//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain loops over `f64` slices and reads
//! parameters by name, so it shares no code path with the tape.

#![allow(dead_code)]

use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use firecast_core::data::SplitYears;
use firecast_core::model::{FireCastNetConfig, MeshGraphs, ParamKind, ParamStore};
use firecast_core::{GridSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

/// A small configuration that keeps every stage of the network.
pub fn toy_config(ts: usize) -> FireCastNetConfig {
    let mut c = FireCastNetConfig::paper(ts);
    c.embed_channels = 6;
    c.mesh_hidden = 5;
    c.mlp_hidden = 7;
    c.processor_layers = 2;
    c
}

/// Overwrites every bias and gain with uniform noise so no stage sits at
/// its symmetric initial point.
pub fn randomize_offsets(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    let specs = store.specs().to_vec();
    for (spec, t) in specs.iter().zip(store.tensors_mut()) {
        match spec.kind {
            ParamKind::Bias => t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5)),
            ParamKind::Gain => t.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.5..1.5)),
            ParamKind::Weight => {}
        }
    }
}

/// Parameter lookup by name.
pub struct Params<'a>(pub &'a ParamStore<f64>);

impl<'a> Params<'a> {
    pub fn get(&self, name: &str) -> &'a [f64] {
        let id = self.0.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.0.get(id).data()
    }

    pub fn shape(&self, name: &str) -> Vec<usize> {
        self.0.get(self.0.id(name).unwrap()).shape().to_vec()
    }

    pub fn has(&self, name: &str) -> bool {
        self.0.id(name).is_some()
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = x W + b` with `W` stored row-major as `[in, out]`.
pub fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, out: usize) -> Vec<f64> {
    assert_eq!(w.len(), x.len() * out);
    (0..out)
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b[o]);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w[i * out + o];
            }
            s
        })
        .collect()
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let is = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(g.iter().zip(b))
        .map(|(v, (g, b))| (v - mean) * is * g + b)
        .collect()
}

/// The `Linear -> SiLU -> Linear [-> LayerNorm]` block named `name`.
pub fn mlp(p: &Params, name: &str, x: &[f64]) -> Vec<f64> {
    let hidden = p.shape(&format!("{name}.w1"))[1];
    let out = p.shape(&format!("{name}.w2"))[1];
    let h: Vec<f64> = affine(x, p.get(&format!("{name}.w1")), Some(p.get(&format!("{name}.b1"))), hidden)
        .into_iter()
        .map(silu)
        .collect();
    let y = affine(&h, p.get(&format!("{name}.w2")), Some(p.get(&format!("{name}.b2"))), out);
    if p.has(&format!("{name}.ln_gain")) {
        layer_norm(&y, p.get(&format!("{name}.ln_gain")), p.get(&format!("{name}.ln_bias")))
    } else {
        y
    }
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let w = t.shape()[1];
    t.data().chunks(w).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

/// Dense `[dst][src]` table of edge feature rows.
pub type Dense = Vec<Vec<Option<Vec<f64>>>>;

pub fn dense_from_edges(n_dst: usize, n_src: usize, src: &[u32], dst: &[u32], feats: &Tensor<f32>) -> Dense {
    let f = rows(feats);
    let mut a: Dense = vec![vec![None; n_src]; n_dst];
    for (e, (&s, &d)) in src.iter().zip(dst).enumerate() {
        assert!(a[d as usize][s as usize].is_none(), "duplicate edge");
        a[d as usize][s as usize] = Some(f[e].clone());
    }
    a
}

/// Processor over a dense adjacency table.
pub fn dense_processor(p: &Params, layers: usize, h0: &[Vec<f64>], adj: &Dense) -> Vec<Vec<f64>> {
    let n = h0.len();
    let mut h = h0.to_vec();
    if layers == 0 {
        return h;
    }
    let mut e: Vec<Vec<Option<Vec<f64>>>> = adj
        .iter()
        .map(|row| row.iter().map(|f| f.as_ref().map(|f| mlp(p, "mesh.edge_embed", f))).collect())
        .collect();
    for l in 0..layers {
        let mut agg = vec![vec![0.0; h[0].len()]; n];
        let mut next_e = e.clone();
        for i in 0..n {
            for j in 0..n {
                if let Some(eij) = &e[i][j] {
                    let m = mlp(p, &format!("processor.{l}.edge"), &cat(&[&h[j], &h[i], eij]));
                    for (a, v) in agg[i].iter_mut().zip(&m) {
                        *a += v;
                    }
                    let updated: Vec<f64> = eij.iter().zip(&m).map(|(a, b)| a + b).collect();
                    next_e[i][j] = Some(updated);
                }
            }
        }
        h = (0..n)
            .map(|i| {
                let u = mlp(p, &format!("processor.{l}.node"), &cat(&[&h[i], &agg[i]]));
                h[i].iter().zip(&u).map(|(a, b)| a + b).collect()
            })
            .collect();
        e = next_e;
    }
    h
}

/// Cube embedding: non-overlapping `(T, r, r)` patches, then layer norm
/// over channels. Returns cell-major `[H' * W'][C']`.
pub fn dense_cube_embed(p: &Params, x: &Tensor<f64>, r: usize) -> Vec<Vec<f64>> {
    let &[t, c, h, w] = x.shape() else { panic!("bad input") };
    let wt = p.get("embed.w");
    let b = p.get("embed.b");
    let ce = b.len();
    let (hh, ww) = (h / r, w / r);
    let xd = x.data();
    let mut out = Vec::with_capacity(hh * ww);
    for i in 0..hh {
        for j in 0..ww {
            let y: Vec<f64> = (0..ce)
                .map(|o| {
                    let mut s = b[o];
                    for ci in 0..c {
                        for ti in 0..t {
                            for di in 0..r {
                                for dj in 0..r {
                                    let wi = (((o * c + ci) * t + ti) * r + di) * r + dj;
                                    let xi = ((ti * c + ci) * h + i * r + di) * w + j * r + dj;
                                    s += wt[wi] * xd[xi];
                                }
                            }
                        }
                    }
                    s
                })
                .collect();
            out.push(layer_norm(&y, p.get("embed.ln_gain"), p.get("embed.ln_bias")));
        }
    }
    out
}

/// Encoder over a dense cell-to-node table.
pub fn dense_encoder(p: &Params, g: &[Vec<f64>], node_feats: &[Vec<f64>], adj: &Dense) -> Vec<Vec<f64>> {
    node_feats
        .iter()
        .enumerate()
        .map(|(v, nf)| {
            let emb = mlp(p, "mesh.node_embed", nf);
            let mut agg = vec![0.0; emb.len()];
            for (c, gc) in g.iter().enumerate() {
                if let Some(f) = &adj[v][c] {
                    let m = mlp(p, "encoder.edge", &cat(&[gc, &emb, f]));
                    agg.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
                }
            }
            mlp(p, "encoder.node", &cat(&[&emb, &agg]))
        })
        .collect()
}

/// Decoder over a dense node-to-cell table; returns `[cells][r^2]`.
pub fn dense_decoder(p: &Params, h: &[Vec<f64>], g: &[Vec<f64>], adj: &Dense) -> Vec<Vec<f64>> {
    g.iter()
        .enumerate()
        .map(|(c, gc)| {
            let mut agg: Vec<f64> = Vec::new();
            for (v, hv) in h.iter().enumerate() {
                if let Some(f) = &adj[c][v] {
                    let m = mlp(p, "decoder.edge", &cat(&[hv, gc, f]));
                    if agg.is_empty() {
                        agg = vec![0.0; m.len()];
                    }
                    agg.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
                }
            }
            if agg.is_empty() {
                agg = vec![0.0; p.shape("decoder.edge.w2")[1]];
            }
            mlp(p, "decoder.out", &cat(&[gc, &agg]))
        })
        .collect()
}

/// Full network through dense tables; returns the `[H, W]` logit grid.
pub fn dense_forward(p: &Params, config: &FireCastNetConfig, x: &Tensor<f64>, graphs: &MeshGraphs) -> Vec<f64> {
    let r = config.spatial_reduction;
    let g = dense_cube_embed(p, x, r);
    let cells = graphs.cells();
    let enc = dense_from_edges(graphs.nodes, cells, &graphs.g2m_src, &graphs.g2m_dst, &graphs.g2m_features);
    let h0 = dense_encoder(p, &g, &rows(&graphs.node_features), &enc);
    let mesh = dense_from_edges(graphs.nodes, graphs.nodes, &graphs.mesh_src, &graphs.mesh_dst, &graphs.mesh_features);
    let h = dense_processor(p, config.processor_layers, &h0, &mesh);
    let dec = dense_from_edges(cells, graphs.nodes, &graphs.m2g_src, &graphs.m2g_dst, &graphs.m2g_features);
    let out = dense_decoder(p, &h, &g, &dec);
    let (hh, ww) = (graphs.grid.height, graphs.grid.width);
    let mut grid = vec![0.0; hh * r * ww * r];
    for i in 0..hh {
        for j in 0..ww {
            let o = &out[i * ww + j];
            for a in 0..r {
                for b in 0..r {
                    grid[(i * r + a) * (ww * r) + j * r + b] = o[a * r + b];
                }
            }
        }
    }
    grid
}

/// Mesh graphs over an arbitrary directed edge list, with empty couplings
/// on a single-cell grid. Only the processor reads them.
pub fn processor_graphs(n: usize, edges: &[(u32, u32)], seed: u64) -> MeshGraphs {
    let mut r = rng(seed);
    let e = edges.len();
    let f32s = |len: usize, r: &mut ChaCha8Rng| -> Vec<f32> { (0..len).map(|_| r.random_range(-1.0f32..1.0)).collect() };
    MeshGraphs {
        grid: GridSpec::global(1, 1),
        nodes: n,
        node_features: Tensor::new([n, 3], f32s(3 * n, &mut r)).unwrap(),
        g2m_src: Arc::from(Vec::new()),
        g2m_dst: Arc::from(Vec::new()),
        g2m_features: Tensor::new([0, 4], Vec::new()).unwrap(),
        mesh_src: edges.iter().map(|e| e.0).collect(),
        mesh_dst: edges.iter().map(|e| e.1).collect(),
        mesh_features: Tensor::new([e, 4], f32s(4 * e, &mut r)).unwrap(),
        m2g_src: Arc::from(Vec::new()),
        m2g_dst: Arc::from(Vec::new()),
        m2g_features: Tensor::new([0, 4], Vec::new()).unwrap(),
    }
}

/// Random simple directed graph on `n` nodes.
pub fn random_edges(n: usize, density: f64, r: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && r.random_bool(density) {
                edges.push((s as u32, d as u32));
            }
        }
    }
    edges
}

/// Zero-padded same-size cross-correlation on `[C][H][W]` nested data.
pub fn conv_same(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], out: usize, k: usize, b: Option<&[f64]>) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; out * h * w];
    for o in 0..out {
        for i in 0..h {
            for j in 0..w {
                let mut s = b.map_or(0.0, |b| b[o]);
                for ci in 0..c {
                    for a in 0..k {
                        for bb in 0..k {
                            let (ii, jj) = (i as isize + a as isize - pad, j as isize + bb as isize - pad);
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            s += wt[((o * c + ci) * k + a) * k + bb] * x[(ci * h + ii as usize) * w + jj as usize];
                        }
                    }
                }
                y[(o * h + i) * w + j] = s;
            }
        }
    }
    y
}

/// Scalar Conv-GRU step following the gate equations directly.
pub fn conv_gru_step(p: &Params, name: &str, x: &[f64], h: &[f64], c: usize, hid: usize, hh: usize, ww: usize, k: usize) -> Vec<f64> {
    let gate = |g: &str, hx: &[f64]| {
        let ax = conv_same(x, c, hh, ww, p.get(&format!("{name}.{g}.wx")), hid, k, Some(p.get(&format!("{name}.{g}.b"))));
        let ah = conv_same(hx, hid, hh, ww, p.get(&format!("{name}.{g}.wh")), hid, k, None);
        (ax, ah)
    };
    let (zx, zh) = gate("z", h);
    let (rx, rh) = gate("r", h);
    let (nx, nh) = gate("h", h);
    (0..h.len())
        .map(|i| {
            let z = sigmoid(zx[i] + zh[i]);
            let r = sigmoid(rx[i] + rh[i]);
            let cand = (nx[i] + r * nh[i]).tanh();
            (1.0 - z) * h[i] + z * cand
        })
        .collect()
}

/// Scalar Conv-LSTM step; returns `(h', c')`.
pub fn conv_lstm_step(p: &Params, name: &str, x: &[f64], h: &[f64], cell: &[f64], c: usize, hid: usize, hh: usize, ww: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let gate = |g: &str| -> Vec<f64> {
        let ax = conv_same(x, c, hh, ww, p.get(&format!("{name}.{g}.wx")), hid, k, Some(p.get(&format!("{name}.{g}.b"))));
        let ah = conv_same(h, hid, hh, ww, p.get(&format!("{name}.{g}.wh")), hid, k, None);
        ax.iter().zip(&ah).map(|(a, b)| a + b).collect()
    };
    let (i, f, o, g) = (gate("i"), gate("f"), gate("o"), gate("g"));
    let mut hn = Vec::with_capacity(h.len());
    let mut cn = Vec::with_capacity(h.len());
    for n in 0..h.len() {
        let c2 = sigmoid(f[n]) * cell[n] + sigmoid(i[n]) * g[n].tanh();
        cn.push(c2);
        hn.push(sigmoid(o[n]) * c2.tanh());
    }
    (hn, cn)
}

/// Scalar dense GRU step on one row.
pub fn gru_step(p: &Params, name: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hid = h.len();
    let gate = |g: &str| {
        (
            affine(x, p.get(&format!("{name}.{g}.wx")), Some(p.get(&format!("{name}.{g}.b"))), hid),
            affine(h, p.get(&format!("{name}.{g}.wh")), None, hid),
        )
    };
    let ((zx, zh), (rx, rh), (nx, nh)) = (gate("z"), gate("r"), gate("h"));
    (0..hid)
        .map(|i| {
            let z = sigmoid(zx[i] + zh[i]);
            let r = sigmoid(rx[i] + rh[i]);
            (1.0 - z) * h[i] + z * (nx[i] + r * nh[i]).tanh()
        })
        .collect()
}

/// Average precision by sweeping every distinct score as a threshold and
/// recounting the confusion matrix from scratch each time.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for tau in thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= tau {
                if *l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Naive baselines by scanning the whole cube. The period of a time is its
/// rank among the cube's times of the same year.
pub fn full_scan_baseline(times: &[NaiveDate], targets: &[f32], cells: usize, years: SplitYears, t: usize, majority: bool) -> Vec<f32> {
    let rank = |i: usize| times[..i].iter().filter(|d| d.year() == times[i].year()).count();
    let k = rank(t);
    let y = times[t].year();
    let prior: Vec<usize> = (0..times.len())
        .filter(|&i| {
            let yi = times[i].year();
            yi >= years.train.0 && yi < y && yi <= years.val.1 && rank(i) == k
        })
        .collect();
    (0..cells)
        .map(|c| {
            let fires = prior.iter().filter(|&&i| targets[i * cells + c] > 0.5).count();
            let fire = if majority { 2 * fires > prior.len() } else { fires > 0 };
            if fire {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Textbook Adam on flat parameter vectors.
pub struct PlainAdam {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub t: i32,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl PlainAdam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - self.b1.powi(self.t));
            let vh = self.v[i] / (1.0 - self.b2.powi(self.t));
            theta[i] -= self.lr * (mh / (vh.sqrt() + self.eps));
        }
    }
}
