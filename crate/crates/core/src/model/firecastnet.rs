//! Encode-process-decode graph network over a multimesh.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::coupling::{
    grid_to_mesh_edges, mesh_to_grid_edges, CouplingGraph, Direction, DEFAULT_RADIUS_FACTOR,
};
use crate::error::{Error, Result};
use crate::geomesh::MultiMesh;
use crate::grid::GridSpec;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Allowed input window lengths.
pub const TIME_STEPS: [usize; 3] = [6, 12, 24];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FireCastNetConfig {
    /// Input time steps.
    pub ts: usize,
    /// Input channels: 11 variables plus 3 positional channels.
    pub in_channels: usize,
    /// Channels after the cube embedding.
    pub embed_channels: usize,
    /// Spatial down-sampling of the cube embedding and up-sampling factor
    /// of the output head.
    pub spatial_reduction: usize,
    /// Latent width on the mesh.
    pub mesh_hidden: usize,
    /// Hidden width inside every MLP block.
    pub mlp_hidden: usize,
    pub processor_layers: usize,
    pub mesh_node_in: usize,
    pub mesh_edge_in: usize,
    pub decoder_out_channels: usize,
}

impl FireCastNetConfig {
    /// The published widths for a given window length.
    pub fn paper(ts: usize) -> Self {
        Self {
            ts,
            in_channels: 14,
            embed_channels: 64,
            spatial_reduction: 4,
            mesh_hidden: 64,
            mlp_hidden: 64,
            processor_layers: 12,
            mesh_node_in: 3,
            mesh_edge_in: 4,
            decoder_out_channels: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ts", self.ts),
            ("in_channels", self.in_channels),
            ("embed_channels", self.embed_channels),
            ("spatial_reduction", self.spatial_reduction),
            ("mesh_hidden", self.mesh_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("mesh_node_in", self.mesh_node_in),
            ("mesh_edge_in", self.mesh_edge_in),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.decoder_out_channels != self.spatial_reduction * self.spatial_reduction {
            return Err(Error::Config(format!(
                "decoder_out_channels {} must equal spatial_reduction^2 = {}",
                self.decoder_out_channels,
                self.spatial_reduction * self.spatial_reduction
            )));
        }
        Ok(())
    }
}

/// Constant graph inputs of a forward pass: mesh features and the three
/// edge sets with their features.
#[derive(Clone, Debug)]
pub struct MeshGraphs {
    /// The embedded (coarse) grid the couplings were built on.
    pub grid: GridSpec,
    pub nodes: usize,
    pub node_features: Tensor<f32>,
    pub g2m_src: Arc<[u32]>,
    pub g2m_dst: Arc<[u32]>,
    pub g2m_features: Tensor<f32>,
    pub mesh_src: Arc<[u32]>,
    pub mesh_dst: Arc<[u32]>,
    pub mesh_features: Tensor<f32>,
    pub m2g_src: Arc<[u32]>,
    pub m2g_dst: Arc<[u32]>,
    pub m2g_features: Tensor<f32>,
}

impl MeshGraphs {
    pub fn new(mesh: &MultiMesh, g2m: &CouplingGraph, m2g: &CouplingGraph) -> Result<Self> {
        if g2m.direction != Direction::GridToMesh || m2g.direction != Direction::MeshToGrid {
            return Err(Error::InvalidArgument("coupling graphs have the wrong direction".into()));
        }
        if g2m.grid != m2g.grid {
            return Err(Error::InvalidArgument("encoder and decoder grids differ".into()));
        }
        let v = mesh.node_count();
        if g2m.mesh_nodes != v || m2g.mesh_nodes != v {
            return Err(Error::InvalidArgument(format!(
                "couplings were built for {} / {} mesh nodes, mesh has {v}",
                g2m.mesh_nodes, m2g.mesh_nodes
            )));
        }
        if let Some(cell) = m2g.in_degrees().iter().position(|&d| d != 3) {
            return Err(Error::Geometry(format!(
                "decoder in-degree at grid cell {cell} is not 3"
            )));
        }
        let (src, dst, feats) = mesh.directed_edges();
        let e = src.len();
        Ok(Self {
            grid: g2m.grid,
            nodes: v,
            node_features: Tensor::new([v, 3], mesh.node_features.clone())?,
            g2m_src: g2m.senders.clone().into(),
            g2m_dst: g2m.receivers.clone().into(),
            g2m_features: Tensor::new([g2m.edge_count(), 4], g2m.features.clone())?,
            mesh_src: src.into(),
            mesh_dst: dst.into(),
            mesh_features: Tensor::new([e, 4], feats)?,
            m2g_src: m2g.senders.clone().into(),
            m2g_dst: m2g.receivers.clone().into(),
            m2g_features: Tensor::new([m2g.edge_count(), 4], m2g.features.clone())?,
        })
    }

    /// Builds both couplings on `data_grid` coarsened by `reduction`.
    pub fn build(mesh: &MultiMesh, data_grid: &GridSpec, reduction: usize) -> Result<Self> {
        let grid = data_grid.coarsen(reduction)?;
        let g2m = grid_to_mesh_edges(&grid, mesh, DEFAULT_RADIUS_FACTOR)?;
        let m2g = mesh_to_grid_edges(&grid, mesh)?;
        Self::new(mesh, &g2m, &m2g)
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }
}

/// Parameter layout of the network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FireCastNet {
    pub config: FireCastNetConfig,
    embed_w: ParamId,
    embed_b: ParamId,
    embed_gain: ParamId,
    embed_bias: ParamId,
    node_embed: Mlp,
    enc_edge: Mlp,
    enc_node: Mlp,
    edge_embed: Mlp,
    layers: Vec<(Mlp, Mlp)>,
    dec_edge: Mlp,
    dec_out: Mlp,
}

impl FireCastNet {
    /// Registers every parameter of `config` in `store`, in a fixed order.
    pub fn register<S: Scalar>(config: &FireCastNetConfig, store: &mut ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let c = config;
        let r = c.spatial_reduction;
        let (ce, cm, hid) = (c.embed_channels, c.mesh_hidden, c.mlp_hidden);
        let fan = c.in_channels * c.ts * r * r;
        let embed_w = store.add(
            "embed.w",
            &[ce, c.in_channels, c.ts, r, r],
            ParamKind::Weight,
            fan,
        );
        let embed_b = store.add("embed.b", &[ce], ParamKind::Bias, 0);
        let embed_gain = store.add("embed.ln_gain", &[ce], ParamKind::Gain, 0);
        let embed_bias = store.add("embed.ln_bias", &[ce], ParamKind::Bias, 0);
        let node_embed = Mlp::register(store, "mesh.node_embed", c.mesh_node_in, hid, cm, true);
        let enc_edge = Mlp::register(store, "encoder.edge", ce + cm + 4, hid, cm, true);
        let enc_node = Mlp::register(store, "encoder.node", 2 * cm, hid, cm, true);
        let edge_embed = Mlp::register(store, "mesh.edge_embed", c.mesh_edge_in, hid, cm, true);
        let layers = (0..c.processor_layers)
            .map(|l| {
                (
                    Mlp::register(store, &format!("processor.{l}.edge"), 3 * cm, hid, cm, true),
                    Mlp::register(store, &format!("processor.{l}.node"), 2 * cm, hid, cm, true),
                )
            })
            .collect();
        let dec_edge = Mlp::register(store, "decoder.edge", cm + ce + 4, hid, cm, true);
        let dec_out = Mlp::register(
            store,
            "decoder.out",
            ce + cm,
            hid,
            c.decoder_out_channels,
            false,
        );
        Ok(Self {
            config: config.clone(),
            embed_w,
            embed_b,
            embed_gain,
            embed_bias,
            node_embed,
            enc_edge,
            enc_node,
            edge_embed,
            layers,
            dec_edge,
            dec_out,
        })
    }

    /// Layout plus parameters drawn from `seed`.
    pub fn init<S: Scalar>(config: &FireCastNetConfig, seed: u64) -> Result<(Self, ParamStore<S>)> {
        let mut store = ParamStore::new();
        let net = Self::register(config, &mut store)?;
        store.init(seed);
        Ok((net, store))
    }

    /// Layout for an existing store, which must hold exactly this config's
    /// parameters.
    pub fn for_store<S: Scalar>(config: &FireCastNetConfig, store: &ParamStore<S>) -> Result<Self> {
        let mut fresh = ParamStore::<S>::new();
        let net = Self::register(config, &mut fresh)?;
        if fresh.specs() != store.specs() {
            return Err(Error::Schema(
                "parameter registry does not match the model configuration".into(),
            ));
        }
        Ok(net)
    }

    fn check_input<S: Scalar>(&self, tape: &Tape<S>, x: Var) -> Result<[usize; 4]> {
        let c = &self.config;
        match *tape.value(x).shape() {
            [t, ch, h, w]
                if t == c.ts
                    && ch == c.in_channels
                    && h % c.spatial_reduction == 0
                    && w % c.spatial_reduction == 0 =>
            {
                Ok([t, ch, h, w])
            }
            ref s => Err(Error::Shape(format!(
                "input {s:?} does not fit ts={}, channels={}, reduction={}",
                c.ts, c.in_channels, c.spatial_reduction
            ))),
        }
    }

    /// Space-time patch embedding: `[T, C, H, W] -> [C', H', W']`,
    /// layer-normalized over channels.
    pub fn cube_embed<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let [t, _, h, w] = self.check_input(tape, x)?;
        let r = self.config.spatial_reduction;
        let ce = self.config.embed_channels;
        let y = tape.conv3d(x, p.var(self.embed_w), Some(p.var(self.embed_b)), [t, r, r])?;
        let cells = (h / r) * (w / r);
        let y = tape.reshape(y, [ce, cells])?;
        let y = tape.transpose(y)?;
        let y = tape.layer_norm(y, p.var(self.embed_gain), p.var(self.embed_bias))?;
        let y = tape.transpose(y)?;
        tape.reshape(y, [ce, h / r, w / r])
    }

    fn cell_major<S: Scalar>(&self, tape: &mut Tape<S>, g: Var, cells: usize) -> Result<Var> {
        let ce = self.config.embed_channels;
        if tape.value(g).len() != ce * cells {
            return Err(Error::Shape(format!(
                "grid features {:?} do not cover {cells} cells",
                tape.value(g).shape()
            )));
        }
        let g = tape.reshape(g, [ce, cells])?;
        tape.transpose(g)
    }

    fn constant<S: Scalar>(tape: &mut Tape<S>, t: &Tensor<f32>) -> Var {
        tape.constant(t.cast())
    }

    /// Grid-to-mesh encoder: `[C', H', W'] -> [V, C_mesh]`.
    pub fn encode<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        grid_feats: Var,
        graphs: &MeshGraphs,
    ) -> Result<Var> {
        let g = self.cell_major(tape, grid_feats, graphs.cells())?;
        let node_feats = Self::constant(tape, &graphs.node_features);
        let node_emb = self.node_embed.forward(tape, p, node_feats)?;
        let ef = Self::constant(tape, &graphs.g2m_features);
        let m = self.enc_edge.forward_gathered(
            tape,
            p,
            &[
                (g, graphs.g2m_src.clone()),
                (node_emb, graphs.g2m_dst.clone()),
            ],
            ef,
        )?;
        let agg = tape.scatter_sum(m, graphs.g2m_dst.clone(), graphs.nodes)?;
        let u = tape.concat(&[node_emb, agg])?;
        self.enc_node.forward(tape, p, u)
    }

    /// Mesh processor with residual edge and node updates.
    pub fn process<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        h0: Var,
        graphs: &MeshGraphs,
    ) -> Result<Var> {
        match *tape.value(h0).shape() {
            [v, c] if v == graphs.nodes && c == self.config.mesh_hidden => {}
            ref s => {
                return Err(Error::Shape(format!(
                    "mesh state {s:?} does not match {} nodes x {}",
                    graphs.nodes, self.config.mesh_hidden
                )))
            }
        }
        if self.layers.is_empty() {
            return Ok(h0);
        }
        let ef = Self::constant(tape, &graphs.mesh_features);
        let mut e = self.edge_embed.forward(tape, p, ef)?;
        let mut h = h0;
        for (edge_mlp, node_mlp) in &self.layers {
            let m = edge_mlp.forward_gathered(
                tape,
                p,
                &[(h, graphs.mesh_src.clone()), (h, graphs.mesh_dst.clone())],
                e,
            )?;
            let agg = tape.scatter_sum(m, graphs.mesh_dst.clone(), graphs.nodes)?;
            e = tape.add(e, m)?;
            let u = tape.concat(&[h, agg])?;
            let u = node_mlp.forward(tape, p, u)?;
            h = tape.add(h, u)?;
        }
        Ok(h)
    }

    /// Mesh-to-grid decoder conditioned on the embedded input:
    /// `[V, C_mesh] -> [r^2, H', W']`.
    pub fn decode<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        h: Var,
        grid_feats: Var,
        graphs: &MeshGraphs,
    ) -> Result<Var> {
        let cells = graphs.cells();
        let g = self.cell_major(tape, grid_feats, cells)?;
        let ef = Self::constant(tape, &graphs.m2g_features);
        let m = self.dec_edge.forward_gathered(
            tape,
            p,
            &[(h, graphs.m2g_src.clone()), (g, graphs.m2g_dst.clone())],
            ef,
        )?;
        let agg = tape.scatter_sum(m, graphs.m2g_dst.clone(), cells)?;
        let u = tape.concat(&[g, agg])?;
        let out = self.dec_out.forward(tape, p, u)?;
        let out = tape.transpose(out)?;
        tape.reshape(
            out,
            [
                self.config.decoder_out_channels,
                graphs.grid.height,
                graphs.grid.width,
            ],
        )
    }

    /// Full network: `[T, C, H, W]` input to `[H, W]` logits.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        x: Var,
        graphs: &MeshGraphs,
    ) -> Result<Var> {
        let [_, _, h, w] = self.check_input(tape, x)?;
        let r = self.config.spatial_reduction;
        if (graphs.grid.height, graphs.grid.width) != (h / r, w / r) {
            return Err(Error::Shape(format!(
                "couplings were built on a {}x{} grid, input embeds to {}x{}",
                graphs.grid.height,
                graphs.grid.width,
                h / r,
                w / r
            )));
        }
        let g = self.cube_embed(tape, p, x)?;
        let h0 = self.encode(tape, p, g, graphs)?;
        let hl = self.process(tape, p, h0, graphs)?;
        let dec = self.decode(tape, p, hl, g, graphs)?;
        let up = tape.pixel_shuffle(dec, r)?;
        tape.reshape(up, [h, w])
    }
}
