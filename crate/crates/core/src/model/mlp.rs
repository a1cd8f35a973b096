//! Multi-layer perceptron block used throughout the graph network.

use std::sync::Arc;

use super::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tape, Var};

/// `Linear -> SiLU -> Linear`, optionally followed by layer normalization.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub norm: Option<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        layer_norm: bool,
    ) -> Self {
        let w1 = store.add(&format!("{name}.w1"), &[input, hidden], ParamKind::Weight, input);
        let b1 = store.add(&format!("{name}.b1"), &[hidden], ParamKind::Bias, 0);
        let w2 = store.add(&format!("{name}.w2"), &[hidden, output], ParamKind::Weight, hidden);
        let b2 = store.add(&format!("{name}.b2"), &[output], ParamKind::Bias, 0);
        let norm = layer_norm.then(|| {
            (
                store.add(&format!("{name}.ln_gain"), &[output], ParamKind::Gain, 0),
                store.add(&format!("{name}.ln_bias"), &[output], ParamKind::Bias, 0),
            )
        });
        Self {
            w1,
            b1,
            w2,
            b2,
            norm,
        }
    }

    /// Applies the block row-wise to `x [N, input]`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.linear(x, p.var(self.w1), Some(p.var(self.b1)))?;
        self.finish(tape, p, h)
    }

    /// Same result as `forward(concat([x_k[index_k] for each k] + [local]))`
    /// without materializing the per-edge concatenation: each gathered
    /// input is projected once per node, then gathered and summed.
    pub fn forward_gathered<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        gathered: &[(Var, Arc<[u32]>)],
        local: Var,
    ) -> Result<Var> {
        let w1 = p.var(self.w1);
        let rows = tape.value(w1).shape()[0];
        let mut off = 0;
        let mut terms = Vec::with_capacity(gathered.len());
        for (x, index) in gathered {
            let width = tape.value(*x).shape().get(1).copied().unwrap_or(0);
            let w = tape.slice_rows(w1, off, off + width)?;
            terms.push((tape.linear(*x, w, None)?, index.clone()));
            off += width;
        }
        let width = tape.value(local).shape().get(1).copied().unwrap_or(0);
        if off + width != rows {
            return shape_err(format!(
                "MLP input width {} does not match {rows} weight rows",
                off + width
            ));
        }
        let w = tape.slice_rows(w1, off, rows)?;
        let base = tape.linear(local, w, Some(p.var(self.b1)))?;
        let h = tape.gather_add(base, &terms)?;
        self.finish(tape, p, h)
    }

    fn finish<S: Scalar>(&self, tape: &mut Tape<S>, p: &Bound, pre: Var) -> Result<Var> {
        let h = tape.silu(pre)?;
        let y = tape.linear(h, p.var(self.w2), Some(p.var(self.b2)))?;
        match self.norm {
            Some((g, b)) => tape.layer_norm(y, p.var(g), p.var(b)),
            None => Ok(y),
        }
    }
}
