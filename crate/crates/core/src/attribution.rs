//! Integrated Gradients over the model input and per-variable aggregation.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{input_variables, POSITIONAL_CHANNELS};
use crate::error::{Error, Result};
use crate::model::{FireCastNet, MeshGraphs, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Path quadrature for the gradient integral.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Points at `k / m` for `k = 1..=m`.
    #[default]
    RightRiemann,
    /// Points at `(k - 0.5) / m`.
    Midpoint,
}

impl Quadrature {
    pub fn alpha(self, k: usize, steps: usize) -> f64 {
        match self {
            Self::RightRiemann => (k + 1) as f64 / steps as f64,
            Self::Midpoint => (k as f64 + 0.5) / steps as f64,
        }
    }
}

/// Integrated Gradients of the scalar `f` along the straight path from
/// `baseline` to `x`:
/// `IG_i = (x_i - x'_i) * (1/m) * sum_k dF(x' + a_k (x - x'))/dx_i`.
///
/// Path points are evaluated in parallel and summed in index order, so the
/// result does not depend on the thread count.
pub fn integrated_gradients<S, F>(
    f: F,
    x: &Tensor<S>,
    baseline: &Tensor<S>,
    steps: usize,
    rule: Quadrature,
) -> Result<Tensor<S>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var> + Sync,
{
    if x.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "input {:?} and baseline {:?} differ",
            x.shape(),
            baseline.shape()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    let diff: Vec<S> = x.data().iter().zip(baseline.data()).map(|(&a, &b)| a - b).collect();
    let gradient_at = |k: usize| -> Result<Vec<S>> {
        let alpha = S::of(rule.alpha(k, steps));
        let point: Vec<S> = baseline
            .data()
            .iter()
            .zip(&diff)
            .map(|(&b, &d)| b + alpha * d)
            .collect();
        let mut tape = Tape::new();
        let v = tape.param(Tensor::new(x.shape().to_vec(), point)?);
        let out = f(&mut tape, v)?;
        let mut grads = tape.backward(out)?;
        let g = grads
            .take(v)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![S::zero(); diff.len()]);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient at path point {k}")));
        }
        Ok(g)
    };
    let mut total = vec![S::zero(); diff.len()];
    let chunk = rayon::current_num_threads().max(1);
    for start in (0..steps).step_by(chunk) {
        let end = (start + chunk).min(steps);
        let grads = (start..end)
            .into_par_iter()
            .map(gradient_at)
            .collect::<Result<Vec<_>>>()?;
        for g in grads {
            for (t, v) in total.iter_mut().zip(g) {
                *t = *t + v;
            }
        }
    }
    let m = S::of(steps as f64);
    let ig = total.into_iter().zip(&diff).map(|(g, &d)| d * g / m).collect();
    Tensor::new(x.shape().to_vec(), ig)
}

/// Mean sigmoid probability of `net` over the cells in `mask`, as a
/// function of the input tensor.
pub fn mean_probability_objective<'a, S: Scalar>(
    net: &'a FireCastNet,
    store: &'a ParamStore<S>,
    graphs: &'a MeshGraphs,
    mask: Arc<[bool]>,
) -> Result<impl Fn(&mut Tape<S>, Var) -> Result<Var> + Sync + 'a> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Config("attribution mask selects no cells".into()));
    }
    Ok(move |tape: &mut Tape<S>, x: Var| {
        let p = store.bind(tape, false);
        let logits = net.forward(tape, &p, x, graphs)?;
        let probs = tape.sigmoid(logits)?;
        tape.masked_mean(probs, mask.clone())
    })
}

/// Channel names of the standard 14-channel model input.
pub fn model_channel_layout() -> Vec<String> {
    input_variables()
        .into_iter()
        .chain(POSITIONAL_CHANNELS)
        .map(str::to_string)
        .collect()
}

/// `sum |IG|` per channel of a `[T, C, H, W]` (or `[C, H, W]` with `T = 1`)
/// attribution tensor.
pub fn channel_abs_sums<S: Scalar>(attr: &Tensor<S>, channels: usize) -> Result<Vec<f64>> {
    let shape = attr.shape();
    let (t, c) = match shape.len() {
        4 => (shape[0], shape[1]),
        3 => (1, shape[0]),
        _ => return Err(Error::Shape(format!("attributions must be 3-D or 4-D, got {shape:?}"))),
    };
    if c != channels {
        return Err(Error::Shape(format!("attributions have {c} channels, layout has {channels}")));
    }
    let cells = attr.len() / (t * c).max(1);
    let mut sums = vec![0.0; c];
    for ti in 0..t {
        for (ch, s) in sums.iter_mut().enumerate() {
            let block = &attr.data()[(ti * c + ch) * cells..][..cells];
            *s += block.iter().map(|v| v.as_f64().abs()).sum::<f64>();
        }
    }
    Ok(sums)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableShare {
    pub name: String,
    pub abs_sum: f64,
    /// `None` when every attribution is zero.
    pub share: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalAttribution {
    pub name: String,
    pub abs_sum: f64,
}

/// `sum IG` against `F(x) - F(x')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completeness {
    pub f_input: f64,
    pub f_baseline: f64,
    pub ig_sum: f64,
    /// `|sum IG - (F(x) - F(x'))| / |F(x) - F(x')|`.
    pub relative_residual: f64,
}

impl Completeness {
    pub fn new(f_input: f64, f_baseline: f64, ig_sum: f64) -> Self {
        let delta = f_input - f_baseline;
        Self {
            f_input,
            f_baseline,
            ig_sum,
            relative_residual: (ig_sum - delta).abs() / delta.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub steps: usize,
    pub baseline: String,
    pub quadrature: Quadrature,
    pub horizon: Option<usize>,
    pub samples: usize,
    pub variables: Vec<VariableShare>,
    pub positional: Vec<PositionalAttribution>,
    pub completeness: Vec<Completeness>,
    pub diagnostic: Option<String>,
    pub run_config: serde_json::Value,
}

impl AttributionReport {
    pub fn share_sum(&self) -> Option<f64> {
        self.variables.iter().map(|v| v.share).sum()
    }
}

/// Groups per-channel sums by variable name. Channels named in
/// `positional` are reported separately and left out of the shares; the
/// remaining variables keep first-appearance order.
pub fn report_from_channel_sums(
    sums: &[f64],
    layout: &[String],
    positional: &[&str],
    steps: usize,
) -> Result<AttributionReport> {
    if sums.len() != layout.len() {
        return Err(Error::Shape(format!(
            "{} channel sums for a {}-channel layout",
            sums.len(),
            layout.len()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let mut variables: Vec<VariableShare> = Vec::new();
    let mut pos: Vec<PositionalAttribution> = Vec::new();
    for (name, &s) in layout.iter().zip(sums) {
        if positional.contains(&name.as_str()) {
            match pos.iter_mut().find(|p| &p.name == name) {
                Some(p) => p.abs_sum += s,
                None => pos.push(PositionalAttribution {
                    name: name.clone(),
                    abs_sum: s,
                }),
            }
        } else {
            match variables.iter_mut().find(|v| &v.name == name) {
                Some(v) => v.abs_sum += s,
                None => variables.push(VariableShare {
                    name: name.clone(),
                    abs_sum: s,
                    share: None,
                }),
            }
        }
    }
    let total: f64 = variables.iter().map(|v| v.abs_sum).sum();
    let diagnostic = if !total.is_finite() {
        return Err(Error::NonFinite("attribution total".into()));
    } else if total > 0.0 {
        for v in &mut variables {
            v.share = Some(v.abs_sum / total);
        }
        None
    } else {
        Some("all variable attributions are zero; shares are undefined".to_string())
    };
    Ok(AttributionReport {
        steps,
        baseline: "zeros".into(),
        quadrature: Quadrature::RightRiemann,
        horizon: None,
        samples: 1,
        variables,
        positional: pos,
        completeness: Vec::new(),
        diagnostic,
        run_config: serde_json::Value::Null,
    })
}

/// Per-variable shares of one attribution tensor under `layout`.
pub fn aggregate_by_variable<S: Scalar>(
    attr: &Tensor<S>,
    layout: &[String],
    positional: &[&str],
    steps: usize,
) -> Result<AttributionReport> {
    let sums = channel_abs_sums(attr, layout.len())?;
    report_from_channel_sums(&sums, layout, positional, steps)
}
