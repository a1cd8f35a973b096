//! Recurrent baselines: Conv-GRU, Conv-LSTM and GRU cells plus the shared
//! classification head.
//!
//! Gate equations, with `*` a zero-padded "same" convolution:
//!
//! ```text
//! z = sigmoid(W_xz * x + W_hz * h + b_z)
//! r = sigmoid(W_xr * x + W_hr * h + b_r)
//! h~ = tanh(W_xh * x + r . (W_hh * h) + b_h)
//! h' = (1 - z) . h + z . h~
//! ```
//!
//! and for the LSTM `c' = f . c + i . g`, `h' = o . tanh(c')`.

use rand::Rng;

use super::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Default hidden width of the recurrent baselines.
pub const DEFAULT_HIDDEN: usize = 64;
/// Default spatial kernel of the convolutional cells.
pub const DEFAULT_KERNEL: usize = 5;

/// Input and hidden transforms of one gate.
#[derive(Clone, Copy, Debug)]
struct Gate {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

impl Gate {
    fn conv<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        k: usize,
    ) -> Self {
        Self {
            wx: store.add(&format!("{name}.wx"), &[hidden, input, k, k], ParamKind::Weight, input * k * k),
            wh: store.add(&format!("{name}.wh"), &[hidden, hidden, k, k], ParamKind::Weight, hidden * k * k),
            b: store.add(&format!("{name}.b"), &[hidden], ParamKind::Bias, 0),
        }
    }

    fn dense<S: Scalar>(store: &mut ParamStore<S>, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            wx: store.add(&format!("{name}.wx"), &[input, hidden], ParamKind::Weight, input),
            wh: store.add(&format!("{name}.wh"), &[hidden, hidden], ParamKind::Weight, hidden),
            b: store.add(&format!("{name}.b"), &[hidden], ParamKind::Bias, 0),
        }
    }

    /// `(W_x * x + b, W_h * h)` for convolutional gates.
    fn conv_parts<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, h: Var) -> Result<(Var, Var)> {
        let ax = t.conv2d_same(x, p.var(self.wx), Some(p.var(self.b)))?;
        let ah = t.conv2d_same(h, p.var(self.wh), None)?;
        Ok((ax, ah))
    }

    fn dense_parts<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, h: Var) -> Result<(Var, Var)> {
        let ax = t.linear(x, p.var(self.wx), Some(p.var(self.b)))?;
        let ah = t.linear(h, p.var(self.wh), None)?;
        Ok((ax, ah))
    }
}

fn gru_update<S: Scalar>(
    t: &mut Tape<S>,
    h: Var,
    (zx, zh): (Var, Var),
    (rx, rh): (Var, Var),
    (nx, nh): (Var, Var),
) -> Result<Var> {
    let z = t.add(zx, zh)?;
    let z = t.sigmoid(z)?;
    let r = t.add(rx, rh)?;
    let r = t.sigmoid(r)?;
    let gated = t.mul(r, nh)?;
    let cand = t.add(nx, gated)?;
    let cand = t.tanh(cand)?;
    let ones = t.constant(Tensor::ones(t.value(z).shape().to_vec()));
    let keep = t.sub(ones, z)?;
    let old = t.mul(keep, h)?;
    let new = t.mul(z, cand)?;
    t.add(old, new)
}

fn check_spatial<S: Scalar>(t: &Tape<S>, x: Var, h: Var) -> Result<()> {
    let (xs, hs) = (t.value(x).shape(), t.value(h).shape());
    if xs.len() != 3 || hs.len() != 3 || xs[1..] != hs[1..] {
        return Err(Error::Shape(format!(
            "input {xs:?} and hidden state {hs:?} must be [C, H, W] with equal spatial dims"
        )));
    }
    Ok(())
}

/// Convolutional GRU cell.
#[derive(Clone, Debug)]
pub struct ConvGruCell {
    pub hidden: usize,
    pub kernel: usize,
    z: Gate,
    r: Gate,
    h: Gate,
}

impl ConvGruCell {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        kernel: usize,
    ) -> Self {
        Self {
            hidden,
            kernel,
            z: Gate::conv(store, &format!("{name}.z"), input, hidden, kernel),
            r: Gate::conv(store, &format!("{name}.r"), input, hidden, kernel),
            h: Gate::conv(store, &format!("{name}.h"), input, hidden, kernel),
        }
    }

    /// One step: `x [C, H, W]`, `h [hidden, H, W]`.
    pub fn step<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, h: Var) -> Result<Var> {
        check_spatial(t, x, h)?;
        let z = self.z.conv_parts(t, p, x, h)?;
        let r = self.r.conv_parts(t, p, x, h)?;
        let n = self.h.conv_parts(t, p, x, h)?;
        gru_update(t, h, z, r, n)
    }
}

/// Convolutional LSTM cell.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub hidden: usize,
    pub kernel: usize,
    i: Gate,
    f: Gate,
    o: Gate,
    g: Gate,
}

impl ConvLstmCell {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        kernel: usize,
    ) -> Self {
        Self {
            hidden,
            kernel,
            i: Gate::conv(store, &format!("{name}.i"), input, hidden, kernel),
            f: Gate::conv(store, &format!("{name}.f"), input, hidden, kernel),
            o: Gate::conv(store, &format!("{name}.o"), input, hidden, kernel),
            g: Gate::conv(store, &format!("{name}.g"), input, hidden, kernel),
        }
    }

    /// One step returning `(h', c')`.
    pub fn step<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        p: &Bound,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        check_spatial(t, x, h)?;
        if t.value(c).shape() != t.value(h).shape() {
            return Err(Error::Shape("cell and hidden states differ in shape".into()));
        }
        let gate = |g: &Gate, t: &mut Tape<S>| -> Result<Var> {
            let (a, b) = g.conv_parts(t, p, x, h)?;
            t.add(a, b)
        };
        let i = gate(&self.i, t)?;
        let f = gate(&self.f, t)?;
        let o = gate(&self.o, t)?;
        let g = gate(&self.g, t)?;
        let (i, f, o, g) = (t.sigmoid(i)?, t.sigmoid(f)?, t.sigmoid(o)?, t.tanh(g)?);
        let fc = t.mul(f, c)?;
        let ig = t.mul(i, g)?;
        let c_next = t.add(fc, ig)?;
        let tc = t.tanh(c_next)?;
        let h_next = t.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Fully connected GRU cell over rows: `x [N, C]`, `h [N, hidden]`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub hidden: usize,
    z: Gate,
    r: Gate,
    h: Gate,
}

impl GruCell {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            hidden,
            z: Gate::dense(store, &format!("{name}.z"), input, hidden),
            r: Gate::dense(store, &format!("{name}.r"), input, hidden),
            h: Gate::dense(store, &format!("{name}.h"), input, hidden),
        }
    }

    pub fn step<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let z = self.z.dense_parts(t, p, x, h)?;
        let r = self.r.dense_parts(t, p, x, h)?;
        let n = self.h.dense_parts(t, p, x, h)?;
        gru_update(t, h, z, r, n)
    }
}

/// Flatten, then `Linear(D, D/2) -> ReLU -> Linear(D/2, 1)`.
#[derive(Clone, Debug)]
pub struct BaselineHead {
    pub input: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl BaselineHead {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, name: &str, input: usize) -> Self {
        let half = (input / 2).max(1);
        Self {
            input,
            w1: store.add(&format!("{name}.w1"), &[input, half], ParamKind::Weight, input),
            b1: store.add(&format!("{name}.b1"), &[half], ParamKind::Bias, 0),
            w2: store.add(&format!("{name}.w2"), &[half, 1], ParamKind::Weight, half),
            b2: store.add(&format!("{name}.b2"), &[1], ParamKind::Bias, 0),
        }
    }

    /// Scalar logit from a hidden state of `input` elements.
    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, p: &Bound, h: Var) -> Result<Var> {
        if t.value(h).len() != self.input {
            return Err(Error::Shape(format!(
                "head expects {} features, got {:?}",
                self.input,
                t.value(h).shape()
            )));
        }
        let x = t.reshape(h, [1, self.input])?;
        let y = t.linear(x, p.var(self.w1), Some(p.var(self.b1)))?;
        let y = t.relu(y)?;
        let y = t.linear(y, p.var(self.w2), Some(p.var(self.b2)))?;
        t.reshape(y, Vec::<usize>::new())
    }
}

/// Inverted dropout: zeroes each element with probability `p` and scales
/// survivors by `1 / (1 - p)`.
pub fn dropout<S: Scalar, R: Rng>(t: &mut Tape<S>, x: Var, p: f64, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    if p == 0.0 {
        return Ok(x);
    }
    let scale = S::of(1.0 / (1.0 - p));
    let shape = t.value(x).shape().to_vec();
    let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() < p { S::zero() } else { scale });
    let m = t.constant(mask);
    t.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gru_halves_state() {
        let mut store = ParamStore::<f64>::new();
        let cell = ConvGruCell::register(&mut store, "gru", 2, 3, 3);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let x = t.constant(Tensor::from_fn([2, 4, 5], |i| i as f64));
        let h0 = Tensor::from_fn([3, 4, 5], |i| (i as f64).sin());
        let h = t.constant(h0.clone());
        let h1 = cell.step(&mut t, &p, x, h).unwrap();
        for (a, b) in t.value(h1).data().iter().zip(h0.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lstm_halves_cell() {
        let mut store = ParamStore::<f64>::new();
        let cell = ConvLstmCell::register(&mut store, "lstm", 2, 3, 5);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let x = t.constant(Tensor::ones([2, 4, 4]));
        let h = t.constant(Tensor::ones([3, 4, 4]));
        let c0 = Tensor::from_fn([3, 4, 4], |i| i as f64 * 0.1 - 2.0);
        let c = t.constant(c0.clone());
        let (h1, c1) = cell.step(&mut t, &p, x, h, c).unwrap();
        for ((hv, cv), c0v) in t.value(h1).data().iter().zip(t.value(c1).data()).zip(c0.data()) {
            assert!((cv - 0.5 * c0v).abs() < 1e-15);
            assert!((hv - 0.5 * (0.5 * c0v).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut store = ParamStore::<f32>::new();
        let head = BaselineHead::register(&mut store, "head", 64);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let h = t.constant(Tensor::zeros([64, 1, 1]));
        let z = head.forward(&mut t, &p, h).unwrap();
        assert_eq!(t.value(z).shape(), &[] as &[usize]);
        assert_eq!(t.value(z).item().unwrap(), 0.0);
    }

    #[test]
    fn dropout_keeps_expectation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::ones([10_000]));
        let y = dropout(&mut t, x, 0.1, &mut rng).unwrap();
        let mean = t.value(y).sum() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.03);
        assert!(dropout(&mut t, x, 1.0, &mut rng).is_err());
    }
}
