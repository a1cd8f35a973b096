//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which coordinates of each input are perturbed.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// Up to `per_tensor` random coordinates of every input, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compares tape gradients of the scalar `f` against central differences
/// with the given `step`.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    f: F,
    step: f64,
    coords: Coordinates,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = match coords {
        Coordinates::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coordinates::All => None,
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let picked: Vec<usize> = match (coords, rng.as_mut()) {
            (Coordinates::Sample { per_tensor, .. }, Some(rng)) if per_tensor < input.len() => {
                let mut v = sample(rng, input.len(), per_tensor).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..input.len()).collect(),
        };
        let analytic = grads.get(vars[i]);
        for c in picked {
            let a = analytic.map_or(0.0, |g| g.data()[c]);
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + step;
            let plus = evaluate(&probe, &f)?;
            probe[i].data_mut()[c] = orig - step;
            let minus = evaluate(&probe, &f)?;
            probe[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(Mismatch {
                    input: i,
                    coordinate: c,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn assert_close(report: GradCheckReport) {
        assert!(
            report.max_rel_error < 1e-6,
            "gradient mismatch: {:?}",
            report.worst
        );
    }

    #[test]
    fn linear_layer_norm_silu() {
        let inputs = [
            rand_tensor(&[4, 5], 1),
            rand_tensor(&[5, 3], 2),
            rand_tensor(&[3], 3),
            rand_tensor(&[3], 4),
            rand_tensor(&[3], 5),
        ];
        let r = check_gradients(
            &inputs,
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                let y = t.silu(y)?;
                let y = t.layer_norm(y, v[3], v[4])?;
                let y = t.tanh(y)?;
                let y = t.mul(y, y)?;
                t.sum(y)
            },
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert_close(r);
    }

    #[test]
    fn graph_ops() {
        let src: Arc<[u32]> = Arc::from(vec![0u32, 2, 1, 2, 0]);
        let dst: Arc<[u32]> = Arc::from(vec![1u32, 0, 2, 2, 1]);
        let inputs = [rand_tensor(&[3, 2], 6), rand_tensor(&[5, 2], 7)];
        let r = check_gradients(
            &inputs,
            |t, v| {
                let g = t.gather(v[0], src.clone())?;
                let m = t.concat(&[g, v[1]])?;
                let m = t.sigmoid(m)?;
                let agg = t.scatter_sum(m, dst.clone(), 3)?;
                let tr = t.transpose(agg)?;
                let r = t.relu(tr)?;
                let s = t.sub(r, tr)?;
                let s = t.scale(s, 0.7)?;
                let s = t.add(s, tr)?;
                let s = t.mul(s, s)?;
                t.mean(s)
            },
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert_close(r);
    }

    #[test]
    fn fused_gather_add_and_row_slices() {
        let src: Arc<[u32]> = Arc::from(vec![0u32, 2, 1, 2]);
        let dst: Arc<[u32]> = Arc::from(vec![1u32, 0, 0, 2]);
        let inputs = [rand_tensor(&[3, 2], 11), rand_tensor(&[4, 2], 12), rand_tensor(&[5, 2], 13)];
        let r = check_gradients(
            &inputs,
            |t, v| {
                let w = t.slice_rows(v[2], 1, 3)?;
                let a = t.linear(v[0], w, None)?;
                let s = t.gather_add(v[1], &[(a, src.clone()), (v[0], dst.clone())])?;
                let s = t.tanh(s)?;
                t.sum(s)
            },
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert_close(r);
    }

    #[test]
    fn convolutions_and_shuffle() {
        let inputs = [
            rand_tensor(&[2, 2, 4, 4], 8),
            rand_tensor(&[8, 2, 2, 2, 2], 9),
            rand_tensor(&[8], 10),
            rand_tensor(&[4, 8, 3, 3], 11),
        ];
        let target: Arc<[f64]> = Arc::from((0..16).map(|i| (i % 3 == 0) as u8 as f64).collect::<Vec<_>>());
        let mask: Arc<[bool]> = Arc::from((0..16).map(|i| i % 5 != 0).collect::<Vec<_>>());
        let r = check_gradients(
            &inputs,
            |t, v| {
                let y = t.conv3d(v[0], v[1], Some(v[2]), [2, 2, 2])?;
                let y = t.conv2d_same(y, v[3], None)?;
                let y = t.pixel_shuffle(y, 2)?;
                let y = t.reshape(y, vec![4, 4])?;
                t.bce_with_logits(y, target.clone(), mask.clone())
            },
            1e-5,
            Coordinates::Sample {
                per_tensor: 20,
                seed: 3,
            },
        )
        .unwrap();
        assert_close(r);
    }

    #[test]
    fn masked_mean_gradient() {
        let mask: Arc<[bool]> = Arc::from(vec![true, false, true, true]);
        let r = check_gradients(
            &[rand_tensor(&[4], 12)],
            |t, v| {
                let y = t.tanh(v[0])?;
                t.masked_mean(y, mask.clone())
            },
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert_close(r);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu has a kink at zero; sampling exactly there disagrees
        let r = check_gradients(
            &[Tensor::zeros([1])],
            |t, v| {
                let y = t.relu(v[0])?;
                t.sum(y)
            },
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
