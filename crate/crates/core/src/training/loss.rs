use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Masked mean binary cross-entropy on logits.
pub fn bce_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    target: Arc<[S]>,
    mask: Arc<[bool]>,
) -> Result<Var> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Config("loss mask selects no cells".into()));
    }
    tape.bce_with_logits(logits, target, mask)
}

/// Value of [`bce_loss`] without recording a tape.
pub fn bce_value(logits: &[f32], target: &[f32], mask: &[bool]) -> Result<f64> {
    if logits.len() != target.len() || logits.len() != mask.len() {
        return Err(Error::Shape("logits, targets and mask differ in length".into()));
    }
    let (mut total, mut n) = (0.0f64, 0usize);
    for ((&z, &y), &m) in logits.iter().zip(target).zip(mask) {
        if m {
            let (z, y) = (z as f64, y as f64);
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Config("loss mask selects no cells".into()));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn loss(z: &[f64], y: &[f64], m: &[bool]) -> f64 {
        let mut t = Tape::<f64>::new();
        let v = t.param(Tensor::new([z.len()], z.to_vec()).unwrap());
        let l = bce_loss(&mut t, v, y.into(), m.into()).unwrap();
        t.value(l).item().unwrap()
    }

    #[test]
    fn reference_values() {
        assert!((loss(&[0.0; 4], &[1.0, 0.0, 1.0, 1.0], &[true; 4]) - 2f64.ln()).abs() < 1e-12);
        assert!(loss(&[20.0], &[1.0], &[true]) < 1e-8);
        let v = loss(&[0.0, 2.0, -2.0, 0.0], &[1.0, 1.0, 0.0, 0.0], &[true; 4]);
        assert!((v - 0.410038).abs() < 1e-6, "{v}");
        let f = bce_value(&[0.0, 2.0, -2.0, 0.0], &[1.0, 1.0, 0.0, 0.0], &[true; 4]).unwrap();
        assert!((f - v).abs() < 1e-7);
    }

    #[test]
    fn empty_mask_is_a_config_error() {
        let mut t = Tape::<f64>::new();
        let v = t.param(Tensor::zeros([2]));
        let r = bce_loss(&mut t, v, vec![0.0, 1.0].into(), vec![false, false].into());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
