//! Losses on plain tensors and their recorded counterparts.

use crate::error::{NumError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probability floor used inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-Σ y log max(p, ε)` for a one-hot `y`.
pub fn cross_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(NumError::Shape {
            op: "cross_entropy",
            left: vec![p.len()],
            right: vec![y.len()],
        });
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != y.len() {
        return Err(NumError::NotOneHot(y.to_vec()));
    }
    Ok(p.iter()
        .zip(y)
        .map(|(&pi, &yi)| if yi == 1.0 { -pi.max(PROB_FLOOR).ln() } else { 0.0 })
        .sum())
}

/// Mean of squared elementwise differences.
pub fn l2_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(NumError::Shape {
            op: "l2_loss",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.len() as f64)
}

/// Recorded mean squared error against a constant target.
pub fn l2_loss_var(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    let pv = tape.value(pred);
    if pv.shape() != target.shape() {
        return Err(NumError::Shape {
            op: "l2_loss",
            left: pv.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let flat = tape.reshape(pred, &[1, target.len()])?;
    let m = tape.row_mse(flat, target.data())?;
    tape.reshape(m, &[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let u = [1.0 / 3.0; 3];
        for k in 0..3 {
            let mut y = [0.0; 3];
            y[k] = 1.0;
            assert!((cross_entropy(&u, &y).unwrap() - 3f64.ln()).abs() < 1e-12);
        }
        let v = cross_entropy(&[0.7, 0.2, 0.1], &[0.0, 1.0, 0.0]).unwrap();
        assert!((v - 1.6094379124341003).abs() < 1e-12);
        assert!(cross_entropy(&[0.0, 1.0], &[1.0, 0.0]).unwrap().is_finite());
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], &[0.5, 0.5]),
            Err(NumError::NotOneHot(_))
        ));
        assert!(cross_entropy(&[0.5, 0.5], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn l2_examples() {
        let a = Tensor::row(&[1.0, 1.0]);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_loss(&a, &Tensor::row(&[0.0, 0.0])).unwrap(), 1.0);
        assert!(l2_loss(&a, &Tensor::row(&[0.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let t = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let mut s = 0.0;
        for i in 0..12 {
            let d = p.data()[i] - t.data()[i];
            s += d * d;
        }
        assert!((l2_loss(&p, &t).unwrap() - s / 12.0).abs() < 1e-12);
        let mut tape = Tape::new();
        let pv = tape.input(p.clone());
        let l = l2_loss_var(&mut tape, pv, &t).unwrap();
        assert!((tape.value(l).data()[0] - s / 12.0).abs() < 1e-12);
    }
}
