//! Binary cross-entropy on logits, written in the overflow-safe form
//! `max(x, 0) - x*y + ln(1 + exp(-|x|))`.

use crate::error::NnError;
use crate::tensor::{Element, Tensor};

/// Numerically stable logistic sigmoid.
pub fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (E::ZERO - x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

/// Mean element-wise BCE between `logits` and `targets` (same shape,
/// targets in `[0, 1]`), plus the gradient with respect to the logits:
/// `(sigmoid(x) - y) / count`.
///
/// The scalar loss is accumulated in f64 regardless of the element type.
pub fn bce_with_logits<E: Element>(
    logits: &Tensor<E>,
    targets: &Tensor<E>,
) -> Result<(f64, Tensor<E>), NnError> {
    if logits.shape() != targets.shape() {
        return Err(NnError::ShapeMismatch {
            context: "bce_with_logits",
            expected: format!("{:?}", logits.shape()),
            actual: format!("{:?}", targets.shape()),
        });
    }
    let count = logits.len();
    if count == 0 {
        return Err(NnError::InvalidConfig("bce_with_logits on empty tensor".into()));
    }
    debug_assert!(
        targets
            .data()
            .iter()
            .all(|&t| t >= E::ZERO && t <= E::ONE),
        "targets must lie in [0, 1]"
    );

    let inv = E::from_f64(1.0 / count as f64);
    let mut sum = 0.0f64;
    let mut grad = vec![E::ZERO; count];
    for (g, (&x, &y)) in grad
        .iter_mut()
        .zip(logits.data().iter().zip(targets.data()))
    {
        let pos = if x > E::ZERO { x } else { E::ZERO };
        let term = pos - x * y + (E::ZERO - x.abs()).exp().ln_1p();
        sum += term.to_f64();
        *g = (sigmoid(x) - y) * inv;
    }
    let loss = sum / count as f64;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("bce_with_logits loss"));
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Total of named loss contributions; empty input sums to zero.
pub fn sum_losses(named: &[(&str, f64)]) -> f64 {
    named.iter().map(|(_, v)| v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_gives_ln2() {
        // x = 0, y = anything: loss term is ln 2, grad is (0.5 - y) / n.
        let x = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        let y = Tensor::new(vec![1], vec![1.0f64]).unwrap();
        let (loss, grad) = bce_with_logits(&x, &y).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad.data()[0] - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_formula_on_moderate_logits() {
        let xs: [f64; 6] = [-3.0, -1.0, -0.25, 0.0, 0.5, 2.0];
        let ys: [f64; 6] = [0.0, 1.0, 0.5, 1.0, 0.0, 1.0];
        let x = Tensor::new(vec![6], xs.to_vec()).unwrap();
        let y = Tensor::new(vec![6], ys.to_vec()).unwrap();
        let (loss, grad) = bce_with_logits(&x, &y).unwrap();
        let mut expect = 0.0;
        for (&xi, &yi) in xs.iter().zip(&ys) {
            let p = 1.0 / (1.0 + (-xi).exp());
            expect += -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln());
        }
        expect /= 6.0;
        assert!((loss - expect).abs() < 1e-12);
        for i in 0..6 {
            let p = 1.0 / (1.0 + (-xs[i]).exp());
            assert!((grad.data()[i] - (p - ys[i]) / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let x = Tensor::new(vec![4], vec![500.0f64, -500.0, 80.0, -80.0]).unwrap();
        let y = Tensor::new(vec![4], vec![0.0f64, 1.0, 1.0, 0.0]).unwrap();
        let (loss, grad) = bce_with_logits(&x, &y).unwrap();
        assert!(loss.is_finite());
        assert!(grad.all_finite());
        // saturated-wrong logits cost ~|x| / n each
        assert!((loss - (500.0 + 500.0) / 4.0).abs() < 1e-9);
    }

    #[test]
    fn f32_path_stays_finite_too() {
        let x = Tensor::new(vec![2], vec![120.0f32, -120.0]).unwrap();
        let y = Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap();
        let (loss, grad) = bce_with_logits(&x, &y).unwrap();
        assert!(loss.is_finite());
        assert!(grad.all_finite());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(vec![2, 2]);
        let y = Tensor::<f32>::zeros(vec![4]);
        assert!(bce_with_logits(&x, &y).is_err());
    }

    #[test]
    fn sum_losses_adds_and_handles_empty() {
        assert_eq!(sum_losses(&[]), 0.0);
        assert_eq!(sum_losses(&[("a", 1.5), ("b", 2.0), ("c", -0.5)]), 3.0);
    }
}
