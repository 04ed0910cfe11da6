use super::TrainError;
use crate::nn::{Float, Tensor};

/// Mean negative log-softmax of the target logits, and its gradient
/// `(softmax - onehot) / N` with respect to the logits.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor), TrainError> {
    let (n, k) = logits.dims2()?;
    if targets.len() != n {
        return Err(TrainError::Config(format!("{} targets for {n} logit rows", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(TrainError::TargetOutOfRange { target: t, classes: k });
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
        let sum: Float = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += (lse - row[t]) as f64;
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / n as Float;
        }
        g[t] -= 1.0 / n as Float;
    }
    let loss = if n == 0 { 0.0 } else { total / n as f64 };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (l, _) = cross_entropy(&Tensor::full(&[3, 32], 0.7), &[0, 5, 31]).unwrap();
        assert!((l - 32f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_target() {
        let mut x = Tensor::zeros(&[1, 4]);
        x.data_mut()[2] = 50.0;
        let (l, _) = cross_entropy(&x, &[2]).unwrap();
        assert!(l < 1e-20, "{l}");
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let x = Tensor::from_fn(&[2, 5], |i| (i as Float).sin());
        let (_, g) = cross_entropy(&x, &[1, 4]).unwrap();
        for row in g.data().chunks(5) {
            assert!(row.iter().sum::<Float>().abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(
            cross_entropy(&Tensor::zeros(&[1, 3]), &[3]),
            Err(TrainError::TargetOutOfRange { target: 3, classes: 3 })
        ));
    }
}
