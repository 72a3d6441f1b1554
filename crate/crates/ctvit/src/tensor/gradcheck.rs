//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays independent
//! of the reverse-mode code it is used to verify.

use crate::tensor::Tensor;

/// Default perturbation for 64-bit central differences.
pub const DEFAULT_H: f64 = 1e-5;

/// Relative error floor: differences below this magnitude are compared
/// against the floor instead, which keeps finite-difference noise on
/// near-zero gradients from registering as failures.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Numeric gradient of `f` with respect to every element of every input,
/// via central differences with step `h`. `f` must evaluate the full forward
/// pass from scratch and return the scalar loss.
pub fn central_difference<F>(inputs: &[Tensor], mut f: F, h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].len()];
        for i in 0..inputs[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            g[i] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_recovers_quadratic_gradient() {
        // f(x) = sum(x^2) has gradient 2x.
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let grads = central_difference(
            std::slice::from_ref(&x),
            |ts| ts[0].data().iter().map(|v| v * v).sum(),
            DEFAULT_H,
        );
        let expected: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        assert!(max_rel_err(&expected, &grads[0]) < 1e-8);
    }

    #[test]
    fn max_rel_err_uses_floor_near_zero() {
        assert!(max_rel_err(&[0.0], &[1e-12]) < 1e-4);
    }
}
