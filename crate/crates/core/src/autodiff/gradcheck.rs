//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `max_i |a_i - n_i| / max(1, |n_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::dim("gradient length mismatch"));
    }
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        if !a.is_finite() || !n.is_finite() {
            return Err(Error::Numeric("non-finite gradient in grad_check".into()));
        }
        worst = worst.max((a - n).abs() / n.abs().max(1.0));
    }
    Ok(worst)
}

/// Check the gradient of a tape operation with respect to `input`.
///
/// The output of `op` is contracted with a fixed pseudo-random vector so
/// every output coordinate contributes to the checked scalar.
pub fn grad_check<F>(op: F, input: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    let mut probe: Option<Vec<f64>> = None;
    let mut eval = |x: &Tensor<f64>, want_grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = op(&mut tape, v)?;
        let n = tape.value(out).len();
        let w = probe
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(0x6b61_6e);
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
            })
            .clone();
        let s = tape.weighted_sum(out, w)?;
        let value = tape.value(s).data()[0];
        if !want_grad {
            return Ok((value, None));
        }
        tape.backward(s)?;
        let g = tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        Ok((value, Some(g)))
    };

    let (_, analytic) = eval(input, true)?;
    let analytic = analytic.expect("gradient requested");
    let mut numeric = vec![0.0; input.len()];
    let mut x = input.clone();
    for i in 0..input.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let (fp, _) = eval(&x, false)?;
        x.data_mut()[i] = orig - eps;
        let (fm, _) = eval(&x, false)?;
        x.data_mut()[i] = orig;
        numeric[i] = (fp - fm) / (2.0 * eps);
    }
    max_relative_error(&analytic, &numeric)
}

/// Same check for a plain scalar function with a hand-written gradient.
pub fn grad_check_fn<F, G>(f: F, grad: G, x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    let analytic = grad(x);
    let mut xs = x.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + eps;
            let fp = f(&xs);
            xs[i] = orig - eps;
            let fm = f(&xs);
            xs[i] = orig;
            (fp - fm) / (2.0 * eps)
        })
        .collect();
    max_relative_error(&analytic, &numeric)
}
