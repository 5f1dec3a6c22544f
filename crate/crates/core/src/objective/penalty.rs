use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Critic;
use crate::scalar::Scalar;

/// Interpolates `eps_i x_i + (1 - eps_i) gy_i` with one uniform `eps_i` per
/// sample, drawn in sample order.
pub fn interpolate<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, gy: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
    if x.shape() != gy.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), gy.shape())));
    }
    if x.is_empty() || x.rows() == 0 {
        return Err(Error::Empty("interpolation batch".into()));
    }
    let m = x.row_len();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        let e = T::of(rng.gen::<f64>());
        out.extend(x.row(i).iter().zip(gy.row(i)).map(|(&a, &b)| e * a + (T::one() - e) * b));
    }
    debug_assert_eq!(out.len(), x.rows() * m);
    Tensor::new(x.shape().to_vec(), out)
}

/// Per-sample input-gradient norms of the critic at `points`.
pub fn input_gradient_norms<T: Scalar, C: Critic<T> + ?Sized>(critic: &C, points: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
    let (_, g) = critic.input_gradient(points)?;
    let norms: Vec<T> = (0..g.rows())
        .map(|i| g.row(i).iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|n| !n.is_finite()) {
        return Err(Error::NonDifferentiable(format!("non-finite input gradient at sample {i}")));
    }
    Ok((norms, g))
}

fn penalty_value<T: Scalar>(norms: &[T], coef: f64) -> T {
    let mean = norms.iter().map(|&n| (n - T::one()) * (n - T::one())).sum::<T>() / T::of(norms.len() as f64);
    T::of(coef) * mean
}

/// `coef * mean_i (|grad D(x̂_i)| - 1)^2` over random interpolates.
pub fn gradient_penalty<T: Scalar, C: Critic<T> + ?Sized, R: Rng + ?Sized>(
    critic: &C,
    x: &Tensor<T>,
    gy: &Tensor<T>,
    coef: f64,
    rng: &mut R,
) -> Result<T> {
    let xhat = interpolate(x, gy, rng)?;
    let (norms, _) = input_gradient_norms(critic, &xhat)?;
    Ok(penalty_value(&norms, coef))
}

/// Records a scalar whose parameter gradient equals that of the gradient
/// penalty, and returns it with the penalty value.
///
/// With `g_i = grad_x D(x̂_i)` held fixed, `d/dθ (|g_i| - 1)^2` equals
/// `2 (|g_i| - 1) / |g_i|` times `d/dθ [g_i · grad_x D(x̂_i; θ)]`, and the
/// bracket is the forward-mode tangent of `D` along `g_i`. For
/// piecewise-linear activations the tangent is exact, so no second-order
/// reverse pass is needed.
pub fn gradient_penalty_on_tape<T: Scalar, C: Critic<T> + ?Sized, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    critic: &C,
    p: &[Var],
    x: &Tensor<T>,
    gy: &Tensor<T>,
    coef: f64,
    rng: &mut R,
) -> Result<(Var, T)> {
    let xhat = interpolate(x, gy, rng)?;
    let (norms, g) = input_gradient_norms(critic, &xhat)?;
    let value = penalty_value(&norms, coef);
    let n = T::of(norms.len() as f64);
    let mut weights = Vec::with_capacity(norms.len());
    for (i, &nm) in norms.iter().enumerate() {
        if nm == T::zero() && coef > 0.0 {
            return Err(Error::NonDifferentiable(format!(
                "zero input gradient at interpolate {i}; the penalty has no gradient there"
            )));
        }
        let w = if coef > 0.0 { T::of(2.0 * coef) * (nm - T::one()) / (nm * n) } else { T::zero() };
        weights.push(w);
    }
    let xv = tape.constant(xhat);
    let gv = tape.constant(g);
    let (_, tangent) = critic.score_tangent(tape, p, xv, gv);
    let weighted = tape.mul_const(tangent, weights);
    Ok((tape.sum_all(weighted), value))
}
