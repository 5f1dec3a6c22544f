//! Transport cost, Wasserstein-1 dual estimate, gradient penalty and their
//! Lagrangian combination, plus exact 1-D transport oracles.
//!
//! Batches are `Tensor`s: `[N, C, H, W]` images or `[N, D]` point clouds.

mod cost;
mod monge;
mod penalty;


use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cost::{ms_ssim_cost_on_tape, ms_ssim_on_tape, squared_distance_on_tape};
pub use monge::{assignment_cost, empirical_w1_1d, exact_monge_1d, DiscreteCloud, GroundCost, MongeSolution};
pub use penalty::{gradient_penalty, gradient_penalty_on_tape, input_gradient_norms, interpolate};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::MsSsimParams;
use crate::nn::Critic;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    MsSsimCost,
    SquaredDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Weight of the Wasserstein-1 term.
    pub lambda: f64,
    pub gp_coefficient: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub cost_kind: CostKind,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 40.0,
            gp_coefficient: 10.0,
            critic_steps: 5,
            cost_kind: CostKind::MsSsimCost,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gp_coefficient >= 0.0 && self.gp_coefficient.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gp_coefficient must be >= 0, got {}",
                self.gp_coefficient
            )));
        }
        if self.critic_steps < 1 {
            return Err(Error::InvalidArgument("critic_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub transport_cost: f64,
    pub w1_estimate: f64,
    pub gp_term: f64,
    pub generator_total: f64,
    pub critic_total: f64,
}

impl LossBreakdown {
    /// Fills both totals from the parts.
    pub fn from_parts(transport_cost: f64, w1_estimate: f64, gp_term: f64, lambda: f64) -> Self {
        Self {
            transport_cost,
            w1_estimate,
            gp_term,
            generator_total: Self::generator_total_of(transport_cost, w1_estimate, lambda),
            critic_total: -w1_estimate + gp_term,
        }
    }

    /// `transport_cost + lambda * w1_estimate`; exactly the cost when
    /// `lambda = 0`.
    pub fn generator_total_of(transport_cost: f64, w1_estimate: f64, lambda: f64) -> f64 {
        if lambda == 0.0 {
            transport_cost
        } else {
            transport_cost + lambda * w1_estimate
        }
    }

    pub fn all_finite(&self) -> bool {
        [
            self.transport_cost,
            self.w1_estimate,
            self.gp_term,
            self.generator_total,
            self.critic_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.shape().is_empty() || a.shape()[0] == 0 {
        return Err(Error::Empty("batch".into()));
    }
    Ok(())
}

fn check_nonempty<T: Scalar>(a: &Tensor<T>) -> Result<()> {
    if a.shape().is_empty() || a.shape()[0] == 0 {
        return Err(Error::Empty("batch".into()));
    }
    Ok(())
}

/// Validates a cost evaluation on `shape` without running it.
pub fn check_cost_input(shape: &[usize], kind: CostKind, msp: &MsSsimParams) -> Result<()> {
    match kind {
        CostKind::MsSsimCost => match shape {
            [n, _, h, w] if *n > 0 => {
                msp.base.validate()?;
                msp.check_extent(*h, *w)
            }
            _ => Err(Error::ShapeMismatch(format!("ms-ssim cost needs [N, C, H, W], got {shape:?}"))),
        },
        CostKind::SquaredDistance => Ok(()),
    }
}

/// Records the transport cost between sources `y` and their images `gy`.
pub fn transport_cost_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    y: Var,
    gy: Var,
    kind: CostKind,
    msp: &MsSsimParams,
) -> Var {
    match kind {
        CostKind::MsSsimCost => ms_ssim_cost_on_tape(tape, y, gy, msp),
        CostKind::SquaredDistance => squared_distance_on_tape(tape, y, gy),
    }
}

/// Batch mean of `1 - ms_ssim(y_i, gy_i)` or of `|gy_i - y_i|^2`.
pub fn transport_cost<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>, kind: CostKind, msp: &MsSsimParams) -> Result<T> {
    check_pair(y, gy)?;
    check_cost_input(y.shape(), kind, msp)?;
    let mut tape = Tape::new();
    let yv = tape.constant(y.clone());
    let gv = tape.constant(gy.clone());
    let c = transport_cost_on_tape(&mut tape, yv, gv, kind, msp);
    Ok(tape.item(c))
}

fn mean_score<T: Scalar, C: Critic<T> + ?Sized>(tape: &mut Tape<T>, critic: &C, p: &[Var], x: Var) -> Var {
    let s = critic.score(tape, p, x);
    tape.mean_all(s)
}

/// `E[D(x)] - E[D(gy)]` over the two batches.
pub fn w1_dual_estimate<T: Scalar, C: Critic<T> + ?Sized>(critic: &C, x: &Tensor<T>, gy: &Tensor<T>) -> Result<T> {
    check_nonempty(x)?;
    check_nonempty(gy)?;
    critic.check_input(x.shape())?;
    critic.check_input(gy.shape())?;
    let sx = critic.evaluate(x)?;
    let sg = critic.evaluate(gy)?;
    let m = |v: &[T]| v.iter().copied().sum::<T>() / T::of(v.len() as f64);
    Ok(m(&sx) - m(&sg))
}

/// `-w1_dual_estimate + gradient_penalty`, the quantity the critic descends.
pub fn critic_objective<T: Scalar, C: Critic<T> + ?Sized, R: Rng + ?Sized>(
    critic: &C,
    x: &Tensor<T>,
    gy: &Tensor<T>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<T> {
    cfg.validate()?;
    check_pair(x, gy)?;
    let w1 = w1_dual_estimate(critic, x, gy)?;
    let gp = gradient_penalty(critic, x, gy, cfg.gp_coefficient, rng)?;
    Ok(gp - w1)
}

/// Loss breakdown for a generator update. `x` only enters the reported
/// `w1_estimate`; it carries no generator gradient.
pub fn generator_objective<T: Scalar, C: Critic<T> + ?Sized>(
    y: &Tensor<T>,
    gy: &Tensor<T>,
    x: &Tensor<T>,
    critic: &C,
    cfg: &ObjectiveConfig,
    msp: &MsSsimParams,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let tc = transport_cost(y, gy, cfg.cost_kind, msp)?.as_f64();
    let w1 = w1_dual_estimate(critic, x, gy)?.as_f64();
    Ok(LossBreakdown::from_parts(tc, w1, 0.0, cfg.lambda))
}

/// Values recorded alongside a critic loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticTerms {
    pub w1_estimate: f64,
    pub gp_term: f64,
}

/// Records the critic loss with differentiable critic parameters `p`.
/// Its parameter gradient is that of `-w1 + gp`.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_on_tape<T: Scalar, C: Critic<T> + ?Sized, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    critic: &C,
    p: &[Var],
    x: &Tensor<T>,
    gy: &Tensor<T>,
    gp_coefficient: f64,
    rng: &mut R,
) -> Result<(Var, CriticTerms)> {
    check_pair(x, gy)?;
    critic.check_input(x.shape())?;
    let xv = tape.constant(x.clone());
    let gv = tape.constant(gy.clone());
    let mx = mean_score(tape, critic, p, xv);
    let mg = mean_score(tape, critic, p, gv);
    let w1 = tape.sub(mx, mg);
    let w1_value = tape.item(w1).as_f64();
    let neg = tape.scale(w1, -T::one());
    if gp_coefficient == 0.0 {
        return Ok((
            neg,
            CriticTerms {
                w1_estimate: w1_value,
                gp_term: 0.0,
            },
        ));
    }
    let (surrogate, gp) = gradient_penalty_on_tape(tape, critic, p, x, gy, gp_coefficient, rng)?;
    let loss = tape.add(neg, surrogate);
    Ok((
        loss,
        CriticTerms {
            w1_estimate: w1_value,
            gp_term: gp.as_f64(),
        },
    ))
}

/// Records the generator loss `cost(y, gy) - lambda * mean D(gy)` for a
/// recorded `gy`, with critic parameters `p` attached frozen. The critic is
/// not evaluated when `lambda = 0`.
///
/// Returns the loss, the transport cost and `mean D(gy)` (0 when skipped).
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_on_tape<T: Scalar, C: Critic<T> + ?Sized>(
    tape: &mut Tape<T>,
    critic: &C,
    p: &[Var],
    y: Var,
    gy: Var,
    cfg: &ObjectiveConfig,
    msp: &MsSsimParams,
) -> (Var, f64, Option<f64>) {
    let tc = transport_cost_on_tape(tape, y, gy, cfg.cost_kind, msp);
    let tc_value = tape.item(tc).as_f64();
    if cfg.lambda == 0.0 {
        return (tc, tc_value, None);
    }
    let mg = mean_score(tape, critic, p, gy);
    let mg_value = tape.item(mg).as_f64();
    let adv = tape.scale(mg, -T::of(cfg.lambda));
    (tape.add(tc, adv), tc_value, Some(mg_value))
}
