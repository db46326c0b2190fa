use super::{Objective, TrainError, Wrt};
use crate::losses::LossValues;
use crate::params::ParamSet;

/// Below this D2 gradient norm the finite-difference step is undefined and
/// the second-order term is skipped.
pub const HYPERGRAD_MIN_NORM: f64 = 1e-12;

/// Updated parameters and the loss measured before the update.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub params: ParamSet,
    pub losses: LossValues,
}

fn finite(p: ParamSet, what: &str) -> Result<ParamSet, TrainError> {
    if p.all_finite() {
        Ok(p)
    } else {
        Err(TrainError::NonFinite(what.into()))
    }
}

/// `θ' = θ − α·∇θ L(θ, φ; batch)`; the detector is a constant here.
pub fn lower_step(
    obj: &dyn Objective,
    theta: &ParamSet,
    phi: &ParamSet,
    batch: &[usize],
    alpha: f64,
) -> Result<StepOutcome, TrainError> {
    let ev = obj.evaluate(theta, phi, batch, Wrt::Theta)?;
    let grad = ev.grad_theta.expect("theta gradient requested");
    Ok(StepOutcome {
        params: finite(theta.descend(alpha, &grad), "segmenter parameters")?,
        losses: ev.losses,
    })
}

/// `φ' = φ − β·∇φ L(θ', φ; batch)` with `θ'` held constant.
pub fn upper_step_first_order(
    obj: &dyn Objective,
    theta_prime: &ParamSet,
    phi: &ParamSet,
    batch: &[usize],
    beta: f64,
) -> Result<StepOutcome, TrainError> {
    let ev = obj.evaluate(theta_prime, phi, batch, Wrt::Phi)?;
    let grad = ev.grad_phi.expect("phi gradient requested");
    Ok(StepOutcome {
        params: finite(phi.descend(beta, &grad), "detector parameters")?,
        losses: ev.losses,
    })
}

/// A second-order hypergradient and how it was formed.
#[derive(Clone, Debug)]
pub struct Hypergradient {
    /// `direct − α·mixed`.
    pub grad: ParamSet,
    /// `∇φ L_upper(θ', φ)`.
    pub direct: ParamSet,
    /// Finite-difference estimate of the mixed second derivative applied to
    /// `∇θ' L_upper`; `None` when skipped.
    pub mixed: Option<ParamSet>,
    pub eps: Option<f64>,
    pub losses: LossValues,
}

impl Hypergradient {
    pub fn skipped(&self) -> bool {
        self.mixed.is_none()
    }
}

/// Direct gradient minus `α` times a central-difference estimate of the
/// mixed second derivative of the lower objective along `v = ∇θ' L_upper`:
///
/// `(∇φ L_lower(θ + εv, φ) − ∇φ L_lower(θ − εv, φ)) / 2ε`, `ε = eps_scale / ‖v‖₂`.
///
/// The perturbations are applied to the pre-update `theta`.
#[allow(clippy::too_many_arguments)]
pub fn second_order_hypergradient(
    lower: &dyn Objective,
    upper: &dyn Objective,
    theta: &ParamSet,
    theta_prime: &ParamSet,
    phi: &ParamSet,
    lower_batch: &[usize],
    upper_batch: &[usize],
    alpha: f64,
    eps_scale: f64,
) -> Result<Hypergradient, TrainError> {
    let ev = upper.evaluate(theta_prime, phi, upper_batch, Wrt::Both)?;
    let direct = ev.grad_phi.expect("phi gradient requested");
    let v = ev.grad_theta.expect("theta gradient requested");
    let norm = v.norm();
    if !norm.is_finite() {
        return Err(TrainError::NonFinite(
            "upper-level segmenter gradient".into(),
        ));
    }
    if norm < HYPERGRAD_MIN_NORM {
        return Ok(Hypergradient {
            grad: direct.clone(),
            direct,
            mixed: None,
            eps: None,
            losses: ev.losses,
        });
    }
    let eps = eps_scale / norm;
    let mut plus = theta.clone();
    plus.axpy(eps, &v);
    let mut minus = theta.clone();
    minus.axpy(-eps, &v);
    let gp = lower
        .evaluate(&plus, phi, lower_batch, Wrt::Phi)?
        .grad_phi
        .expect("phi gradient");
    let gm = lower
        .evaluate(&minus, phi, lower_batch, Wrt::Phi)?
        .grad_phi
        .expect("phi gradient");
    let mut mixed = gp;
    mixed.axpy(-1.0, &gm);
    let mixed = mixed.map(|t| t.map(|x| x / (2.0 * eps)));
    Ok(Hypergradient {
        grad: direct.descend(alpha, &mixed),
        direct,
        mixed: Some(mixed),
        eps: Some(eps),
        losses: ev.losses,
    })
}

/// `φ' = φ − β·hypergradient`.
#[allow(clippy::too_many_arguments)]
pub fn upper_step_second_order(
    lower: &dyn Objective,
    upper: &dyn Objective,
    theta: &ParamSet,
    theta_prime: &ParamSet,
    phi: &ParamSet,
    lower_batch: &[usize],
    upper_batch: &[usize],
    alpha: f64,
    beta: f64,
    eps_scale: f64,
) -> Result<(StepOutcome, Hypergradient), TrainError> {
    let h = second_order_hypergradient(
        lower,
        upper,
        theta,
        theta_prime,
        phi,
        lower_batch,
        upper_batch,
        alpha,
        eps_scale,
    )?;
    let params = finite(phi.descend(beta, &h.grad), "detector parameters")?;
    Ok((
        StepOutcome {
            params,
            losses: h.losses,
        },
        h,
    ))
}
