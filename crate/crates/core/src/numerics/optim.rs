//! First-order optimizers over [`ParamSet`]s.
//!
//! State (momentum buffers, Adam moments) lives in [`OptimizerState`], outside
//! the parameters, so local training and tests drive the same step functions.
//! Non-trainable tensors (BN running statistics) are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd {
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn fresh_state<T: Scalar>(&self, params: &ParamSet<T>) -> OptimizerState<T> {
        match self {
            OptimizerConfig::Sgd { .. } => OptimizerState::Sgd(SgdState::new(params)),
            OptimizerConfig::Adam { .. } => OptimizerState::Adam(AdamState::new(params)),
        }
    }

    /// Applies one update in place.
    pub fn step<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        grads: &ParamSet<T>,
        lr: T,
        state: &mut OptimizerState<T>,
    ) -> Result<()> {
        match (*self, state) {
            (
                OptimizerConfig::Sgd {
                    momentum,
                    weight_decay,
                },
                OptimizerState::Sgd(s),
            ) => sgd_update(params, grads, lr, T::of(momentum), T::of(weight_decay), s),
            (
                OptimizerConfig::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                },
                OptimizerState::Adam(s),
            ) => adam_update(
                params,
                grads,
                AdamHyper {
                    lr,
                    beta1: T::of(beta1),
                    beta2: T::of(beta2),
                    eps: T::of(eps),
                    weight_decay: T::of(weight_decay),
                },
                s,
            ),
            _ => Err(Error::Incongruent(
                "optimizer state does not match optimizer kind".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState<T: Scalar = f64> {
    Sgd(SgdState<T>),
    Adam(AdamState<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T: Scalar = f64> {
    pub velocity: ParamSet<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            velocity: params.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f64> {
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
    pub steps: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            steps: 0,
        }
    }
}

fn check_structure<T: Scalar>(
    params: &ParamSet<T>,
    grads: &ParamSet<T>,
    buffers: &[&ParamSet<T>],
) -> Result<()> {
    params.check_congruent(grads)?;
    for b in buffers {
        params.check_congruent(b)?;
    }
    Ok(())
}

/// `v ← momentum·v + (g + weight_decay·w)`, `w ← w − lr·v`.
pub fn sgd_step<T: Scalar>(
    params: &ParamSet<T>,
    grads: &ParamSet<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
    state: &mut SgdState<T>,
) -> Result<ParamSet<T>> {
    let mut out = params.clone();
    sgd_update(&mut out, grads, lr, momentum, weight_decay, state)?;
    Ok(out)
}

fn sgd_update<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
    state: &mut SgdState<T>,
) -> Result<()> {
    check_structure(params, grads, &[&state.velocity])?;
    let zero = T::zero();
    for ((p, g), v) in params
        .params_mut()
        .iter_mut()
        .zip(grads.params())
        .zip(state.velocity.params_mut())
    {
        if !p.kind.is_trainable() {
            continue;
        }
        for ((w, &gi), vi) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(g.tensor.data())
            .zip(v.tensor.data_mut())
        {
            let mut d = gi;
            if weight_decay != zero {
                d += weight_decay * *w;
            }
            *vi = momentum * *vi + d;
            *w -= lr * *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
pub fn adam_step<T: Scalar>(
    params: &ParamSet<T>,
    grads: &ParamSet<T>,
    hyper: AdamHyper<T>,
    state: &mut AdamState<T>,
) -> Result<ParamSet<T>> {
    let mut out = params.clone();
    adam_update(&mut out, grads, hyper, state)?;
    Ok(out)
}

fn adam_update<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    hyper: AdamHyper<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    check_structure(params, grads, &[&state.first_moment, &state.second_moment])?;
    state.steps += 1;
    let t = state.steps as i32;
    let one = T::one();
    let bc1 = one - hyper.beta1.powi(t);
    let bc2 = one - hyper.beta2.powi(t);
    let AdamState {
        first_moment,
        second_moment,
        ..
    } = state;
    for (((p, g), m), v) in params
        .params_mut()
        .iter_mut()
        .zip(grads.params())
        .zip(first_moment.params_mut())
        .zip(second_moment.params_mut())
    {
        if !p.kind.is_trainable() {
            continue;
        }
        for (((w, &gi), mi), vi) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(g.tensor.data())
            .zip(m.tensor.data_mut())
            .zip(v.tensor.data_mut())
        {
            let mut d = gi;
            if hyper.weight_decay != T::zero() {
                d += hyper.weight_decay * *w;
            }
            *mi = hyper.beta1 * *mi + (one - hyper.beta1) * d;
            *vi = hyper.beta2 * *vi + (one - hyper.beta2) * d * d;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Param, ParamKind};
    use crate::numerics::Tensor;

    fn set(values: &[f64]) -> ParamSet {
        ParamSet::new(vec![Param {
            layer: 0,
            kind: ParamKind::Weight,
            tensor: Tensor::vector(values.to_vec()).unwrap(),
        }])
    }

    fn value(p: &ParamSet) -> f64 {
        p.params()[0].tensor.data()[0]
    }

    #[test]
    fn plain_sgd_step() {
        let w = set(&[1.0]);
        let mut st = SgdState::new(&w);
        let out = sgd_step(&w, &set(&[2.0]), 0.1, 0.0, 0.0, &mut st).unwrap();
        assert!((value(&out) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let w = set(&[1.5, -2.0]);
        let g = set(&[0.0, 0.0]);
        let mut st = SgdState::new(&w);
        assert_eq!(sgd_step(&w, &g, 0.1, 0.9, 0.0, &mut st).unwrap(), w);
        let mut st = AdamState::new(&w);
        let hyper = AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        assert_eq!(adam_step(&w, &g, hyper, &mut st).unwrap(), w);
    }

    #[test]
    fn momentum_recurrence() {
        let mut w = set(&[0.0]);
        let g = set(&[1.0]);
        let mut st = SgdState::new(&w);
        w = sgd_step(&w, &g, 0.1, 0.9, 0.0, &mut st).unwrap();
        assert!((value(&w) + 0.1).abs() < 1e-15);
        w = sgd_step(&w, &g, 0.1, 0.9, 0.0, &mut st).unwrap();
        assert!((value(&st.velocity) - 1.9).abs() < 1e-15);
        assert!((value(&w) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let w = set(&[0.0]);
        let mut st = AdamState::new(&w);
        let hyper = AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let out = adam_step(&w, &set(&[1.0]), hyper, &mut st).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + ε)
        assert!((value(&out) + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_keeps_symmetric_parameters_equal() {
        let mut w = set(&[0.3, 0.3]);
        let mut st = AdamState::new(&w);
        let hyper = AdamHyper {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        };
        for k in 0..50 {
            let g = (k as f64 * 0.37).sin();
            w = adam_step(&w, &set(&[g, g]), hyper, &mut st).unwrap();
            let d = w.params()[0].tensor.data();
            assert_eq!(d[0], d[1]);
        }
    }

    #[test]
    fn structural_mismatch_is_rejected() {
        let w = set(&[0.0]);
        let mut st = SgdState::new(&w);
        assert!(matches!(
            sgd_step(&w, &set(&[1.0, 2.0]), 0.1, 0.0, 0.0, &mut st),
            Err(Error::Incongruent(_))
        ));
        let cfg = OptimizerConfig::adam();
        let mut wrong = OptimizerConfig::default().fresh_state(&w);
        let mut w2 = w.clone();
        assert!(cfg.step(&mut w2, &w, 0.1, &mut wrong).is_err());
    }

    #[test]
    fn running_stats_are_not_updated() {
        let mut w = ParamSet::new(vec![Param {
            layer: 0,
            kind: ParamKind::BnRunningVar,
            tensor: Tensor::vector(vec![1.0]).unwrap(),
        }]);
        let before = w.clone();
        let g = ParamSet::new(vec![Param {
            layer: 0,
            kind: ParamKind::BnRunningVar,
            tensor: Tensor::vector(vec![5.0]).unwrap(),
        }]);
        let cfg = OptimizerConfig::Sgd {
            momentum: 0.9,
            weight_decay: 0.1,
        };
        let mut st = cfg.fresh_state(&w);
        cfg.step(&mut w, &g, 0.1, &mut st).unwrap();
        assert_eq!(w, before);
    }
}
