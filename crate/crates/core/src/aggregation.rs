//! Server-side weighting: entropy-based weights, temperature schedules,
//! FedAvg weights and the q-FFL server step.

use crate::error::{Error, Result};
use crate::math::{softmax_temperature, softmax_with_prior, ParamVector, SimplexWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Constant,
    Linear,
    Concave,
    Convex,
}

/// Reference distribution for the relative-entropy form of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorKind {
    #[default]
    Uniform,
    DataRatio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbaConfig {
    pub tau0: f64,
    pub schedule: Schedule,
    /// Decay rate κ of the annealing schedule.
    pub decay: f64,
    pub prior: PriorKind,
}

impl Default for EbaConfig {
    fn default() -> Self {
        Self {
            tau0: 0.1,
            schedule: Schedule::Constant,
            decay: 0.0,
            prior: PriorKind::Uniform,
        }
    }
}

impl EbaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0.is_finite() && self.tau0 > 0.0) {
            return Err(Error::param(format!(
                "tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(Error::param(format!(
                "decay must be nonnegative, got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// Temperature for 1-based round `round`.
///
/// With `s = 1 + κ(round − 1)`: constant `τ⁰`, linear `τ⁰/s`,
/// concave `τ⁰/√s`, convex `τ⁰/s³`.
pub fn schedule_tau(cfg: &EbaConfig, round: usize) -> Result<f64> {
    cfg.validate()?;
    if round < 1 {
        return Err(Error::param("rounds are numbered from 1"));
    }
    let s = 1.0 + cfg.decay * (round - 1) as f64;
    let tau = match cfg.schedule {
        Schedule::Constant => cfg.tau0,
        Schedule::Linear => cfg.tau0 / s,
        Schedule::Concave => cfg.tau0 / s.sqrt(),
        Schedule::Convex => cfg.tau0 / s.powi(3),
    };
    Ok(tau)
}

/// Entropy-based aggregation weights `p_i ∝ q_i exp(f_i / τ)`.
pub fn eba_weights(
    losses: &[f64],
    tau: f64,
    prior: Option<&SimplexWeights>,
) -> Result<SimplexWeights> {
    match prior {
        Some(q) => softmax_with_prior(losses, tau, q),
        None => softmax_temperature(losses, tau),
    }
}

pub fn uniform_weights(m: usize) -> Result<SimplexWeights> {
    SimplexWeights::uniform(m)
}

/// FedAvg weights `n_i / Σ n_j`.
pub fn data_ratio_weights(sizes: &[usize]) -> Result<SimplexWeights> {
    if sizes.is_empty() {
        return Err(Error::param("data-ratio weights over zero clients"));
    }
    if sizes.contains(&0) {
        return Err(Error::param("client data sizes must be positive"));
    }
    let masses: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    SimplexWeights::from_masses(&masses)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfflConfig {
    pub q: f64,
    /// Lipschitz constant `L`; the pseudo-gradient is `L (x_t − x̄_i)`.
    pub lipschitz: f64,
}

impl QfflConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(Error::param(format!(
                "q must be nonnegative, got {}",
                self.q
            )));
        }
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(Error::param(format!(
                "lipschitz must be positive, got {}",
                self.lipschitz
            )));
        }
        Ok(())
    }
}

/// Intermediate quantities of one q-FFL server step.
#[derive(Debug, Clone, PartialEq)]
pub struct QfflStep {
    /// `Δ_i = F_i^q · L (x_t − x̄_i)`.
    pub deltas: Vec<ParamVector>,
    /// `h_i = q F_i^{q−1} ‖L (x_t − x̄_i)‖² + L F_i^q`.
    pub h: Vec<f64>,
    /// `x_t − ΣΔ_i / Σh_i`.
    pub next: ParamVector,
}

/// Computes the full q-FFL update with its intermediates.
pub fn qffl_terms(
    x_t: &ParamVector,
    local_models: &[ParamVector],
    losses: &[f64],
    cfg: &QfflConfig,
) -> Result<QfflStep> {
    cfg.validate()?;
    if local_models.is_empty() {
        return Err(Error::param("q-FFL step needs at least one local model"));
    }
    Error::check_dim(local_models.len(), losses.len())?;
    let mut deltas = Vec::with_capacity(losses.len());
    let mut h = Vec::with_capacity(losses.len());
    for (model, &loss) in local_models.iter().zip(losses) {
        Error::check_dim(x_t.len(), model.len())?;
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(Error::Input(format!(
                "q-FFL loss must be finite and nonnegative, got {loss}"
            )));
        }
        if loss == 0.0 && cfg.q < 1.0 {
            return Err(Error::Domain(
                "zero loss raised to a power below one".into(),
            ));
        }
        let pseudo_grad = x_t.sub(model)?.scaled(cfg.lipschitz);
        let fq = loss.powf(cfg.q);
        // q = 0 removes the curvature term entirely; skip it so 0 · ∞ never appears.
        let curvature = if cfg.q == 0.0 {
            0.0
        } else {
            cfg.q * loss.powf(cfg.q - 1.0) * pseudo_grad.norm_squared()
        };
        h.push(curvature + cfg.lipschitz * fq);
        deltas.push(pseudo_grad.scaled(fq));
    }
    let h_total: f64 = h.iter().sum();
    if h_total == 0.0 || !h_total.is_finite() {
        return Err(Error::Degenerate(format!(
            "q-FFL normaliser Σh = {h_total}"
        )));
    }
    let refs: Vec<&ParamVector> = deltas.iter().collect();
    let delta_total = ParamVector::weighted_sum(&refs, &vec![1.0; refs.len()])?;
    let mut next = x_t.clone();
    next.axpy(-1.0 / h_total, &delta_total)?;
    Ok(QfflStep { deltas, h, next })
}

/// `x_{t+1} = x_t − ΣΔ_i / Σh_i`.
pub fn qffl_server_step(
    x_t: &ParamVector,
    local_models: &[ParamVector],
    losses: &[f64],
    cfg: &QfflConfig,
) -> Result<ParamVector> {
    qffl_terms(x_t, local_models, losses, cfg).map(|step| step.next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(schedule: Schedule, tau0: f64, decay: f64) -> EbaConfig {
        EbaConfig {
            tau0,
            schedule,
            decay,
            prior: PriorKind::Uniform,
        }
    }

    fn pv(v: &[f64]) -> ParamVector {
        v.to_vec().into()
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(
            schedule_tau(&cfg(Schedule::Linear, 1.0, 0.1), 1).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            schedule_tau(&cfg(Schedule::Linear, 1.0, 0.1), 11).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(
            schedule_tau(&cfg(Schedule::Convex, 2.0, 1.0), 2).unwrap(),
            0.25
        );
        assert_eq!(
            schedule_tau(&cfg(Schedule::Concave, 2.0, 3.0), 2).unwrap(),
            1.0
        );
        assert!(schedule_tau(&cfg(Schedule::Linear, 1.0, 0.1), 0).is_err());
        assert!(schedule_tau(&cfg(Schedule::Linear, 0.0, 0.1), 1).is_err());
    }

    #[test]
    fn eba_examples() {
        let p = eba_weights(&[0.0, 4.5], 1.0, None).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / (1.0 + 4.5f64.exp()), epsilon = 1e-15);
        let prior = data_ratio_weights(&[10, 30]).unwrap();
        let p = eba_weights(&[1.7, 1.7], 0.3, Some(&prior)).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        let p = eba_weights(&[0.1, 5.0, 2.0], 1e9, None).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn baseline_weights() {
        assert_eq!(uniform_weights(4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(
            data_ratio_weights(&[1, 3]).unwrap().as_slice(),
            &[0.25, 0.75]
        );
        assert_eq!(data_ratio_weights(&[5, 5]).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(uniform_weights(0).is_err());
        assert!(data_ratio_weights(&[]).is_err());
        assert!(data_ratio_weights(&[3, 0]).is_err());
    }

    #[test]
    fn qffl_toy_intermediates() {
        // F1 = 2(x−2)², F2 = ½(x+4)² at x_t = 0 both equal 8; local models 2 and −1.
        let step = qffl_terms(
            &pv(&[0.0]),
            &[pv(&[2.0]), pv(&[-1.0])],
            &[8.0, 8.0],
            &QfflConfig {
                q: 1.0,
                lipschitz: 1.0,
            },
        )
        .unwrap();
        assert_eq!(step.deltas, vec![pv(&[-16.0]), pv(&[8.0])]);
        assert_eq!(step.h, vec![12.0, 9.0]);
        assert_abs_diff_eq!(step.next[0], 8.0 / 21.0, epsilon = 1e-15);
    }

    #[test]
    fn qffl_with_q_zero_is_an_averaged_pseudo_gradient_step() {
        let x = pv(&[1.0, -1.0]);
        let models = [pv(&[0.0, 0.0]), pv(&[2.0, 1.0]), pv(&[0.5, -3.0])];
        let next = qffl_server_step(
            &x,
            &models,
            &[0.3, 2.0, 7.0],
            &QfflConfig {
                q: 0.0,
                lipschitz: 1.0,
            },
        )
        .unwrap();
        for j in 0..2 {
            let mean_pseudo = models.iter().map(|m| x[j] - m[j]).sum::<f64>() / 3.0;
            assert_abs_diff_eq!(next[j], x[j] - mean_pseudo, epsilon = 1e-15);
        }
    }

    #[test]
    fn qffl_identical_clients_reduce_to_one_client() {
        // Hand computation: x_t = 0, x̄ = 1.5, F = 2, q = 2, L = 1.
        // ∇ = −1.5, Δ = 4·(−1.5) = −6, h = 2·2·2.25 + 4 = 13, step = 6/13.
        let models = vec![pv(&[1.5]); 3];
        let next = qffl_server_step(
            &pv(&[0.0]),
            &models,
            &[2.0; 3],
            &QfflConfig {
                q: 2.0,
                lipschitz: 1.0,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(next[0], 6.0 / 13.0, epsilon = 1e-15);
    }

    #[test]
    fn qffl_errors() {
        let c = QfflConfig {
            q: 0.5,
            lipschitz: 1.0,
        };
        assert!(matches!(
            qffl_server_step(&pv(&[0.0]), &[pv(&[1.0])], &[0.0], &c),
            Err(Error::Domain(_))
        ));
        let c = QfflConfig {
            q: 1.0,
            lipschitz: 1.0,
        };
        assert!(matches!(
            qffl_server_step(&pv(&[0.0]), &[pv(&[0.0])], &[0.0], &c),
            Err(Error::Degenerate(_))
        ));
        assert!(qffl_server_step(&pv(&[0.0]), &[pv(&[1.0, 2.0])], &[1.0], &c).is_err());
    }

    proptest! {
        #[test]
        fn schedules_are_nonincreasing(
            tau0 in 0.01f64..10.0,
            decay in 0f64..2.0,
            round in 1usize..500,
        ) {
            for schedule in [Schedule::Constant, Schedule::Linear, Schedule::Concave, Schedule::Convex] {
                let c = cfg(schedule, tau0, decay);
                let a = schedule_tau(&c, round).unwrap();
                let b = schedule_tau(&c, round + 1).unwrap();
                prop_assert!(a > 0.0 && b > 0.0);
                prop_assert!(b <= a);
                if decay == 0.0 {
                    prop_assert_eq!(a, tau0);
                }
            }
        }

        #[test]
        fn qffl_equal_losses_average_pseudo_gradients(
            loss in 0.1f64..10.0,
            q in 0f64..3.0,
            models in prop::collection::vec(prop::collection::vec(-5f64..5.0, 2), 1..6),
        ) {
            let x = pv(&[0.5, -0.5]);
            let models: Vec<ParamVector> = models.into_iter().map(ParamVector::from).collect();
            let c = QfflConfig { q, lipschitz: 1.0 };
            let next = qffl_server_step(&x, &models, &vec![loss; models.len()], &c).unwrap();
            // Equal losses share F^q, so the step is ΣΔ/Σh with common scale factors.
            let fq = loss.powf(q);
            let h_total: f64 = models
                .iter()
                .map(|m| {
                    let g = x.sub(m).unwrap();
                    (if q == 0.0 { 0.0 } else { q * loss.powf(q - 1.0) * g.norm_squared() }) + fq
                })
                .sum();
            for j in 0..2 {
                let mean = models.iter().map(|m| x[j] - m[j]).sum::<f64>() / models.len() as f64;
                let expected = x[j] - fq * mean * models.len() as f64 / h_total;
                prop_assert!((next[j] - expected).abs() <= 1e-12);
            }
        }
    }
}
