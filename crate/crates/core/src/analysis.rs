//! Fairness metrics and closed-form oracles.
//!
//! The oracles here deliberately avoid the trainer and aggregation code so
//! they can serve as independent references in tests.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{entropy, softmax_temperature, ParamVector, SimplexWeights};
use crate::trainer::Federation;

/// `(1/m) Σ (v_i − mean)²`.
pub fn population_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::param("variance of an empty list"));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m)
}

/// `Σ p_i (v_i − Σ_j p_j v_j)²`.
pub fn weighted_variance(values: &[f64], p: &SimplexWeights) -> Result<f64> {
    Error::check_dim(p.len(), values.len())?;
    let mean: f64 = values.iter().zip(p.iter()).map(|(v, w)| v * w).sum();
    Ok(values
        .iter()
        .zip(p.iter())
        .map(|(v, w)| w * (v - mean) * (v - mean))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Worst,
    Best,
}

/// Number of clients in a `k`-percent tail of `m`: `⌈k·m/100⌉`, at least 1.
pub fn tail_count(m: usize, k_percent: f64) -> usize {
    let exact = k_percent * m as f64 / 100.0;
    // Guards against products such as 7·100/100 landing a hair above 7.
    let count = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    count.clamp(1, m)
}

/// Mean of the `⌈k·m/100⌉` smallest (worst) or largest (best) values; ties
/// go to the lower index.
pub fn tail_mean(values: &[f64], k_percent: f64, side: TailSide) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::param("tail mean of an empty list"));
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::param(format!(
            "k must lie in (0, 100], got {k_percent}"
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let by_value = values[a].total_cmp(&values[b]);
        let by_value = match side {
            TailSide::Worst => by_value,
            TailSide::Best => by_value.reverse(),
        };
        by_value.then(a.cmp(&b))
    });
    let count = tail_count(values.len(), k_percent);
    Ok(order[..count].iter().map(|&i| values[i]).sum::<f64>() / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub test_losses: Vec<f64>,
    /// Present when every client objective reports an accuracy.
    pub accuracies: Option<Vec<f64>>,
    pub loss_variance: f64,
    pub accuracy_variance: Option<f64>,
    pub worst_k: Option<f64>,
    pub best_k: Option<f64>,
    /// Accuracy over the pooled held-out samples.
    pub global_accuracy: Option<f64>,
    pub k_percent: f64,
}

/// Per-client held-out losses and accuracies at `x`, plus their spread.
pub fn evaluate_fairness(
    fed: &Federation,
    x: &ParamVector,
    k_percent: f64,
) -> Result<FairnessReport> {
    let per_client = fed
        .clients()
        .par_iter()
        .map(|c| {
            let obj = c.eval_objective();
            Ok((obj.loss(x)?, obj.accuracy(x)?, obj.full_size()))
        })
        .collect::<Result<Vec<_>>>()?;
    let test_losses: Vec<f64> = per_client.iter().map(|r| r.0).collect();
    let accuracies: Option<Vec<f64>> = per_client.iter().map(|r| r.1).collect();
    let loss_variance = population_variance(&test_losses)?;

    let (accuracy_variance, worst_k, best_k, global_accuracy) = match &accuracies {
        Some(acc) => {
            let total: usize = per_client.iter().map(|r| r.2).sum();
            let correct: f64 = per_client
                .iter()
                .zip(acc)
                .map(|(r, a)| a * r.2 as f64)
                .sum();
            (
                Some(population_variance(acc)?),
                Some(tail_mean(acc, k_percent, TailSide::Worst)?),
                Some(tail_mean(acc, k_percent, TailSide::Best)?),
                Some(correct / total as f64),
            )
        }
        None => (None, None, None, None),
    };
    Ok(FairnessReport {
        test_losses,
        accuracies,
        loss_variance,
        accuracy_variance,
        worst_k,
        best_k,
        global_accuracy,
        k_percent,
    })
}

/// Iterate and fairness statistics for one method in the two-client toy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyIterate {
    pub x: f64,
    pub losses: [f64; 2],
    /// `|F₂(x) − F₁(x)|`.
    pub gap: f64,
    /// Population variance of the two losses.
    pub variance: f64,
}

impl ToyIterate {
    fn at(x: f64) -> Self {
        let losses = [toy_f1(x), toy_f2(x)];
        let gap = (losses[1] - losses[0]).abs();
        Self {
            x,
            losses,
            gap,
            variance: gap * gap / 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCaseRecord {
    pub local_models: [f64; 2],
    pub end_losses: [f64; 2],
    pub eba_weights: [f64; 2],
    pub qffl_deltas: [f64; 2],
    pub qffl_h: [f64; 2],
    pub fedavg: ToyIterate,
    pub fedeba: ToyIterate,
    pub qffl: ToyIterate,
}

fn toy_f1(x: f64) -> f64 {
    2.0 * (x - 2.0) * (x - 2.0)
}

fn toy_f2(x: f64) -> f64 {
    0.5 * (x + 4.0) * (x + 4.0)
}

/// Lipschitz constant used by the q-FFL step in the toy round.
pub const TOY_QFFL_LIPSCHITZ: f64 = 1.0;

/// One round from `x = 0` on `F₁ = 2(x−2)²`, `F₂ = ½(x+4)²` with a single
/// local step of size `η_L`, by direct arithmetic.
///
/// FedEBA weights the local models by `exp(F_i(x_i)/τ)` without alignment;
/// q-FFL uses exponent `q` and `L = 1`.
pub fn toy_case_oracle(eta_l: f64, tau: f64, q: f64) -> Result<ToyCaseRecord> {
    if !(eta_l.is_finite() && eta_l > 0.0) {
        return Err(Error::param(format!(
            "local rate must be positive, got {eta_l}"
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::param(format!("q must be nonnegative, got {q}")));
    }
    let x_t = 0.0;
    let grads = [4.0 * (x_t - 2.0), x_t + 4.0];
    let local = [x_t - eta_l * grads[0], x_t - eta_l * grads[1]];
    let end_losses = [toy_f1(local[0]), toy_f2(local[1])];

    let fedavg = ToyIterate::at(0.5 * (local[0] + local[1]));

    let top = end_losses[0].max(end_losses[1]);
    let e = [
        ((end_losses[0] - top) / tau).exp(),
        ((end_losses[1] - top) / tau).exp(),
    ];
    let eba = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
    let fedeba = ToyIterate::at(eba[0] * local[0] + eba[1] * local[1]);

    let l = TOY_QFFL_LIPSCHITZ;
    let start = [toy_f1(x_t), toy_f2(x_t)];
    let mut deltas = [0.0; 2];
    let mut h = [0.0; 2];
    for i in 0..2 {
        let nabla = l * (x_t - local[i]);
        let fq = start[i].powf(q);
        deltas[i] = fq * nabla;
        h[i] = q * start[i].powf(q - 1.0) * nabla * nabla + l * fq;
    }
    let qffl = ToyIterate::at(x_t - (deltas[0] + deltas[1]) / (h[0] + h[1]));

    Ok(ToyCaseRecord {
        local_models: local,
        end_losses,
        eba_weights: eba,
        qffl_deltas: deltas,
        qffl_h: h,
        fedavg,
        fedeba,
        qffl,
    })
}

/// Clients of the orthogonal-design regression model and the aggregation
/// weights under study.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOracleSetup {
    params: Vec<Vec<f64>>,
    design_scale: f64,
    weights: SimplexWeights,
}

impl RegressionOracleSetup {
    pub fn new(params: Vec<Vec<f64>>, design_scale: f64, weights: SimplexWeights) -> Result<Self> {
        let first = params
            .first()
            .ok_or_else(|| Error::param("regression oracle needs at least one client"))?;
        for w in &params {
            Error::check_dim(first.len(), w.len())?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("non-finite client parameter".into()));
            }
        }
        Error::check_dim(params.len(), weights.len())?;
        if !(design_scale.is_finite() && design_scale > 0.0) {
            return Err(Error::param(format!(
                "design scale must be positive, got {design_scale}"
            )));
        }
        Ok(Self {
            params,
            design_scale,
            weights,
        })
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn design_scale(&self) -> f64 {
        self.design_scale
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    /// `w_agg = Σ p_i w_i`.
    pub fn aggregate(&self) -> Vec<f64> {
        let mut agg = vec![0.0; self.params[0].len()];
        for (w, p) in self.params.iter().zip(self.weights.iter()) {
            for (a, v) in agg.iter_mut().zip(w) {
                *a += p * v;
            }
        }
        agg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionVariance {
    /// `A_i = ‖w_agg − w_i‖²`.
    pub distances: Vec<f64>,
    /// `(b²/4) · var(A_i)` with the population convention.
    pub population: f64,
    /// `(b²/4) · Σ p_i (A_i − Σ p_j A_j)²`.
    pub weighted: f64,
}

/// Variance of the clients' expected test losses at the aggregate model.
pub fn regression_variance_oracle(setup: &RegressionOracleSetup) -> Result<RegressionVariance> {
    let agg = setup.aggregate();
    let distances: Vec<f64> = setup
        .params
        .iter()
        .map(|w| w.iter().zip(&agg).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let scale = setup.design_scale * setup.design_scale / 4.0;
    Ok(RegressionVariance {
        population: scale * population_variance(&distances)?,
        weighted: scale * weighted_variance(&distances, &setup.weights)?,
        distances,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyGridResult {
    pub softmax: SimplexWeights,
    pub softmax_entropy: f64,
    /// `f̃ = Σ softmax_i · L_i`, the loss level the grid must match.
    pub target_loss: f64,
    pub best_point: Vec<f64>,
    pub best_entropy: f64,
    pub feasible_points: usize,
    /// Largest excess of a feasible grid entropy over the softmax entropy that
    /// the slack alone can produce: `ε/τ`.
    pub slack_bound: f64,
}

impl EntropyGridResult {
    /// `H(softmax) − max grid entropy`; negative when a feasible grid point
    /// beats the softmax.
    pub fn margin(&self) -> f64 {
        self.softmax_entropy - self.best_entropy
    }

    pub fn dominates(&self, tolerance: f64) -> bool {
        self.softmax_entropy >= self.best_entropy - tolerance
    }
}

fn grid_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Exhaustive maximum-entropy search over the simplex grid with spacing
/// `grid_step`, restricted to points whose expected loss lies within `slack`
/// of the softmax's.
///
/// The feasible set is widened by the slack, and the maximal entropy at loss
/// level `f` is concave in `f` with slope `−1/τ` at the softmax level, so a
/// feasible point can exceed the softmax entropy by at most `ε/τ`
/// ([`EntropyGridResult::slack_bound`]).
pub fn entropy_max_bruteforce(
    losses: &[f64],
    tau: f64,
    grid_step: f64,
    slack: f64,
) -> Result<EntropyGridResult> {
    if losses.is_empty() || losses.len() > 3 {
        return Err(Error::param(format!(
            "grid search supports 1 to 3 clients, got {}",
            losses.len()
        )));
    }
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::param(format!(
            "grid step must lie in (0, 0.5], got {grid_step}"
        )));
    }
    let divisions = (1.0 / grid_step).round();
    if (divisions * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!(
            "grid step {grid_step} does not divide 1"
        )));
    }
    if !(slack.is_finite() && slack > 0.0) {
        return Err(Error::param(format!("slack must be positive, got {slack}")));
    }
    let softmax = softmax_temperature(losses, tau)?;
    let target_loss: f64 = softmax.iter().zip(losses).map(|(p, l)| p * l).sum();
    let n = divisions as usize;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut feasible_points = 0;
    let mut visit = |point: Vec<f64>| {
        let level: f64 = point.iter().zip(losses).map(|(p, l)| p * l).sum();
        if (level - target_loss).abs() > slack {
            return;
        }
        feasible_points += 1;
        let h = grid_entropy(&point);
        // Lexicographic enumeration with a strict comparison keeps the
        // smallest point among ties.
        if best.as_ref().is_none_or(|(_, bh)| h > *bh) {
            best = Some((point, h));
        }
    };
    let frac = |i: usize| i as f64 / n as f64;
    match losses.len() {
        1 => visit(vec![1.0]),
        2 => {
            for i in 0..=n {
                visit(vec![frac(i), frac(n - i)]);
            }
        }
        _ => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    visit(vec![frac(i), frac(j), frac(n - i - j)]);
                }
            }
        }
    }
    let (best_point, best_entropy) = best.ok_or(Error::InfeasibleGrid { slack })?;
    Ok(EntropyGridResult {
        softmax_entropy: entropy(&softmax),
        softmax,
        target_loss,
        best_point,
        best_entropy,
        feasible_points,
        slack_bound: slack / tau,
    })
}

/// `H(p) + Σ p_i L_i / τ`, the unconstrained form of the maximum-entropy
/// problem; the softmax maximises it over the whole simplex.
pub fn gibbs_objective(p: &[f64], losses: &[f64], tau: f64) -> Result<f64> {
    Error::check_dim(losses.len(), p.len())?;
    Ok(grid_entropy(p) + p.iter().zip(losses).map(|(a, l)| a * l).sum::<f64>() / tau)
}
