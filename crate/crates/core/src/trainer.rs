//! Round-by-round federated training: FedAvg, q-FFL and FedEBA+.
//!
//! A FedEBA+ round samples clients, measures the angle between their
//! start-of-round losses and the all-ones vector, and then takes one of two
//! paths:
//!
//! - angle above the threshold: the server sends a fair gradient `g̃` (the
//!   softmax-weighted mean of the start-of-round client gradients) and every
//!   local step descends along `(1−α)g + αg̃`; the local updates are combined
//!   with entropy-based weights. This costs one extra exchange per round.
//! - otherwise: plain local SGD, and the entropy-weighted aggregate is blended
//!   with the mean one-step update, `(1−α)Σp_iΔ_i + αΔ̃`.
//!
//! In both paths the weights come from end-of-round local losses at the
//! scheduled temperature, and the server applies `x + ηΔ`.
//!
//! Per-client randomness is drawn from a stream keyed by (seed, round,
//! client id), so trajectories do not depend on thread scheduling or on which
//! branch earlier rounds took.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::aggregation::{
    data_ratio_weights, eba_weights, qffl_terms, schedule_tau, EbaConfig, PriorKind, QfflConfig,
};
use crate::analysis::{evaluate_fairness, FairnessReport};
use crate::data::{train_test_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::math::{chi_square_divergence, fair_angle, ParamVector, SeededRng, SimplexWeights};
use crate::objective::{Architecture, ClassifierObjective, LocalObjective, Subset};

const SAMPLING_STREAM: u64 = 1;
const LOCAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    FedAvg,
    Qffl,
    #[default]
    FedEbaPlus,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::FedAvg => "fedavg",
            Method::Qffl => "qffl",
            Method::FedEbaPlus => "fedeba_plus",
        })
    }
}

/// How local steps pick their samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSpec {
    #[default]
    Full,
    /// Sampling without replacement, reshuffled once the client's samples
    /// are exhausted.
    MiniBatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub clients_per_round: usize,
    /// Server rate η in `x_{t+1} = x_t + ηΔ_t`.
    pub global_lr: f64,
    pub local_lr: f64,
    /// Alignment coefficient α.
    pub alpha: f64,
    /// Fair-angle threshold θ in radians.
    pub fair_angle: f64,
    pub eba: EbaConfig,
    pub qffl: QfflConfig,
    pub batch: BatchSpec,
    pub method: Method,
    pub seed: u64,
    /// Percentage used for worst/best tail accuracies.
    pub tail_percent: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let local_lr = 0.05;
        Self {
            rounds: 100,
            local_steps: 5,
            clients_per_round: 10,
            global_lr: 1.0,
            local_lr,
            alpha: 0.5,
            fair_angle: 45f64.to_radians(),
            eba: EbaConfig::default(),
            qffl: QfflConfig {
                q: 1.0,
                lipschitz: 1.0 / local_lr,
            },
            batch: BatchSpec::Full,
            method: Method::FedEbaPlus,
            seed: 0,
            tail_percent: 5.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_steps == 0 || self.clients_per_round == 0 {
            return Err(Error::param(
                "rounds, local_steps and clients_per_round must be at least 1",
            ));
        }
        for (name, v) in [("global_lr", self.global_lr), ("local_lr", self.local_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=PI).contains(&self.fair_angle) {
            return Err(Error::param(format!(
                "fair angle must lie in [0, π] radians, got {}",
                self.fair_angle
            )));
        }
        if self.batch == BatchSpec::MiniBatch(0) {
            return Err(Error::param("batch size must be at least 1"));
        }
        if !(self.tail_percent > 0.0 && self.tail_percent <= 100.0) {
            return Err(Error::param("tail percent must lie in (0, 100]"));
        }
        self.eba.validate()?;
        self.qffl.validate()
    }
}

/// One participant: a training objective and an optional held-out objective.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub train: Arc<dyn LocalObjective>,
    pub test: Option<Arc<dyn LocalObjective>>,
}

impl Client {
    pub fn new(id: usize, train: Arc<dyn LocalObjective>) -> Self {
        Self {
            id,
            train,
            test: None,
        }
    }

    pub fn with_test(mut self, test: Arc<dyn LocalObjective>) -> Self {
        self.test = Some(test);
        self
    }

    pub fn size(&self) -> usize {
        self.train.full_size()
    }

    /// The held-out objective, or the training objective when there is none.
    pub fn eval_objective(&self) -> &dyn LocalObjective {
        self.test.as_deref().unwrap_or(self.train.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct Federation {
    clients: Vec<Client>,
    dimension: usize,
}

impl Federation {
    /// Client ids are reassigned to their positions.
    pub fn new(clients: Vec<Client>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::param("federation needs at least one client"))?;
        let dimension = first.train.dimension();
        let mut clients = clients;
        for (id, c) in clients.iter_mut().enumerate() {
            c.id = id;
            Error::check_dim(dimension, c.train.dimension())?;
            if let Some(t) = &c.test {
                Error::check_dim(dimension, t.dimension())?;
            }
        }
        Ok(Self { clients, dimension })
    }

    pub fn from_objectives<O: LocalObjective + 'static>(objectives: Vec<O>) -> Result<Self> {
        Self::new(
            objectives
                .into_iter()
                .enumerate()
                .map(|(id, o)| Client::new(id, Arc::new(o)))
                .collect(),
        )
    }

    /// Classifier clients over `parts` of a shared dataset, each split 80/20
    /// into train and test with a stream of `split_seed`.
    pub fn classifiers(
        arch: Architecture,
        data: Arc<LabeledDataset>,
        parts: &[Vec<usize>],
        split_seed: u64,
    ) -> Result<Self> {
        let clients = parts
            .iter()
            .enumerate()
            .map(|(id, part)| {
                let mut rng = SeededRng::derive(split_seed, &[id as u64]);
                let (train, test) = train_test_split(part, &mut rng);
                let mut client = Client::new(
                    id,
                    Arc::new(ClassifierObjective::new(arch, data.clone(), train)?),
                );
                if !test.is_empty() {
                    client = client.with_test(Arc::new(ClassifierObjective::new(
                        arch,
                        data.clone(),
                        test,
                    )?));
                }
                Ok(client)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clients)
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn client(&self, id: usize) -> &Client {
        &self.clients[id]
    }

    fn data_weights(&self) -> Result<SimplexWeights> {
        data_ratio_weights(&self.clients.iter().map(Client::size).collect::<Vec<_>>())
    }

    /// `f(x) = Σ_i (n_i/N) F_i(x)` over the training objectives of all clients.
    pub fn global_train_loss(&self, x: &ParamVector) -> Result<f64> {
        let weights = self.data_weights()?;
        let losses = self
            .clients
            .par_iter()
            .map(|c| c.train.loss(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().zip(weights.iter()).map(|(l, w)| l * w).sum())
    }

    /// `∇f(x)` for the objective of [`Federation::global_train_loss`].
    pub fn global_gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        let weights = self.data_weights()?;
        let grads = self
            .clients
            .par_iter()
            .map(|c| c.train.gradient(x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ParamVector> = grads.iter().collect();
        ParamVector::weighted_sum(&refs, weights.as_slice())
    }
}

/// What a client returns after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePacket {
    pub client: usize,
    /// `x_{t,K} − x_{t,0}`.
    pub delta: ParamVector,
    /// `x_{t,1} − x_{t,0}`; absent when the round does not use it.
    pub one_step_delta: Option<ParamVector>,
    /// Full-batch loss at the broadcast model.
    pub start_loss: f64,
    /// Full-batch loss at the final local model.
    pub end_loss: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Gradient alignment with the fair gradient (extra communication).
    Aligned,
    /// Plain local SGD with model alignment at the server.
    Plain,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Aligned => "aligned",
            Branch::Plain => "plain",
        })
    }
}

/// Per-round telemetry, evaluated at the model produced by the round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Temperature used; infinite for methods without entropy weights.
    pub tau: f64,
    /// Fair angle of the sampled clients' start-of-round losses, radians.
    pub angle: f64,
    pub branch: Branch,
    pub sampled: Vec<usize>,
    pub weights: SimplexWeights,
    pub global_train_loss: f64,
    pub global_grad_norm: f64,
    pub fairness: FairnessReport,
    /// `χ²(uniform ‖ p)`; infinite when some weight underflowed to zero.
    pub chi_square: f64,
    pub extra_communication: bool,
    pub model: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub reports: Vec<RoundReport>,
    pub final_model: ParamVector,
}

impl Trajectory {
    /// Rounds that paid for the extra fair-gradient exchange.
    pub fn extra_communication_rounds(&self) -> usize {
        self.reports
            .iter()
            .filter(|r| r.extra_communication)
            .count()
    }
}

/// `n` distinct client ids out of `m`, ascending.
pub fn sample_clients(m: usize, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::param("must sample at least one client"));
    }
    rng.sample_indices(m, n)
}

/// `g̃ = Σ_i softmax(losses/τ)_i g_i`.
pub fn compute_fair_gradient(
    grads: &[ParamVector],
    losses: &[f64],
    tau: f64,
) -> Result<ParamVector> {
    Error::check_dim(grads.len(), losses.len())?;
    let p = crate::math::softmax_temperature(losses, tau)?;
    let refs: Vec<&ParamVector> = grads.iter().collect();
    ParamVector::weighted_sum(&refs, p.as_slice())
}

/// Batch order for one client's local steps.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    size: usize,
}

impl BatchCursor {
    fn new(batch: BatchSpec, n: usize, rng: &mut SeededRng) -> Option<Self> {
        match batch {
            BatchSpec::MiniBatch(b) if b < n => {
                let mut order: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut order);
                Some(Self {
                    order,
                    pos: 0,
                    size: b,
                })
            }
            _ => None,
        }
    }

    fn next(&mut self, rng: &mut SeededRng) -> &[usize] {
        if self.pos + self.size > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let batch = &self.order[self.pos..self.pos + self.size];
        self.pos += self.size;
        batch
    }
}

fn run_local(
    client: &Client,
    x_t: &ParamVector,
    steps: usize,
    lr: f64,
    alignment: Option<(f64, &ParamVector)>,
    batch: BatchSpec,
    rng: &mut SeededRng,
) -> Result<UpdatePacket> {
    if steps == 0 {
        return Err(Error::param("local training needs at least one step"));
    }
    let objective = client.train.as_ref();
    Error::check_dim(objective.dimension(), x_t.len())?;
    if let Some((_, fair)) = alignment {
        Error::check_dim(x_t.len(), fair.len())?;
    }
    let start_loss = objective.loss(x_t)?;
    let mut cursor = BatchCursor::new(batch, objective.full_size(), rng);
    let mut x = x_t.clone();
    let mut one_step = None;
    for k in 0..steps {
        let subset = match cursor.as_mut() {
            Some(c) => Subset::Indices(c.next(rng)),
            None => Subset::Full,
        };
        let mut direction = objective.gradient_on(&x, subset)?;
        if let Some((alpha, fair)) = alignment {
            direction = direction.scaled(1.0 - alpha);
            direction.axpy(alpha, fair)?;
        }
        x.axpy(-lr, &direction)?;
        if k == 0 {
            one_step = Some(x.sub(x_t)?);
        }
    }
    Ok(UpdatePacket {
        client: client.id,
        delta: x.sub(x_t)?,
        one_step_delta: one_step,
        start_loss,
        end_loss: objective.loss(&x)?,
        size: objective.full_size(),
    })
}

/// `K` steps of local SGD from `x_t`.
pub fn local_sgd(
    client: &Client,
    x_t: &ParamVector,
    steps: usize,
    lr: f64,
    batch: BatchSpec,
    rng: &mut SeededRng,
) -> Result<UpdatePacket> {
    run_local(client, x_t, steps, lr, None, batch, rng)
}

/// Local SGD where each step follows `(1−α)g + αg̃` with `g̃` fixed for the
/// round.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd_aligned(
    client: &Client,
    x_t: &ParamVector,
    steps: usize,
    lr: f64,
    alpha: f64,
    fair_gradient: &ParamVector,
    batch: BatchSpec,
    rng: &mut SeededRng,
) -> Result<UpdatePacket> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut packet = run_local(
        client,
        x_t,
        steps,
        lr,
        Some((alpha, fair_gradient)),
        batch,
        rng,
    )?;
    packet.one_step_delta = None;
    Ok(packet)
}

fn check_packets(packets: &[UpdatePacket], p: &SimplexWeights) -> Result<()> {
    if packets.is_empty() {
        return Err(Error::param("no update packets to aggregate"));
    }
    Error::check_dim(packets.len(), p.len())
}

/// `Σ_i p_i Δ_i`.
pub fn aggregate_plain(packets: &[UpdatePacket], p: &SimplexWeights) -> Result<ParamVector> {
    check_packets(packets, p)?;
    let deltas: Vec<&ParamVector> = packets.iter().map(|pk| &pk.delta).collect();
    ParamVector::weighted_sum(&deltas, p.as_slice())
}

/// `(1−α) Σ_i p_i Δ_i + α · mean_i Δ̃_i`.
pub fn aggregate_model_alignment(
    packets: &[UpdatePacket],
    p: &SimplexWeights,
    alpha: f64,
) -> Result<ParamVector> {
    check_packets(packets, p)?;
    let one_step = packets
        .iter()
        .map(|pk| {
            pk.one_step_delta.as_ref().ok_or_else(|| {
                Error::param(format!("client {} sent no one-step update", pk.client))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = packets.len() as f64;
    let mean_one_step = ParamVector::weighted_sum(&one_step, &vec![1.0 / n; one_step.len()])?;
    let mut out = aggregate_plain(packets, p)?.scaled(1.0 - alpha);
    out.axpy(alpha, &mean_one_step)?;
    Ok(out)
}

/// `x_t + η Δ_t`.
pub fn server_update(
    x_t: &ParamVector,
    delta: &ParamVector,
    global_lr: f64,
) -> Result<ParamVector> {
    let mut next = x_t.clone();
    next.axpy(global_lr, delta)?;
    Ok(next)
}

/// Fair angle of the sampled losses; an all-zero loss vector is perfectly
/// uniform and maps to zero.
fn round_angle(losses: &[f64]) -> Result<f64> {
    match fair_angle(losses) {
        Err(Error::Degenerate(_)) => Ok(0.0),
        other => other,
    }
}

fn client_rng(cfg: &TrainerConfig, round: usize, client: usize) -> SeededRng {
    SeededRng::derive(cfg.seed, &[LOCAL_STREAM, round as u64, client as u64])
}

fn train_sampled(
    fed: &Federation,
    sampled: &[usize],
    x_t: &ParamVector,
    cfg: &TrainerConfig,
    round: usize,
    alignment: Option<&ParamVector>,
) -> Result<Vec<UpdatePacket>> {
    sampled
        .par_iter()
        .map(|&id| {
            let client = fed.client(id);
            let mut rng = client_rng(cfg, round, id);
            match alignment {
                Some(fair) => local_sgd_aligned(
                    client,
                    x_t,
                    cfg.local_steps,
                    cfg.local_lr,
                    cfg.alpha,
                    fair,
                    cfg.batch,
                    &mut rng,
                ),
                None => local_sgd(
                    client,
                    x_t,
                    cfg.local_steps,
                    cfg.local_lr,
                    cfg.batch,
                    &mut rng,
                ),
            }
        })
        .collect()
}

fn prior_for(
    fed: &Federation,
    sampled: &[usize],
    cfg: &TrainerConfig,
) -> Result<Option<SimplexWeights>> {
    match cfg.eba.prior {
        PriorKind::Uniform => Ok(None),
        PriorKind::DataRatio => {
            let sizes: Vec<usize> = sampled.iter().map(|&id| fed.client(id).size()).collect();
            data_ratio_weights(&sizes).map(Some)
        }
    }
}

struct RoundOutcome {
    next: ParamVector,
    tau: f64,
    angle: f64,
    branch: Branch,
    weights: SimplexWeights,
}

fn fedeba_round(
    fed: &Federation,
    x_t: &ParamVector,
    cfg: &TrainerConfig,
    round: usize,
    sampled: &[usize],
    start_losses: &[f64],
) -> Result<RoundOutcome> {
    let tau = schedule_tau(&cfg.eba, round)?;
    let angle = round_angle(start_losses)?;
    let prior = prior_for(fed, sampled, cfg)?;
    let (branch, weights, delta) = if angle > cfg.fair_angle {
        let grads = sampled
            .par_iter()
            .map(|&id| fed.client(id).train.gradient(x_t))
            .collect::<Result<Vec<_>>>()?;
        let fair = compute_fair_gradient(&grads, start_losses, tau)?;
        let packets = train_sampled(fed, sampled, x_t, cfg, round, Some(&fair))?;
        let end: Vec<f64> = packets.iter().map(|p| p.end_loss).collect();
        let p = eba_weights(&end, tau, prior.as_ref())?;
        let delta = aggregate_plain(&packets, &p)?;
        (Branch::Aligned, p, delta)
    } else {
        let packets = train_sampled(fed, sampled, x_t, cfg, round, None)?;
        let end: Vec<f64> = packets.iter().map(|p| p.end_loss).collect();
        let p = eba_weights(&end, tau, prior.as_ref())?;
        let delta = aggregate_model_alignment(&packets, &p, cfg.alpha)?;
        (Branch::Plain, p, delta)
    };
    Ok(RoundOutcome {
        next: server_update(x_t, &delta, cfg.global_lr)?,
        tau,
        angle,
        branch,
        weights,
    })
}

fn fedavg_round(
    fed: &Federation,
    x_t: &ParamVector,
    cfg: &TrainerConfig,
    round: usize,
    sampled: &[usize],
    start_losses: &[f64],
) -> Result<RoundOutcome> {
    let packets = train_sampled(fed, sampled, x_t, cfg, round, None)?;
    let sizes: Vec<usize> = packets.iter().map(|p| p.size).collect();
    let p = data_ratio_weights(&sizes)?;
    let delta = aggregate_plain(&packets, &p)?;
    Ok(RoundOutcome {
        next: server_update(x_t, &delta, cfg.global_lr)?,
        tau: f64::INFINITY,
        angle: round_angle(start_losses)?,
        branch: Branch::Plain,
        weights: p,
    })
}

fn qffl_round(
    fed: &Federation,
    x_t: &ParamVector,
    cfg: &TrainerConfig,
    round: usize,
    sampled: &[usize],
    start_losses: &[f64],
) -> Result<RoundOutcome> {
    let packets = train_sampled(fed, sampled, x_t, cfg, round, None)?;
    let local_models = packets
        .iter()
        .map(|p| x_t.add(&p.delta))
        .collect::<Result<Vec<_>>>()?;
    let step = qffl_terms(x_t, &local_models, start_losses, &cfg.qffl)?;
    // Effective weighting of the pseudo-gradients, reported for telemetry.
    let masses: Vec<f64> = start_losses.iter().map(|l| l.powf(cfg.qffl.q)).collect();
    let weights =
        SimplexWeights::from_masses(&masses).or_else(|_| SimplexWeights::uniform(sampled.len()))?;
    Ok(RoundOutcome {
        next: step.next,
        tau: f64::INFINITY,
        angle: round_angle(start_losses)?,
        branch: Branch::Plain,
        weights,
    })
}

/// One communication round of `cfg.method` from `x_t`; `round` is 1-based
/// and `sampler` drives client selection.
pub fn run_round(
    fed: &Federation,
    x_t: &ParamVector,
    cfg: &TrainerConfig,
    round: usize,
    sampler: &mut SeededRng,
) -> Result<(ParamVector, RoundReport)> {
    Error::check_dim(fed.dimension(), x_t.len())?;
    if cfg.clients_per_round > fed.len() {
        return Err(Error::param(format!(
            "cannot sample {} of {} clients",
            cfg.clients_per_round,
            fed.len()
        )));
    }
    let sampled = sample_clients(fed.len(), cfg.clients_per_round, sampler)?;
    let start_losses = sampled
        .par_iter()
        .map(|&id| fed.client(id).train.loss(x_t))
        .collect::<Result<Vec<_>>>()?;

    let outcome = match cfg.method {
        Method::FedEbaPlus => fedeba_round(fed, x_t, cfg, round, &sampled, &start_losses)?,
        Method::FedAvg => fedavg_round(fed, x_t, cfg, round, &sampled, &start_losses)?,
        Method::Qffl => qffl_round(fed, x_t, cfg, round, &sampled, &start_losses)?,
    };
    if !outcome.next.is_finite() {
        return Err(Error::Input(format!(
            "round {round} produced a non-finite model"
        )));
    }

    let uniform = SimplexWeights::uniform(sampled.len())?;
    let chi_square = chi_square_divergence(&uniform, &outcome.weights).unwrap_or(f64::INFINITY);
    let report = RoundReport {
        round,
        tau: outcome.tau,
        angle: outcome.angle,
        branch: outcome.branch,
        sampled,
        weights: outcome.weights,
        global_train_loss: fed.global_train_loss(&outcome.next)?,
        global_grad_norm: fed.global_gradient(&outcome.next)?.norm(),
        fairness: evaluate_fairness(fed, &outcome.next, cfg.tail_percent)?,
        chi_square,
        extra_communication: outcome.branch == Branch::Aligned,
        model: outcome.next.clone(),
    };
    Ok((outcome.next, report))
}

/// Runs `cfg.rounds` rounds from `x0`.
///
/// FedAvg always uses data-ratio weights without alignment, q-FFL replaces
/// the server step, FedEBA+ follows [`run_round`].
pub fn run_training(fed: &Federation, cfg: &TrainerConfig, x0: &ParamVector) -> Result<Trajectory> {
    cfg.validate()?;
    Error::check_dim(fed.dimension(), x0.len())?;
    let mut sampler = SeededRng::derive(cfg.seed, &[SAMPLING_STREAM]);
    let mut x = x0.clone();
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let (next, report) = run_round(fed, &x, cfg, round, &mut sampler)?;
        reports.push(report);
        x = next;
    }
    Ok(Trajectory {
        reports,
        final_model: x,
    })
}
