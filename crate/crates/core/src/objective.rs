//! Client objectives `F_i(x)` and their gradients.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::math::{ParamVector, SeededRng};

/// Which local samples a loss or gradient is averaged over.
///
/// Indices are positions within the client's own sample list, not global
/// dataset indices.
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    Full,
    Indices(&'a [usize]),
}

impl Subset<'_> {
    fn validate(&self, full_size: usize) -> Result<()> {
        if let Subset::Indices(idx) = self {
            if idx.is_empty() {
                return Err(Error::param("empty sample subset"));
            }
            if let Some(bad) = idx.iter().find(|&&i| i >= full_size) {
                return Err(Error::param(format!(
                    "sample index {bad} out of range for {full_size} samples"
                )));
            }
        }
        Ok(())
    }
}

/// The loss/gradient contract a client exposes to the trainer.
pub trait LocalObjective: Debug + Send + Sync {
    /// Number of model parameters.
    fn dimension(&self) -> usize;

    /// Number of local samples `n_i`.
    fn full_size(&self) -> usize;

    /// Mean per-sample loss over `subset`.
    fn loss_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<f64>;

    /// Exact gradient of [`LocalObjective::loss_on`].
    fn gradient_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<ParamVector>;

    fn loss(&self, x: &ParamVector) -> Result<f64> {
        self.loss_on(x, Subset::Full)
    }

    fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        self.gradient_on(x, Subset::Full)
    }

    /// Classification accuracy on the full local sample set, for objectives
    /// that have one.
    fn accuracy(&self, _x: &ParamVector) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Separable quadratic `F(x) = Σ_j a_j (x_j − c_j)²`.
///
/// Deterministic: every subset evaluates the same function, and the objective
/// reports a single local sample.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    curvature: Vec<f64>,
    center: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(curvature: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        Error::check_dim(curvature.len(), center.len())?;
        if curvature.is_empty() {
            return Err(Error::param(
                "quadratic objective needs at least one coordinate",
            ));
        }
        if curvature.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::param("quadratic curvature must be positive"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("quadratic center must be finite".into()));
        }
        Ok(Self { curvature, center })
    }

    /// One-dimensional `a (x − c)²`.
    pub fn scalar(a: f64, c: f64) -> Result<Self> {
        Self::new(vec![a], vec![c])
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn check(&self, x: &ParamVector, subset: Subset<'_>) -> Result<()> {
        Error::check_dim(self.center.len(), x.len())?;
        subset.validate(1)
    }
}

impl LocalObjective for QuadraticObjective {
    fn dimension(&self) -> usize {
        self.center.len()
    }

    fn full_size(&self) -> usize {
        1
    }

    fn loss_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<f64> {
        self.check(x, subset)?;
        Ok(self
            .curvature
            .iter()
            .zip(&self.center)
            .zip(x.iter())
            .map(|((a, c), xi)| a * (xi - c).powi(2))
            .sum())
    }

    fn gradient_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<ParamVector> {
        self.check(x, subset)?;
        Ok(self
            .curvature
            .iter()
            .zip(&self.center)
            .zip(x.iter())
            .map(|((a, c), xi)| 2.0 * a * (xi - c))
            .collect::<Vec<_>>()
            .into())
    }
}

/// Least-squares client `F(x) = ‖Ξx − y‖² / 2n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlrObjective {
    /// Row-major `n × d` design.
    design: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl GlrObjective {
    pub fn new(design: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || targets.is_empty() {
            return Err(Error::param(
                "regression objective needs samples and features",
            ));
        }
        Error::check_dim(targets.len() * dim, design.len())?;
        if design.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Input("regression data must be finite".into()));
        }
        Ok(Self {
            design,
            targets,
            dim,
        })
    }

    pub fn from_matrix(design: &DMatrix<f64>, targets: Vec<f64>) -> Result<Self> {
        let dim = design.ncols();
        let rows: Vec<f64> = (0..design.nrows())
            .flat_map(|r| (0..dim).map(move |c| design[(r, c)]))
            .collect();
        Self::new(rows, targets, dim)
    }

    pub fn samples(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.samples(), self.dim, &self.design)
    }

    fn residual(&self, x: &ParamVector, i: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - self.targets[i]
    }

    fn for_each_sample(&self, subset: Subset<'_>, mut f: impl FnMut(usize)) -> usize {
        match subset {
            Subset::Full => {
                (0..self.samples()).for_each(&mut f);
                self.samples()
            }
            Subset::Indices(idx) => {
                idx.iter().copied().for_each(&mut f);
                idx.len()
            }
        }
    }
}

impl LocalObjective for GlrObjective {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn full_size(&self) -> usize {
        self.samples()
    }

    fn loss_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        subset.validate(self.samples())?;
        let mut total = 0.0;
        let count = self.for_each_sample(subset, |i| total += self.residual(x, i).powi(2));
        Ok(total / (2.0 * count as f64))
    }

    fn gradient_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<ParamVector> {
        Error::check_dim(self.dim, x.len())?;
        subset.validate(self.samples())?;
        let mut grad = vec![0.0; self.dim];
        let count = self.for_each_sample(subset, |i| {
            let r = self.residual(x, i);
            for (g, a) in grad.iter_mut().zip(self.row(i)) {
                *g += r * a;
            }
        });
        let scale = 1.0 / count as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(grad.into())
    }
}

/// Least-squares estimate `(ΞᵀΞ)⁻¹ Ξᵀ y`, solved through a thin QR factorisation.
pub fn glr_least_squares(obj: &GlrObjective) -> Result<ParamVector> {
    let n = obj.samples();
    let d = obj.dimension();
    if n < d {
        return Err(Error::Singular(format!(
            "design has {n} rows for {d} unknowns"
        )));
    }
    let qr = obj.design_matrix().qr();
    let r = qr.r();
    let largest = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = r
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if largest == 0.0 || smallest <= 1e-12 * largest {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(obj.targets());
    let solution = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    ParamVector::new(solution.iter().copied().collect())
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub const MAX_HIDDEN_WIDTH: usize = 64;

/// Classifier shape.
///
/// Parameter layout (row-major blocks, concatenated):
/// - softmax regression: `W [classes × input]`, `b [classes]`
/// - MLP: `W1 [hidden × input]`, `b1 [hidden]`, `W2 [classes × hidden]`, `b2 [classes]`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    SoftmaxRegression {
        input: usize,
        classes: usize,
    },
    Mlp {
        input: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
    },
}

impl Architecture {
    pub fn softmax_regression(input: usize, classes: usize) -> Result<Self> {
        let arch = Architecture::SoftmaxRegression { input, classes };
        arch.validate()?;
        Ok(arch)
    }

    pub fn mlp(
        input: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let arch = Architecture::Mlp {
            input,
            hidden,
            classes,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        if self.input() == 0 || self.classes() < 2 {
            return Err(Error::param(
                "classifier needs inputs and at least two classes",
            ));
        }
        if let Architecture::Mlp { hidden, .. } = self {
            if *hidden == 0 || *hidden > MAX_HIDDEN_WIDTH {
                return Err(Error::param(format!(
                    "hidden width must be in 1..={MAX_HIDDEN_WIDTH}, got {hidden}"
                )));
            }
        }
        Ok(())
    }

    pub fn input(&self) -> usize {
        match *self {
            Architecture::SoftmaxRegression { input, .. } | Architecture::Mlp { input, .. } => {
                input
            }
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::SoftmaxRegression { classes, .. } | Architecture::Mlp { classes, .. } => {
                classes
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::SoftmaxRegression { input, classes } => classes * (input + 1),
            Architecture::Mlp {
                input,
                hidden,
                classes,
                ..
            } => hidden * (input + 1) + classes * (hidden + 1),
        }
    }

    /// Zeros for softmax regression; scaled Gaussian weights and zero biases
    /// for the MLP.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamVector {
        match *self {
            Architecture::SoftmaxRegression { .. } => ParamVector::zeros(self.param_count()),
            Architecture::Mlp {
                input,
                hidden,
                classes,
                ..
            } => {
                let mut params = Vec::with_capacity(self.param_count());
                let s1 = (1.0 / input as f64).sqrt();
                params.extend((0..hidden * input).map(|_| s1 * rng.standard_normal()));
                params.extend(std::iter::repeat_n(0.0, hidden));
                let s2 = (1.0 / hidden as f64).sqrt();
                params.extend((0..classes * hidden).map(|_| s2 * rng.standard_normal()));
                params.extend(std::iter::repeat_n(0.0, classes));
                params.into()
            }
        }
    }
}

/// Mean softmax cross-entropy of a classifier over a client's samples.
#[derive(Debug, Clone)]
pub struct ClassifierObjective {
    arch: Architecture,
    data: Arc<LabeledDataset>,
    indices: Vec<usize>,
}

struct Scratch {
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    logits: Vec<f64>,
}

impl ClassifierObjective {
    /// `indices` are global dataset rows owned by this client.
    pub fn new(arch: Architecture, data: Arc<LabeledDataset>, indices: Vec<usize>) -> Result<Self> {
        arch.validate()?;
        Error::check_dim(arch.input(), data.dim())?;
        if data.classes() > arch.classes() {
            return Err(Error::param(format!(
                "dataset has {} classes but the model outputs {}",
                data.classes(),
                arch.classes()
            )));
        }
        if indices.is_empty() {
            return Err(Error::param("classifier client holds no samples"));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::param(format!("sample {bad} is outside the dataset")));
        }
        Ok(Self {
            arch,
            data,
            indices,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn scratch(&self) -> Scratch {
        let hidden = match self.arch {
            Architecture::Mlp { hidden, .. } => hidden,
            Architecture::SoftmaxRegression { .. } => 0,
        };
        Scratch {
            hidden_pre: vec![0.0; hidden],
            hidden_act: vec![0.0; hidden],
            logits: vec![0.0; self.arch.classes()],
        }
    }

    /// Fills `scratch.logits` for one sample.
    fn forward(&self, params: &[f64], features: &[f64], scratch: &mut Scratch) {
        match self.arch {
            Architecture::SoftmaxRegression { input, classes } => {
                let (w, b) = params.split_at(classes * input);
                affine(w, b, features, &mut scratch.logits);
            }
            Architecture::Mlp {
                input,
                hidden,
                classes,
                activation,
            } => {
                let (w1, rest) = params.split_at(hidden * input);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                affine(w1, b1, features, &mut scratch.hidden_pre);
                for (a, z) in scratch.hidden_act.iter_mut().zip(&scratch.hidden_pre) {
                    *a = activation.apply(*z);
                }
                affine(w2, b2, &scratch.hidden_act, &mut scratch.logits);
            }
        }
    }

    fn sample_rows(&self, subset: Subset<'_>) -> Vec<usize> {
        match subset {
            Subset::Full => self.indices.clone(),
            Subset::Indices(idx) => idx.iter().map(|&i| self.indices[i]).collect(),
        }
    }

    fn check(&self, x: &ParamVector, subset: Subset<'_>) -> Result<()> {
        Error::check_dim(self.arch.param_count(), x.len())?;
        subset.validate(self.indices.len())
    }
}

/// `out = W v + b` with `W` row-major `[out.len() × v.len()]`.
fn affine(w: &[f64], b: &[f64], v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * v.len()..(r + 1) * v.len()];
        *o = b[r] + row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
    }
}

/// Replaces `logits` with softmax probabilities.
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

impl LocalObjective for ClassifierObjective {
    fn dimension(&self) -> usize {
        self.arch.param_count()
    }

    fn full_size(&self) -> usize {
        self.indices.len()
    }

    fn loss_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<f64> {
        self.check(x, subset)?;
        let rows = self.sample_rows(subset);
        let mut scratch = self.scratch();
        let mut total = 0.0;
        for &row in &rows {
            self.forward(x.as_slice(), self.data.features(row), &mut scratch);
            let max = scratch
                .logits
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + scratch
                    .logits
                    .iter()
                    .map(|l| (l - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - scratch.logits[self.data.label(row)];
        }
        Ok(total / rows.len() as f64)
    }

    fn gradient_on(&self, x: &ParamVector, subset: Subset<'_>) -> Result<ParamVector> {
        self.check(x, subset)?;
        let rows = self.sample_rows(subset);
        let params = x.as_slice();
        let mut grad = vec![0.0; params.len()];
        let mut scratch = self.scratch();
        for &row in &rows {
            let features = self.data.features(row);
            let label = self.data.label(row);
            self.forward(params, features, &mut scratch);
            softmax_in_place(&mut scratch.logits);
            scratch.logits[label] -= 1.0;
            let delta_out = &scratch.logits;
            match self.arch {
                Architecture::SoftmaxRegression { input, classes } => {
                    let (gw, gb) = grad.split_at_mut(classes * input);
                    outer_accumulate(gw, gb, delta_out, features);
                }
                Architecture::Mlp {
                    input,
                    hidden,
                    classes,
                    activation,
                } => {
                    let w2 = &params[hidden * (input + 1)..hidden * (input + 1) + classes * hidden];
                    let (g1, g2) = grad.split_at_mut(hidden * (input + 1));
                    let (gw2, gb2) = g2.split_at_mut(classes * hidden);
                    outer_accumulate(gw2, gb2, delta_out, &scratch.hidden_act);
                    let mut delta_hidden = vec![0.0; hidden];
                    for (c, d) in delta_out.iter().enumerate() {
                        let row = &w2[c * hidden..(c + 1) * hidden];
                        for (dh, w) in delta_hidden.iter_mut().zip(row) {
                            *dh += d * w;
                        }
                    }
                    for (dh, z) in delta_hidden.iter_mut().zip(&scratch.hidden_pre) {
                        *dh *= activation.derivative(*z);
                    }
                    let (gw1, gb1) = g1.split_at_mut(hidden * input);
                    outer_accumulate(gw1, gb1, &delta_hidden, features);
                }
            }
        }
        let scale = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(grad.into())
    }

    fn accuracy(&self, x: &ParamVector) -> Result<Option<f64>> {
        self.check(x, Subset::Full)?;
        let mut scratch = self.scratch();
        let correct = self
            .indices
            .iter()
            .filter(|&&row| {
                self.forward(x.as_slice(), self.data.features(row), &mut scratch);
                argmax(&scratch.logits) == self.data.label(row)
            })
            .count();
        Ok(Some(correct as f64 / self.indices.len() as f64))
    }
}

/// `gw += δ ⊗ v`, `gb += δ`.
fn outer_accumulate(gw: &mut [f64], gb: &mut [f64], delta: &[f64], v: &[f64]) {
    for (r, d) in delta.iter().enumerate() {
        gb[r] += d;
        for (g, x) in gw[r * v.len()..(r + 1) * v.len()].iter_mut().zip(v) {
            *g += d * x;
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Central-difference gradient with per-coordinate step `step · (1 + |x_j|)`.
pub fn finite_diff_gradient(
    obj: &dyn LocalObjective,
    x: &ParamVector,
    subset: Subset<'_>,
    step: f64,
) -> Result<ParamVector> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step * (1.0 + x[j].abs());
        probe.as_mut_slice()[j] = x[j] + h;
        let up = obj.loss_on(&probe, subset)?;
        probe.as_mut_slice()[j] = x[j] - h;
        let down = obj.loss_on(&probe, subset)?;
        probe.as_mut_slice()[j] = x[j];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad.into())
}
