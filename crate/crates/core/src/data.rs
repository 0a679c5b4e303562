//! Synthetic data and non-IID client partitions.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::SeededRng;
use crate::objective::{GlrObjective, QuadraticObjective};

/// Header comment that versions the partition CSV layout.
pub const PARTITION_CSV_VERSION: &str = "# fedeba partition v1";

/// Retry budget for the Dirichlet partitioner's minimum-size constraint.
pub const DIRICHLET_MAX_ATTEMPTS: usize = 100;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() || dim == 0 {
            return Err(Error::param(
                "dataset needs at least one sample and one feature",
            ));
        }
        Error::check_dim(labels.len() * dim, features.len())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset features must be finite".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-class sample counts over `indices`.
    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut hist = vec![0; self.classes];
        for &i in indices {
            hist[self.labels[i]] += 1;
        }
        hist
    }
}

/// Class means sit on the integer lattice `{0, …, k−1}^d` (centred), with the
/// smallest `k` such that `k^d ≥ classes`; class `c` takes the base-`k` digits
/// of `c` as coordinates.
fn lattice_mean(class: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut side = 1usize;
    while side
        .checked_pow(dim as u32)
        .is_some_and(|cells| cells < classes)
    {
        side += 1;
    }
    let offset = (side as f64 - 1.0) / 2.0;
    let mut rest = class;
    (0..dim)
        .map(|_| {
            let digit = rest % side;
            rest /= side;
            digit as f64 - offset
        })
        .collect()
}

/// Isotropic Gaussian clusters, `per_class` samples each, stored class-major.
pub fn gen_gaussian_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::param(
            "blobs need at least two classes, one sample per class and one feature",
        ));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::param("blob spread must be finite and nonnegative"));
    }
    let mut rng = SeededRng::new(seed);
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let mean = lattice_mean(class, classes, dim);
        for _ in 0..per_class {
            features.extend(mean.iter().map(|m| m + spread * rng.standard_normal()));
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, dim, classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    Shards { shards_per_client: usize },
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub clients: usize,
    pub min_samples_per_client: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::param("partition needs at least one client"));
        }
        match self.mode {
            PartitionMode::Shards {
                shards_per_client: 0,
            } => Err(Error::param("shards_per_client must be at least 1")),
            PartitionMode::Dirichlet { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                Err(Error::param("dirichlet_alpha must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Dispatches on [`PartitionSpec::mode`].
pub fn partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    match spec.mode {
        PartitionMode::Shards { .. } => partition_shards(ds, spec),
        PartitionMode::Dirichlet { .. } => partition_dirichlet(ds, spec),
    }
}

/// Label-sorted shards dealt to clients at random.
///
/// Samples are sorted by label (ties by index) and cut into
/// `clients · shards_per_client` contiguous shards whose sizes differ by at
/// most one; a seeded permutation of shard ids deals `shards_per_client`
/// shards to each client.
pub fn partition_shards(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let PartitionMode::Shards { shards_per_client } = spec.mode else {
        return Err(Error::param(
            "partition_shards called with a non-shard spec",
        ));
    };
    let total_shards = spec.clients * shards_per_client;
    if ds.len() < total_shards {
        return Err(Error::param(format!(
            "{} samples cannot fill {total_shards} shards",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| (ds.label(i), i));

    let base = ds.len() / total_shards;
    let extra = ds.len() % total_shards;
    let mut shards = Vec::with_capacity(total_shards);
    let mut start = 0;
    for s in 0..total_shards {
        let size = base + usize::from(s < extra);
        shards.push(&order[start..start + size]);
        start += size;
    }

    let mut rng = SeededRng::new(spec.seed);
    let mut shard_ids: Vec<usize> = (0..total_shards).collect();
    rng.shuffle(&mut shard_ids);
    let parts = shard_ids
        .chunks(shards_per_client)
        .map(|ids| {
            let mut part: Vec<usize> = ids
                .iter()
                .flat_map(|&s| shards[s].iter().copied())
                .collect();
            part.sort_unstable();
            part
        })
        .collect::<Vec<_>>();
    check_min_size(&parts, spec.min_samples_per_client, 1)?;
    Ok(parts)
}

fn check_min_size(parts: &[Vec<usize>], min: usize, attempts: usize) -> Result<()> {
    match parts.iter().position(|p| p.len() < min) {
        Some(client) => Err(Error::PartitionInfeasible {
            attempts,
            reason: format!(
                "client {client} holds {} samples, fewer than {min}",
                parts[client].len()
            ),
        }),
        None => Ok(()),
    }
}

fn dirichlet(rng: &mut SeededRng, alpha: f64, m: usize) -> Result<Option<Vec<f64>>> {
    let draws = (0..m)
        .map(|_| rng.gamma(alpha))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = draws.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Ok(None);
    }
    Ok(Some(draws.into_iter().map(|g| g / total).collect()))
}

/// Class-wise Dirichlet allocation.
///
/// For each class, a `Dirichlet(α·1_m)` draw gives client proportions; the
/// shuffled class samples are split at the cumulative proportions. Clients
/// already holding at least `N/m` samples are left out of later classes (their
/// proportion is zeroed and the rest renormalised), as in the widely used
/// LDA partition code. Whole draws are repeated while any client falls below
/// `min_samples_per_client`.
pub fn partition_dirichlet(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let PartitionMode::Dirichlet { alpha } = spec.mode else {
        return Err(Error::param(
            "partition_dirichlet called with a non-Dirichlet spec",
        ));
    };
    let m = spec.clients;
    let mut by_class = vec![Vec::new(); ds.classes()];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }

    let fair_share = ds.len() as f64 / m as f64;
    let mut rng = SeededRng::new(spec.seed);
    let mut last_error = None;
    for attempt in 1..=DIRICHLET_MAX_ATTEMPTS {
        let mut parts = vec![Vec::new(); m];
        let mut degenerate = false;
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let Some(mut props) = dirichlet(&mut rng, alpha, m)? else {
                degenerate = true;
                break;
            };
            let open: f64 = props
                .iter_mut()
                .zip(&parts)
                .map(|(p, part)| {
                    if part.len() as f64 >= fair_share {
                        *p = 0.0;
                    }
                    *p
                })
                .sum();
            if open > 0.0 {
                props.iter_mut().for_each(|p| *p /= open);
            } else {
                degenerate = true;
                break;
            }
            let mut shuffled = members.clone();
            rng.shuffle(&mut shuffled);
            let n = shuffled.len();
            let mut cumulative = 0.0;
            let mut start = 0;
            for (client, p) in props.iter().enumerate() {
                cumulative += p;
                let end = if client + 1 == m {
                    n
                } else {
                    ((cumulative * n as f64).floor() as usize).clamp(start, n)
                };
                parts[client].extend_from_slice(&shuffled[start..end]);
                start = end;
            }
        }
        if degenerate {
            continue;
        }
        match check_min_size(&parts, spec.min_samples_per_client, attempt) {
            Ok(()) => {
                parts.iter_mut().for_each(|p| p.sort_unstable());
                return Ok(parts);
            }
            Err(e) => last_error = Some(e),
        }
    }
    Err(match last_error {
        Some(Error::PartitionInfeasible { reason, .. }) => Error::PartitionInfeasible {
            attempts: DIRICHLET_MAX_ATTEMPTS,
            reason,
        },
        _ => Error::PartitionInfeasible {
            attempts: DIRICHLET_MAX_ATTEMPTS,
            reason: "every Dirichlet draw underflowed".into(),
        },
    })
}

/// Seeded 80/20 train/test split of one client's samples.
///
/// The test share is `⌈n/5⌉` capped at `n − 1`, so a single-sample client
/// keeps its sample for training and gets an empty test set.
pub fn train_test_split(indices: &[usize], rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = indices.to_vec();
    rng.shuffle(&mut shuffled);
    let n = shuffled.len();
    let test = n.div_ceil(5).min(n.saturating_sub(1));
    let mut train = shuffled.split_off(test);
    let mut test = shuffled;
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Writes `client_id,sample_index,label` rows under a version comment.
pub fn write_partition_csv<W: Write>(
    out: &mut W,
    ds: &LabeledDataset,
    parts: &[Vec<usize>],
) -> std::io::Result<()> {
    writeln!(out, "{PARTITION_CSV_VERSION}")?;
    writeln!(out, "client_id,sample_index,label")?;
    for (client, part) in parts.iter().enumerate() {
        for &i in part {
            writeln!(out, "{client},{i},{}", ds.label(i))?;
        }
    }
    Ok(())
}

/// Parses the output of [`write_partition_csv`] back into per-client index
/// lists.
pub fn read_partition_csv<R: BufRead>(input: R) -> Result<Vec<Vec<usize>>> {
    let mut parts: Vec<Vec<usize>> = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Input(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "client_id,sample_index,label" {
                return Err(Error::Input(format!(
                    "line {}: unexpected header",
                    lineno + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Input(format!("line {}: bad integer {s:?}", lineno + 1)))
        };
        if fields.len() != 3 {
            return Err(Error::Input(format!(
                "line {}: expected 3 fields",
                lineno + 1
            )));
        }
        let client = parse(fields[0])?;
        let sample = parse(fields[1])?;
        parse(fields[2])?;
        if parts.len() <= client {
            parts.resize(client + 1, Vec::new());
        }
        parts[client].push(sample);
    }
    Ok(parts)
}

/// Generalized-linear-regression federation with known client parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GlrFederationSpec {
    pub samples_per_client: usize,
    /// One true parameter vector `w_i` per client.
    pub true_params: Vec<Vec<f64>>,
    /// `ΞᵀΞ = n·b·I`.
    pub design_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GlrFederation {
    pub train: Vec<GlrObjective>,
    /// Same design, independent noise on the targets.
    pub test: Vec<GlrObjective>,
    pub true_params: Vec<Vec<f64>>,
}

/// Builds each client's design from the orthonormal QR factor of a Gaussian
/// matrix scaled by `√(n·b)`, then draws `y = Ξ w_i + σ·N(0, I)`.
pub fn gen_glr_federation(spec: &GlrFederationSpec) -> Result<GlrFederation> {
    let m = spec.true_params.len();
    if m == 0 {
        return Err(Error::param(
            "regression federation needs at least one client",
        ));
    }
    let d = spec.true_params[0].len();
    let n = spec.samples_per_client;
    if d == 0 {
        return Err(Error::param("regression parameters must be nonempty"));
    }
    if let Some(w) = spec.true_params.iter().find(|w| w.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: w.len(),
        });
    }
    if d > n {
        return Err(Error::param(format!(
            "dimension {d} exceeds samples per client {n}; design cannot have full rank"
        )));
    }
    if !(spec.design_scale.is_finite() && spec.design_scale > 0.0) {
        return Err(Error::param("design_scale must be positive"));
    }
    if !(spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
        return Err(Error::param("noise_std must be nonnegative"));
    }

    let mut rng = SeededRng::new(spec.seed);
    let scale = (n as f64 * spec.design_scale).sqrt();
    let mut train = Vec::with_capacity(m);
    let mut test = Vec::with_capacity(m);
    for w in &spec.true_params {
        let gaussian = DMatrix::from_fn(n, d, |_, _| rng.standard_normal());
        let design = gaussian.qr().q() * scale;
        let clean: Vec<f64> = (0..n)
            .map(|r| (0..d).map(|c| design[(r, c)] * w[c]).sum())
            .collect();
        let noisy = |rng: &mut SeededRng| -> Vec<f64> {
            clean
                .iter()
                .map(|y| y + spec.noise_std * rng.standard_normal())
                .collect()
        };
        let y_train = noisy(&mut rng);
        let y_test = noisy(&mut rng);
        train.push(GlrObjective::from_matrix(&design, y_train)?);
        test.push(GlrObjective::from_matrix(&design, y_test)?);
    }
    Ok(GlrFederation {
        train,
        test,
        true_params: spec.true_params.clone(),
    })
}

/// Random client parameters `w_i ~ spread·N(0, I)` for
/// [`GlrFederationSpec::true_params`].
pub fn random_glr_params(clients: usize, dim: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..clients)
        .map(|_| (0..dim).map(|_| spread * rng.standard_normal()).collect())
        .collect()
}

/// Diagonal quadratic clients with curvatures in `[0.5, 1.5]`.
///
/// With `shared_minimizer` every client is minimised at the same point, so the
/// clients disagree on loss values but not on where the optimum is; otherwise
/// minimisers are drawn from `[-1, 1]^dim` independently per client.
pub fn gen_quadratic_federation(
    clients: usize,
    dim: usize,
    shared_minimizer: bool,
    seed: u64,
) -> Result<Vec<QuadraticObjective>> {
    if clients == 0 || dim == 0 {
        return Err(Error::param(
            "quadratic federation needs clients and coordinates",
        ));
    }
    let mut rng = SeededRng::new(seed);
    let common: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    (0..clients)
        .map(|_| {
            let curvature = (0..dim).map(|_| rng.uniform_range(0.5, 1.5)).collect();
            let center = if shared_minimizer {
                common.clone()
            } else {
                (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
            };
            QuadraticObjective::new(curvature, center)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{glr_least_squares, LocalObjective};
    use proptest::prelude::*;

    fn assert_partition(parts: &[Vec<usize>], n: usize) {
        let mut seen = vec![false; n];
        for part in parts {
            for &i in part {
                assert!(!seen[i], "sample {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|s| *s), "some sample unassigned");
    }

    fn label_entropy(hist: &[usize]) -> f64 {
        let total: usize = hist.iter().sum();
        hist.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum()
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let ds = gen_gaussian_blobs(2, 10, 2, 0.5, 1).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(
            ds.label_histogram(&(0..20).collect::<Vec<_>>()),
            vec![10, 10]
        );
        assert_eq!(ds, gen_gaussian_blobs(2, 10, 2, 0.5, 1).unwrap());
        assert_ne!(ds, gen_gaussian_blobs(2, 10, 2, 0.5, 2).unwrap());
    }

    #[test]
    fn zero_spread_blobs_sit_on_their_means() {
        let ds = gen_gaussian_blobs(10, 3, 2, 0.0, 1).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features(i), lattice_mean(ds.label(i), 10, 2).as_slice());
        }
        let means: Vec<Vec<f64>> = (0..10).map(|c| lattice_mean(c, 10, 2)).collect();
        for a in 0..10 {
            for b in a + 1..10 {
                assert_ne!(means[a], means[b]);
            }
        }
    }

    #[test]
    fn two_client_shards_are_label_pure() {
        let ds = gen_gaussian_blobs(2, 10, 2, 0.5, 1).unwrap();
        let spec = PartitionSpec {
            mode: PartitionMode::Shards {
                shards_per_client: 1,
            },
            clients: 2,
            min_samples_per_client: 1,
            seed: 9,
        };
        let parts = partition_shards(&ds, &spec).unwrap();
        assert_partition(&parts, ds.len());
        for part in &parts {
            let hist = ds.label_histogram(part);
            assert_eq!(hist.iter().filter(|&&c| c > 0).count(), 1);
        }
        assert_eq!(parts, partition_shards(&ds, &spec).unwrap());
    }

    #[test]
    fn hundred_clients_two_shards_see_at_most_two_labels() {
        let ds = gen_gaussian_blobs(10, 60, 3, 1.0, 4).unwrap();
        let spec = PartitionSpec {
            mode: PartitionMode::Shards {
                shards_per_client: 2,
            },
            clients: 100,
            min_samples_per_client: 1,
            seed: 3,
        };
        let parts = partition_shards(&ds, &spec).unwrap();
        assert_eq!(parts.len(), 100);
        assert_partition(&parts, ds.len());
        for part in &parts {
            assert!(ds.label_histogram(part).iter().filter(|&&c| c > 0).count() <= 2);
        }
    }

    #[test]
    fn shards_reject_too_few_samples() {
        let ds = gen_gaussian_blobs(2, 3, 2, 0.5, 1).unwrap();
        let spec = PartitionSpec {
            mode: PartitionMode::Shards {
                shards_per_client: 2,
            },
            clients: 4,
            min_samples_per_client: 1,
            seed: 0,
        };
        assert!(matches!(
            partition_shards(&ds, &spec),
            Err(Error::Parameter(_))
        ));
    }

    fn dirichlet_spec(alpha: f64, clients: usize, seed: u64) -> PartitionSpec {
        PartitionSpec {
            mode: PartitionMode::Dirichlet { alpha },
            clients,
            min_samples_per_client: 1,
            seed,
        }
    }

    #[test]
    fn huge_alpha_gives_near_iid_clients() {
        let ds = gen_gaussian_blobs(10, 500, 2, 1.0, 1).unwrap();
        let global = ds.label_histogram(&(0..ds.len()).collect::<Vec<_>>());
        for seed in 0..5 {
            let parts = partition_dirichlet(&ds, &dirichlet_spec(1e6, 5, seed)).unwrap();
            assert_partition(&parts, ds.len());
            for part in &parts {
                let hist = ds.label_histogram(part);
                for (h, g) in hist.iter().zip(&global) {
                    let expected = part.len() as f64 * *g as f64 / ds.len() as f64;
                    assert!((*h as f64 - expected).abs() <= 0.1 * expected);
                }
            }
        }
    }

    #[test]
    fn small_alpha_skews_label_distributions() {
        let ds = gen_gaussian_blobs(10, 100, 2, 1.0, 1).unwrap();
        let mean_entropy = |alpha: f64| {
            let mut total = 0.0;
            for seed in 0..5 {
                let parts = partition_dirichlet(&ds, &dirichlet_spec(alpha, 10, seed)).unwrap();
                total += parts
                    .iter()
                    .map(|p| label_entropy(&ds.label_histogram(p)))
                    .sum::<f64>()
                    / parts.len() as f64;
            }
            total / 5.0
        };
        assert!(mean_entropy(0.1) < mean_entropy(1e6));
    }

    #[test]
    fn dirichlet_respects_minimum_or_fails() {
        let ds = gen_gaussian_blobs(10, 50, 2, 1.0, 1).unwrap();
        let mut spec = dirichlet_spec(0.1, 10, 3);
        spec.min_samples_per_client = 10;
        let parts = partition_dirichlet(&ds, &spec).unwrap();
        assert!(parts.iter().all(|p| p.len() >= 10));

        spec.min_samples_per_client = 100;
        assert!(matches!(
            partition_dirichlet(&ds, &spec),
            Err(Error::PartitionInfeasible {
                attempts: DIRICHLET_MAX_ATTEMPTS,
                ..
            })
        ));
    }

    #[test]
    fn partition_csv_round_trip() {
        let ds = gen_gaussian_blobs(3, 7, 2, 1.0, 1).unwrap();
        let parts = partition_dirichlet(&ds, &dirichlet_spec(0.5, 4, 2)).unwrap();
        let mut buf = Vec::new();
        write_partition_csv(&mut buf, &ds, &parts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(PARTITION_CSV_VERSION));
        assert_eq!(read_partition_csv(buf.as_slice()).unwrap(), parts);
    }

    #[test]
    fn train_test_split_is_eighty_twenty() {
        let mut rng = SeededRng::new(1);
        let (train, test) = train_test_split(&(0..10).collect::<Vec<_>>(), &mut rng);
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train, test) = train_test_split(&[4], &mut rng);
        assert_eq!((train, test), (vec![4], vec![]));
    }

    fn glr_spec(params: Vec<Vec<f64>>, noise: f64) -> GlrFederationSpec {
        GlrFederationSpec {
            samples_per_client: 12,
            true_params: params,
            design_scale: 2.0,
            noise_std: noise,
            seed: 5,
        }
    }

    #[test]
    fn glr_design_is_scaled_orthogonal() {
        let fed = gen_glr_federation(&glr_spec(random_glr_params(3, 4, 1.0, 1), 0.1)).unwrap();
        let nb = 12.0 * 2.0;
        for obj in &fed.train {
            let x = obj.design_matrix();
            let gram = x.transpose() * &x;
            for r in 0..4 {
                for c in 0..4 {
                    let expected = if r == c { nb } else { 0.0 };
                    assert!((gram[(r, c)] - expected).abs() < 1e-6 * nb);
                }
            }
        }
    }

    #[test]
    fn noiseless_glr_is_recovered_exactly() {
        let params = random_glr_params(4, 3, 2.0, 7);
        let fed = gen_glr_federation(&glr_spec(params.clone(), 0.0)).unwrap();
        for (obj, w) in fed.train.iter().zip(&params) {
            let est = glr_least_squares(obj).unwrap();
            for (a, b) in est.iter().zip(w) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!(obj.loss(&est).unwrap() < 1e-20);
        }
    }

    #[test]
    fn glr_rejects_wide_designs() {
        let mut spec = glr_spec(random_glr_params(2, 3, 1.0, 1), 0.0);
        spec.samples_per_client = 2;
        assert!(matches!(
            gen_glr_federation(&spec),
            Err(Error::Parameter(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn partitions_are_exhaustive_and_disjoint(
            classes in 2usize..6,
            per_class in 4usize..30,
            clients in 1usize..8,
            alpha in 0.05f64..10.0,
            seed in any::<u64>(),
        ) {
            let ds = gen_gaussian_blobs(classes, per_class, 2, 1.0, seed).unwrap();
            let parts = partition_dirichlet(&ds, &dirichlet_spec(alpha, clients, seed)).unwrap();
            prop_assert_eq!(parts.len(), clients);
            assert_partition(&parts, ds.len());
            prop_assert_eq!(&parts, &partition_dirichlet(&ds, &dirichlet_spec(alpha, clients, seed)).unwrap());

            let shards = PartitionSpec {
                mode: PartitionMode::Shards { shards_per_client: 1 + (seed % 3) as usize },
                clients,
                min_samples_per_client: 1,
                seed,
            };
            if let Ok(parts) = partition_shards(&ds, &shards) {
                assert_partition(&parts, ds.len());
            }
        }

        #[test]
        fn aligned_shards_bound_label_count(
            classes in 2usize..6,
            shards_per_class in 1usize..4,
            shard_size in 1usize..5,
            shards_per_client in 1usize..3,
            seed in any::<u64>(),
        ) {
            let total = classes * shards_per_class;
            prop_assume!(total % shards_per_client == 0);
            let clients = total / shards_per_client;
            let ds = gen_gaussian_blobs(classes, shards_per_class * shard_size, 2, 1.0, seed).unwrap();
            let spec = PartitionSpec {
                mode: PartitionMode::Shards { shards_per_client },
                clients,
                min_samples_per_client: 1,
                seed,
            };
            let parts = partition_shards(&ds, &spec).unwrap();
            for part in &parts {
                let labels = ds.label_histogram(part).iter().filter(|&&c| c > 0).count();
                prop_assert!(labels <= shards_per_client);
            }
        }
    }
}
