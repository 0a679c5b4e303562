//! The `run`, `oracle` and `partition` commands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fedeba_core::aggregation::eba_weights;
use fedeba_core::analysis::{
    entropy_max_bruteforce, regression_variance_oracle, toy_case_oracle, RegressionOracleSetup,
};
use fedeba_core::data::{
    gen_gaussian_blobs, gen_glr_federation, gen_quadratic_federation, partition, random_glr_params,
    write_partition_csv, GlrFederationSpec, LabeledDataset,
};
use fedeba_core::trainer::{run_training, Client, Trajectory};
use fedeba_core::{Federation, ParamVector, SeededRng, SimplexWeights};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::format::{fmt_g, fmt_list};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "FEDEBA_OUTPUT_DIR";
pub const ROUNDS_CSV_VERSION: &str = "# fedeba rounds v1";
pub const SUMMARY_VERSION: &str = "# fedeba summary v1";
pub const ROUNDS_HEADER: &str = "round,tau,angle_deg,branch,global_train_loss,global_test_acc,loss_var,acc_var,worst_k,best_k,chi_square,extra_comm";

const INIT_STREAM: u64 = 7;

/// Output directory: explicit flag, then [`OUTPUT_DIR_ENV`], then the config.
pub fn resolve_output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output_dir.clone(),
    }
}

fn blob_dataset(spec: &DatasetSpec) -> Result<(Arc<LabeledDataset>, Vec<Vec<usize>>)> {
    let DatasetSpec::Blobs {
        classes,
        per_class,
        dim,
        spread,
        seed,
        partition: pspec,
        ..
    } = spec
    else {
        bail!(
            "data.kind = {} has no partition; use kind = blobs",
            spec.kind()
        );
    };
    let data = gen_gaussian_blobs(*classes, *per_class, *dim, *spread, *seed)?;
    let parts = partition(&data, pspec)?;
    Ok((Arc::new(data), parts))
}

/// The federation and initial model for one seed of an experiment.
pub fn build_federation(spec: &DatasetSpec, seed: u64) -> Result<(Federation, ParamVector)> {
    match spec {
        DatasetSpec::Blobs { .. } => {
            let arch = spec
                .architecture()
                .context("invalid classifier architecture")?;
            let (data, parts) = blob_dataset(spec)?;
            let fed = Federation::classifiers(arch, data, &parts, seed)?;
            let x0 = arch.init_params(&mut SeededRng::derive(seed, &[INIT_STREAM]));
            Ok((fed, x0))
        }
        DatasetSpec::Glr {
            clients,
            samples_per_client,
            dim,
            design_scale,
            noise_std,
            param_spread,
            seed: data_seed,
        } => {
            let glr = gen_glr_federation(&GlrFederationSpec {
                samples_per_client: *samples_per_client,
                true_params: random_glr_params(*clients, *dim, *param_spread, *data_seed),
                design_scale: *design_scale,
                noise_std: *noise_std,
                seed: *data_seed,
            })?;
            let clients = glr
                .train
                .into_iter()
                .zip(glr.test)
                .enumerate()
                .map(|(id, (train, test))| {
                    Client::new(id, Arc::new(train)).with_test(Arc::new(test))
                })
                .collect();
            Ok((Federation::new(clients)?, ParamVector::zeros(*dim)))
        }
        DatasetSpec::Quadratic {
            clients,
            dim,
            shared_minimizer,
            seed: data_seed,
        } => {
            let objectives =
                gen_quadratic_federation(*clients, *dim, *shared_minimizer, *data_seed)?;
            Ok((
                Federation::from_objectives(objectives)?,
                ParamVector::zeros(*dim),
            ))
        }
    }
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Per-round CSV for one trajectory.
pub fn write_rounds_csv<W: Write>(out: &mut W, traj: &Trajectory) -> std::io::Result<()> {
    writeln!(out, "{ROUNDS_CSV_VERSION}")?;
    writeln!(out, "{ROUNDS_HEADER}")?;
    for r in &traj.reports {
        let f = &r.fairness;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            fmt_g(r.tau),
            fmt_g(r.angle.to_degrees()),
            r.branch,
            fmt_g(r.global_train_loss),
            fmt_g(opt(f.global_accuracy)),
            fmt_g(f.loss_variance),
            fmt_g(opt(f.accuracy_variance)),
            fmt_g(opt(f.worst_k)),
            fmt_g(opt(f.best_k)),
            fmt_g(r.chi_square),
            u8::from(r.extra_communication),
        )?;
    }
    Ok(())
}

/// Final-round metrics of one seed: global accuracy, accuracy variance,
/// worst-k and best-k accuracy.
fn final_metrics(traj: &Trajectory) -> [f64; 4] {
    let f = &traj.reports.last().expect("at least one round").fairness;
    [
        opt(f.global_accuracy),
        opt(f.accuracy_variance),
        opt(f.worst_k),
        opt(f.best_k),
    ]
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub trajectories: Vec<(u64, Trajectory)>,
}

/// Runs every seed, writing `seed_<s>/rounds.csv` and `summary.txt`.
pub fn cmd_run(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(output_dir)
        .with_context(|| format!("cannot create output directory {}", output_dir.display()))?;
    let mut trajectories = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (fed, x0) = build_federation(&cfg.dataset, seed)?;
        let trainer = fedeba_core::TrainerConfig {
            seed,
            ..cfg.trainer.clone()
        };
        let traj = run_training(&fed, &trainer, &x0)
            .with_context(|| format!("training failed for seed {seed}"))?;
        let dir = output_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("rounds.csv");
        let mut out = BufWriter::new(
            fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?,
        );
        write_rounds_csv(&mut out, &traj)
            .and_then(|_| out.flush())
            .with_context(|| format!("cannot write {}", path.display()))?;
        trajectories.push((seed, traj));
    }

    let path = output_dir.join("summary.txt");
    fs::write(&path, summary_text(cfg, &trajectories))
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(RunOutcome {
        output_dir: output_dir.to_path_buf(),
        trajectories,
    })
}

/// Run metadata and the four `mean +- std` metric lines over seeds.
pub fn summary_text(cfg: &ExperimentConfig, trajectories: &[(u64, Trajectory)]) -> String {
    let mut sorted: Vec<&(u64, Trajectory)> = trajectories.iter().collect();
    sorted.sort_by_key(|(s, _)| *s);
    let metrics: Vec<[f64; 4]> = sorted.iter().map(|(_, t)| final_metrics(t)).collect();
    let seeds: Vec<String> = sorted.iter().map(|(s, _)| s.to_string()).collect();
    let extra: Vec<String> = sorted
        .iter()
        .map(|(_, t)| t.extra_communication_rounds().to_string())
        .collect();
    let mut text = format!(
        "{SUMMARY_VERSION}\nmethod={}\ndataset={}\nclients={}\nrounds={}\nseeds={}\nk_percent={}\nextra_comm_rounds={}\n",
        cfg.trainer.method,
        cfg.dataset.kind(),
        cfg.dataset.clients(),
        cfg.trainer.rounds,
        seeds.join(","),
        fmt_g(cfg.k_percent),
        extra.join(","),
    );
    for (i, name) in ["global_acc", "acc_var", "worst_k", "best_k"]
        .iter()
        .enumerate()
    {
        let column: Vec<f64> = metrics.iter().map(|m| m[i]).collect();
        let (mean, std) = mean_std(&column);
        text.push_str(&format!("{name}={} +- {}\n", fmt_g(mean), fmt_g(std)));
    }
    text
}

/// Writes the configured blob partition to `<output_dir>/partition.csv`.
pub fn cmd_partition(cfg: &ExperimentConfig, output_dir: &Path) -> Result<PathBuf> {
    let (data, parts) = blob_dataset(&cfg.dataset)?;
    fs::create_dir_all(output_dir)
        .with_context(|| format!("cannot create output directory {}", output_dir.display()))?;
    let path = output_dir.join("partition.csv");
    let mut out = BufWriter::new(
        fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    write_partition_csv(&mut out, &data, &parts)
        .and_then(|_| out.flush())
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleRequest {
    /// Two-client quadratic round from `x = 0`.
    Toy { eta_l: f64, tau: f64, q: f64 },
    /// Orthogonal-design regression variance under uniform and EBA weights.
    GlrVariance {
        params: Vec<Vec<f64>>,
        design_scale: f64,
        tau: f64,
    },
    /// Grid search for the maximum-entropy weights.
    EntropyGrid {
        losses: Vec<f64>,
        tau: f64,
        grid_step: f64,
        slack: f64,
        /// Dominance tolerance; defaults to the slack bound `ε/τ`.
        tolerance: Option<f64>,
    },
}

fn kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    out.push_str(&format!("{key}={value}\n"));
}

/// Oracle output as `key=value` lines.
pub fn cmd_oracle(req: &OracleRequest) -> Result<String> {
    let mut out = String::new();
    match req {
        OracleRequest::Toy { eta_l, tau, q } => {
            let r = toy_case_oracle(*eta_l, *tau, *q)?;
            kv(&mut out, "local_models", fmt_list(&r.local_models));
            kv(&mut out, "end_losses", fmt_list(&r.end_losses));
            kv(&mut out, "eba_weights", fmt_list(&r.eba_weights));
            kv(&mut out, "qffl_deltas", fmt_list(&r.qffl_deltas));
            kv(&mut out, "qffl_h", fmt_list(&r.qffl_h));
            for (name, it) in [("fedavg", r.fedavg), ("fedeba", r.fedeba), ("qffl", r.qffl)] {
                kv(&mut out, &format!("{name}_iterate"), fmt_g(it.x));
                kv(&mut out, &format!("{name}_gap"), fmt_g(it.gap));
                kv(&mut out, &format!("{name}_variance"), fmt_g(it.variance));
            }
            kv(
                &mut out,
                "fedeba_fairer",
                r.fedeba.gap < r.fedavg.gap && r.fedeba.variance < r.fedavg.variance,
            );
        }
        OracleRequest::GlrVariance {
            params,
            design_scale,
            tau,
        } => {
            let m = params.len();
            let uniform = RegressionOracleSetup::new(
                params.clone(),
                *design_scale,
                SimplexWeights::uniform(m)?,
            )?;
            let base = regression_variance_oracle(&uniform)?;
            // Expected test loss at the uniform aggregate is (b/2)·A_i plus a
            // constant noise term, which the softmax ignores.
            let losses: Vec<f64> = base
                .distances
                .iter()
                .map(|a| design_scale / 2.0 * a)
                .collect();
            let p = eba_weights(&losses, *tau, None)?;
            let eba = regression_variance_oracle(&RegressionOracleSetup::new(
                params.clone(),
                *design_scale,
                p.clone(),
            )?)?;
            kv(&mut out, "uniform_distances", fmt_list(&base.distances));
            kv(&mut out, "uniform_population", fmt_g(base.population));
            kv(&mut out, "uniform_weighted", fmt_g(base.weighted));
            kv(&mut out, "eba_weights", fmt_list(p.as_slice()));
            kv(&mut out, "eba_distances", fmt_list(&eba.distances));
            kv(&mut out, "eba_population", fmt_g(eba.population));
            kv(&mut out, "eba_weighted", fmt_g(eba.weighted));
        }
        OracleRequest::EntropyGrid {
            losses,
            tau,
            grid_step,
            slack,
            tolerance,
        } => {
            let r = entropy_max_bruteforce(losses, *tau, *grid_step, *slack)?;
            let tol = tolerance.unwrap_or(r.slack_bound + 1e-12);
            kv(&mut out, "softmax", fmt_list(r.softmax.as_slice()));
            kv(&mut out, "softmax_entropy", fmt_g(r.softmax_entropy));
            kv(&mut out, "target_loss", fmt_g(r.target_loss));
            kv(&mut out, "best_grid_point", fmt_list(&r.best_point));
            kv(&mut out, "best_grid_entropy", fmt_g(r.best_entropy));
            kv(&mut out, "feasible_points", r.feasible_points);
            kv(&mut out, "margin", fmt_g(r.margin()));
            kv(&mut out, "tolerance", fmt_g(tol));
            kv(&mut out, "dominance", r.dominates(tol));
        }
    }
    Ok(out)
}
