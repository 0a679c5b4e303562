//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use fedeba_core::data::{gen_gaussian_blobs, partition, PartitionMode, PartitionSpec};
use fedeba_core::objective::Architecture;
use fedeba_core::{Federation, ParamVector, Result, SeededRng};

/// A non-IID blob federation with softmax-regression or MLP clients.
pub fn blob_federation(
    arch: Architecture,
    clients: usize,
    per_class: usize,
    seed: u64,
) -> Result<(Federation, ParamVector)> {
    let data = Arc::new(gen_gaussian_blobs(
        arch.classes(),
        per_class,
        arch.input(),
        0.8,
        seed,
    )?);
    let spec = PartitionSpec {
        mode: PartitionMode::Dirichlet { alpha: 0.5 },
        clients,
        min_samples_per_client: 5,
        seed,
    };
    let parts = partition(&data, &spec)?;
    let fed = Federation::classifiers(arch, data, &parts, seed)?;
    let x0 = arch.init_params(&mut SeededRng::new(seed));
    Ok((fed, x0))
}
