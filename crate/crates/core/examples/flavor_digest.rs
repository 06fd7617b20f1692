//! Prints a digest of a fixed continual run. Build and run this under both
//! feature flavors; the digests must match, since results are independent
//! of the threading backend:
//!
//! ```text
//! cargo run -p cgl-core --example flavor_digest --release
//! cargo run -p cgl-core --example flavor_digest --release --no-default-features
//! ```

use cgl_core::condense::CondenseConfig;
use cgl_core::io;
use cgl_core::memory::BudgetSpec;
use cgl_core::stream::{generate_sbm, split_stream, SbmConfig, StreamConfig};
use cgl_core::trainer::{run_continual, BankStrategy, EvalMode, RunSpec, TrainConfig};

fn main() {
    let sbm = SbmConfig {
        classes: 6,
        nodes_per_class: 80,
        feature_dim: 12,
        intra_p: 0.08,
        inter_p: 0.01,
        noise_std: 1.5,
        seed: 77,
        ..Default::default()
    };
    let graph = generate_sbm(&sbm).expect("sbm");
    let stream =
        split_stream(&graph, &StreamConfig { seed: 77, ..Default::default() }).expect("stream");
    let spec = RunSpec {
        train: TrainConfig {
            hidden_dims: vec![48],
            epochs: 120,
            learning_rate: 0.01,
            seed: 7,
            ..Default::default()
        },
        condense: CondenseConfig {
            encoder_dim: 128,
            iters_per_encoder: 80,
            feature_lr: 0.01,
            seed: 7,
            ..Default::default()
        },
        budget: BudgetSpec::Ratio(0.05),
        ..RunSpec::new(BankStrategy::Puma, EvalMode::ClassIl)
    };
    let (_, matrix) = run_continual(&stream, spec).expect("run");
    let bits: Vec<u8> = matrix
        .rows()
        .iter()
        .flatten()
        .flat_map(|v| v.to_bits().to_le_bytes())
        .collect();
    let flavor = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };
    println!("{flavor} matrix digest: {}", io::hex_digest(&bits));
}
