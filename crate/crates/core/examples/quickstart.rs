//! Train and score a model on a small synthetic dataset.
//!
//! cargo run --release --example quickstart

use bargrain::model::AblationMode;
use bargrain::preprocess::generate_synthetic;
use bargrain::train::{run_ablation, train_model, TrainConfig};

fn main() -> bargrain::Result<()> {
    let dataset = generate_synthetic(80, 16, 64, 3)?;
    let config = TrainConfig {
        hidden_h: 32,
        out_f: 16,
        classifier_h_c: 32,
        d_h: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let outcome = train_model(&dataset, &config)?;
    println!(
        "best epoch {}: test f1 {:.3}, auc {:.3}",
        outcome.best_epoch, outcome.test_metrics.f1, outcome.test_metrics.auc
    );

    let table = run_ablation(&dataset, &config)?;
    for mode in AblationMode::ALL {
        println!("{:>9}  f1 {:.3}", mode.as_str(), table.metrics(mode).unwrap().f1);
    }
    Ok(())
}
