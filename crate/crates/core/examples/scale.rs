//! Time GDR and diff-GCN training on a synthetic graph of a given size.
//!
//! ```text
//! cargo run --release --example scale -- NODES CLASSES [METHOD] [train|gdr] [MEAN_DEGREE]
//! ```

use std::time::Instant;

use gdr_core::data_io::write_dataset;
use gdr_core::experiment::{run_gdr, run_train, ExperimentConfig, ModelKind, PriorSpec};
use gdr_core::synthetic::PlantedPartition;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(2708), |s| s.parse())?;
    let c: usize = args.get(2).map_or(Ok(7), |s| s.parse())?;
    let method = args.get(3).cloned().unwrap_or_else(|| "auto".into());
    let train = args.get(4).is_some_and(|s| s == "train");
    let degree: f64 = args.get(5).map_or(Ok(3.9), |s| s.parse())?;

    let data = PlantedPartition {
        n_nodes: n,
        n_classes: c,
        mean_degree: degree,
        homophily: 0.8,
        n_features: 500,
        words_per_node: 18,
        feature_signal: 0.3,
        train_per_class: 20,
        n_val: 500,
        n_test: 1000.min(n - 20 * c - 500),
        ..PlantedPartition::default()
    }
    .generate()?;
    let dir = tempfile::tempdir()?;
    write_dataset(&dir.path().join("data"), &data)?;

    let mut cfg = ExperimentConfig::for_dataset(dir.path().join("data"));
    cfg.gdr.expm_method = method;
    cfg.run.output_dir = dir.path().join("out");
    cfg.run.seeds = vec![0];
    let start = Instant::now();
    let out = run_gdr(&cfg)?;
    println!(
        "gdr(uniform): {:?} in {:.1}s",
        out.report.rows[0],
        start.elapsed().as_secs_f64()
    );
    if train {
        cfg.model.prior = PriorSpec::Neural(ModelKind::DiffGcn);
        let start = Instant::now();
        let out = run_train(&cfg)?;
        println!(
            "diff-gcn: {:?} in {:.1}s",
            out.report.rows[0],
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
