//! Collects LMPC laps, builds the residual dataset and trains a lifting network.

use rkmpc::config::ExperimentConfig;
use rkmpc::harness::collect_training_log;
use rkmpc::koopman::{build_residual_dataset, train_lifting};

fn main() {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml")).unwrap();
    let sc = cfg.scenario(&cfg.tracks[0]).unwrap();
    let log = collect_training_log(&sc, &cfg.controllers.lmpc, cfg.collection.laps, cfg.collection.seed).unwrap();
    let ds = build_residual_dataset(&log, &cfg.vehicle, &cfg.preprocess).unwrap();
    println!("{} records -> {} samples ({:?})", log.len(), ds.len(), ds.stats);
    let model = train_lifting(&ds, &cfg.train).unwrap();
    let md = &model.metadata;
    println!(
        "lifted dim {}, loss {:.4e} -> {:.4e} (best epoch {}), one-step rmse {:.3e}",
        model.dim(),
        md.initial_loss,
        md.final_loss,
        md.best_epoch,
        md.one_step_rmse
    );
}
