//! Inspects the residual RKMPC adds on top of the LMPC command.

use rkmpc::config::ExperimentConfig;
use rkmpc::controllers::Rkmpc;
use rkmpc::harness::{collect_training_log, run_closed_loop};
use rkmpc::koopman::{build_residual_dataset, train_lifting};

fn main() {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml")).unwrap();
    let sc = cfg.scenario(&cfg.tracks[0]).unwrap();
    let log = collect_training_log(&sc, &cfg.controllers.lmpc, cfg.collection.laps, cfg.collection.seed).unwrap();
    let model = train_lifting(
        &build_residual_dataset(&log, &cfg.vehicle, &cfg.preprocess).unwrap(),
        &cfg.train,
    )
    .unwrap();
    let mpc = cfg.controllers.rkmpc;
    let mut c = Rkmpc::new(mpc, cfg.vehicle, model).unwrap();
    let run = run_closed_loop(&sc, &mut c, 1, 1, mpc.horizon).unwrap();
    for r in run.records.iter().step_by(40) {
        println!(
            "t={:5.2}  U0=({:.3}, {:+.4})  du=({:+.3}, {:+.4})  lat_err={:+.4}",
            r.t, r.command.v, r.command.delta, r.residual.v, r.residual.delta, r.lateral_error
        );
    }
    let clamped = run.records.iter().filter(|r| r.clamped).count();
    println!("{clamped} of {} steps clamped to the actuator box", run.records.len());
}
