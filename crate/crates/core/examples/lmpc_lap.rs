//! One LMPC lap of the oval on the mismatch plant.

use rkmpc::controllers::{Lmpc, MpcConfig};
use rkmpc::dynamics::plant::PlantConfig;
use rkmpc::dynamics::VehicleParams;
use rkmpc::harness::{compute_metrics, run_closed_loop, Scenario, SimConfig};
use rkmpc::track::{build_reference, ReferenceConfig, Track};

fn main() {
    let params = VehicleParams::default();
    let track = Track::oval(8.0, 3.0, 0.25).unwrap();
    let scenario = Scenario {
        track: "oval".into(),
        reference: build_reference(&track, &ReferenceConfig::default(), &params).unwrap(),
        params,
        plant: PlantConfig::default(),
        sim: SimConfig::default(),
    };
    let cfg = MpcConfig::default();
    let mut lmpc = Lmpc::new(cfg, params).unwrap();
    let log = run_closed_loop(&scenario, &mut lmpc, 1, 0, cfg.horizon).unwrap();
    println!("{:?} after {} steps", log.termination, log.records.len());
    println!("{:#?}", compute_metrics(&log).unwrap());
}
