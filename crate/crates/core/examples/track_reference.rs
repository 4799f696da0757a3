//! Loads the F1-style centerline, scales it and builds a timed reference.

use rkmpc::dynamics::VehicleParams;
use rkmpc::track::{build_reference, load_track, ReferenceConfig};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/tracks/synthetic_gp.csv");
    let track = load_track(path, 0.02, true).unwrap();
    let params = VehicleParams::default();
    let reference = build_reference(&track, &ReferenceConfig::default(), &params).unwrap();
    let speeds: Vec<f64> = reference.points.iter().map(|p| p.v).collect();
    let (lo, hi) = speeds
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "{} centerline points, {} reference points ({:.1} s per lap), speed {lo:.2}..{hi:.2} m/s",
        track.points.len(),
        reference.len(),
        reference.len() as f64 * params.sample_time
    );
}
