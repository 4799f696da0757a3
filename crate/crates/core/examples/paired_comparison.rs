//! Paired LMPC / KMPC / RKMPC comparison plus the data sweep from a config file.
//!
//! `cargo run --release --example paired_comparison -- configs/default.toml`

use rkmpc::config::ExperimentConfig;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml").into());
    let cfg = ExperimentConfig::load(&path).unwrap();
    let cmp = rkmpc::harness::run_comparison(&cfg, &cfg.seeds).unwrap();
    print!("{}", cmp.report.to_table());
    let mut sweep = Vec::new();
    rkmpc::harness::compare::write_sweep_csv(&cmp.sweep, &mut sweep).unwrap();
    print!("{}", String::from_utf8(sweep).unwrap());
}
