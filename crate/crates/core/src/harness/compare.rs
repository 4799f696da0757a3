//! Paired controller comparison and the training-data volume sweep.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::Serialize;

use super::{compute_metrics, run_closed_loop, Metrics, RunLog, Scenario};
use crate::config::{ExperimentConfig, SweepSelection};
use crate::controllers::{Controller, ControllerKind, Kmpc, Lmpc, MpcConfig, Rkmpc};
use crate::dynamics::VehicleParams;
use crate::error::{Error, Result};
use crate::harness::collect_training_log;
use crate::koopman::{build_dataset, DriveLog, InputKind, KoopmanModel, ResidualDataset, TrainConfig};

/// Residual model for RKMPC and absolute-input model for KMPC.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub residual: KoopmanModel,
    pub absolute: KoopmanModel,
}

impl ModelPair {
    pub fn get(&self, kind: InputKind) -> &KoopmanModel {
        match kind {
            InputKind::Residual => &self.residual,
            InputKind::Absolute => &self.absolute,
        }
    }
}

/// Residual and absolute datasets cut from the same log with the same origins.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub residual: ResidualDataset,
    pub absolute: ResidualDataset,
}

impl Datasets {
    pub fn build(log: &DriveLog, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.preprocess.check_against_horizon(cfg.controllers.rkmpc.horizon);
        Ok(Self {
            residual: build_dataset(log, &cfg.vehicle, &cfg.preprocess, InputKind::Residual)?,
            absolute: build_dataset(log, &cfg.vehicle, &cfg.preprocess, InputKind::Absolute)?,
        })
    }

    /// Training subsets of `size` samples each.
    pub fn select(&self, size: usize, selection: SweepSelection, seed: u64) -> Self {
        let pick = |ds: &ResidualDataset| match selection {
            SweepSelection::Prefix => ds.prefix(size),
            SweepSelection::Random => ds.subsample(size, seed),
        };
        Self {
            residual: pick(&self.residual),
            absolute: pick(&self.absolute),
        }
    }

    pub fn train(&self, cfg: &TrainConfig) -> Result<ModelPair> {
        Ok(ModelPair {
            residual: crate::koopman::train_lifting(&self.residual, cfg)?,
            absolute: crate::koopman::train_lifting(&self.absolute, cfg)?,
        })
    }
}

/// Builds a controller; Koopman controllers need `models`.
pub fn make_controller(
    kind: ControllerKind,
    cfg: MpcConfig,
    params: VehicleParams,
    models: Option<&ModelPair>,
) -> Result<Box<dyn Controller + Send>> {
    let need = || Error::Config(format!("controller `{kind}` needs a trained model"));
    Ok(match kind {
        ControllerKind::Lmpc => Box::new(Lmpc::new(cfg, params)?),
        ControllerKind::Kmpc => Box::new(Kmpc::new(cfg, params, models.ok_or_else(need)?.absolute.clone())?),
        ControllerKind::Rkmpc => Box::new(Rkmpc::new(cfg, params, models.ok_or_else(need)?.residual.clone())?),
    })
}

/// One (track, seed, controller) run.
#[derive(Debug, Clone)]
pub struct Cell {
    pub track: String,
    pub seed: u64,
    pub controller: ControllerKind,
    pub log: RunLog,
    /// `None` when the run did not complete its laps.
    pub metrics: Option<Metrics>,
}

fn run_cell(
    scenario: &Scenario,
    kind: ControllerKind,
    cfg: MpcConfig,
    models: Option<&ModelPair>,
    laps: usize,
    seed: u64,
) -> Result<Cell> {
    let mut c = make_controller(kind, cfg, scenario.params, models)?;
    let log = run_closed_loop(scenario, c.as_mut(), laps, seed, cfg.horizon)?;
    let metrics = if log.completed() {
        Some(compute_metrics(&log)?)
    } else {
        None
    };
    Ok(Cell {
        track: scenario.track.clone(),
        seed,
        controller: kind,
        log,
        metrics,
    })
}

/// Mean over runs of a controller; `None` if any run failed.
fn aggregate<'a>(cells: impl Iterator<Item = &'a Cell>) -> Option<Metrics> {
    let mut out: Option<Metrics> = None;
    let mut n = 0.0;
    for c in cells {
        let m = c.metrics?;
        n += 1.0;
        out = Some(match out {
            None => m,
            Some(acc) => Metrics {
                lateral_error: acc.lateral_error + (m.lateral_error - acc.lateral_error) / n,
                heading_error: acc.heading_error + (m.heading_error - acc.heading_error) / n,
                steer_rate: acc.steer_rate + (m.steer_rate - acc.steer_rate) / n,
                solve_mean_ms: acc.solve_mean_ms + (m.solve_mean_ms - acc.solve_mean_ms) / n,
                solve_max_ms: acc.solve_max_ms.max(m.solve_max_ms),
                steps: acc.steps + m.steps,
                completed: true,
            },
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub controller: ControllerKind,
    pub metrics: Option<Metrics>,
}

const METRIC_NAMES: [&str; 5] = [
    "lateral_error_m",
    "heading_error_rad",
    "steer_rate_rad_s",
    "solve_mean_ms",
    "solve_max_ms",
];

fn columns(m: &Metrics) -> [f64; 5] {
    [
        m.lateral_error,
        m.heading_error,
        m.steer_rate,
        m.solve_mean_ms,
        m.solve_max_ms,
    ]
}

/// Per-controller means with relative deltas against LMPC.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn from_cells(cells: &[Cell], controllers: &[ControllerKind]) -> Self {
        let rows = controllers
            .iter()
            .map(|&k| ReportRow {
                controller: k,
                metrics: aggregate(cells.iter().filter(|c| c.controller == k)),
            })
            .collect();
        Self { rows }
    }

    pub fn metrics(&self, kind: ControllerKind) -> Option<Metrics> {
        self.rows.iter().find(|r| r.controller == kind).and_then(|r| r.metrics)
    }

    /// `100 (x - x_lmpc) / x_lmpc` per column, recomputed from the cells.
    pub fn delta_pct(&self, kind: ControllerKind) -> Option<[f64; 5]> {
        let base = columns(&self.metrics(ControllerKind::Lmpc)?);
        let m = columns(&self.metrics(kind)?);
        Some(std::array::from_fn(|i| 100.0 * (m[i] - base[i]) / base[i]))
    }

    fn lines(&self) -> Vec<[String; 7]> {
        let fmt = |v: f64, prec: usize| {
            if v.is_finite() {
                format!("{v:.prec$}")
            } else {
                "-".into()
            }
        };
        let mut out = Vec::new();
        for r in &self.rows {
            let name = r.controller.name().to_string();
            let value = match &r.metrics {
                Some(m) => columns(m).map(|v| fmt(v, 6)),
                None => std::array::from_fn(|_| "-".to_string()),
            };
            let [a, b, c, d, e] = value;
            out.push([name.clone(), "value".into(), a, b, c, d, e]);
            if r.controller != ControllerKind::Lmpc {
                let delta = match self.delta_pct(r.controller) {
                    Some(d) => d.map(|v| fmt(v, 2)),
                    None => std::array::from_fn(|_| "-".to_string()),
                };
                let [a, b, c, d, e] = delta;
                out.push([name, "delta_pct".into(), a, b, c, d, e]);
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing report: {e}"));
        let mut header = vec!["controller", "row"];
        header.extend(METRIC_NAMES);
        w.write_record(&header).map_err(err)?;
        for line in self.lines() {
            w.write_record(&line).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing report: {e}")))
    }

    /// Aligned plain-text rendering of the CSV.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![["controller", "row"]
            .into_iter()
            .chain(METRIC_NAMES)
            .map(String::from)
            .collect()];
        rows.extend(self.lines().into_iter().map(Vec::from));
        let widths: Vec<usize> = (0..7)
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (v, w))| if j < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }
}

/// Koopman controllers evaluated at one training-set size.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub size: usize,
    pub residual_samples: usize,
    pub absolute_samples: usize,
    pub cells: Vec<Cell>,
}

impl SweepPoint {
    pub fn metrics(&self, kind: ControllerKind) -> Option<Metrics> {
        aggregate(self.cells.iter().filter(|c| c.controller == kind))
    }
}

/// Long-format CSV: `size,controller,track,seed,metric,value`.
pub fn write_sweep_csv<W: std::io::Write>(sweep: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Config(format!("writing sweep: {e}"));
    w.write_record(["size", "controller", "track", "seed", "metric", "value"])
        .map_err(err)?;
    for p in sweep {
        for c in &p.cells {
            let mut row = |metric: &str, value: String| {
                w.write_record([
                    p.size.to_string(),
                    c.controller.to_string(),
                    c.track.clone(),
                    c.seed.to_string(),
                    metric.into(),
                    value,
                ])
            };
            row("completed", u8::from(c.metrics.is_some()).to_string()).map_err(err)?;
            if let Some(m) = &c.metrics {
                for (name, v) in METRIC_NAMES[..3].iter().zip(columns(m)) {
                    row(name, v.to_string()).map_err(err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Config(format!("writing sweep: {e}")))
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub training_log: DriveLog,
    pub datasets: Datasets,
    pub models: ModelPair,
    pub cells: Vec<Cell>,
    pub report: Report,
    pub sweep: Vec<SweepPoint>,
}

fn evaluate_all(
    cfg: &ExperimentConfig,
    scenarios: &[Scenario],
    kinds: &[ControllerKind],
    models: &ModelPair,
    seeds: &[u64],
) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for sc in scenarios {
        for &seed in seeds {
            for &k in kinds {
                let cell = run_cell(sc, k, *cfg.controllers.get(k), Some(models), cfg.comparison.laps, seed)?;
                info!(
                    "{} seed {} {}: {:?}",
                    sc.track,
                    seed,
                    k,
                    cell.metrics.map(|m| m.lateral_error)
                );
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

/// Collects a training log, trains both models, runs every configured
/// controller on every track and seed, then repeats the Koopman runs for each
/// sweep size. Every (track, seed) cell uses the same plant seed for all
/// controllers, so they face identical noise.
pub fn run_comparison(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Comparison> {
    let collect_sc = cfg.scenario(cfg.collection_track())?;
    let training_log = collect_training_log(
        &collect_sc,
        &cfg.controllers.lmpc,
        cfg.collection.laps,
        cfg.collection.seed,
    )?;
    info!("training log: {} records", training_log.len());
    let datasets = Datasets::build(&training_log, cfg)?;
    info!(
        "datasets: {} residual, {} absolute samples",
        datasets.residual.len(),
        datasets.absolute.len()
    );
    let main = match cfg.comparison.train_size {
        Some(n) => datasets.select(n, cfg.comparison.sweep_selection, cfg.comparison.sweep_seed),
        None => datasets.clone(),
    };
    let models = main.train(&cfg.train)?;
    let scenarios = cfg.tracks.iter().map(|t| cfg.scenario(t)).collect::<Result<Vec<_>>>()?;

    let kinds = &cfg.comparison.controllers;
    let cells = evaluate_all(cfg, &scenarios, kinds, &models, seeds)?;
    let report = Report::from_cells(&cells, kinds);

    let sweep_kinds = [ControllerKind::Kmpc, ControllerKind::Rkmpc];
    let sizes = &cfg.comparison.sweep_sizes;
    let threads = match cfg.comparison.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let job = |size: usize| -> Result<SweepPoint> {
        let subset = datasets.select(size, cfg.comparison.sweep_selection, cfg.comparison.sweep_seed);
        let pair = subset.train(&cfg.train)?;
        Ok(SweepPoint {
            size,
            residual_samples: subset.residual.len(),
            absolute_samples: subset.absolute.len(),
            cells: evaluate_all(cfg, &scenarios, &sweep_kinds, &pair, seeds)?,
        })
    };
    let mut sweep = Vec::with_capacity(sizes.len());
    for chunk in sizes.chunks(threads.max(1)) {
        let results: Vec<Result<SweepPoint>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&n| s.spawn(move || job(n))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Config("sweep worker panicked".into())))
                })
                .collect()
        });
        for r in results {
            sweep.push(r?);
        }
    }
    Ok(Comparison {
        training_log,
        datasets,
        models,
        cells,
        report,
        sweep,
    })
}

impl Comparison {
    /// Writes every artifact into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        std::fs::create_dir_all(dir.join("runs")).map_err(|e| Error::io(dir, e))?;
        self.training_log.save(dir.join("training_log.csv"))?;
        self.datasets.residual.save(dir.join("dataset_residual.csv"))?;
        self.datasets.absolute.save(dir.join("dataset_absolute.csv"))?;
        self.models.residual.save(dir.join("model_residual.json"))?;
        self.models.absolute.save(dir.join("model_absolute.json"))?;
        for c in &self.cells {
            c.log.save(
                dir.join("runs")
                    .join(format!("{}_{}_s{}.csv", c.track, c.controller, c.seed)),
            )?;
        }
        self.report.write_csv(create("report.csv")?)?;
        std::fs::write(dir.join("report.txt"), self.report.to_table())
            .map_err(|e| Error::io(dir.join("report.txt"), e))?;
        write_sweep_csv(&self.sweep, create("sweep.csv")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{RunMeta, StepRecord, Termination};

    fn cell(kind: ControllerKind, lat: f64, completed: bool) -> Cell {
        let m = Metrics {
            lateral_error: lat,
            heading_error: 0.02,
            steer_rate: 0.5,
            solve_mean_ms: 1.0,
            solve_max_ms: 2.0,
            steps: 10,
            completed,
        };
        Cell {
            track: "t".into(),
            seed: 0,
            controller: kind,
            log: RunLog {
                meta: RunMeta {
                    track: "t".into(),
                    controller: Some(kind),
                    seed: 0,
                    laps_requested: 1,
                    laps_completed: 1,
                    sample_time: 0.05,
                    plant: Default::default(),
                    abort_lateral_error: 2.0,
                },
                records: Vec::<StepRecord>::new(),
                termination: Termination::Completed,
            },
            metrics: completed.then_some(m),
        }
    }

    #[test]
    fn deltas_recompute_from_cells() {
        let cells = [
            cell(ControllerKind::Lmpc, 0.10, true),
            cell(ControllerKind::Rkmpc, 0.09, true),
            cell(ControllerKind::Kmpc, 0.3, false),
        ];
        let r = Report::from_cells(&cells, &ControllerKind::ALL);
        let d = r.delta_pct(ControllerKind::Rkmpc).unwrap();
        assert!((d[0] + 10.0).abs() < 1e-9);
        assert_eq!(d[1], 0.0);
        assert!(r.delta_pct(ControllerKind::Kmpc).is_none());

        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "controller,row,lateral_error_m,heading_error_rad,steer_rate_rad_s,solve_mean_ms,solve_max_ms"
        );
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("kmpc,value,-,-"));
        assert!(lines[5].starts_with("rkmpc,delta_pct,-10.00,0.00"));
        let table = r.to_table();
        assert_eq!(table.lines().count(), 6);
        assert!(table.contains("-10.00"));
    }

    #[test]
    fn aggregate_is_a_mean_and_fails_on_any_incomplete_run() {
        let a = cell(ControllerKind::Lmpc, 0.1, true);
        let b = cell(ControllerKind::Lmpc, 0.3, true);
        let m = aggregate([&a, &b].into_iter()).unwrap();
        assert!((m.lateral_error - 0.2).abs() < 1e-15);
        assert_eq!(m.steps, 20);
        let c = cell(ControllerKind::Lmpc, 0.1, false);
        assert!(aggregate([&a, &c].into_iter()).is_none());
    }
}
