//! Experiment configuration: one TOML file drives a whole comparison.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerKind, MpcConfig};
use crate::dynamics::plant::PlantConfig;
use crate::dynamics::VehicleParams;
use crate::error::{Error, Result};
use crate::harness::{Scenario, SimConfig};
use crate::koopman::{PreprocessConfig, TrainConfig};
use crate::track::{build_reference, load_track, ReferenceConfig, Track};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinTrack {
    Oval { straight: f64, radius: f64, spacing: f64 },
    Circle { radius: f64, samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub name: String,
    /// Centerline CSV, relative to the config file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub builtin: Option<BuiltinTrack>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "yes")]
    pub closed: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl TrackSpec {
    pub fn load(&self) -> Result<Track> {
        match (&self.path, &self.builtin) {
            (Some(path), None) => load_track(path, self.scale, self.closed),
            (
                None,
                Some(BuiltinTrack::Oval {
                    straight,
                    radius,
                    spacing,
                }),
            ) => {
                let t = Track::oval(*straight, *radius, *spacing)?;
                Ok(Track::new(
                    t.points
                        .iter()
                        .map(|p| [p[0] * self.scale, p[1] * self.scale])
                        .collect(),
                    true,
                )?)
            }
            (None, Some(BuiltinTrack::Circle { radius, samples })) => Track::circle(radius * self.scale, *samples),
            _ => Err(Error::Config(format!(
                "track `{}`: set exactly one of `path` and `builtin`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSet {
    pub lmpc: MpcConfig,
    pub kmpc: MpcConfig,
    pub rkmpc: MpcConfig,
}

impl ControllerSet {
    pub fn get(&self, kind: ControllerKind) -> &MpcConfig {
        match kind {
            ControllerKind::Lmpc => &self.lmpc,
            ControllerKind::Kmpc => &self.kmpc,
            ControllerKind::Rkmpc => &self.rkmpc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    /// Track to collect on; the first configured track when absent.
    pub track: Option<String>,
    pub laps: usize,
    pub seed: u64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            track: None,
            laps: 2,
            seed: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSelection {
    /// The first `size` samples, i.e. the shortest stretch of driving that yields them.
    #[default]
    Prefix,
    /// A seeded random subset of the whole dataset.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub controllers: Vec<ControllerKind>,
    pub laps: usize,
    /// Training samples used for the main comparison; all when absent.
    pub train_size: Option<usize>,
    pub sweep_sizes: Vec<usize>,
    pub sweep_selection: SweepSelection,
    pub sweep_seed: u64,
    /// Worker threads for the sweep; zero uses the available parallelism.
    pub threads: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            controllers: ControllerKind::ALL.to_vec(),
            laps: 1,
            train_size: None,
            sweep_sizes: Vec::new(),
            sweep_selection: SweepSelection::Prefix,
            sweep_seed: 7,
            threads: 0,
        }
    }
}

/// Pre-trained models for `simulate`; trained on the fly when absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub residual: Option<PathBuf>,
    pub absolute: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub plant: PlantConfig,
    pub tracks: Vec<TrackSpec>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub controllers: ControllerSet,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub collection: CollectionConfig,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub models: ModelPaths,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses a config. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        resolve(base, &mut cfg.output_dir);
        for t in &mut cfg.tracks {
            if let Some(p) = t.path.as_mut() {
                resolve(base, p);
            }
        }
        for p in [cfg.models.residual.as_mut(), cfg.models.absolute.as_mut()]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(Error::Config("at least one [[tracks]] entry is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        for (i, t) in self.tracks.iter().enumerate() {
            if self.tracks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!("duplicate track name `{}`", t.name)));
            }
            if let Some(p) = &t.path {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "track `{}`: file {} does not exist",
                        t.name,
                        p.display()
                    )));
                }
            }
        }
        for p in [&self.models.residual, &self.models.absolute].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("model file {} does not exist", p.display())));
            }
        }
        if let Some(name) = &self.collection.track {
            self.track(name)?;
        }
        self.vehicle.validate()?;
        self.plant.validate()?;
        self.simulation.validate()?;
        for k in ControllerKind::ALL {
            self.controllers.get(k).validate()?;
        }
        self.preprocess.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn track(&self, name: &str) -> Result<&TrackSpec> {
        self.tracks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("unknown track `{name}`")))
    }

    pub fn collection_track(&self) -> &TrackSpec {
        self.collection
            .track
            .as_deref()
            .and_then(|n| self.track(n).ok())
            .unwrap_or(&self.tracks[0])
    }

    pub fn scenario(&self, track: &TrackSpec) -> Result<Scenario> {
        let t = track.load()?;
        Ok(Scenario {
            track: track.name.clone(),
            reference: build_reference(&t, &self.reference, &self.vehicle)?,
            params: self.vehicle,
            plant: self.plant,
            sim: self.simulation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[[tracks]]
name = "oval"
builtin = { kind = "oval", straight = 8.0, radius = 3.0, spacing = 0.25 }
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x/runs"));
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.controllers.rkmpc, MpcConfig::default());
        assert_eq!(cfg.collection_track().name, "oval");
        let sc = cfg.scenario(&cfg.tracks[0]).unwrap();
        assert!(sc.reference.len() > 100);
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let text = format!("{MINIMAL}\n[train]\nepochs = 3\nlearnin_rate = 0.1\n");
        let err = ExperimentConfig::parse(&text, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("learnin_rate"), "{err}");
        assert!(err.contains("line 10"), "{err}");
    }

    #[test]
    fn schema_version_is_checked() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(
            ExperimentConfig::parse(&text, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_track_file_is_rejected() {
        let text = r#"
schema_version = 1
[[tracks]]
name = "gone"
path = "no/such/track.csv"
"#;
        let err = ExperimentConfig::parse(text, Path::new("/nonexistent"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::parse(&text, Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }
}
