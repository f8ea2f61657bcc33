//! Experiment configuration and the TOML grid file.
//!
//! ```toml
//! seed = 42
//! replicates = 10
//! train_fraction = 0.7
//! models = ["v1..v7", "single"]
//!
//! [grid]
//! relationships = ["linear", "nonlinear", "mixed"]
//! xi = [1.0, 1.5, 2.0]
//! phi = [1.0, 2.0, 4.0]
//! n_rows = [500, 1000, 2500, 5000]
//! n_noise = [6]
//!
//! [[cells]]
//! relationship = "mixed"
//! xi = 1.5
//! phi = 2.0
//! n_rows = 1000
//! n_noise = 1500
//! ```
//!
//! The `[grid]` product comes first, then any explicit `[[cells]]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, ModelId, Result, Scenario};
use crate::tweedie::{Relationship, SimScenario};

pub const DEFAULT_REPLICATES: usize = 10;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// Axes of a full factorial simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub relationships: Vec<Relationship>,
    pub xi: Vec<f64>,
    pub phi: Vec<f64>,
    pub n_rows: Vec<usize>,
    #[serde(default = "default_noise")]
    pub n_noise: Vec<usize>,
}

fn default_noise() -> Vec<usize> {
    vec![6]
}

impl GridAxes {
    /// Cells in (relationship, xi, phi, n_rows, n_noise) order.
    pub fn cells(&self) -> Vec<SimScenario> {
        let mut out = Vec::new();
        for &relationship in &self.relationships {
            for &xi in &self.xi {
                for &phi in &self.phi {
                    for &n_rows in &self.n_rows {
                        for &n_noise in &self.n_noise {
                            out.push(SimScenario {
                                relationship,
                                xi,
                                phi,
                                n_rows,
                                n_noise,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// The on-disk grid file. Every field is optional so command-line flags can
/// supply or override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub train_fraction: Option<f64>,
    pub threads: Option<usize>,
    pub models: Option<Vec<String>>,
    pub grid: Option<GridAxes>,
    #[serde(default)]
    pub cells: Vec<SimScenario>,
}

impl GridFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn scenarios(&self) -> Vec<SimScenario> {
        let mut out = self.grid.as_ref().map(GridAxes::cells).unwrap_or_default();
        out.extend(self.cells.iter().copied());
        out
    }

    /// Resolves into a config; `None` fields fall back to the defaults and
    /// a missing seed or model list is an error.
    pub fn into_config(self) -> Result<ExperimentConfig> {
        let models = match &self.models {
            Some(list) => parse_model_list(&list.join(","))?,
            None => return Err(HarnessError::Config("no models given".into())),
        };
        let seed = self
            .seed
            .ok_or_else(|| HarnessError::Config("no master seed given".into()))?;
        let config = ExperimentConfig {
            scenarios: self.scenarios().into_iter().map(Scenario::Simulated).collect(),
            models,
            replicates: self.replicates.unwrap_or(DEFAULT_REPLICATES),
            train_fraction: self.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION),
            seed,
            threads: self.threads,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses a comma-separated model list. `vA..vB` expands to an inclusive
/// preset range; duplicates keep their first position.
pub fn parse_model_list(text: &str) -> Result<Vec<ModelId>> {
    let mut out: Vec<ModelId> = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let expanded = match item.split_once("..") {
            Some((a, b)) => match (a.parse()?, b.parse()?) {
                (ModelId::Ensemble(lo), ModelId::Ensemble(hi)) if lo <= hi => (lo..=hi).map(ModelId::Ensemble).collect(),
                _ => return Err(HarnessError::UnknownModel(item.to_string())),
            },
            None => vec![item.parse()?],
        };
        for m in expanded {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config("model list is empty".into()));
    }
    Ok(out)
}

/// A resolved, validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub models: Vec<ModelId>,
    pub replicates: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(HarnessError::Config("scenario grid is empty".into()));
        }
        if self.models.is_empty() {
            return Err(HarnessError::Config("model list is empty".into()));
        }
        if self.replicates == 0 {
            return Err(HarnessError::Config("replicates must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(HarnessError::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::Config("threads must be >= 1".into()));
        }
        let mut labels: Vec<String> = self.scenarios.iter().map(Scenario::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(HarnessError::Config(format!("duplicate cell {}", w[0])));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL_GRID: &str = r#"
        seed = 7
        models = ["v1..v7", "single"]
        [grid]
        relationships = ["linear", "nonlinear", "mixed"]
        xi = [1.0, 1.5, 2.0]
        phi = [1.0, 2.0, 4.0]
        n_rows = [500, 1000, 2500, 5000]
    "#;

    #[test]
    fn full_grid_has_108_cells() {
        let f = GridFile::parse(FULL_GRID).unwrap();
        let cells = f.scenarios();
        assert_eq!(cells.len(), 108);
        assert!(cells.iter().all(|c| c.n_noise == 6));
        assert_eq!(cells[0].relationship, Relationship::Linear);
        assert_eq!(cells[1].n_rows, 1000);
        assert_eq!(cells[4].phi, 2.0);
        let c = f.into_config().unwrap();
        assert_eq!(c.models.len(), 8);
        assert_eq!(c.replicates, DEFAULT_REPLICATES);
        assert_eq!(c.train_fraction, DEFAULT_TRAIN_FRACTION);
    }

    #[test]
    fn high_dimensional_grid() {
        let f = GridFile::parse(
            r#"
            seed = 1
            models = ["v5", "single"]
            [grid]
            relationships = ["linear", "nonlinear", "mixed"]
            xi = [1.0, 1.5, 2.0]
            phi = [1.0, 2.0, 4.0]
            n_rows = [1000]
            n_noise = [1500]
            "#,
        )
        .unwrap();
        assert_eq!(f.scenarios().len(), 27);
    }

    #[test]
    fn explicit_cells_follow_the_grid() {
        let f = GridFile::parse(
            r#"
            seed = 1
            models = ["v2"]
            [[cells]]
            relationship = "mixed"
            xi = 1.5
            phi = 2.0
            n_rows = 1000
            n_noise = 1500
            "#,
        )
        .unwrap();
        let c = f.into_config().unwrap();
        assert_eq!(c.scenarios.len(), 1);
        assert_eq!(c.scenarios[0].label(), "mixed/xi=1.5/phi=2/n=1000/noise=1500");
    }

    #[test]
    fn rejects_bad_files() {
        assert!(GridFile::parse("seed = 1\nbogus = 2").is_err());
        assert!(GridFile::parse("seed = 1\nmodels=[\"v1\"]").unwrap().into_config().is_err());
        assert!(GridFile::parse(FULL_GRID.replace("seed = 7", "").as_str())
            .unwrap()
            .into_config()
            .is_err());
    }

    #[test]
    fn model_lists() {
        let m = parse_model_list("v1..v7,single").unwrap();
        assert_eq!(m, ModelId::PRESETS.to_vec());
        assert_eq!(
            parse_model_list(" v3 , v3,mean").unwrap(),
            vec![ModelId::Ensemble(3), ModelId::Mean]
        );
        assert!(parse_model_list("v5..v2").is_err());
        assert!(parse_model_list("v1..single").is_err());
        assert!(parse_model_list("").is_err());
        assert!(parse_model_list("knn").is_err());
    }
}
