//! Run configuration files.
//!
//! One TOML file describes a run: where the transactions come from, the
//! experiment settings, and options for the single-region and sequential
//! commands. Every table has defaults, so a file may be as short as
//!
//! ```toml
//! [data]
//! source = "synthetic"
//! ```
//!
//! Relative CSV paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    default_regions, generate_synthetic, parse_transactions_csv, partition_by_region, synthetic_region_box, CsvSchema,
    Dataset, Provenance, RegionSpec, SyntheticConfig,
};
use crate::trainer::{ExperimentConfig, RegionData, Variant};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(Box<CsvSource>),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// Files are concatenated in order before partitioning.
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Region boxes in task order; defaults to the five mainland boxes.
    #[serde(default = "default_regions")]
    pub regions: Vec<RegionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleOptions {
    /// Region to train on; the first region when absent.
    pub region_id: Option<u32>,
    pub train_fraction: f64,
}

impl Default for SingleOptions {
    fn default() -> Self {
        Self {
            region_id: None,
            train_fraction: 0.6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceOptions {
    /// Variants to run under the shared seed. Empty means the single
    /// variant named in `experiment.train.variant`.
    pub variants: Vec<Variant>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub experiment: ExperimentConfig,
    pub single: SingleOptions,
    pub sequence: SequenceOptions,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map_or_else(String::new, |s| text[s].lines().next().unwrap_or("").trim().to_string());
            Error::config(field, e.message().to_string())
        })
    }

    /// Reads a config file and anchors relative CSV paths at its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let DataSource::Csv(src) = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in &mut src.paths {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::Csv(c) => {
                if c.paths.is_empty() {
                    return Err(Error::config("data.paths", "at least one CSV file is required"));
                }
                if c.regions.is_empty() {
                    return Err(Error::config("data.regions", "at least one region box is required"));
                }
            }
        }
        self.experiment.validate()?;
        let f = self.single.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("single.train_fraction", format!("{f} is not in (0, 1)")));
        }
        Ok(())
    }

    /// Sets the root seed, which also seeds synthetic data.
    pub fn set_seed(&mut self, seed: u64) {
        self.experiment.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = seed;
        }
    }

    /// Fills the variant list so the config names every run explicitly.
    pub fn resolve(&mut self) {
        if self.sequence.variants.is_empty() {
            self.sequence.variants.push(self.experiment.train.variant);
        }
    }

    /// Files read by [`load_regions`].
    pub fn input_paths(&self) -> Vec<PathBuf> {
        match &self.data {
            DataSource::Synthetic(_) => Vec::new(),
            DataSource::Csv(c) => c.paths.clone(),
        }
    }
}

/// Materialises the configured data as regions in task order.
pub fn load_regions(source: &DataSource) -> Result<Vec<RegionData>> {
    match source {
        DataSource::Synthetic(s) => Ok(generate_synthetic(s)?
            .into_iter()
            .enumerate()
            .map(|(i, dataset)| RegionData {
                region_id: synthetic_region_box(i).region_id,
                dataset,
            })
            .collect()),
        DataSource::Csv(c) => {
            let mut records = Vec::new();
            for p in &c.paths {
                records.extend(parse_transactions_csv(p, &c.schema)?.records);
            }
            let ds = Dataset::new(records, Provenance::Ingested, None);
            let mut part = partition_by_region(&ds, &c.regions)?;
            Ok(c.regions
                .iter()
                .map(|r| RegionData {
                    region_id: r.region_id,
                    dataset: part.regions.remove(&r.region_id).expect("partition covers every box"),
                })
                .collect())
        }
    }
}
