//! Transaction records and the datasets built from them.

mod csv_io;
mod profile;
mod region;
mod split;
mod synth;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

pub use csv_io::{parse_transactions_csv, read_transactions, write_transactions_csv, CsvSchema};
pub use profile::{emit_temporal_profile, write_temporal_profile, TemporalProfile};
pub use region::{default_regions, partition_by_region, Partition, RegionSpec};
pub use split::{split_indices, split_train_val_test, SplitRatios};
pub use synth::{generate_synthetic, synthetic_region_box, SyntheticConfig, LATENT_DIMS};

/// Base encoded attributes preceding any extra numeric attributes:
/// scaled amount, log-amount, category score, hour sine, hour cosine.
pub const BASE_FEATURES: usize = 5;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRecord {
    pub txn_id: String,
    pub card_holder_id: String,
    pub merchant_id: String,
    pub timestamp: NaiveDateTime,
    pub amount: f64,
    pub category: String,
    pub latitude: f64,
    /// Signed degrees east; western longitudes are negative.
    pub longitude: f64,
    pub is_fraud: bool,
    /// Extra numeric attributes carried verbatim into the feature vector.
    pub attributes: Vec<f64>,
}

impl TransactionRecord {
    /// Hourly time slice in `0..24`; the calendar date is ignored.
    pub fn time_slice(&self) -> u8 {
        self.timestamp.hour() as u8
    }

    pub fn label(&self) -> f64 {
        if self.is_fraud {
            1.0
        } else {
            0.0
        }
    }

    /// Fixed-width numeric feature vector.
    pub fn features(&self) -> Vec<f64> {
        let t = &self.timestamp;
        let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0 + f64::from(t.second()) / 3600.0;
        let angle = std::f64::consts::TAU * hour / 24.0;
        let mut f = Vec::with_capacity(BASE_FEATURES + self.attributes.len());
        f.push(self.amount / 100.0);
        f.push(self.amount.ln_1p());
        f.push(category_score(&self.category));
        f.push(angle.sin());
        f.push(angle.cos());
        f.extend_from_slice(&self.attributes);
        f
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if !self.amount.is_finite() || self.amount < 0.0 {
            return Err(format!("amount {} must be a finite nonnegative number", self.amount));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(format!("latitude {} outside [-90, 90]", self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(format!("longitude {} outside [-180, 180]", self.longitude));
        }
        if self.attributes.iter().any(|a| !a.is_finite()) {
            return Err("non-finite attribute value".into());
        }
        Ok(())
    }
}

/// Deterministic category code in `[-1, 1)`.
pub fn category_score(category: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in category.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<TransactionRecord>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(records: Vec<TransactionRecord>, provenance: Provenance, seed: Option<u64>) -> Self {
        Self {
            records,
            provenance,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Width of the encoded feature vector, or `None` for an empty dataset.
    pub fn feature_width(&self) -> Option<usize> {
        self.records.first().map(|r| BASE_FEATURES + r.attributes.len())
    }

    pub fn fraud_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_fraud).count()
    }

    /// Same provenance, the records at `idx` in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
pub(crate) fn test_record(id: &str, card: &str, merchant: &str, ts: &str, fraud: bool) -> TransactionRecord {
    TransactionRecord {
        txn_id: id.into(),
        card_holder_id: card.into(),
        merchant_id: merchant.into(),
        timestamp: NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT).unwrap(),
        amount: 12.5,
        category: "grocery_pos".into(),
        latitude: 35.0,
        longitude: -97.0,
        is_fraud: fraud,
        attributes: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_slice_is_the_wall_clock_hour() {
        let r = test_record("a", "c", "m", "2019-01-01 01:30:00", false);
        assert_eq!(r.time_slice(), 1);
        let r = test_record("a", "c", "m", "2020-06-30 23:59:59", false);
        assert_eq!(r.time_slice(), 23);
    }

    #[test]
    fn features_have_fixed_width() {
        let mut r = test_record("a", "c", "m", "2019-01-01 06:00:00", true);
        assert_eq!(r.features().len(), BASE_FEATURES);
        r.attributes = vec![0.5, -1.0, 2.0];
        let f = r.features();
        assert_eq!(f.len(), 8);
        assert!((f[0] - 0.125).abs() < 1e-15);
        // 06:00 sits a quarter of the way round the clock.
        assert!((f[3] - 1.0).abs() < 1e-12);
        assert!(f[4].abs() < 1e-12);
        assert_eq!(&f[5..], &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn category_score_is_stable_and_bounded() {
        let a = category_score("shopping_net");
        assert_eq!(a, category_score("shopping_net"));
        assert!((-1.0..1.0).contains(&a));
        assert_ne!(a, category_score("grocery_pos"));
    }
}
