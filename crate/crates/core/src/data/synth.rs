//! Schema-compatible synthetic transactions with planted regional drift.
//!
//! Each region draws hours uniformly and labels with an hour-dependent fraud
//! probability that is boosted inside `fraud_time_slices` while keeping the
//! marginal rate at `fraud_rate`. Fraud concentrates on a small set of
//! compromised card holders. Three latent attributes carry the planted
//! signal: fraud is displaced by `signal_strength` along a direction that
//! rotates by `region_shift_strength * 90°` per region, and every class mean
//! is offset along the third axis by `region_shift_strength * region_index`.

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, RegionSpec, TransactionRecord};
use crate::rng::component_rng;
use crate::{Error, Result};

pub const LATENT_DIMS: usize = 3;

const CATEGORIES: [&str; 14] = [
    "entertainment",
    "food_dining",
    "gas_transport",
    "grocery_net",
    "grocery_pos",
    "health_fitness",
    "home",
    "kids_pets",
    "misc_net",
    "misc_pos",
    "personal_care",
    "shopping_net",
    "shopping_pos",
    "travel",
];
const FRAUD_CATEGORIES: [&str; 3] = ["shopping_net", "misc_net", "grocery_pos"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_regions: usize,
    pub txns_per_region: usize,
    pub n_card_holders: usize,
    pub n_merchants: usize,
    pub fraud_rate: f64,
    pub fraud_time_slices: Vec<u8>,
    pub region_shift_strength: f64,
    pub seed: u64,
    /// Displacement of the fraud class in latent space, in noise standard deviations.
    pub signal_strength: f64,
    /// Fraud odds multiplier inside `fraud_time_slices`.
    pub fraud_time_boost: f64,
    /// Probability that a transaction is routed to a card of its own class.
    pub card_concentration: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_regions: 3,
            txns_per_region: 2000,
            n_card_holders: 200,
            n_merchants: 200,
            fraud_rate: 0.1,
            fraud_time_slices: vec![0, 1, 2, 3, 22, 23],
            region_shift_strength: 1.0,
            seed: 0,
            signal_strength: 3.0,
            fraud_time_boost: 4.0,
            card_concentration: 0.9,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_regions", self.n_regions),
            ("txns_per_region", self.txns_per_region),
            ("n_card_holders", self.n_card_holders),
            ("n_merchants", self.n_merchants),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.n_regions > 25 {
            return Err(Error::config("n_regions", "at most 25 disjoint regions are laid out"));
        }
        if !(self.fraud_rate > 0.0 && self.fraud_rate < 1.0) {
            return Err(Error::config(
                "fraud_rate",
                format!("{} is not in (0, 1)", self.fraud_rate),
            ));
        }
        if let Some(h) = self.fraud_time_slices.iter().find(|h| **h >= 24) {
            return Err(Error::config("fraud_time_slices", format!("hour {h} is not in 0..24")));
        }
        if !self.region_shift_strength.is_finite() || self.region_shift_strength < 0.0 {
            return Err(Error::config(
                "region_shift_strength",
                "must be a finite nonnegative number",
            ));
        }
        if !self.signal_strength.is_finite() || self.signal_strength < 0.0 {
            return Err(Error::config("signal_strength", "must be a finite nonnegative number"));
        }
        if !self.fraud_time_boost.is_finite() || self.fraud_time_boost < 1.0 {
            return Err(Error::config("fraud_time_boost", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.card_concentration) {
            return Err(Error::config("card_concentration", "must lie in [0, 1]"));
        }
        let (_, boosted) = self.hourly_fraud_probability();
        if boosted >= 1.0 {
            return Err(Error::config(
                "fraud_time_boost",
                "boosted hourly fraud probability reaches 1; lower the boost or the rate",
            ));
        }
        Ok(())
    }

    /// (base, boosted) fraud probability per hour, chosen so the rate over a
    /// uniform hour draw equals `fraud_rate`.
    pub fn hourly_fraud_probability(&self) -> (f64, f64) {
        let mut slices = self.fraud_time_slices.clone();
        slices.sort_unstable();
        slices.dedup();
        let boosted_share = slices.len() as f64 / 24.0;
        let base = self.fraud_rate / (1.0 + (self.fraud_time_boost - 1.0) * boosted_share);
        (base, base * self.fraud_time_boost)
    }

    fn is_fraud_slice(&self, hour: u32) -> bool {
        self.fraud_time_slices.iter().any(|&h| u32::from(h) == hour)
    }
}

/// Region boxes for synthetic data: the five mainland boxes first, then
/// further disjoint boxes along 20°N-30°N.
pub fn synthetic_region_box(index: usize) -> RegionSpec {
    let base = super::default_regions();
    if index < base.len() {
        return base[index].clone();
    }
    let k = (index - base.len()) as f64;
    RegionSpec::new(index as u32 + 1, (20.0, 30.0), (75.0 + 5.0 * k, 80.0 + 5.0 * k))
}

struct RegionDrift {
    fraud_direction: [f64; LATENT_DIMS],
    offset: [f64; LATENT_DIMS],
}

impl RegionDrift {
    fn new(cfg: &SyntheticConfig, region: usize) -> Self {
        let s = cfg.region_shift_strength;
        let theta = s * region as f64 * std::f64::consts::FRAC_PI_2;
        Self {
            fraud_direction: [theta.cos(), theta.sin(), 0.0],
            offset: [0.0, 0.0, s * region as f64],
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn generate_region(cfg: &SyntheticConfig, region: usize) -> Dataset {
    let mut rng = component_rng(cfg.seed, "synthetic-region", region as u64);
    let drift = RegionDrift::new(cfg, region);
    let bbox = synthetic_region_box(region);
    let (p_base, p_boost) = cfg.hourly_fraud_probability();
    let n_compromised = ((cfg.fraud_rate * cfg.n_card_holders as f64).round() as usize).clamp(1, cfg.n_card_holders);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let start = NaiveDate::from_ymd_opt(2019, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let rid = region + 1;

    let records = (0..cfg.txns_per_region)
        .map(|i| {
            let day = rng.random_range(0..730i64);
            let hour = rng.random_range(0..24u32);
            let minute = rng.random_range(0..60i64);
            let second = rng.random_range(0..60i64);
            let timestamp = start
                + Duration::days(day)
                + Duration::hours(i64::from(hour))
                + Duration::minutes(minute)
                + Duration::seconds(second);
            let p = if cfg.is_fraud_slice(hour) { p_boost } else { p_base };
            let is_fraud = rng.random::<f64>() < p;

            let own_class = rng.random::<f64>() < cfg.card_concentration;
            let card = if own_class && is_fraud {
                rng.random_range(0..n_compromised)
            } else if own_class && n_compromised < cfg.n_card_holders {
                rng.random_range(n_compromised..cfg.n_card_holders)
            } else {
                rng.random_range(0..cfg.n_card_holders)
            };
            let merchant = rng.random_range(0..cfg.n_merchants);

            let log_mean = if is_fraud { 50f64.ln() + 0.5 } else { 50f64.ln() };
            let amount = ((log_mean + 0.8 * unit.sample(&mut rng)).exp() * 100.0).round() / 100.0;
            let category = if is_fraud && rng.random::<f64>() < 0.5 {
                pick(&mut rng, &FRAUD_CATEGORIES)
            } else {
                pick(&mut rng, &CATEGORIES)
            };

            let attributes = (0..LATENT_DIMS)
                .map(|k| {
                    let signal = if is_fraud {
                        cfg.signal_strength * drift.fraud_direction[k]
                    } else {
                        0.0
                    };
                    drift.offset[k] + signal + unit.sample(&mut rng)
                })
                .collect();

            let lat = bbox.lat_range.0 + rng.random::<f64>() * (bbox.lat_range.1 - bbox.lat_range.0);
            let west = bbox.lon_range.0 + rng.random::<f64>() * (bbox.lon_range.1 - bbox.lon_range.0);

            TransactionRecord {
                txn_id: format!("R{rid}_T{i:06}"),
                card_holder_id: format!("R{rid}_C{card:04}"),
                merchant_id: format!("M{merchant:04}"),
                timestamp,
                amount,
                category: category.to_string(),
                latitude: lat,
                longitude: -west,
                is_fraud,
                attributes,
            }
        })
        .collect();
    Dataset::new(records, Provenance::Synthetic, Some(cfg.seed))
}

/// One dataset per region, bitwise deterministic in `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Dataset>> {
    cfg.validate()?;
    Ok((0..cfg.n_regions).map(|r| generate_region(cfg, r)).collect())
}
