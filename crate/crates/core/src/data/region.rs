use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, TransactionRecord};
use crate::{Error, Result};

/// A latitude/longitude box. Longitudes are given in degrees west, as in
/// `(30°N-40°N, 95°W-100°W)`; boxes are half-open so that neighbouring
/// regions sharing an edge do not overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub region_id: u32,
    /// `[min, max)` degrees north.
    pub lat_range: (f64, f64),
    /// `[min, max)` degrees west.
    pub lon_range: (f64, f64),
}

impl RegionSpec {
    pub fn new(region_id: u32, lat_range: (f64, f64), lon_range: (f64, f64)) -> Self {
        Self {
            region_id,
            lat_range,
            lon_range,
        }
    }

    pub fn contains(&self, latitude: f64, longitude: f64) -> bool {
        let west = -longitude;
        latitude >= self.lat_range.0
            && latitude < self.lat_range.1
            && west >= self.lon_range.0
            && west < self.lon_range.1
    }

    pub fn contains_record(&self, r: &TransactionRecord) -> bool {
        self.contains(r.latitude, r.longitude)
    }

    fn overlaps(&self, other: &RegionSpec) -> bool {
        let a = self;
        let b = other;
        a.lat_range.0 < b.lat_range.1
            && b.lat_range.0 < a.lat_range.1
            && a.lon_range.0 < b.lon_range.1
            && b.lon_range.0 < a.lon_range.1
    }

    fn validate(&self) -> Result<()> {
        let field = format!("region {}", self.region_id);
        let ordered = |(lo, hi): (f64, f64)| lo < hi;
        if !ordered(self.lat_range) || !ordered(self.lon_range) {
            return Err(Error::config(field, "range minimum must be below maximum"));
        }
        Ok(())
    }
}

/// The five boxes R1..R5 used for the US mainland dataset.
pub fn default_regions() -> Vec<RegionSpec> {
    vec![
        RegionSpec::new(1, (30.0, 40.0), (95.0, 100.0)),
        RegionSpec::new(2, (40.0, 50.0), (75.0, 80.0)),
        RegionSpec::new(3, (30.0, 40.0), (75.0, 80.0)),
        RegionSpec::new(4, (40.0, 50.0), (95.0, 100.0)),
        RegionSpec::new(5, (30.0, 40.0), (90.0, 95.0)),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub regions: BTreeMap<u32, Dataset>,
    /// Records that fell outside every box.
    pub dropped: usize,
}

/// Assigns each record to the unique box containing it; order within a
/// region follows input order.
pub fn partition_by_region(ds: &Dataset, regions: &[RegionSpec]) -> Result<Partition> {
    for (i, a) in regions.iter().enumerate() {
        a.validate()?;
        for b in &regions[i + 1..] {
            if a.region_id == b.region_id {
                return Err(Error::config(format!("region {}", a.region_id), "duplicate region id"));
            }
            if a.overlaps(b) {
                return Err(Error::config(
                    format!("region {}", a.region_id),
                    format!("overlaps region {}", b.region_id),
                ));
            }
        }
    }
    let mut out: BTreeMap<u32, Dataset> = regions
        .iter()
        .map(|r| (r.region_id, Dataset::new(Vec::new(), ds.provenance, ds.seed)))
        .collect();
    let mut dropped = 0;
    for rec in &ds.records {
        match regions.iter().find(|r| r.contains_record(rec)) {
            Some(r) => out
                .get_mut(&r.region_id)
                .expect("region present")
                .records
                .push(rec.clone()),
            None => dropped += 1,
        }
    }
    Ok(Partition { regions: out, dropped })
}
