use std::io::Write;

use super::Dataset;
use crate::{Error, Result};

/// Hour-of-day by label contingency table; column 0 counts legitimate
/// transactions, column 1 fraudulent ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemporalProfile {
    pub counts: [[u64; 2]; 24],
}

impl TemporalProfile {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    /// Hour with the most fraudulent transactions (lowest hour on ties).
    pub fn peak_fraud_hour(&self) -> usize {
        let mut best = 0;
        for h in 1..24 {
            if self.counts[h][1] > self.counts[best][1] {
                best = h;
            }
        }
        best
    }
}

pub fn emit_temporal_profile(ds: &Dataset) -> TemporalProfile {
    let mut p = TemporalProfile::default();
    for r in &ds.records {
        p.counts[usize::from(r.time_slice())][usize::from(r.is_fraud)] += 1;
    }
    p
}

/// CSV with header `hour,label,count`, 48 rows.
pub fn write_temporal_profile<W: Write>(p: &TemporalProfile, mut w: W) -> Result<()> {
    let io = |e| Error::io("<temporal profile>", e);
    writeln!(w, "hour,label,count").map_err(io)?;
    for (h, c) in p.counts.iter().enumerate() {
        for (label, n) in c.iter().enumerate() {
            writeln!(w, "{h},{label},{n}").map_err(io)?;
        }
    }
    Ok(())
}
