use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, TransactionRecord, TIMESTAMP_FORMAT};
use crate::{Error, Result};

/// Maps the record fields onto CSV column names.
///
/// Columns whose header starts with `attribute_prefix` are read, in header
/// order, as extra numeric attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub txn_id: String,
    pub card_holder_id: String,
    pub merchant_id: String,
    pub timestamp: String,
    pub amount: String,
    pub category: String,
    pub latitude: String,
    pub longitude: String,
    pub label: String,
    pub attribute_prefix: Option<String>,
    pub timestamp_format: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            txn_id: "txn_id".into(),
            card_holder_id: "card_holder_id".into(),
            merchant_id: "merchant_id".into(),
            timestamp: "timestamp".into(),
            amount: "amount".into(),
            category: "category".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            label: "label".into(),
            attribute_prefix: Some("attr_".into()),
            timestamp_format: TIMESTAMP_FORMAT.into(),
        }
    }
}

struct Columns {
    txn_id: usize,
    card: usize,
    merchant: usize,
    timestamp: usize,
    amount: usize,
    category: usize,
    latitude: usize,
    longitude: usize,
    label: usize,
    attributes: Vec<usize>,
}

impl CsvSchema {
    fn resolve(&self, header: &csv::StringRecord) -> Result<Columns> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let attributes = match &self.attribute_prefix {
            Some(p) if !p.is_empty() => header
                .iter()
                .enumerate()
                .filter(|(_, h)| h.trim().starts_with(p.as_str()))
                .map(|(i, _)| i)
                .collect(),
            _ => Vec::new(),
        };
        Ok(Columns {
            txn_id: find(&self.txn_id)?,
            card: find(&self.card_holder_id)?,
            merchant: find(&self.merchant_id)?,
            timestamp: find(&self.timestamp)?,
            amount: find(&self.amount)?,
            category: find(&self.category)?,
            latitude: find(&self.latitude)?,
            longitude: find(&self.longitude)?,
            label: find(&self.label)?,
            attributes,
        })
    }
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim() {
        "0" | "0.0" | "false" => Some(false),
        "1" | "1.0" | "true" => Some(true),
        _ => None,
    }
}

/// Reads transactions from any reader; see [`parse_transactions_csv`].
pub fn read_transactions<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = schema.resolve(&header)?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let row_err = |message: String| Error::Row { line, message };
        let number = |i: usize, what: &str| {
            field(i)
                .parse::<f64>()
                .map_err(|_| row_err(format!("cannot parse {what} `{}`", field(i))))
        };
        let timestamp = NaiveDateTime::parse_from_str(field(cols.timestamp), &schema.timestamp_format)
            .map_err(|e| row_err(format!("cannot parse timestamp `{}`: {e}", field(cols.timestamp))))?;
        let is_fraud = parse_label(field(cols.label))
            .ok_or_else(|| row_err(format!("label `{}` is not 0 or 1", field(cols.label))))?;
        let attributes = cols
            .attributes
            .iter()
            .map(|&i| number(i, "attribute"))
            .collect::<Result<Vec<_>>>()?;
        let rec = TransactionRecord {
            txn_id: field(cols.txn_id).to_string(),
            card_holder_id: field(cols.card).to_string(),
            merchant_id: field(cols.merchant).to_string(),
            timestamp,
            amount: number(cols.amount, "amount")?,
            category: field(cols.category).to_string(),
            latitude: number(cols.latitude, "latitude")?,
            longitude: number(cols.longitude, "longitude")?,
            is_fraud,
            attributes,
        };
        rec.validate().map_err(row_err)?;
        if !seen.insert(rec.txn_id.clone()) {
            return Err(Error::DuplicateTxn(rec.txn_id));
        }
        records.push(rec);
    }
    Ok(Dataset::new(records, Provenance::Ingested, None))
}

/// One record per data row, in file order.
pub fn parse_transactions_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(std::io::BufReader::new(file), schema)
}

/// Writes the canonical schema: the default [`CsvSchema`] columns followed
/// by `attr_{k}` for each extra attribute.
pub fn write_transactions_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let width = ds.records.first().map_or(0, |r| r.attributes.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "txn_id",
        "card_holder_id",
        "merchant_id",
        "timestamp",
        "amount",
        "category",
        "latitude",
        "longitude",
        "label",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..width).map(|k| format!("attr_{k}")));
    w.write_record(&header)?;
    for r in &ds.records {
        if r.attributes.len() != width {
            return Err(Error::Dimension(format!(
                "record {} has {} attributes, expected {width}",
                r.txn_id,
                r.attributes.len()
            )));
        }
        let mut row = vec![
            r.txn_id.clone(),
            r.card_holder_id.clone(),
            r.merchant_id.clone(),
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            r.amount.to_string(),
            r.category.clone(),
            r.latitude.to_string(),
            r.longitude.to_string(),
            if r.is_fraud { "1" } else { "0" }.to_string(),
        ];
        row.extend(r.attributes.iter().map(|a| a.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
