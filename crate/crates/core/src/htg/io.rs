//! Directory serialisation: `nodes_{type}.csv`, `edges_{type}.csv`,
//! `features.csv` and `labels.csv`. Floats use shortest round-trip
//! formatting so a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use super::{EdgeType, HeteroTradeGraph, Interner, NodeType};
use crate::linalg::Matrix;
use crate::{Error, Result};

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn reader(dir: &Path, name: &str) -> Result<csv::Reader<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Reader::from_reader(f))
}

fn parse<T: std::str::FromStr>(s: &str, file: &str, line: u64) -> Result<T> {
    s.parse().map_err(|_| Error::Row {
        line,
        message: format!("{file}: cannot parse `{s}`"),
    })
}

pub fn write_graph_dir(g: &HeteroTradeGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let id_files = [
        (NodeType::Transaction, &g.txn_ids),
        (NodeType::CardHolder, &g.card_holders.ids),
        (NodeType::Merchant, &g.merchants.ids),
    ];
    for (t, ids) in id_files {
        let mut w = writer(dir, &format!("nodes_{}.csv", t.file_stem()))?;
        w.write_record(["index", "id"])?;
        for (i, id) in ids.iter().enumerate() {
            w.write_record([i.to_string(), id.clone()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    let mut w = writer(dir, "nodes_time_slice.csv")?;
    w.write_record(["index", "interval"])?;
    for h in g.time_slices() {
        w.write_record([h.to_string(), format!("{h:02}:00-{:02}:00", h + 1)])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    for e in EdgeType::ALL {
        let mut w = writer(dir, &format!("edges_{}.csv", e.file_stem()))?;
        w.write_record(["transaction", e.entity_type().file_stem()])?;
        for (t, x) in g.edges(e) {
            w.write_record([t.to_string(), x.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }

    let mut w = writer(dir, "features.csv")?;
    w.write_record((0..g.feature_width()).map(|k| format!("f{k}")))?;
    for i in 0..g.num_transactions() {
        w.write_record(g.features.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let mut w = writer(dir, "labels.csv")?;
    w.write_record(["index", "label"])?;
    for (i, &l) in g.labels.iter().enumerate() {
        w.write_record([i.to_string(), u8::from(l).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn read_ids(dir: &Path, t: NodeType) -> Result<Vec<String>> {
    let name = format!("nodes_{}.csv", t.file_stem());
    let mut ids = Vec::new();
    for (k, row) in reader(dir, &name)?.records().enumerate() {
        let row = row?;
        let line = k as u64 + 2;
        let idx: usize = parse(row.get(0).unwrap_or(""), &name, line)?;
        if idx != k {
            return Err(Error::Row {
                line,
                message: format!("{name}: index {idx} out of sequence"),
            });
        }
        ids.push(row.get(1).unwrap_or("").to_string());
    }
    Ok(ids)
}

fn read_edges(dir: &Path, e: EdgeType, n: usize) -> Result<Vec<usize>> {
    let name = format!("edges_{}.csv", e.file_stem());
    let mut out = vec![usize::MAX; n];
    for (k, row) in reader(dir, &name)?.records().enumerate() {
        let row = row?;
        let line = k as u64 + 2;
        let t: usize = parse(row.get(0).unwrap_or(""), &name, line)?;
        let x: usize = parse(row.get(1).unwrap_or(""), &name, line)?;
        if t >= n || out[t] != usize::MAX {
            return Err(Error::Row {
                line,
                message: format!("{name}: transaction {t} missing or linked twice"),
            });
        }
        out[t] = x;
    }
    if out.contains(&usize::MAX) {
        return Err(Error::Dimension(format!("{name}: some transaction has no edge")));
    }
    Ok(out)
}

pub fn read_graph_dir(dir: &Path) -> Result<HeteroTradeGraph> {
    let txn_ids = read_ids(dir, NodeType::Transaction)?;
    let card_holders = Interner::from_ids(read_ids(dir, NodeType::CardHolder)?)?;
    let merchants = Interner::from_ids(read_ids(dir, NodeType::Merchant)?)?;
    let n = txn_ids.len();

    let txn_card = read_edges(dir, EdgeType::TxnCardHolder, n)?;
    let txn_merchant = read_edges(dir, EdgeType::TxnMerchant, n)?;
    let txn_slice = read_edges(dir, EdgeType::TxnTimeSlice, n)?
        .into_iter()
        .map(|h| u8::try_from(h).ok().filter(|h| *h < 24))
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| Error::Dimension("time slice index outside 0..24".into()))?;
    if txn_card.iter().any(|&c| c >= card_holders.ids.len()) || txn_merchant.iter().any(|&m| m >= merchants.ids.len()) {
        return Err(Error::Dimension("edge points at a missing entity node".into()));
    }

    let mut rdr = reader(dir, "features.csv")?;
    let width = rdr.headers()?.len();
    let mut data = Vec::with_capacity(n * width);
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        for v in row.iter() {
            data.push(parse::<f64>(v, "features.csv", k as u64 + 2)?);
        }
    }
    let features = Matrix::from_vec(n, width, data)?;

    let mut labels = Vec::with_capacity(n);
    for (k, row) in reader(dir, "labels.csv")?.records().enumerate() {
        let row = row?;
        let l: u8 = parse(row.get(1).unwrap_or(""), "labels.csv", k as u64 + 2)?;
        labels.push(l == 1);
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} transactions",
            labels.len()
        )));
    }

    Ok(HeteroTradeGraph {
        txn_ids,
        features,
        labels,
        card_holders,
        merchants,
        txn_card,
        txn_merchant,
        txn_slice,
    })
}
