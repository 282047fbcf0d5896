//! Heterogeneous trade graph: transaction, card-holder, merchant and
//! time-slice nodes, with features and labels on transactions only.

mod io;
mod metapath;

#[cfg(test)]
pub(crate) use metapath::tests::random_dataset;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TransactionRecord};
use crate::linalg::Matrix;
use crate::{Error, Result};

pub use io::{read_graph_dir, write_graph_dir};
pub use metapath::{extract_metapath_neighbors, MetaPathAdjacency, MetaPathSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Transaction,
    CardHolder,
    Merchant,
    TimeSlice,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::Transaction,
        NodeType::CardHolder,
        NodeType::Merchant,
        NodeType::TimeSlice,
    ];

    pub fn letter(self) -> char {
        match self {
            NodeType::Transaction => 'T',
            NodeType::CardHolder => 'C',
            NodeType::Merchant => 'M',
            NodeType::TimeSlice => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.letter() == c)
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            NodeType::Transaction => "transaction",
            NodeType::CardHolder => "card_holder",
            NodeType::Merchant => "merchant",
            NodeType::TimeSlice => "time_slice",
        }
    }
}

/// Every edge joins a transaction to one entity node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    TxnCardHolder,
    TxnMerchant,
    TxnTimeSlice,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::TxnCardHolder, EdgeType::TxnMerchant, EdgeType::TxnTimeSlice];

    /// Endpoint node types `(source, target)`.
    pub fn endpoints(self) -> (NodeType, NodeType) {
        (NodeType::Transaction, self.entity_type())
    }

    pub fn entity_type(self) -> NodeType {
        match self {
            EdgeType::TxnCardHolder => NodeType::CardHolder,
            EdgeType::TxnMerchant => NodeType::Merchant,
            EdgeType::TxnTimeSlice => NodeType::TimeSlice,
        }
    }

    pub fn for_entity(t: NodeType) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.entity_type() == t)
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            EdgeType::TxnCardHolder => "txn_card_holder",
            EdgeType::TxnMerchant => "txn_merchant",
            EdgeType::TxnTimeSlice => "txn_time_slice",
        }
    }
}

/// A labelled transaction to be appended to an existing graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySample {
    pub txn_id: String,
    pub features: Vec<f64>,
    pub card_holder_id: String,
    pub merchant_id: String,
    pub time_slice: u8,
    pub is_fraud: bool,
}

impl ReplaySample {
    pub fn from_record(r: &TransactionRecord) -> Self {
        Self {
            txn_id: r.txn_id.clone(),
            features: r.features(),
            card_holder_id: r.card_holder_id.clone(),
            merchant_id: r.merchant_id.clone(),
            time_slice: r.time_slice(),
            is_fraud: r.is_fraud,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Interner {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Dimension(format!("duplicate entity id `{id}`")));
            }
        }
        Ok(Self { ids, index })
    }
}

/// Typed node sets and typed edges. Entity nodes are numbered in order of
/// first appearance; time-slice nodes are numbered by hour.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroTradeGraph {
    txn_ids: Vec<String>,
    features: Matrix,
    labels: Vec<bool>,
    card_holders: Interner,
    merchants: Interner,
    txn_card: Vec<usize>,
    txn_merchant: Vec<usize>,
    txn_slice: Vec<u8>,
}

impl HeteroTradeGraph {
    fn empty(width: usize) -> Self {
        Self {
            txn_ids: Vec::new(),
            features: Matrix::zeros(0, width),
            labels: Vec::new(),
            card_holders: Interner::default(),
            merchants: Interner::default(),
            txn_card: Vec::new(),
            txn_merchant: Vec::new(),
            txn_slice: Vec::new(),
        }
    }

    fn push(&mut self, s: &ReplaySample) -> Result<()> {
        if s.time_slice >= 24 {
            return Err(Error::Dimension(format!("time slice {} is not an hour", s.time_slice)));
        }
        self.features.push_row(&s.features)?;
        self.txn_ids.push(s.txn_id.clone());
        self.labels.push(s.is_fraud);
        self.txn_card.push(self.card_holders.intern(&s.card_holder_id));
        self.txn_merchant.push(self.merchants.intern(&s.merchant_id));
        self.txn_slice.push(s.time_slice);
        Ok(())
    }

    pub fn num_transactions(&self) -> usize {
        self.txn_ids.len()
    }

    pub fn num_nodes(&self, t: NodeType) -> usize {
        match t {
            NodeType::Transaction => self.txn_ids.len(),
            NodeType::CardHolder => self.card_holders.ids.len(),
            NodeType::Merchant => self.merchants.ids.len(),
            NodeType::TimeSlice => self.time_slices().len(),
        }
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn label_values(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect()
    }

    pub fn txn_ids(&self) -> &[String] {
        &self.txn_ids
    }

    pub fn card_holder_ids(&self) -> &[String] {
        &self.card_holders.ids
    }

    pub fn merchant_ids(&self) -> &[String] {
        &self.merchants.ids
    }

    /// Hours that have at least one transaction, ascending.
    pub fn time_slices(&self) -> Vec<u8> {
        let mut seen = [false; 24];
        for &h in &self.txn_slice {
            seen[usize::from(h)] = true;
        }
        (0..24u8).filter(|&h| seen[usize::from(h)]).collect()
    }

    /// Entity node index that transaction `txn` links to along `edge`.
    pub fn entity_of(&self, txn: usize, edge: EdgeType) -> usize {
        match edge {
            EdgeType::TxnCardHolder => self.txn_card[txn],
            EdgeType::TxnMerchant => self.txn_merchant[txn],
            EdgeType::TxnTimeSlice => usize::from(self.txn_slice[txn]),
        }
    }

    /// `(transaction, entity)` pairs of one edge type.
    pub fn edges(&self, edge: EdgeType) -> Vec<(usize, usize)> {
        (0..self.num_transactions())
            .map(|t| (t, self.entity_of(t, edge)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        EdgeType::ALL.len() * self.num_transactions()
    }

    /// Replay sample view of transaction `i`.
    pub fn sample(&self, i: usize) -> ReplaySample {
        ReplaySample {
            txn_id: self.txn_ids[i].clone(),
            features: self.features.row(i).to_vec(),
            card_holder_id: self.card_holders.ids[self.txn_card[i]].clone(),
            merchant_id: self.merchants.ids[self.txn_merchant[i]].clone(),
            time_slice: self.txn_slice[i],
            is_fraud: self.labels[i],
        }
    }
}

/// One transaction node per record, linked to its deduplicated card-holder,
/// merchant and hourly time-slice nodes.
pub fn build_htg(ds: &Dataset) -> Result<HeteroTradeGraph> {
    let width = ds
        .feature_width()
        .ok_or_else(|| Error::Empty("cannot build a graph from an empty dataset".into()))?;
    let mut g = HeteroTradeGraph::empty(width);
    for r in &ds.records {
        g.push(&ReplaySample::from_record(r))?;
    }
    Ok(g)
}

/// Appends replayed transactions as new labelled nodes. Entity nodes are
/// reused when ids match; existing node indices never change.
pub fn merge_replay_into_htg(g: &HeteroTradeGraph, replay: &[ReplaySample]) -> Result<HeteroTradeGraph> {
    if let Some(s) = replay.iter().find(|s| s.features.len() != g.feature_width()) {
        return Err(Error::Dimension(format!(
            "replay sample `{}` has {} features, graph expects {}",
            s.txn_id,
            s.features.len(),
            g.feature_width()
        )));
    }
    let mut out = g.clone();
    for s in replay {
        out.push(s)?;
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{test_record, Provenance};

    pub(crate) fn small_dataset() -> Dataset {
        Dataset::new(
            vec![
                test_record("t1", "c1", "m1", "2019-01-01 00:00:00", false),
                test_record("t2", "c1", "m2", "2019-01-01 23:59:00", true),
            ],
            Provenance::Ingested,
            None,
        )
    }

    #[test]
    fn deduplicates_entities() {
        let g = build_htg(&small_dataset()).unwrap();
        assert_eq!(g.num_nodes(NodeType::Transaction), 2);
        assert_eq!(g.num_nodes(NodeType::CardHolder), 1);
        assert_eq!(g.num_nodes(NodeType::Merchant), 2);
        assert_eq!(g.edges(EdgeType::TxnCardHolder), vec![(0, 0), (1, 0)]);
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn time_slices_are_hours() {
        let g = build_htg(&small_dataset()).unwrap();
        assert_eq!(g.entity_of(0, EdgeType::TxnTimeSlice), 0);
        assert_eq!(g.entity_of(1, EdgeType::TxnTimeSlice), 23);
        assert_eq!(g.time_slices(), vec![0, 23]);
        assert_eq!(g.num_nodes(NodeType::TimeSlice), 2);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(build_htg(&Dataset::new(vec![], Provenance::Ingested, None)).is_err());
    }

    #[test]
    fn labels_and_features_follow_records() {
        let ds = small_dataset();
        let g = build_htg(&ds).unwrap();
        assert_eq!(g.labels(), &[false, true]);
        assert_eq!(g.features().row(1), ds.records[1].features().as_slice());
    }

    #[test]
    fn empty_replay_is_identity() {
        let g = build_htg(&small_dataset()).unwrap();
        assert_eq!(merge_replay_into_htg(&g, &[]).unwrap(), g);
    }

    #[test]
    fn replay_appends_and_reuses_entities() {
        let g = build_htg(&small_dataset()).unwrap();
        let mut extra: Vec<ReplaySample> = (0..5)
            .map(|k| ReplaySample {
                txn_id: format!("r{k}"),
                features: vec![0.0; g.feature_width()],
                card_holder_id: "c9".into(),
                merchant_id: "m2".into(),
                time_slice: 5,
                is_fraud: k % 2 == 0,
            })
            .collect();
        let m = merge_replay_into_htg(&g, &extra).unwrap();
        assert_eq!(m.num_transactions(), 7);
        assert_eq!(m.labels().len(), 7);
        assert_eq!(m.num_nodes(NodeType::Merchant), 2);
        assert_eq!(m.num_nodes(NodeType::CardHolder), 2);
        for i in 0..2 {
            assert_eq!(m.sample(i), g.sample(i));
        }
        extra[0].features.push(1.0);
        assert!(matches!(merge_replay_into_htg(&g, &extra), Err(Error::Dimension(_))));
    }
}
