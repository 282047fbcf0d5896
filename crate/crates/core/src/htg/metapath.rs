use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EdgeType, HeteroTradeGraph, NodeType};
use crate::{Error, Result};

/// A typed node chain `T -R1-> X -R2-> T` with its composite relation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaPathSpec {
    name: String,
    node_types: Vec<NodeType>,
    relations: Vec<EdgeType>,
}

impl MetaPathSpec {
    /// Parses a chain of node-type letters such as `TCT`.
    pub fn from_name(name: &str) -> Result<Self> {
        let node_types = name
            .chars()
            .map(|c| {
                NodeType::from_letter(c).ok_or_else(|| Error::MetaPath(format!("unknown node type `{c}` in `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if node_types.len() != 3 {
            return Err(Error::MetaPath(format!(
                "`{name}`: only two-hop transaction meta-paths are supported"
            )));
        }
        if node_types[0] != NodeType::Transaction || node_types[2] != NodeType::Transaction {
            return Err(Error::MetaPath(format!("`{name}` must start and end at a transaction")));
        }
        let rel = EdgeType::for_entity(node_types[1]).ok_or_else(|| {
            Error::MetaPath(format!(
                "`{name}`: no relation between transactions and {:?}",
                node_types[1]
            ))
        })?;
        Ok(Self {
            name: name.to_string(),
            node_types,
            relations: vec![rel, rel],
        })
    }

    pub fn tct() -> Self {
        Self::from_name("TCT").expect("valid meta-path")
    }

    pub fn tmt() -> Self {
        Self::from_name("TMT").expect("valid meta-path")
    }

    pub fn tst() -> Self {
        Self::from_name("TST").expect("valid meta-path")
    }

    /// TCT, TMT and TST.
    pub fn standard() -> Vec<Self> {
        vec![Self::tct(), Self::tmt(), Self::tst()]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn relations(&self) -> &[EdgeType] {
        &self.relations
    }

    pub fn intermediate(&self) -> NodeType {
        self.node_types[1]
    }
}

impl fmt::Display for MetaPathSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Meta-path neighbour lists over transaction nodes.
///
/// Lists are stored in CSR form. When every neighbourhood is the class of an
/// equivalence relation (the case for all two-hop transaction meta-paths)
/// only one list per class is kept, and the model exploits the structure.
#[derive(Clone, Debug)]
pub struct MetaPathAdjacency {
    spec: MetaPathSpec,
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    /// Class index per node when lists are shared by class.
    class_of: Option<Vec<usize>>,
}

impl MetaPathAdjacency {
    /// Builds an adjacency from explicit neighbour lists. Lists may be in any
    /// order but must be nonempty and index valid nodes.
    pub fn from_neighbor_lists(spec: MetaPathSpec, lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for (i, l) in lists.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::MetaPath(format!("node {i} has an empty neighbourhood")));
            }
            if let Some(j) = l.iter().find(|&&j| j >= n) {
                return Err(Error::MetaPath(format!("node {i} lists out-of-range neighbour {j}")));
            }
            neighbors.extend_from_slice(l);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            spec,
            num_nodes: n,
            offsets,
            neighbors,
            class_of: None,
        })
    }

    /// Builds the adjacency in which each node's neighbours are all nodes of
    /// its class, itself included.
    pub fn from_classes(spec: MetaPathSpec, class_of: Vec<usize>) -> Self {
        let n_classes = class_of.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut offsets = vec![0usize; n_classes + 1];
        for &c in &class_of {
            offsets[c + 1] += 1;
        }
        for c in 0..n_classes {
            offsets[c + 1] += offsets[c];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0; class_of.len()];
        for (i, &c) in class_of.iter().enumerate() {
            neighbors[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            spec,
            num_nodes: class_of.len(),
            offsets,
            neighbors,
            class_of: Some(class_of),
        }
    }

    pub fn spec(&self) -> &MetaPathSpec {
        &self.spec
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of `(node, neighbour)` pairs.
    pub fn num_pairs(&self) -> usize {
        match &self.class_of {
            None => self.neighbors.len(),
            Some(_) => self.offsets.windows(2).map(|w| (w[1] - w[0]).pow(2)).sum(),
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        let r = self.class_of.as_ref().map_or(i, |c| c[i]);
        &self.neighbors[self.offsets[r]..self.offsets[r + 1]]
    }

    /// Member lists of the equivalence classes, if the adjacency has them.
    pub fn classes(&self) -> Option<impl Iterator<Item = &[usize]>> {
        self.class_of.as_ref()?;
        Some(
            self.offsets
                .windows(2)
                .map(|w| &self.neighbors[w[0]..w[1]])
                .filter(|m| !m.is_empty()),
        )
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes()).map(|i| self.neighbors(i).to_vec()).collect()
    }
}

impl PartialEq for MetaPathAdjacency {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.num_nodes == other.num_nodes
            && (0..self.num_nodes).all(|i| self.neighbors(i) == other.neighbors(i))
    }
}

/// `N_i = { j : i and j share the intermediate entity }`, which always
/// contains `i` itself; lists are ascending.
pub fn extract_metapath_neighbors(g: &HeteroTradeGraph, spec: &MetaPathSpec) -> Result<MetaPathAdjacency> {
    let edge = EdgeType::for_entity(spec.intermediate())
        .ok_or_else(|| Error::MetaPath(format!("`{spec}` has no transaction relation")))?;
    let n = g.num_transactions();
    if n > 0 && g.num_nodes(spec.intermediate()) == 0 {
        return Err(Error::MetaPath(format!("graph has no {:?} nodes", spec.intermediate())));
    }
    let n_entities = match spec.intermediate() {
        NodeType::TimeSlice => 24,
        t => g.num_nodes(t),
    };
    let class_of: Vec<usize> = (0..n).map(|t| g.entity_of(t, edge)).collect();
    debug_assert!(class_of.iter().all(|&c| c < n_entities));
    Ok(MetaPathAdjacency::from_classes(spec.clone(), class_of))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{test_record, Dataset, Provenance};
    use crate::htg::{build_htg, merge_replay_into_htg, ReplaySample};
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(g: &HeteroTradeGraph, edge: EdgeType) -> Vec<Vec<usize>> {
        let n = g.num_transactions();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| g.entity_of(i, edge) == g.entity_of(j, edge))
                    .collect()
            })
            .collect()
    }

    pub(crate) fn random_dataset(seed: u64, n: usize, cards: usize, merchants: usize) -> Dataset {
        let mut rng = crate::rng::rng_from_seed(seed);
        let recs = (0..n)
            .map(|i| {
                let ts = format!(
                    "2019-03-0{} {:02}:15:00",
                    1 + rng.random_range(0..5),
                    rng.random_range(0..24)
                );
                let mut r = test_record(
                    &format!("t{i}"),
                    &format!("c{}", rng.random_range(0..cards)),
                    &format!("m{}", rng.random_range(0..merchants)),
                    &ts,
                    rng.random::<f64>() < 0.2,
                );
                r.amount = rng.random_range(1.0..200.0);
                r
            })
            .collect();
        Dataset::new(recs, Provenance::Synthetic, Some(seed))
    }

    #[test]
    fn parses_standard_names() {
        assert_eq!(MetaPathSpec::tct().intermediate(), NodeType::CardHolder);
        assert_eq!(MetaPathSpec::tmt().relations(), &[EdgeType::TxnMerchant; 2]);
        assert_eq!(MetaPathSpec::tst().node_types()[1], NodeType::TimeSlice);
    }

    #[test]
    fn rejects_unknown_or_malformed_chains() {
        assert!(matches!(MetaPathSpec::from_name("TXT"), Err(Error::MetaPath(_))));
        assert!(MetaPathSpec::from_name("CTC").is_err());
        assert!(MetaPathSpec::from_name("TTT").is_err());
        assert!(MetaPathSpec::from_name("TCMT").is_err());
    }

    #[test]
    fn single_shared_card() {
        let ds = Dataset::new(
            vec![
                test_record("t1", "c1", "m1", "2019-01-01 00:00:00", false),
                test_record("t2", "c1", "m2", "2019-01-01 05:00:00", false),
            ],
            Provenance::Ingested,
            None,
        );
        let g = build_htg(&ds).unwrap();
        let tct = extract_metapath_neighbors(&g, &MetaPathSpec::tct()).unwrap();
        assert_eq!(tct.neighbors(0), &[0, 1]);
        let tmt = extract_metapath_neighbors(&g, &MetaPathSpec::tmt()).unwrap();
        assert_eq!(tmt.neighbors(0), &[0]);
        assert_eq!(tmt.neighbors(1), &[1]);
    }

    #[test]
    fn matches_brute_force_on_fifty_transactions() {
        let g = build_htg(&random_dataset(11, 50, 5, 12)).unwrap();
        for spec in MetaPathSpec::standard() {
            let adj = extract_metapath_neighbors(&g, &spec).unwrap();
            let edge = EdgeType::for_entity(spec.intermediate()).unwrap();
            assert_eq!(adj.to_lists(), brute_force(&g, edge), "{spec}");
        }
    }

    #[test]
    fn class_layout_matches_explicit_lists() {
        let g = build_htg(&random_dataset(3, 40, 4, 6)).unwrap();
        let adj = extract_metapath_neighbors(&g, &MetaPathSpec::tct()).unwrap();
        let lists = MetaPathAdjacency::from_neighbor_lists(MetaPathSpec::tct(), &adj.to_lists()).unwrap();
        assert_eq!(adj, lists);
        assert_eq!(adj.num_pairs(), lists.num_pairs());
        assert!(lists.classes().is_none());
        let covered: usize = adj.classes().unwrap().map(<[usize]>::len).sum();
        assert_eq!(covered, 40);
    }

    #[test]
    fn merged_replay_links_through_shared_merchant() {
        let g = build_htg(&random_dataset(5, 20, 3, 4)).unwrap();
        let mut s = ReplaySample::from_record(&test_record("new", "zz", "m1", "2019-01-01 00:00:00", true));
        s.features = vec![0.0; g.feature_width()];
        let m = merge_replay_into_htg(&g, &[s]).unwrap();
        let adj = extract_metapath_neighbors(&m, &MetaPathSpec::tmt()).unwrap();
        let new = m.num_transactions() - 1;
        assert_eq!(adj.to_lists(), brute_force(&m, EdgeType::TxnMerchant));
        let olds: Vec<usize> = adj.neighbors(new).iter().copied().filter(|&j| j != new).collect();
        assert!(!olds.is_empty());
        for j in olds {
            assert!(adj.neighbors(j).contains(&new));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn symmetric_with_self_loops(seed in any::<u64>(), n in 1usize..60) {
            let g = build_htg(&random_dataset(seed, n, 4, 7)).unwrap();
            for spec in MetaPathSpec::standard() {
                let adj = extract_metapath_neighbors(&g, &spec).unwrap();
                for i in 0..n {
                    prop_assert!(adj.neighbors(i).contains(&i));
                    prop_assert!(adj.neighbors(i).windows(2).all(|w| w[0] < w[1]));
                    for &j in adj.neighbors(i) {
                        prop_assert!(adj.neighbors(j).contains(&i));
                    }
                }
            }
        }

        #[test]
        fn merge_equals_build_on_concatenation(seed in any::<u64>(), n in 2usize..40, k in 0usize..20) {
            let ds = random_dataset(seed, n, 3, 5);
            let extra = random_dataset(seed ^ 0xabc, k, 5, 8);
            let mut joined = ds.clone();
            for (i, r) in extra.records.iter().enumerate() {
                let mut r = r.clone();
                r.txn_id = format!("x{i}");
                joined.records.push(r);
            }
            let replay: Vec<ReplaySample> = joined.records[n..].iter().map(ReplaySample::from_record).collect();
            let merged = merge_replay_into_htg(&build_htg(&ds).unwrap(), &replay).unwrap();
            prop_assert_eq!(merged, build_htg(&joined).unwrap());
        }
    }
}
