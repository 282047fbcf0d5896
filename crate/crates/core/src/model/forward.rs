use super::{Hyperparams, ModelParams, Tensor};
use crate::htg::{HeteroTradeGraph, MetaPathAdjacency};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::{Error, Result};

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub(crate) fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `h_i = W_x x_i` for every row of `x`.
pub fn project_features(x: &Matrix, params: &ModelParams) -> Result<Matrix> {
    let (hidden, d_in) = (params.hidden(), params.input_width());
    if x.cols() != d_in {
        return Err(Error::Dimension(format!(
            "features have width {}, projection expects {d_in}",
            x.cols()
        )));
    }
    let mut h = Matrix::zeros(x.rows(), hidden);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let hi = h.row_mut(i);
        for (r, out) in hi.iter_mut().enumerate() {
            *out = dot(params.w_x.row(r), xi);
        }
    }
    Ok(h)
}

/// Attention logits of one head: `e_ij = LeakyReLU(target_i + neighbor_j)`,
/// and the log partition function of each node's neighbourhood.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadScores {
    pub target: Vec<f64>,
    pub neighbor: Vec<f64>,
    pub log_norm: Vec<f64>,
}

impl HeadScores {
    /// Attention coefficient of neighbour `j` in node `i`'s neighbourhood.
    #[inline]
    pub fn alpha(&self, i: usize, j: usize, slope: f64) -> f64 {
        (leaky_relu(self.target[i] + self.neighbor[j], slope) - self.log_norm[i]).exp()
    }

    /// Coefficients of node `i` in the order of its neighbour list.
    pub fn coefficients(&self, adj: &MetaPathAdjacency, i: usize, slope: f64) -> Vec<f64> {
        adj.neighbors(i).iter().map(|&j| self.alpha(i, j, slope)).collect()
    }
}

/// One attention head over one meta-path.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAttention {
    pub scores: HeadScores,
    /// Aggregated head slice before the nonlinearity, `n x head_width`.
    pub pre: Matrix,
    pub z: Matrix,
}

/// Per-node attention scores `(target, neighbour)` for one head.
fn head_scores(h: &Matrix, att: &Tensor, head: usize, head_width: usize) -> (Vec<f64>, Vec<f64>) {
    let a = att.row(head);
    let (a_t, a_n) = a.split_at(head_width);
    let off = head * head_width;
    let mut s_t = Vec::with_capacity(h.rows());
    let mut s_n = Vec::with_capacity(h.rows());
    for i in 0..h.rows() {
        let hi = &h.row(i)[off..off + head_width];
        s_t.push(dot(a_t, hi));
        s_n.push(dot(a_n, hi));
    }
    (s_t, s_n)
}

/// Ranks `members` by descending `key` and returns the sorted keys alongside.
pub(crate) fn sort_desc(members: &[usize], key: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
    let keys = order.iter().map(|&j| key[j]).collect();
    (order, keys)
}

/// Number of leading entries of a descending sequence that exceed `bound`.
#[inline]
pub(crate) fn count_above(desc: &[f64], bound: f64) -> usize {
    desc.partition_point(|&v| v > bound)
}

/// Prefix sums over `order` of `w_j` and `w_j v_j` (`v_j` a row slice), plus
/// the matching suffix sums of `u_j` and `u_j v_j`. Suffixes are accumulated
/// separately rather than by subtraction.
pub(crate) struct SplitSums {
    pub width: usize,
    pub pre_w: Vec<f64>,
    pub pre_v: Vec<f64>,
    pub suf_w: Vec<f64>,
    pub suf_v: Vec<f64>,
}

impl SplitSums {
    pub fn new<'a>(
        order: &[usize],
        width: usize,
        weights: impl Fn(usize) -> (f64, f64),
        row: impl Fn(usize) -> &'a [f64],
    ) -> Self {
        let g = order.len();
        let mut pre_w = vec![0.0; g + 1];
        let mut pre_v = vec![0.0; (g + 1) * width];
        let mut suf_w = vec![0.0; g + 1];
        let mut suf_v = vec![0.0; (g + 1) * width];
        let ws: Vec<(f64, f64)> = order.iter().map(|&j| weights(j)).collect();
        for (k, &j) in order.iter().enumerate() {
            let (w, v) = (ws[k].0, &row(j)[..width]);
            pre_w[k + 1] = pre_w[k] + w;
            let (prev, next) = pre_v.split_at_mut((k + 1) * width);
            for ((nx, pv), x) in next[..width].iter_mut().zip(&prev[k * width..]).zip(v) {
                *nx = pv + w * x;
            }
        }
        for k in (0..g).rev() {
            let (u, v) = (ws[k].1, &row(order[k])[..width]);
            suf_w[k] = suf_w[k + 1] + u;
            let (cur, next) = suf_v.split_at_mut((k + 1) * width);
            for ((cv, nx), x) in cur[k * width..].iter_mut().zip(&next[..width]).zip(v) {
                *cv = nx + u * x;
            }
        }
        Self {
            width,
            pre_w,
            pre_v,
            suf_w,
            suf_v,
        }
    }

    pub fn prefix(&self, k: usize) -> (f64, &[f64]) {
        (self.pre_w[k], &self.pre_v[k * self.width..(k + 1) * self.width])
    }

    pub fn suffix(&self, k: usize) -> (f64, &[f64]) {
        (self.suf_w[k], &self.suf_v[k * self.width..(k + 1) * self.width])
    }
}

/// `(exp(c - L), exp(slope c - L))` with `L = LeakyReLU(c)`: the factors
/// splitting `exp(LeakyReLU(t + n))` into positive and negative branches
/// relative to the class maximum.
#[inline]
pub(crate) fn branch_factors(c: f64, slope: f64) -> (f64, f64, f64) {
    let l = leaky_relu(c, slope);
    ((c - l).exp(), (slope * c - l).exp(), l)
}

/// Softmax-normalised attention over each node's meta-path neighbours and
/// the activated weighted sum of their head slices.
pub fn node_level_attention(
    h: &Matrix,
    adj: &MetaPathAdjacency,
    att: &Tensor,
    head: usize,
    hp: &Hyperparams,
) -> Result<HeadAttention> {
    let n = h.rows();
    let dh = hp.head_width();
    if adj.num_nodes() != n {
        return Err(Error::Dimension(format!(
            "adjacency over {} nodes, features over {n}",
            adj.num_nodes()
        )));
    }
    if head >= hp.heads || att.shape != [hp.heads, 2 * dh] || h.cols() != hp.hidden {
        return Err(Error::Dimension(format!(
            "head {head} does not fit attention tensor {:?}",
            att.shape
        )));
    }
    let (s_t, s_n) = head_scores(h, att, head, dh);
    let mut out = HeadAttention {
        scores: HeadScores {
            target: s_t,
            neighbor: s_n,
            log_norm: vec![0.0; n],
        },
        pre: Matrix::zeros(n, dh),
        z: Matrix::zeros(n, dh),
    };
    match adj.classes() {
        Some(classes) => {
            for members in classes {
                aggregate_class(h, members, head * dh, hp.leaky_slope, &mut out);
            }
        }
        None => {
            for i in 0..n {
                aggregate_lists(h, adj.neighbors(i), i, head * dh, hp.leaky_slope, &mut out)?;
            }
        }
    }
    for (zv, sv) in out.z.data_mut().iter_mut().zip(out.pre.data()) {
        *zv = hp.activation.apply(*sv);
    }
    Ok(out)
}

fn aggregate_lists(
    h: &Matrix,
    nbrs: &[usize],
    i: usize,
    off: usize,
    slope: f64,
    out: &mut HeadAttention,
) -> Result<()> {
    if nbrs.is_empty() {
        return Err(Error::MetaPath(format!("node {i} has no neighbours")));
    }
    let dh = out.pre.cols();
    let sc = &mut out.scores;
    let mut m = f64::NEG_INFINITY;
    for &j in nbrs {
        m = m.max(leaky_relu(sc.target[i] + sc.neighbor[j], slope));
    }
    let s = out.pre.row_mut(i);
    let mut total = 0.0;
    for &j in nbrs {
        let w = (leaky_relu(sc.target[i] + sc.neighbor[j], slope) - m).exp();
        total += w;
        for (sv, hv) in s.iter_mut().zip(&h.row(j)[off..off + dh]) {
            *sv += w * hv;
        }
    }
    let inv = 1.0 / total;
    s.iter_mut().for_each(|v| *v *= inv);
    sc.log_norm[i] = m + total.ln();
    Ok(())
}

/// Every member of a class attends over the whole class. Sorting neighbours
/// by score splits each target's sum into a positive-branch prefix and a
/// negative-branch suffix, so a class costs `O(g log g + g d)` instead of
/// `O(g^2 d)`.
fn aggregate_class(h: &Matrix, members: &[usize], off: usize, slope: f64, out: &mut HeadAttention) {
    let dh = out.pre.cols();
    let sc = &mut out.scores;
    let (order, keys) = sort_desc(members, &sc.neighbor);
    let top = keys[0];
    let sums = SplitSums::new(
        &order,
        dh,
        |j| {
            let d = sc.neighbor[j] - top;
            (d.exp(), (slope * d).exp())
        },
        |j| &h.row(j)[off..],
    );
    for &i in members {
        let k = count_above(&keys, -sc.target[i]);
        let (fp, fn_, l) = branch_factors(sc.target[i] + top, slope);
        let (wp, vp) = sums.prefix(k);
        let (wn, vn) = sums.suffix(k);
        let total = fp * wp + fn_ * wn;
        let inv = 1.0 / total;
        for ((sv, a), b) in out.pre.row_mut(i).iter_mut().zip(vp).zip(vn) {
            *sv = (fp * a + fn_ * b) * inv;
        }
        sc.log_norm[i] = l + total.ln();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticAttention {
    /// Path importance before normalisation.
    pub logits: Vec<f64>,
    pub beta: Vec<f64>,
    pub fused: Matrix,
    /// `tanh(W' z_i + b)` per path, `n x semantic_hidden`.
    pub tanh: Vec<Matrix>,
}

/// Path importance `w_P = mean_i q . tanh(W' z_i^P + b)`, softmax weights and
/// the weighted sum of path embeddings.
pub fn semantic_attention(z_list: &[&Matrix], params: &ModelParams) -> Result<SemanticAttention> {
    let first = z_list
        .first()
        .ok_or_else(|| Error::Dimension("semantic attention needs at least one path".into()))?;
    let (n, width) = (first.rows(), first.cols());
    if z_list.iter().any(|z| z.rows() != n || z.cols() != width) {
        return Err(Error::Dimension("path embeddings differ in shape".into()));
    }
    if width != params.hidden() {
        return Err(Error::Dimension(format!(
            "path embeddings have width {width}, semantic layer expects {}",
            params.hidden()
        )));
    }
    if n == 0 {
        return Err(Error::Empty("semantic attention over zero nodes".into()));
    }
    let sd = params.semantic_hidden();
    // Column-major copy of W' so each row of tanh(W' z + b) is built from
    // contiguous updates.
    let mut w_t = Matrix::zeros(width, sd);
    for r in 0..sd {
        for (c, v) in params.sem_w.row(r).iter().enumerate() {
            w_t.row_mut(c)[r] = *v;
        }
    }
    let mut logits = Vec::with_capacity(z_list.len());
    let mut tanh = Vec::with_capacity(z_list.len());
    for z in z_list {
        let mut t = Matrix::zeros(n, sd);
        let mut w = 0.0;
        for i in 0..n {
            let ti = t.row_mut(i);
            ti.copy_from_slice(&params.sem_b.data);
            for (c, &zc) in z.row(i).iter().enumerate() {
                if zc != 0.0 {
                    crate::linalg::axpy(zc, w_t.row(c), ti);
                }
            }
            ti.iter_mut().for_each(|v| *v = v.tanh());
            w += dot(&params.sem_q.data, ti);
        }
        logits.push(w / n as f64);
        tanh.push(t);
    }
    let mut beta = vec![0.0; logits.len()];
    crate::linalg::softmax_into(&logits, &mut beta);
    let mut fused = Matrix::zeros(n, width);
    for (b, z) in beta.iter().zip(z_list) {
        crate::linalg::axpy(*b, z.data(), fused.data_mut());
    }
    Ok(SemanticAttention {
        logits,
        beta,
        fused,
        tanh,
    })
}

/// `(logits, predictions)` with `y_i = sigmoid(eps . [z_i ‖ 1])`.
pub fn classify(z: &Matrix, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = params.hidden();
    if z.cols() != h {
        return Err(Error::Dimension(format!(
            "embeddings have width {}, classifier expects {h}",
            z.cols()
        )));
    }
    let (w, bias) = params.clf_w.data.split_at(h);
    let logits: Vec<f64> = (0..z.rows()).map(|i| dot(w, z.row(i)) + bias[0]).collect();
    let preds = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok((logits, preds))
}

/// Mean binary cross-entropy with clamped predictions.
pub fn cross_entropy_loss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("cross-entropy over zero predictions".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathTrace {
    pub heads: Vec<HeadScores>,
    /// Concatenated head pre-activations, `n x hidden`.
    pub pre: Matrix,
    /// Concatenated head embeddings `Z_P`, `n x hidden`.
    pub z: Matrix,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub h: Matrix,
    pub paths: Vec<PathTrace>,
    pub semantic: SemanticAttention,
    pub logits: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl ForwardTrace {
    pub fn beta(&self) -> &[f64] {
        &self.semantic.beta
    }

    /// Mean cross-entropy over `nodes`.
    pub fn loss(&self, labels: &[f64], nodes: &[usize]) -> Result<f64> {
        let p: Vec<f64> = nodes.iter().map(|&i| self.predictions[i]).collect();
        let y: Vec<f64> = nodes.iter().map(|&i| labels[i]).collect();
        cross_entropy_loss(&p, &y)
    }
}

pub(crate) fn check_shapes(
    n: usize,
    d_in: usize,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
) -> Result<()> {
    hp.validate()?;
    if params.hidden() != hp.hidden || params.heads() != hp.heads || params.semantic_hidden() != hp.semantic_hidden {
        return Err(Error::Dimension("parameters do not match hyperparameters".into()));
    }
    if params.input_width() != d_in {
        return Err(Error::Dimension(format!(
            "graph features have width {d_in}, parameters expect {}",
            params.input_width()
        )));
    }
    if adjs.len() != params.node_att.len() {
        return Err(Error::Dimension(format!(
            "{} adjacencies for {} attention tensors",
            adjs.len(),
            params.node_att.len()
        )));
    }
    if let Some(a) = adjs.iter().find(|a| a.num_nodes() != n) {
        return Err(Error::Dimension(format!(
            "{} adjacency covers {} of {n} nodes",
            a.spec(),
            a.num_nodes()
        )));
    }
    Ok(())
}

pub(crate) fn forward_features(
    x: &Matrix,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
) -> Result<ForwardTrace> {
    check_shapes(x.rows(), x.cols(), adjs, params, hp)?;
    let h = project_features(x, params)?;
    let n = h.rows();
    let dh = hp.head_width();
    let mut paths = Vec::with_capacity(adjs.len());
    for (adj, att) in adjs.iter().zip(&params.node_att) {
        let mut pre = Matrix::zeros(n, hp.hidden);
        let mut z = Matrix::zeros(n, hp.hidden);
        let mut heads = Vec::with_capacity(hp.heads);
        for k in 0..hp.heads {
            let head = node_level_attention(&h, adj, att, k, hp)?;
            for i in 0..n {
                pre.row_mut(i)[k * dh..(k + 1) * dh].copy_from_slice(head.pre.row(i));
                z.row_mut(i)[k * dh..(k + 1) * dh].copy_from_slice(head.z.row(i));
            }
            heads.push(head.scores);
        }
        paths.push(PathTrace { heads, pre, z });
    }
    let z_refs: Vec<&Matrix> = paths.iter().map(|p| &p.z).collect();
    let semantic = semantic_attention(&z_refs, params)?;
    let (logits, predictions) = classify(&semantic.fused, params)?;
    Ok(ForwardTrace {
        h,
        paths,
        semantic,
        logits,
        predictions,
    })
}

/// Projection, multi-head node attention per meta-path with head
/// concatenation, semantic fusion and classification.
pub fn forward(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
) -> Result<ForwardTrace> {
    forward_features(g.features(), adjs, params, hp)
}
