use super::forward::{
    branch_factors, count_above, forward_features, leaky_relu, sort_desc, ForwardTrace, HeadScores, SplitSums,
};
use super::{Activation, Hyperparams, ModelParams, Tensor};
use crate::htg::{HeteroTradeGraph, MetaPathAdjacency};
use crate::linalg::{axpy, dot, Matrix};
use crate::{Error, Result};

/// An additive objective term over parameters alone.
pub trait LossTerm {
    fn value(&self, params: &ModelParams) -> f64;
    fn add_gradient(&self, params: &ModelParams, grad: &mut ModelParams);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// Data loss plus every extra term.
    pub loss: f64,
    pub data_loss: f64,
    pub grads: ModelParams,
}

/// Dense gradient rows for the projected features, remembering which rows
/// were written so they can be folded into `dW_x` and cleared cheaply.
struct RowAccumulator {
    rows: Matrix,
    touched: Vec<usize>,
    marked: Vec<bool>,
}

impl RowAccumulator {
    fn new(n: usize, width: usize) -> Self {
        Self {
            rows: Matrix::zeros(n, width),
            touched: Vec::new(),
            marked: vec![false; n],
        }
    }

    #[inline]
    fn row(&mut self, i: usize) -> &mut [f64] {
        if !self.marked[i] {
            self.marked[i] = true;
            self.touched.push(i);
        }
        self.rows.row_mut(i)
    }

    /// `dW_x += dh_i x_i^T` over touched rows, then resets them.
    fn drain_into(&mut self, x: &Matrix, w_x: &mut Tensor) {
        for &i in &self.touched {
            let xi = x.row(i);
            for (r, &d) in self.rows.row(i).iter().enumerate() {
                if d != 0.0 {
                    axpy(d, xi, w_x.row_mut(r));
                }
            }
            self.rows.row_mut(i).fill(0.0);
            self.marked[i] = false;
        }
        self.touched.clear();
    }
}

/// Read-only state of one head of one meta-path.
struct HeadView<'a> {
    h: &'a Matrix,
    scores: &'a HeadScores,
    pre: &'a Matrix,
    off: usize,
    dh: usize,
    slope: f64,
    a_t: &'a [f64],
    a_n: &'a [f64],
}

impl<'a> HeadView<'a> {
    fn new(trace: &'a ForwardTrace, params: &'a ModelParams, hp: &Hyperparams, p: usize, k: usize) -> Self {
        let dh = hp.head_width();
        let (a_t, a_n) = params.node_att[p].row(k).split_at(dh);
        Self {
            h: &trace.h,
            scores: &trace.paths[p].heads[k],
            pre: &trace.paths[p].pre,
            off: k * dh,
            dh,
            slope: hp.leaky_slope,
            a_t,
            a_n,
        }
    }

    #[inline]
    fn h_slice(&self, j: usize) -> &'a [f64] {
        &self.h.row(j)[self.off..self.off + self.dh]
    }

    #[inline]
    fn pre_slice(&self, i: usize) -> &'a [f64] {
        &self.pre.row(i)[self.off..self.off + self.dh]
    }
}

fn activation_grad(dz: &[f64], pre: &[f64], act: Activation, out: &mut [f64]) {
    for ((o, d), s) in out.iter_mut().zip(dz).zip(pre) {
        *o = d * act.derivative(*s);
    }
}

/// Backpropagates `ds` (gradient of node `i`'s aggregated head slice) over
/// its neighbour list, one edge at a time.
fn target_backward(v: &HeadView, i: usize, nbrs: &[usize], ds: &[f64], acc: &mut RowAccumulator, datt: &mut [f64]) {
    let (da_t, da_n) = datt.split_at_mut(v.dh);
    let c = dot(ds, v.pre_slice(i));
    let t_i = v.scores.target[i];
    let ln_i = v.scores.log_norm[i];
    let mut dsl = 0.0;
    for &j in nbrs {
        let r = t_i + v.scores.neighbor[j];
        let alpha = (leaky_relu(r, v.slope) - ln_i).exp();
        let hj = v.h_slice(j);
        let dr = alpha * (dot(ds, hj) - c) * if r > 0.0 { 1.0 } else { v.slope };
        dsl += dr;
        let row = &mut acc.row(j)[v.off..v.off + v.dh];
        for ((o, d), a) in row.iter_mut().zip(ds).zip(v.a_n) {
            *o += alpha * d + dr * a;
        }
        axpy(dr, hj, da_n);
    }
    axpy(dsl, v.a_t, &mut acc.row(i)[v.off..v.off + v.dh]);
    axpy(dsl, v.h_slice(i), da_t);
}

/// Backward pass for a class whose members all attend over the whole class,
/// using the same prefix/suffix split as the forward pass on both the
/// neighbour side and the target side.
fn class_backward(v: &HeadView, members: &[usize], ds: &Matrix, acc: &mut RowAccumulator, datt: &mut [f64]) {
    let dh = v.dh;
    let sc = v.scores;
    let (da_t, da_n) = datt.split_at_mut(dh);
    let (order, keys) = sort_desc(members, &sc.neighbor);
    let top = keys[0];
    let nsums = SplitSums::new(
        &order,
        dh,
        |j| {
            let d = sc.neighbor[j] - top;
            (d.exp(), (v.slope * d).exp())
        },
        |j| v.h_slice(j),
    );
    let g = members.len();
    let mut ext = Matrix::zeros(g, dh + 1);
    let mut mu = vec![(0.0, 0.0); g];
    for (a, &i) in members.iter().enumerate() {
        let k = count_above(&keys, -sc.target[i]);
        let (fp, fm, _) = branch_factors(sc.target[i] + top, v.slope);
        let (wp, vp) = nsums.prefix(k);
        let (wn, vn) = nsums.suffix(k);
        let inv = 1.0 / (fp * wp + fm * wn);
        let (mp, mm) = (fp * inv, fm * inv);
        let dsi = ds.row(i);
        let c = dot(dsi, v.pre_slice(i));
        let dsl = mp * (dot(dsi, vp) - c * wp) + v.slope * mm * (dot(dsi, vn) - c * wn);
        axpy(dsl, v.a_t, &mut acc.row(i)[v.off..v.off + dh]);
        axpy(dsl, v.h_slice(i), da_t);
        let e = ext.row_mut(a);
        e[..dh].copy_from_slice(dsi);
        e[dh] = c;
        mu[a] = (mp, mm);
    }
    let local: Vec<usize> = (0..g).collect();
    let t_loc: Vec<f64> = members.iter().map(|&i| sc.target[i]).collect();
    let (torder, tkeys) = sort_desc(&local, &t_loc);
    let tsums = SplitSums::new(&torder, dh + 1, |a| mu[a], |a| ext.row(a));
    for &j in members {
        let k = count_above(&tkeys, -sc.neighbor[j]);
        let (_, rp) = tsums.prefix(k);
        let (_, rn) = tsums.suffix(k);
        let d = sc.neighbor[j] - top;
        let (ep, em) = (d.exp(), (v.slope * d).exp());
        let hj = v.h_slice(j);
        let dsr = ep * (dot(hj, &rp[..dh]) - rp[dh]) + v.slope * em * (dot(hj, &rn[..dh]) - rn[dh]);
        let row = &mut acc.row(j)[v.off..v.off + dh];
        for (((o, p), m), a) in row.iter_mut().zip(&rp[..dh]).zip(&rn[..dh]).zip(v.a_n) {
            *o += ep * p + em * m + dsr * a;
        }
        axpy(dsr, hj, da_n);
    }
}

fn softmax_backward(beta: &[f64], dbeta: &[f64]) -> Vec<f64> {
    let s: f64 = beta.iter().zip(dbeta).map(|(b, d)| b * d).sum();
    beta.iter().zip(dbeta).map(|(b, d)| b * (d - s)).collect()
}

/// Gradient of `sum_i dlogit_i * logit_i + sum_P dw_extra_P * w_P` with
/// respect to every parameter.
fn backward_from(
    x: &Matrix,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    dlogit: &[f64],
    dw_extra: Option<&[f64]>,
) -> ModelParams {
    let n = x.rows();
    let hidden = hp.hidden;
    let dh = hp.head_width();
    let mut grad = params.zeros_like();
    let eps = &params.clf_w.data[..hidden];
    let sem = &trace.semantic;
    for (i, &g) in dlogit.iter().enumerate() {
        if g != 0.0 {
            axpy(g, sem.fused.row(i), &mut grad.clf_w.data[..hidden]);
            grad.clf_w.data[hidden] += g;
        }
    }
    let dbeta: Vec<f64> = trace
        .paths
        .iter()
        .map(|p| {
            dlogit
                .iter()
                .enumerate()
                .filter(|(_, g)| **g != 0.0)
                .map(|(i, g)| g * dot(eps, p.z.row(i)))
                .sum()
        })
        .collect();
    let mut dw = softmax_backward(&sem.beta, &dbeta);
    if let Some(extra) = dw_extra {
        dw.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
    }
    let mut acc = RowAccumulator::new(n, hidden);
    let mut du = vec![0.0; hp.semantic_hidden];
    let mut ds = Matrix::zeros(n, dh);
    for (p, path) in trace.paths.iter().enumerate() {
        let mut dz = Matrix::zeros(n, hidden);
        let mut any = false;
        for (i, &g) in dlogit.iter().enumerate() {
            if g != 0.0 {
                axpy(sem.beta[p] * g, eps, dz.row_mut(i));
                any = true;
            }
        }
        if dw[p] != 0.0 {
            any = true;
            let scale = dw[p] / n as f64;
            for i in 0..n {
                let t = sem.tanh[p].row(i);
                axpy(scale, t, &mut grad.sem_q.data);
                for ((u, q), tv) in du.iter_mut().zip(&params.sem_q.data).zip(t) {
                    *u = scale * q * (1.0 - tv * tv);
                }
                axpy(1.0, &du, &mut grad.sem_b.data);
                let zi = path.z.row(i);
                let dzi = dz.row_mut(i);
                for (r, &u) in du.iter().enumerate() {
                    if u != 0.0 {
                        axpy(u, zi, grad.sem_w.row_mut(r));
                        axpy(u, params.sem_w.row(r), dzi);
                    }
                }
            }
        }
        if !any {
            continue;
        }
        for k in 0..hp.heads {
            let v = HeadView::new(trace, params, hp, p, k);
            for i in 0..n {
                let (zr, pr) = (&dz.row(i)[v.off..v.off + dh], v.pre_slice(i));
                activation_grad(zr, pr, hp.activation, ds.row_mut(i));
            }
            let datt = grad.node_att[p].row_mut(k);
            match adjs[p].classes() {
                Some(classes) => {
                    for members in classes {
                        class_backward(&v, members, &ds, &mut acc, datt);
                    }
                }
                None => {
                    for i in 0..n {
                        target_backward(&v, i, adjs[p].neighbors(i), ds.row(i), &mut acc, datt);
                    }
                }
            }
        }
    }
    acc.drain_into(x, &mut grad.w_x);
    grad
}

fn check_nodes(nodes: &[usize], n: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::Empty("loss over zero nodes".into()));
    }
    if let Some(i) = nodes.iter().find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("node {i} out of range for {n} transactions")));
    }
    Ok(())
}

fn check_trace(trace: &ForwardTrace, n: usize, paths: usize) -> Result<()> {
    if trace.predictions.len() != n || trace.paths.len() != paths {
        return Err(Error::Dimension("forward trace does not belong to this graph".into()));
    }
    Ok(())
}

/// Gradient of the mean cross-entropy over `nodes` given a forward trace.
/// The clamp on predictions is treated as the identity.
pub fn backward(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    nodes: &[usize],
) -> Result<ModelParams> {
    let n = g.num_transactions();
    check_nodes(nodes, n)?;
    check_trace(trace, n, adjs.len())?;
    let labels = g.labels();
    let mut dlogit = vec![0.0; n];
    let inv = 1.0 / nodes.len() as f64;
    for &i in nodes {
        dlogit[i] += (trace.predictions[i] - if labels[i] { 1.0 } else { 0.0 }) * inv;
    }
    Ok(backward_from(g.features(), adjs, params, hp, trace, &dlogit, None))
}

/// Forward pass, data loss over `nodes` and its gradient, plus extra terms.
pub fn compute_gradients(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
    nodes: &[usize],
    extra: &[&dyn LossTerm],
) -> Result<Gradients> {
    let trace = forward_features(g.features(), adjs, params, hp)?;
    let data_loss = trace.loss(&g.label_values(), nodes)?;
    let mut grads = backward(g, adjs, params, hp, &trace, nodes)?;
    let mut loss = data_loss;
    for term in extra {
        loss += term.value(params);
        term.add_gradient(params, &mut grads);
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    Ok(Gradients { loss, data_loss, grads })
}

/// Visits the exact gradient of each node's own (unaveraged) cross-entropy.
///
/// A node's loss reaches the parameters through its own neighbourhood and
/// through the path importances, which pool every node. The pooled part is
/// `sum_P (dl/dw_P) grad(w_P)`, so `grad(w_P)` is computed once per path and
/// each node only pays for its neighbourhood.
pub fn per_sample_gradients(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    nodes: &[usize],
    mut visit: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<()> {
    let n = g.num_transactions();
    check_nodes(nodes, n)?;
    check_trace(trace, n, adjs.len())?;
    let x = g.features();
    let labels = g.labels();
    let hidden = hp.hidden;
    let dh = hp.head_width();
    let n_paths = adjs.len();
    let zero_logits = vec![0.0; n];
    let path_grads: Vec<ModelParams> = (0..n_paths)
        .map(|p| {
            let mut e = vec![0.0; n_paths];
            e[p] = 1.0;
            backward_from(x, adjs, params, hp, trace, &zero_logits, Some(&e))
        })
        .collect();
    let eps = &params.clf_w.data[..hidden];
    let beta = &trace.semantic.beta;
    let mut grad = params.zeros_like();
    let mut acc = RowAccumulator::new(n, hidden);
    let mut dz = vec![0.0; dh];
    let mut ds = vec![0.0; dh];
    for &i in nodes {
        grad.fill(0.0);
        let gi = trace.predictions[i] - if labels[i] { 1.0 } else { 0.0 };
        axpy(gi, trace.semantic.fused.row(i), &mut grad.clf_w.data[..hidden]);
        grad.clf_w.data[hidden] = gi;
        let dbeta: Vec<f64> = trace.paths.iter().map(|p| gi * dot(eps, p.z.row(i))).collect();
        let dw = softmax_backward(beta, &dbeta);
        for (gp, &d) in path_grads.iter().zip(&dw) {
            if d != 0.0 {
                grad.zip_apply(gp, |a, b| *a += d * b);
            }
        }
        for p in 0..n_paths {
            for k in 0..hp.heads {
                let v = HeadView::new(trace, params, hp, p, k);
                for (o, e) in dz.iter_mut().zip(&eps[v.off..v.off + dh]) {
                    *o = beta[p] * gi * e;
                }
                activation_grad(&dz, v.pre_slice(i), hp.activation, &mut ds);
                target_backward(&v, i, adjs[p].neighbors(i), &ds, &mut acc, grad.node_att[p].row_mut(k));
            }
        }
        acc.drain_into(x, &mut grad.w_x);
        visit(i, &grad)?;
    }
    Ok(())
}
