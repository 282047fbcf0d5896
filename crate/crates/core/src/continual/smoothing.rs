use crate::htg::{HeteroTradeGraph, MetaPathAdjacency};
use crate::model::{forward, per_sample_gradients, Hyperparams, LossTerm, ModelParams};
use crate::{Error, Result};

/// What a finished task hands to the next: diagonal Fisher importances, the
/// parameters they were measured at, and the smoothing weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherState {
    pub fisher: ModelParams,
    pub anchor: ModelParams,
    pub lambda: f64,
    pub gamma: f64,
}

fn norm(p: &ModelParams) -> f64 {
    p.tensors().flat_map(|t| &t.data).map(|v| v * v).sum::<f64>().sqrt()
}

impl FisherState {
    pub fn new(fisher: ModelParams, anchor: ModelParams, lambda: f64, gamma: f64) -> Result<Self> {
        if !fisher.same_layout(&anchor) {
            return Err(Error::Dimension("Fisher and anchor layouts differ".into()));
        }
        if fisher
            .tensors()
            .flat_map(|t| &t.data)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::NonFinite("Fisher entries must be finite and nonnegative".into()));
        }
        for (name, v) in [("lambda", lambda), ("gamma", gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(Self {
            fisher,
            anchor,
            lambda,
            gamma,
        })
    }

    pub fn check_layout(&self, params: &ModelParams) -> Result<()> {
        if self.anchor.same_layout(params) {
            Ok(())
        } else {
            Err(Error::Dimension(
                "parameters do not match the Fisher anchor layout".into(),
            ))
        }
    }

    /// `sum_k F_k (theta_k - anchor_k)^2`
    pub fn weighted_distance(&self, params: &ModelParams) -> f64 {
        let mut total = 0.0;
        for ((f, a), p) in self.fisher.tensors().zip(self.anchor.tensors()).zip(params.tensors()) {
            for ((fv, av), pv) in f.data.iter().zip(&a.data).zip(&p.data) {
                let d = pv - av;
                total += fv * d * d;
            }
        }
        total
    }
}

impl LossTerm for FisherState {
    fn value(&self, params: &ModelParams) -> f64 {
        0.5 * self.lambda * self.weighted_distance(params) + self.gamma * (norm(params) + norm(&self.anchor))
    }

    /// `lambda F (theta - anchor) + gamma theta / |theta|`, with the norm's
    /// subgradient taken as zero at the origin.
    fn add_gradient(&self, params: &ModelParams, grad: &mut ModelParams) {
        let n = norm(params);
        let shrink = if n > 0.0 { self.gamma / n } else { 0.0 };
        let iter = grad
            .tensors_mut()
            .zip(params.tensors())
            .zip(self.fisher.tensors().zip(self.anchor.tensors()));
        for ((g, p), (f, a)) in iter {
            for (((gv, pv), fv), av) in g.data.iter_mut().zip(&p.data).zip(&f.data).zip(&a.data) {
                *gv += self.lambda * fv * (pv - av) + shrink * pv;
            }
        }
    }
}

/// `(lambda/2) sum F (theta - anchor)^2 + gamma (|theta|_2 + |anchor|_2)`
/// over all parameters flattened.
pub fn smoothing_loss(params: &ModelParams, state: &FisherState) -> Result<f64> {
    state.check_layout(params)?;
    Ok(state.value(params))
}

/// Mean over `nodes` of each node's squared loss gradient, elementwise.
pub fn compute_fisher(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
    nodes: &[usize],
) -> Result<ModelParams> {
    let trace = forward(g, adjs, params, hp)?;
    let mut fisher = params.zeros_like();
    per_sample_gradients(g, adjs, params, hp, &trace, nodes, |_, grad| {
        fisher.zip_apply(grad, |f, v| *f += v * v);
        Ok(())
    })?;
    fisher.scale(1.0 / nodes.len() as f64);
    if let Some(name) = fisher.first_non_finite() {
        return Err(Error::NonFinite(format!("Fisher information of `{name}`")));
    }
    Ok(fisher)
}

/// Cross-entropy over `nodes` plus the smoothing loss when a previous task
/// left a Fisher state.
pub fn total_objective(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: &ModelParams,
    hp: &Hyperparams,
    nodes: &[usize],
    state: Option<&FisherState>,
) -> Result<f64> {
    let ce = forward(g, adjs, params, hp)?.loss(&g.label_values(), nodes)?;
    match state {
        Some(s) => Ok(ce + smoothing_loss(params, s)?),
        None => Ok(ce),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::htg::{build_htg, extract_metapath_neighbors, random_dataset, MetaPathSpec};
    use crate::model::compute_gradients;
    use proptest::prelude::*;

    /// A parameter set whose flattened values are `values`, padded with zeros.
    fn flat_params(values: &[f64]) -> ModelParams {
        let hp = Hyperparams {
            hidden: 1,
            heads: 1,
            semantic_hidden: 1,
            ..Hyperparams::default()
        };
        let mut p = ModelParams::init(1, &[MetaPathSpec::tct()], &hp, 0)
            .unwrap()
            .zeros_like();
        let mut flat = vec![0.0; p.num_values()];
        flat[..values.len()].copy_from_slice(values);
        p.assign_flat(&flat).unwrap();
        p
    }

    fn setup(seed: u64, n: usize) -> (HeteroTradeGraph, Vec<MetaPathAdjacency>, ModelParams, Hyperparams) {
        let hp = Hyperparams {
            hidden: 4,
            heads: 2,
            semantic_hidden: 3,
            ..Hyperparams::default()
        };
        let specs = MetaPathSpec::standard();
        let g = build_htg(&random_dataset(seed, n, 3, 4)).unwrap();
        let adjs = specs
            .iter()
            .map(|s| extract_metapath_neighbors(&g, s).unwrap())
            .collect();
        let p = ModelParams::init(g.feature_width(), &specs, &hp, seed).unwrap();
        (g, adjs, p, hp)
    }

    #[test]
    fn scalar_example() {
        let anchor = flat_params(&[1.0, 0.0]);
        let now = flat_params(&[2.0, 2.0]);
        let fisher = flat_params(&[1.0, 1.0]);
        let state = FisherState::new(fisher, anchor, 1.5, 0.00025).unwrap();
        let v = smoothing_loss(&now, &state).unwrap();
        assert!((v - 3.750957106781187).abs() < 1e-9, "{v}");
    }

    #[test]
    fn quadratic_term_vanishes_at_the_anchor() {
        let (_, _, p, _) = setup(1, 8);
        let mut fisher = p.zeros_like();
        fisher.fill(2.0);
        let state = FisherState::new(fisher, p.clone(), 1.5, 0.00025).unwrap();
        assert_eq!(state.weighted_distance(&p), 0.0);
        let v = smoothing_loss(&p, &state).unwrap();
        assert!((v - 2.0 * 0.00025 * norm(&p)).abs() < 1e-15);
        let mut off = state;
        off.fisher.fill(0.0);
        off.gamma = 0.0;
        let mut moved = p.clone();
        moved.scale(-2.0);
        assert_eq!(off.value(&moved), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let anchor = flat_params(&[1.0, -0.5, 0.25, 2.0]);
        let now = flat_params(&[0.3, 0.7, -1.1, 2.5, 0.2]);
        let fisher = flat_params(&[0.5, 2.0, 1.0, 0.0, 3.0]);
        let state = FisherState::new(fisher, anchor, 1.5, 0.3).unwrap();
        let mut grad = now.zeros_like();
        state.add_gradient(&now, &mut grad);
        let base = now.flatten();
        let analytic = grad.flatten();
        let mut q = now.clone();
        for k in 0..base.len() {
            let mut v = base.clone();
            v[k] += 1e-6;
            q.assign_flat(&v).unwrap();
            let up = state.value(&q);
            v[k] -= 2e-6;
            q.assign_flat(&v).unwrap();
            let num = (up - state.value(&q)) / 2e-6;
            assert!((num - analytic[k]).abs() < 1e-7, "{k}: {num} vs {}", analytic[k]);
        }
    }

    #[test]
    fn norm_subgradient_is_zero_at_origin() {
        let zero = flat_params(&[]);
        let state = FisherState::new(zero.clone(), zero.clone(), 1.5, 0.5).unwrap();
        let mut grad = zero.zeros_like();
        state.add_gradient(&zero, &mut grad);
        assert!(grad.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_negative_fisher_and_bad_weights() {
        let p = flat_params(&[1.0]);
        let neg = flat_params(&[-1.0]);
        assert!(FisherState::new(neg, p.clone(), 1.0, 0.0).is_err());
        assert!(matches!(
            FisherState::new(p.clone(), p.clone(), -1.0, 0.0),
            Err(Error::Config { .. })
        ));
        assert!(FisherState::new(p.clone(), p, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn fisher_of_one_sample_is_its_squared_gradient() {
        let (g, adjs, p, hp) = setup(2, 12);
        let fisher = compute_fisher(&g, &adjs, &p, &hp, &[5]).unwrap();
        let grad = compute_gradients(&g, &adjs, &p, &hp, &[5], &[]).unwrap().grads;
        for (f, v) in fisher.flatten().iter().zip(grad.flatten()) {
            assert!((f - v * v).abs() <= 1e-12 * (v * v).max(1e-6));
        }
    }

    #[test]
    fn fisher_averages_per_sample_squares() {
        let (g, adjs, p, hp) = setup(3, 10);
        let nodes = [0, 4, 9];
        let fisher = compute_fisher(&g, &adjs, &p, &hp, &nodes).unwrap().flatten();
        let mut want = vec![0.0; fisher.len()];
        for i in nodes {
            let grad = compute_gradients(&g, &adjs, &p, &hp, &[i], &[])
                .unwrap()
                .grads
                .flatten();
            want.iter_mut().zip(grad).for_each(|(w, v)| *w += v * v / 3.0);
        }
        for (a, b) in fisher.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn unused_parameters_have_zero_importance() {
        let (g, adjs, mut p, hp) = setup(4, 10);
        // With a zero classifier weight on every hidden unit, the semantic
        // layer and everything beneath it cannot influence the loss.
        p.clf_w.data[..hp.hidden].fill(0.0);
        let fisher = compute_fisher(&g, &adjs, &p, &hp, &[0, 1, 2]).unwrap();
        assert!(fisher.sem_w.data.iter().all(|&v| v == 0.0));
        assert!(fisher.w_x.data.iter().all(|&v| v == 0.0));
        assert!(fisher.clf_w.data[hp.hidden] > 0.0);
    }

    #[test]
    fn total_objective_is_the_sum_of_parts() {
        let (g, adjs, p, hp) = setup(5, 14);
        let nodes: Vec<usize> = (0..14).collect();
        let ce = compute_gradients(&g, &adjs, &p, &hp, &nodes, &[]).unwrap().data_loss;
        assert_eq!(total_objective(&g, &adjs, &p, &hp, &nodes, None).unwrap(), ce);
        let mut anchor = p.clone();
        anchor.scale(0.5);
        let fisher = compute_fisher(&g, &adjs, &anchor, &hp, &nodes).unwrap();
        let state = FisherState::new(fisher, anchor, 1.5, 0.00025).unwrap();
        let total = total_objective(&g, &adjs, &p, &hp, &nodes, Some(&state)).unwrap();
        assert!((total - ce - smoothing_loss(&p, &state).unwrap()).abs() < 1e-12);
        let silent = FisherState::new(p.zeros_like(), p.clone(), 1.5, 0.0).unwrap();
        assert_eq!(total_objective(&g, &adjs, &p, &hp, &nodes, Some(&silent)).unwrap(), ce);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (_, _, p, _) = setup(6, 6);
        let other = flat_params(&[1.0]);
        let state = FisherState::new(other.clone(), other, 1.0, 0.0).unwrap();
        assert!(matches!(smoothing_loss(&p, &state), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fisher_is_nonnegative_and_quadratic_in_loss_scale(seed in any::<u64>(), n in 2usize..16) {
            let (g, adjs, p, hp) = setup(seed, n);
            let nodes: Vec<usize> = (0..n).collect();
            let fisher = compute_fisher(&g, &adjs, &p, &hp, &nodes).unwrap();
            prop_assert!(fisher.flatten().iter().all(|&v| v >= 0.0));
            // Scaling the gradient by c scales its Fisher entries by c^2.
            let trace = forward(&g, &adjs, &p, &hp).unwrap();
            let mut scaled = p.zeros_like();
            per_sample_gradients(&g, &adjs, &p, &hp, &trace, &nodes, |_, grad| {
                scaled.zip_apply(grad, |f, v| *f += (3.0 * v) * (3.0 * v));
                Ok(())
            }).unwrap();
            scaled.scale(1.0 / n as f64);
            for (a, b) in scaled.flatten().iter().zip(fisher.flatten()) {
                prop_assert!((a - 9.0 * b).abs() <= 1e-9 * a.abs().max(1e-12));
            }
        }
    }
}
