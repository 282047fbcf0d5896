use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::htg::MetaPathSpec;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Node aggregation nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub hidden: usize,
    pub heads: usize,
    pub semantic_hidden: usize,
    pub leaky_slope: f64,
    pub activation: Activation,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 8,
            semantic_hidden: 128,
            leaky_slope: 0.2,
            activation: Activation::Elu,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.semantic_hidden == 0 {
            return Err(Error::config(
                "model",
                "hidden, heads and semantic_hidden must be positive",
            ));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("hidden width {} is not divisible by {} heads", self.hidden, self.heads),
            ));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::config("leaky_slope", "must be a finite nonnegative number"));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.hidden / self.heads
    }
}

/// A named parameter block: shape plus row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_data(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
        }
    }

    /// Row `r` of a 2-D tensor.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }
}

/// Every learnable tensor. Gradients and Fisher importances reuse this
/// layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Projection `[hidden, d_in]`: `h_i = W_x x_i`.
    pub w_x: Tensor,
    /// Per meta-path `[heads, 2 * head_width]`; each row is `[a_target ‖ a_neighbour]`.
    pub node_att: Vec<Tensor>,
    pub path_names: Vec<String>,
    /// Semantic transform `[semantic_hidden, hidden]`.
    pub sem_w: Tensor,
    pub sem_b: Tensor,
    /// Semantic query vector `[semantic_hidden]`.
    pub sem_q: Tensor,
    /// Classifier weights `[hidden + 1]`, bias last.
    pub clf_w: Tensor,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(d_in: usize, paths: &[MetaPathSpec], hp: &Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        if d_in == 0 || paths.is_empty() {
            return Err(Error::Dimension(
                "need at least one input feature and one meta-path".into(),
            ));
        }
        let mut rng = rng_from_seed(seed);
        let dh = hp.head_width();
        let w_x = Tensor::glorot(vec![hp.hidden, d_in], d_in, hp.hidden, &mut rng);
        let node_att = paths
            .iter()
            .map(|_| Tensor::glorot(vec![hp.heads, 2 * dh], 2 * dh, 1, &mut rng))
            .collect();
        let sem_w = Tensor::glorot(
            vec![hp.semantic_hidden, hp.hidden],
            hp.hidden,
            hp.semantic_hidden,
            &mut rng,
        );
        let sem_q = Tensor::glorot(vec![hp.semantic_hidden], hp.semantic_hidden, 1, &mut rng);
        let mut clf_w = Tensor::glorot(vec![hp.hidden + 1], hp.hidden, 1, &mut rng);
        clf_w.data[hp.hidden] = 0.0;
        Ok(Self {
            w_x,
            node_att,
            path_names: paths.iter().map(|p| p.name().to_string()).collect(),
            sem_w,
            sem_b: Tensor::zeros(vec![hp.semantic_hidden]),
            sem_q,
            clf_w,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape.clone());
        Self {
            w_x: z(&self.w_x),
            node_att: self.node_att.iter().map(z).collect(),
            path_names: self.path_names.clone(),
            sem_w: z(&self.sem_w),
            sem_b: z(&self.sem_b),
            sem_q: z(&self.sem_q),
            clf_w: z(&self.clf_w),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_x.shape[0]
    }

    pub fn input_width(&self) -> usize {
        self.w_x.shape[1]
    }

    pub fn heads(&self) -> usize {
        self.node_att[0].shape[0]
    }

    pub fn semantic_hidden(&self) -> usize {
        self.sem_w.shape[0]
    }

    /// `(name, tensor)` in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("w_x".to_string(), &self.w_x)];
        for (name, t) in self.path_names.iter().zip(&self.node_att) {
            v.push((format!("node_att.{name}"), t));
        }
        v.push(("sem_w".into(), &self.sem_w));
        v.push(("sem_b".into(), &self.sem_b));
        v.push(("sem_q".into(), &self.sem_q));
        v.push(("clf_w".into(), &self.clf_w));
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![("w_x".to_string(), &mut self.w_x)];
        for (name, t) in self.path_names.iter().zip(self.node_att.iter_mut()) {
            v.push((format!("node_att.{name}"), t));
        }
        v.push(("sem_w".into(), &mut self.sem_w));
        v.push(("sem_b".into(), &mut self.sem_b));
        v.push(("sem_q".into(), &mut self.sem_q));
        v.push(("clf_w".into(), &mut self.clf_w));
        v
    }

    /// Tensors in canonical order without their names.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        std::iter::once(&self.w_x)
            .chain(&self.node_att)
            .chain([&self.sem_w, &self.sem_b, &self.sem_q, &self.clf_w])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        std::iter::once(&mut self.w_x).chain(self.node_att.iter_mut()).chain([
            &mut self.sem_w,
            &mut self.sem_b,
            &mut self.sem_q,
            &mut self.clf_w,
        ])
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout of `self`.
    pub fn with_tensors(&self, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut out = self.clone();
        let slots = out.named_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for ((name, slot), (tname, t)) in slots.into_iter().zip(tensors) {
            if &name != tname || slot.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{tname}` {:?} does not match `{name}` {:?}",
                    t.shape, slot.shape
                )));
            }
            *slot = t.clone();
        }
        Ok(out)
    }

    /// Builds parameters from named tensors alone, inferring the layout.
    pub fn from_named(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut w_x = None;
        let mut node_att = Vec::new();
        let mut path_names = Vec::new();
        let (mut sem_w, mut sem_b, mut sem_q, mut clf_w) = (None, None, None, None);
        for (name, t) in tensors {
            match name.as_str() {
                "w_x" => w_x = Some(t),
                "sem_w" => sem_w = Some(t),
                "sem_b" => sem_b = Some(t),
                "sem_q" => sem_q = Some(t),
                "clf_w" => clf_w = Some(t),
                n => match n.strip_prefix("node_att.") {
                    Some(p) => {
                        path_names.push(p.to_string());
                        node_att.push(t);
                    }
                    None => return Err(Error::Checkpoint(format!("unexpected tensor `{n}`"))),
                },
            }
        }
        let missing = |n: &str| Error::Checkpoint(format!("missing tensor `{n}`"));
        let p = Self {
            w_x: w_x.ok_or_else(|| missing("w_x"))?,
            node_att,
            path_names,
            sem_w: sem_w.ok_or_else(|| missing("sem_w"))?,
            sem_b: sem_b.ok_or_else(|| missing("sem_b"))?,
            sem_q: sem_q.ok_or_else(|| missing("sem_q"))?,
            clf_w: clf_w.ok_or_else(|| missing("clf_w"))?,
        };
        p.check_layout()?;
        Ok(p)
    }

    fn check_layout(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.w_x.shape.len() != 2 || self.node_att.is_empty() {
            return bad("w_x must be 2-D and at least one node_att tensor is required".into());
        }
        let (h, heads) = (self.hidden(), self.node_att[0].shape[0]);
        if heads == 0 || h % heads != 0 {
            return bad(format!("hidden width {h} not divisible by {heads} heads"));
        }
        let dh = h / heads;
        if self.node_att.iter().any(|t| t.shape != [heads, 2 * dh]) {
            return bad("node_att tensors disagree on shape".into());
        }
        let s = self.sem_w.shape.first().copied().unwrap_or(0);
        if self.sem_w.shape != [s, h]
            || self.sem_b.shape != [s]
            || self.sem_q.shape != [s]
            || self.clf_w.shape != [h + 1]
        {
            return bad("semantic or classifier tensor has the wrong shape".into());
        }
        Ok(())
    }

    /// True when both share names and shapes.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        let a = self.named();
        let b = other.named();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape == t2.shape)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(|t| t.data.len()).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_values());
        for t in self.tensors() {
            v.extend_from_slice(&t.data);
        }
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_values()
            )));
        }
        let mut k = 0;
        for (_, t) in self.named_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
        Ok(())
    }

    /// Applies `f(self_value, other_value)` elementwise in place.
    pub fn zip_apply(&mut self, other: &ModelParams, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                f(x, *y);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.data.fill(v);
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named()
            .into_iter()
            .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }
}
