//! Small dense feedforward network with a shared ReLU trunk and two linear
//! classification heads, manual backpropagation, and SGD with momentum and
//! weight decay. Deliberately minimal: no autograd, no convolutions, no
//! threads, bit-for-bit deterministic given a seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::LogitVector;
use crate::error::{Error, Result};
use crate::rng;

/// Which classification head to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Supervised head (evidential loss); also the default for inference,
    /// margins, and pseudo-labels.
    Sup,
    /// Unsupervised head (L2 loss on mixed inputs).
    Uns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    w: Vec<f64>, // row-major, out_dim x in_dim
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl DenseLayer {
    fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Gradient (or velocity) buffers shaped exactly like a layer.
#[derive(Debug, Clone)]
struct LayerGrads {
    w: Vec<f64>,
    b: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            w: vec![0.0; layer.w.len()],
            b: vec![0.0; layer.b.len()],
        }
    }

    fn reset(&mut self) {
        self.w.iter_mut().for_each(|v| *v = 0.0);
        self.b.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Accumulated parameter gradients for the whole model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    trunk: Vec<LayerGrads>,
    head_sup: LayerGrads,
    head_uns: LayerGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            trunk: model.trunk.iter().map(LayerGrads::zeros_like).collect(),
            head_sup: LayerGrads::zeros_like(&model.head_sup),
            head_uns: LayerGrads::zeros_like(&model.head_uns),
        }
    }

    pub fn reset(&mut self) {
        self.trunk.iter_mut().for_each(LayerGrads::reset);
        self.head_sup.reset();
        self.head_uns.reset();
    }

    /// Multiply every gradient entry by `s` (e.g. 1/batch).
    pub fn scale(&mut self, s: f64) {
        for lg in self.trunk.iter_mut() {
            lg.w.iter_mut().for_each(|v| *v *= s);
            lg.b.iter_mut().for_each(|v| *v *= s);
        }
        for lg in [&mut self.head_sup, &mut self.head_uns] {
            lg.w.iter_mut().for_each(|v| *v *= s);
            lg.b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Two-head multilayer perceptron. Both heads read the same trunk output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    input_dim: usize,
    hidden: Vec<usize>,
    n_classes: usize,
    trunk: Vec<DenseLayer>,
    head_sup: DenseLayer,
    head_uns: DenseLayer,
}

/// Cached activations from one trunk pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Post-ReLU activations per trunk layer; last entry feeds the heads.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    fn trunk_out(&self) -> &[f64] {
        self.activations.last().map(|a| a.as_slice()).unwrap_or(&self.input)
    }
}

impl MlpModel {
    /// He-uniform weights, zero biases, drawn from the "init" stream of the
    /// given seed.
    pub fn new(input_dim: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if input_dim == 0 || hidden.iter().any(|h| *h == 0) {
            return Err(Error::Domain("zero-width layer".into()));
        }
        let mut r = rng::stream(seed, "init");
        let mut trunk = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            trunk.push(DenseLayer::he_uniform(prev, h, &mut r));
            prev = h;
        }
        let head_sup = DenseLayer::he_uniform(prev, n_classes, &mut r);
        let head_uns = DenseLayer::he_uniform(prev, n_classes, &mut r);
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            n_classes,
            trunk,
            head_sup,
            head_uns,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Trunk pass with cached activations for a later `backward`.
    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut activations = Vec::with_capacity(self.trunk.len());
        let mut cur = x.to_vec();
        let mut buf = Vec::new();
        for layer in &self.trunk {
            layer.forward(&cur, &mut buf);
            for v in &mut buf {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            cur = buf.clone();
            activations.push(cur.clone());
        }
        Ok(ForwardCache {
            input: x.to_vec(),
            activations,
        })
    }

    /// Logits of the requested head on a cached trunk pass.
    pub fn head_logits(&self, cache: &ForwardCache, head: Head) -> LogitVector {
        let layer = match head {
            Head::Sup => &self.head_sup,
            Head::Uns => &self.head_uns,
        };
        let mut out = Vec::new();
        layer.forward(cache.trunk_out(), &mut out);
        LogitVector::from_raw(out)
    }

    /// Convenience single-head forward pass.
    pub fn forward(&self, x: &[f64], head: Head) -> Result<LogitVector> {
        let cache = self.forward_cached(x)?;
        Ok(self.head_logits(&cache, head))
    }

    /// Backpropagate head-logit gradients into `grads` (accumulating).
    ///
    /// Supervised gradients flow into head_sup and the trunk; unsupervised
    /// gradients into head_uns and the trunk. Either head may be absent.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_sup: Option<&[f64]>,
        grad_uns: Option<&[f64]>,
        grads: &mut ModelGrads,
    ) {
        let trunk_out = cache.trunk_out();
        let mut d_trunk = vec![0.0; trunk_out.len()];

        for (head_grad, layer, layer_grads) in [
            (grad_sup, &self.head_sup, &mut grads.head_sup),
            (grad_uns, &self.head_uns, &mut grads.head_uns),
        ] {
            if let Some(g) = head_grad {
                debug_assert_eq!(g.len(), self.n_classes);
                for (r, gr) in g.iter().enumerate() {
                    layer_grads.b[r] += gr;
                    let row = &mut layer_grads.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (wg, h) in row.iter_mut().zip(trunk_out) {
                        *wg += gr * h;
                    }
                    let wrow = &layer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (dh, w) in d_trunk.iter_mut().zip(wrow) {
                        *dh += gr * w;
                    }
                }
            }
        }

        // Trunk layers in reverse; ReLU mask from the stored activations
        // (h > 0 iff preactivation > 0).
        let mut d_out = d_trunk;
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let act = &cache.activations[l];
            for (d, h) in d_out.iter_mut().zip(act) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            let below: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.activations[l - 1]
            };
            let lg = &mut grads.trunk[l];
            let mut d_below = vec![0.0; layer.in_dim];
            for (r, dr) in d_out.iter().enumerate() {
                lg.b[r] += dr;
                let row = &mut lg.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (wg, x) in row.iter_mut().zip(below) {
                    *wg += dr * x;
                }
                let wrow = &layer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (db, w) in d_below.iter_mut().zip(wrow) {
                    *db += dr * w;
                }
            }
            d_out = d_below;
        }
    }

    /// Flat view of all parameters, used by gradient checking.
    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum::<usize>()
            + self.head_sup.w.len()
            + self.head_sup.b.len()
            + self.head_uns.w.len()
            + self.head_uns.b.len()
    }

    fn params_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &mut self.trunk {
            out.extend(l.w.iter_mut());
            out.extend(l.b.iter_mut());
        }
        out.extend(self.head_sup.w.iter_mut());
        out.extend(self.head_sup.b.iter_mut());
        out.extend(self.head_uns.w.iter_mut());
        out.extend(self.head_uns.b.iter_mut());
        out
    }

    /// Perturb a single parameter by flat index (gradient checking).
    pub fn param_add(&mut self, idx: usize, delta: f64) {
        *self.params_mut()[idx] += delta;
    }

    /// Copy of a head's weights and biases (diagnostics, tests).
    pub fn head_params(&self, head: Head) -> (Vec<f64>, Vec<f64>) {
        let layer = match head {
            Head::Sup => &self.head_sup,
            Head::Uns => &self.head_uns,
        };
        (layer.w.clone(), layer.b.clone())
    }
}

impl ModelGrads {
    /// Sum of absolute gradient entries in a head (tests the sup/uns
    /// gradient-isolation contract).
    pub fn head_grad_l1(&self, head: Head) -> f64 {
        let lg = match head {
            Head::Sup => &self.head_sup,
            Head::Uns => &self.head_uns,
        };
        lg.w.iter().chain(&lg.b).map(|g| g.abs()).sum()
    }

    /// Flat view matching `MlpModel::param_*` ordering.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.trunk {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.head_sup.w);
        out.extend_from_slice(&self.head_sup.b);
        out.extend_from_slice(&self.head_uns.w);
        out.extend_from_slice(&self.head_uns.b);
        out
    }
}

/// Classic SGD with momentum and coupled weight decay:
/// v <- mu * v + g + wd * theta; theta <- theta - lr * v.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ModelGrads,
}

impl SgdMomentum {
    pub fn new(model: &MlpModel, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: ModelGrads::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &ModelGrads) {
        fn update(
            theta: &mut [f64],
            g: &[f64],
            v: &mut [f64],
            lr: f64,
            mu: f64,
            wd: f64,
        ) {
            for ((t, g), v) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + wd * *t;
                *t -= lr * *v;
            }
        }
        for (l, (layer, lg)) in model.trunk.iter_mut().zip(&grads.trunk).enumerate() {
            update(
                &mut layer.w,
                &lg.w,
                &mut self.velocity.trunk[l].w,
                self.lr,
                self.momentum,
                self.weight_decay,
            );
            update(
                &mut layer.b,
                &lg.b,
                &mut self.velocity.trunk[l].b,
                self.lr,
                self.momentum,
                self.weight_decay,
            );
        }
        update(
            &mut model.head_sup.w,
            &grads.head_sup.w,
            &mut self.velocity.head_sup.w,
            self.lr,
            self.momentum,
            self.weight_decay,
        );
        update(
            &mut model.head_sup.b,
            &grads.head_sup.b,
            &mut self.velocity.head_sup.b,
            self.lr,
            self.momentum,
            self.weight_decay,
        );
        update(
            &mut model.head_uns.w,
            &grads.head_uns.w,
            &mut self.velocity.head_uns.w,
            self.lr,
            self.momentum,
            self.weight_decay,
        );
        update(
            &mut model.head_uns.b,
            &grads.head_uns.b,
            &mut self.velocity.head_uns.b,
            self.lr,
            self.momentum,
            self.weight_decay,
        );
    }
}

/// Versioned checkpoint wrapper around the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub method: String,
    pub gamma: f64,
    pub eval_head: Head,
    pub model: MlpModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
