use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::layer::{Layer, LayerCache, LayerGrads, LayerSpec};

/// Architecture of an encoder: backbone, projector head and an optional
/// predictor head stacked on the projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backbone: Vec<LayerSpec>,
    pub projector: Vec<LayerSpec>,
    pub predictor: Option<Vec<LayerSpec>>,
}

impl EncoderSpec {
    /// MLP backbone of `hidden` widths (linear + batchnorm + ReLU each), a
    /// projector with two batchnorm+ReLU layers of `proj_hidden` and a linear
    /// output of `proj_out`, and optionally a two-layer predictor.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        proj_hidden: usize,
        proj_out: usize,
        predictor_hidden: Option<usize>,
    ) -> Self {
        let mut backbone = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            backbone.push(LayerSpec::hidden(prev, h));
            prev = h;
        }
        let projector = vec![
            LayerSpec::hidden(prev, proj_hidden),
            LayerSpec::hidden(proj_hidden, proj_hidden),
            LayerSpec::linear(proj_hidden, proj_out),
        ];
        let predictor = predictor_hidden.map(|ph| {
            vec![LayerSpec::hidden(proj_out, ph), LayerSpec::linear(ph, proj_out)]
        });
        Self {
            backbone,
            projector,
            predictor,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.first().map_or(0, |l| l.in_dim)
    }

    pub fn backbone_dim(&self) -> usize {
        self.backbone.last().map_or(0, |l| l.out_dim)
    }

    pub fn projector_dim(&self) -> usize {
        self.projector.last().map_or(self.backbone_dim(), |l| l.out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.is_empty() {
            return Err(Error::Config("encoder backbone has no layers".into()));
        }
        let mut chain: Vec<&LayerSpec> = self.backbone.iter().chain(&self.projector).collect();
        if let Some(p) = &self.predictor {
            if p.is_empty() {
                return Err(Error::Config("predictor has no layers".into()));
            }
            chain.extend(p);
        }
        for l in &chain {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config("layer dimensions must be at least 1".into()));
            }
        }
        for w in chain.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Config(format!(
                    "layer chain breaks: {} outputs feed a layer expecting {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        if let Some(p) = &self.predictor {
            if p.last().map(|l| l.out_dim) != Some(self.projector_dim()) {
                return Err(Error::Config("predictor must map back to the projector dimension".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which encoder output a gradient is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Backbone,
    Projector,
    Predictor,
}

/// Parameters of one encoder, including batchnorm running statistics and
/// the per-layer trainable flags.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub backbone: Vec<Layer>,
    pub projector: Vec<Layer>,
    pub predictor: Option<Vec<Layer>>,
    generation: u64,
}

// The generation counter is bookkeeping, not state.
impl PartialEq for EncoderParams {
    fn eq(&self, other: &Self) -> bool {
        self.backbone == other.backbone && self.projector == other.projector && self.predictor == other.predictor
    }
}

/// Forward-pass record: every head's output plus per-layer caches.
#[derive(Debug, Clone)]
pub struct Activations {
    pub backbone: Matrix,
    pub projector: Matrix,
    pub predictor: Option<Matrix>,
    caches: Vec<LayerCache>,
    mode: Mode,
    generation: u64,
}

/// Parameter gradients in layer order (backbone, projector, predictor) and
/// the gradient with respect to the encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub input: Matrix,
}

impl Gradients {
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::StaleActivations("gradient layer count"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.accumulate(b);
        }
        Ok(())
    }
}

pub fn init_encoder(spec: &EncoderSpec, seed: u64) -> Result<EncoderParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = spec.backbone.iter().map(|s| Layer::init(*s, &mut rng)).collect();
    let projector = spec.projector.iter().map(|s| Layer::init(*s, &mut rng)).collect();
    let predictor = spec
        .predictor
        .as_ref()
        .map(|p| p.iter().map(|s| Layer::init(*s, &mut rng)).collect());
    Ok(EncoderParams {
        backbone,
        projector,
        predictor,
        generation: 0,
    })
}

impl EncoderParams {
    pub(crate) fn from_layers(backbone: Vec<Layer>, projector: Vec<Layer>, predictor: Option<Vec<Layer>>) -> Result<Self> {
        let params = Self {
            backbone,
            projector,
            predictor,
            generation: 0,
        };
        params.spec().validate()?;
        Ok(params)
    }

    pub fn spec(&self) -> EncoderSpec {
        EncoderSpec {
            backbone: self.backbone.iter().map(|l| l.spec).collect(),
            projector: self.projector.iter().map(|l| l.spec).collect(),
            predictor: self.predictor.as_ref().map(|p| p.iter().map(|l| l.spec).collect()),
        }
    }

    /// Number of backbone layers, the range of valid freeze boundaries.
    pub fn backbone_len(&self) -> usize {
        self.backbone.len()
    }

    pub fn projector_dim(&self) -> usize {
        self.spec().projector_dim()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.backbone
            .iter()
            .chain(&self.projector)
            .chain(self.predictor.iter().flatten())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.backbone
            .iter_mut()
            .chain(self.projector.iter_mut())
            .chain(self.predictor.iter_mut().flatten())
    }

    pub fn layer_count(&self) -> usize {
        self.layers().count()
    }

    /// Bumped by every optimizer step; activations record it so stale
    /// caches are rejected by `backward`.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    /// Freezes the first `boundary` backbone layers; everything after them,
    /// including the heads, becomes trainable.
    pub fn set_freeze(&mut self, boundary: usize) -> Result<()> {
        if boundary > self.backbone.len() {
            return Err(Error::Invalid(format!(
                "freeze boundary {boundary} exceeds backbone depth {}",
                self.backbone.len()
            )));
        }
        for (i, l) in self.backbone.iter_mut().enumerate() {
            l.trainable = i >= boundary;
        }
        for l in self.projector.iter_mut().chain(self.predictor.iter_mut().flatten()) {
            l.trainable = true;
        }
        Ok(())
    }

    pub fn frozen_layers(&self) -> usize {
        self.layers().filter(|l| !l.trainable).count()
    }

    /// A copy without the predictor head, e.g. for a momentum target.
    pub fn without_predictor(&self) -> Self {
        Self {
            backbone: self.backbone.clone(),
            projector: self.projector.clone(),
            predictor: None,
            generation: self.generation,
        }
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Activations> {
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(self.layer_count());
        let mut run = |layers: &[Layer], input: &Matrix| -> Result<Matrix> {
            let mut h = input.clone();
            for l in layers {
                let (out, cache) = l.forward(&h, train)?;
                caches.push(cache);
                h = out;
            }
            Ok(h)
        };
        let backbone = run(&self.backbone, x)?;
        let projector = run(&self.projector, &backbone)?;
        let predictor = match &self.predictor {
            Some(p) => Some(run(p, &projector)?),
            None => None,
        };
        Ok(Activations {
            backbone,
            projector,
            predictor,
            caches,
            mode,
            generation: self.generation,
        })
    }

    /// Backpropagates `grad` attached to `head` through the encoder.
    ///
    /// Layers downstream of the head get zero gradients, and frozen layers
    /// pass the gradient through while reporting zero parameter gradients.
    pub fn backward(&self, acts: &Activations, head: Head, grad: &Matrix) -> Result<Gradients> {
        if acts.mode != Mode::Train {
            return Err(Error::StaleActivations("backward needs train-mode activations"));
        }
        if acts.generation != self.generation || acts.caches.len() != self.layer_count() {
            return Err(Error::StaleActivations("parameters changed since forward"));
        }
        let nb = self.backbone.len();
        let np = self.projector.len();
        let end = match head {
            Head::Backbone => nb,
            Head::Projector => nb + np,
            Head::Predictor => {
                if self.predictor.is_none() {
                    return Err(Error::Invalid("encoder has no predictor head".into()));
                }
                self.layer_count()
            }
        };
        let all: Vec<&Layer> = self.layers().collect();
        let mut layers: Vec<LayerGrads> = all.iter().map(|l| LayerGrads::zeros_like(l)).collect();
        let mut g = grad.clone();
        for i in (0..end).rev() {
            let (gin, lg) = all[i].backward(&acts.caches[i], &g)?;
            layers[i] = lg;
            g = gin;
        }
        Ok(Gradients { layers, input: g })
    }

    /// Updates batchnorm running statistics from a train-mode forward pass.
    pub fn absorb_batch_stats(&mut self, acts: &Activations) -> Result<()> {
        if acts.caches.len() != self.layer_count() {
            return Err(Error::StaleActivations("layer count"));
        }
        if acts.mode != Mode::Train {
            return Ok(());
        }
        for (l, c) in self.layers_mut().zip(&acts.caches) {
            l.absorb_batch_stats(c);
        }
        Ok(())
    }

    /// Moves every parameter and running statistic of `self` toward
    /// `online`: `self ← rate·self + (1 − rate)·online`. Heads missing from
    /// `self` are ignored.
    pub fn ema_update(&mut self, online: &EncoderParams, rate: f64) -> Result<()> {
        let pairs = self
            .backbone
            .iter_mut()
            .zip(&online.backbone)
            .chain(self.projector.iter_mut().zip(&online.projector));
        for (t, o) in pairs {
            if t.spec != o.spec {
                return Err(Error::Invalid("ema_update: architectures differ".into()));
            }
            for (tp, op) in t.params_mut().into_iter().zip(o.params()) {
                for (a, b) in tp.data_mut().iter_mut().zip(op.data()) {
                    *a = rate * *a + (1.0 - rate) * b;
                }
            }
            if let (Some(tb), Some(ob)) = (t.bn.as_mut(), o.bn.as_ref()) {
                tb.running_mean.clone_from(&ob.running_mean);
                tb.running_var.clone_from(&ob.running_var);
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Bit patterns of every parameter and statistic, for exact comparisons.
    pub fn fingerprint(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for l in self.layers() {
            for p in l.params() {
                out.extend(p.data().iter().map(|v| v.to_bits()));
            }
            if let Some(bn) = &l.bn {
                out.extend(bn.running_mean.iter().map(|v| v.to_bits()));
                out.extend(bn.running_var.iter().map(|v| v.to_bits()));
            }
        }
        out
    }
}
