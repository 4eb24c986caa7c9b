use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    adam_step, init_encoder, AdamConfig, AdamState, EncoderParams, EncoderSpec, Head, LayerSpec, Mode,
};
use crate::numerics::{argmax, Matrix};
use crate::protocol::soft_cross_entropy;
use crate::seed::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1: f64,
    pub n_test: usize,
    pub train_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Eval-mode backbone features of every sample.
pub fn backbone_features(encoder: &EncoderParams, ds: &Dataset) -> Result<Matrix> {
    Ok(encoder.forward(ds.x(), Mode::Eval)?.backbone)
}

pub(crate) fn check_compatible(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.dim() != test.dim() || train.n_class() != test.n_class() {
        return Err(Error::Invalid(format!(
            "train ({} features, {} classes) and test ({} features, {} classes) disagree",
            train.dim(),
            train.n_class(),
            test.dim(),
            test.n_class()
        )));
    }
    Ok(())
}

/// Per-feature affine map fitted on the training features.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(f: &Matrix) -> Self {
        let mean = f.column_means();
        let n = f.rows() as f64;
        let inv_std = (0..f.cols())
            .map(|c| {
                let var = f.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, f: &Matrix) -> Matrix {
        Matrix::from_fn(f.rows(), f.cols(), |r, c| (f[(r, c)] - self.mean[c]) * self.inv_std[c])
    }
}

/// Trains a softmax-regression classifier on frozen backbone features of
/// `train` (standardized with the training statistics) and reports top-1
/// accuracy on `test`. The encoder is only read.
pub fn linear_probe(encoder: &EncoderParams, train: &Dataset, test: &Dataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    check_compatible(train, test)?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("probe batch size and learning rate must be positive".into()));
    }
    let raw = backbone_features(encoder, train)?;
    let scaler = Standardizer::fit(&raw);
    let ftrain = scaler.apply(&raw);
    let ftest = scaler.apply(&backbone_features(encoder, test)?);
    let k = train.n_class();

    let spec = EncoderSpec {
        backbone: vec![LayerSpec::linear(ftrain.cols(), k)],
        projector: vec![],
        predictor: None,
    };
    let mut clf = init_encoder(&spec, cfg.seed)?;
    let mut adam = AdamState::new(
        &clf,
        AdamConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    let labels = train.class_labels();
    let b = cfg.batch_size.min(train.len());
    for e in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, &format!("probe/shuffle/{e}")));
        for rows in order.chunks(b) {
            let x = ftrain.select_rows(rows);
            let t = Matrix::from_fn(rows.len(), k, |r, c| f64::from(u8::from(labels[rows[r]] == c)));
            let acts = clf.forward(&x, Mode::Train)?;
            let out = soft_cross_entropy(&acts.backbone, &t)?;
            let g = clf.backward(&acts, Head::Backbone, &out.grads[0])?;
            adam_step(&mut clf, &g, &mut adam)?;
        }
    }
    let logits = clf.forward(&ftest, Mode::Eval)?.backbone;
    let hits = (0..test.len())
        .filter(|&i| argmax(logits.row(i)) == test.class_labels()[i])
        .count();
    Ok(ProbeResult {
        top1: hits as f64 / test.len() as f64,
        n_test: test.len(),
        train_epochs: cfg.epochs,
    })
}
