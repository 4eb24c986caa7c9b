//! Labelled vector datasets, synthetic hierarchical data, augmentation and
//! the binary dataset format.

mod augment;
mod io;
mod synthetic;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment_batch, make_pair, make_views, AugmentConfig};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC};
pub use synthetic::{generate_synthetic, generate_synthetic_with, SyntheticConfig};

/// Samples (rows of `x`) with fine class labels and coarse superclass
/// labels. Every class belongs to exactly one superclass.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    class_labels: Vec<usize>,
    superclass_labels: Vec<usize>,
    n_class: usize,
    n_super: usize,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        class_labels: Vec<usize>,
        superclass_labels: Vec<usize>,
        n_class: usize,
        n_super: usize,
    ) -> Result<Self> {
        let n = x.rows();
        if n == 0 || x.cols() == 0 {
            return Err(Error::Invalid("dataset needs at least one sample and one feature".into()));
        }
        if class_labels.len() != n || superclass_labels.len() != n {
            return Err(Error::Invalid(format!(
                "{n} samples but {} class and {} superclass labels",
                class_labels.len(),
                superclass_labels.len()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Invalid("dataset contains non-finite values".into()));
        }
        let mut owner: Vec<Option<usize>> = vec![None; n_class];
        for (i, (&c, &s)) in class_labels.iter().zip(&superclass_labels).enumerate() {
            if c >= n_class {
                return Err(Error::LabelOutOfRange(format!("sample {i}: class {c} ≥ {n_class}")));
            }
            if s >= n_super {
                return Err(Error::LabelOutOfRange(format!("sample {i}: superclass {s} ≥ {n_super}")));
            }
            match owner[c] {
                None => owner[c] = Some(s),
                Some(prev) if prev != s => {
                    return Err(Error::LabelOutOfRange(format!(
                        "class {c} appears under superclasses {prev} and {s}"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            x,
            class_labels,
            superclass_labels,
            n_class,
            n_super,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_labels
    }

    pub fn superclass_labels(&self) -> &[usize] {
        &self.superclass_labels
    }

    pub fn n_class(&self) -> usize {
        self.n_class
    }

    pub fn n_super(&self) -> usize {
        self.n_super
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Superclass of each class, `None` for classes without samples.
    pub fn class_to_super(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_class];
        for (&c, &s) in self.class_labels.iter().zip(&self.superclass_labels) {
            out[c] = Some(s);
        }
        out
    }

    /// Classes that have at least one sample, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_class];
        self.class_labels.iter().for_each(|&c| seen[c] = true);
        (0..self.n_class).filter(|&c| seen[c]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Invalid(format!("subset index {bad} out of range")));
        }
        Dataset::new(
            self.x.select_rows(indices),
            indices.iter().map(|&i| self.class_labels[i]).collect(),
            indices.iter().map(|&i| self.superclass_labels[i]).collect(),
            self.n_class,
            self.n_super,
        )
    }

    /// Samples whose class is in `classes`; label ids are kept as-is.
    pub fn filter_classes(&self, classes: &[usize]) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.class_labels[i]))
            .collect();
        self.subset(&idx)
    }

    /// Stratified split: within each class, a seeded shuffle puts
    /// `round(test_fraction · count)` samples into the test part.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Invalid(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in 0..self.n_class {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.class_labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let k = (test_fraction * idx.len() as f64).round() as usize;
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::Invalid("split leaves an empty part".into()));
        }
        Ok((self.subset(&train)?, self.subset(&test)?))
    }
}
