use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of item classes.
pub const NUM_CLASSES: usize = 10;
/// Width of one item's feature row: the priority followed by a one-hot class.
pub const FEATURE_WIDTH: usize = NUM_CLASSES + 1;

/// One set of items whose target is the class of the highest-priority item.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalExample {
    /// `n × 11`, row `i` is `ρ_i ‖ onehot(κ_i)`.
    pub features: Array2<f64>,
    pub query_scalar: f64,
    pub label: usize,
}

impl RetrievalExample {
    /// Builds an example from priorities and classes; the label is the class
    /// of the highest priority (lowest index on ties).
    pub fn from_items(priorities: &[f64], classes: &[usize], query_scalar: f64) -> Result<Self> {
        if priorities.is_empty() {
            return Err(Error::domain("an example needs at least one item"));
        }
        if priorities.len() != classes.len() {
            return Err(Error::domain("priorities and classes differ in length"));
        }
        let mut features = Array2::zeros((priorities.len(), FEATURE_WIDTH));
        for (i, (&rho, &class)) in priorities.iter().zip(classes).enumerate() {
            if class >= NUM_CLASSES {
                return Err(Error::domain(format!("class {class} out of range")));
            }
            features[(i, 0)] = rho;
            features[(i, 1 + class)] = 1.0;
        }
        let target = crate::softmax::argmax(priorities);
        Ok(RetrievalExample {
            features,
            query_scalar,
            label: classes[target],
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.features[(i, 0)]
    }

    pub fn class_of(&self, i: usize) -> usize {
        (0..NUM_CLASSES)
            .find(|&c| self.features[(i, 1 + c)] == 1.0)
            .expect("feature row carries a one-hot class")
    }

    /// Index of the highest-priority item (lowest index on ties).
    pub fn target_index(&self) -> usize {
        let rho: Vec<f64> = self.features.column(0).to_vec();
        crate::softmax::argmax(&rho)
    }
}

/// Draws one example with `n` items.
pub fn generate_example<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<RetrievalExample> {
    if n == 0 {
        return Err(Error::domain("set size must be at least 1"));
    }
    let mut priorities = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for _ in 0..n {
        priorities.push(rng.random::<f64>());
        classes.push(rng.random_range(0..NUM_CLASSES));
    }
    let query = rng.random::<f64>();
    RetrievalExample::from_items(&priorities, &classes, query)
}

/// Draws `batch_size` independent examples of `n` items each.
pub fn generate_batch<R: Rng + ?Sized>(
    rng: &mut R,
    batch_size: usize,
    n: usize,
) -> Result<Vec<RetrievalExample>> {
    (0..batch_size).map(|_| generate_example(rng, n)).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for a `(seed, tag, index)` triple.
///
/// Evaluation draws example `index` of a sweep from its own stream so the
/// result does not depend on how examples are split across workers.
pub fn derived_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(tag)));
    rng.set_stream(index);
    rng
}
