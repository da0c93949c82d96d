//! Finite-sum logistic objective and its analytic gradient.
//!
//! The global objective is the average over workers of each worker's mean
//! per-sample loss `log(1 + exp(-y wᵀx))`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Model weights `w`. The dimension is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            values: vec![T::zero(); d],
        }
    }

    pub fn from_vec(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("parameter vector must have d >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("parameter vector has a non-finite entry"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn dot(&self, x: &[T]) -> T {
        dot(&self.values, x)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Negative => -T::one(),
            Label::Positive => T::one(),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    pub fn from_i8(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::config(format!("label must be -1 or +1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    pub features: Vec<T>,
    pub label: Label,
}

impl<T: Scalar> LabeledSample<T> {
    pub fn new(features: Vec<T>, label: Label) -> Self {
        Self { features, label }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Signed margin `y · wᵀx`.
    fn margin(&self, w: &ParamVector<T>) -> T {
        w.dot(&self.features) * self.label.sign::<T>()
    }
}

/// One worker's private samples. Worker ids are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerShard<T> {
    worker_id: usize,
    samples: Vec<LabeledSample<T>>,
}

impl<T: Scalar> WorkerShard<T> {
    pub fn new(worker_id: usize, samples: Vec<LabeledSample<T>>) -> Result<Self> {
        if worker_id == 0 {
            return Err(Error::config("worker ids are 1-based"));
        }
        let d = match samples.first() {
            Some(s) => s.dim(),
            None => return Err(Error::config(format!("worker {worker_id} has an empty shard"))),
        };
        if let Some(bad) = samples.iter().find(|s| s.dim() != d) {
            return Err(Error::Dimension {
                expected: d,
                found: bad.dim(),
            });
        }
        Ok(Self { worker_id, samples })
    }

    pub fn worker_id(&self) -> usize {
        self.worker_id
    }

    pub fn samples(&self) -> &[LabeledSample<T>] {
        &self.samples
    }

    /// `N_j`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    fn check_dim(&self, w: &ParamVector<T>) -> Result<()> {
        if w.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: w.dim(),
            });
        }
        Ok(())
    }
}

/// A worker's averaged gradient for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<T> {
    pub values: Vec<T>,
    pub worker_id: usize,
    pub iteration: u64,
}

impl<T: Scalar> GradientVector<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `log(1 + exp(-z))` without overflow for large `|z|`.
pub fn softplus_neg<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `σ(-z) = 1 / (1 + exp(z))`, evaluated on the side that cannot overflow.
pub fn sigmoid_neg<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        let e = (-z).exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + z.exp())
    }
}

/// Mean logistic loss over one shard.
pub fn local_loss<T: Scalar>(w: &ParamVector<T>, shard: &WorkerShard<T>) -> Result<T> {
    shard.check_dim(w)?;
    let total: T = shard.samples.iter().map(|s| softplus_neg(s.margin(w))).sum();
    Ok(total / T::from_usize(shard.len()).expect("shard size fits scalar"))
}

/// Mean gradient of the logistic loss over one shard, tagged with the iteration it belongs to.
pub fn local_gradient<T: Scalar>(
    w: &ParamVector<T>,
    shard: &WorkerShard<T>,
    iteration: u64,
) -> Result<GradientVector<T>> {
    shard.check_dim(w)?;
    let mut acc = vec![T::zero(); w.dim()];
    for s in &shard.samples {
        let y = s.label.sign::<T>();
        let coef = -y * sigmoid_neg(s.margin(w));
        for (a, &x) in acc.iter_mut().zip(&s.features) {
            *a += coef * x;
        }
    }
    let n = T::from_usize(shard.len()).expect("shard size fits scalar");
    for a in &mut acc {
        *a /= n;
    }
    Ok(GradientVector {
        values: acc,
        worker_id: shard.worker_id,
        iteration,
    })
}

/// `f(w) = (1/M) Σ_j f_j(w)`.
pub fn global_loss<T: Scalar>(w: &ParamVector<T>, shards: &[WorkerShard<T>]) -> Result<T> {
    if shards.is_empty() {
        return Err(Error::config("global loss needs at least one shard"));
    }
    let mut total = T::zero();
    for shard in shards {
        total += local_loss(w, shard)?;
    }
    Ok(total / T::from_usize(shards.len()).expect("worker count fits scalar"))
}

/// Fraction of samples on the correct side of `w·x = 0`; points on the
/// hyperplane count as positive predictions.
pub fn accuracy<T: Scalar>(w: &ParamVector<T>, samples: &[LabeledSample<T>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| {
            let predicted = if w.dot(&s.features) >= T::zero() {
                Label::Positive
            } else {
                Label::Negative
            };
            predicted == s.label
        })
        .count();
    correct as f64 / samples.len() as f64
}

/// Smoothness bound `max_i ‖x_i‖² / 4` of the logistic loss.
pub fn lipschitz_estimate<T: Scalar>(shards: &[WorkerShard<T>]) -> T {
    shards
        .iter()
        .flat_map(|s| s.samples.iter())
        .map(|s| dot(&s.features, &s.features))
        .fold(T::zero(), T::max)
        / T::lit(4.0)
}

/// Shuffles `samples` with a seeded permutation, truncates to `M·⌊N/M⌋` and deals
/// equal contiguous blocks to workers `1..=M`.
pub fn partition_dataset<T: Scalar>(
    samples: &[LabeledSample<T>],
    workers: usize,
    seed: u64,
) -> Result<Vec<WorkerShard<T>>> {
    if workers == 0 {
        return Err(Error::config("need at least one worker"));
    }
    if workers > samples.len() {
        return Err(Error::config(format!(
            "cannot split {} samples across {workers} workers",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let per_worker = samples.len() / workers;
    order
        .chunks_exact(per_worker)
        .take(workers)
        .enumerate()
        .map(|(j, idx)| WorkerShard::new(j + 1, idx.iter().map(|&i| samples[i].clone()).collect()))
        .collect()
}
