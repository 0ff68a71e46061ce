//! Momentum contrast pieces: key-encoder EMA, the negative queue, cosine
//! similarity, InfoNCE and loss composition.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{log_sum_exp, COSINE_EPS};
use crate::nn::{ModelParams, Representation};
use crate::tensor::{dot, Matrix, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContrastError {
    #[error("{key} out of range: {bound}")]
    Config { key: &'static str, bound: &'static str },
    #[error("vector norm {norm:e} is too small for cosine similarity")]
    Degenerate { norm: f64 },
    #[error("non-finite {component} loss")]
    NonFinite { component: &'static str },
    #[error("batch of {batch} exceeds queue capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },
    #[error("key/query mismatch at {path}")]
    Mismatch { path: String },
    #[error("representation width {got}, expected {expected}")]
    Width { got: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    /// Queue capacity K.
    pub queue_size: usize,
    /// Hard negatives per pair.
    pub n_h: usize,
    pub alpha: f64,
    pub beta: f64,
    pub momentum: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.07,
            queue_size: 4096,
            n_h: 64,
            alpha: 1.0,
            beta: 0.5,
            momentum: 0.999,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), ContrastError> {
        let err = |key, bound| Err(ContrastError::Config { key, bound });
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return err("tau", "must be > 0");
        }
        if self.queue_size < 1 {
            return err("queue_size", "must be >= 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return err("alpha", "must be >= 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return err("beta", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return err("momentum", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// `θ_k ← m·θ_k + (1−m)·θ_q` over the key tensors, matched by path against
/// the leading query tensors.
pub fn momentum_update<T: Scalar>(
    key: &mut ModelParams<T>,
    query: &ModelParams<T>,
    m: f64,
) -> Result<(), ContrastError> {
    if key.len() > query.len() {
        return Err(ContrastError::Mismatch {
            path: String::from("*"),
        });
    }
    for (i, path) in key.paths().iter().enumerate() {
        if *path != query.paths()[i] || key.values()[i].shape() != query.values()[i].shape() {
            return Err(ContrastError::Mismatch { path: path.clone() });
        }
    }
    let n = key.len();
    momentum_update_values(key.values_mut(), &query.values()[..n], m);
    Ok(())
}

pub fn momentum_update_values<T: Scalar>(key: &mut [Matrix<T>], query: &[Matrix<T>], m: f64) {
    let mk = T::from_f64(m);
    let mq = T::from_f64(1.0 - m);
    for (k, q) in key.iter_mut().zip(query) {
        for (a, b) in k.data_mut().iter_mut().zip(q.data()) {
            *a = mk * *a + mq * *b;
        }
    }
}

/// Query parameters with their momentum-updated key encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumPair<T> {
    pub query: ModelParams<T>,
    pub key: ModelParams<T>,
    pub m: f64,
}

impl<T: Scalar> MomentumPair<T> {
    /// The key encoder starts as an exact copy of the query encoder.
    pub fn new(query: ModelParams<T>, m: f64) -> Self {
        MomentumPair {
            key: query.encoder(),
            query,
            m,
        }
    }

    pub fn update(&mut self) -> Result<(), ContrastError> {
        momentum_update(&mut self.key, &self.query, self.m)
    }
}

/// Fixed-capacity FIFO of key representations, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryQueue {
    capacity: usize,
    entries: VecDeque<Representation>,
}

impl MemoryQueue {
    pub fn new(capacity: usize) -> Self {
        MemoryQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Representation> {
        self.entries.iter()
    }

    /// Appends `batch` newest-last and evicts the oldest overflow. Returns the
    /// number of evicted entries.
    pub fn step(&mut self, batch: Vec<Representation>) -> Result<usize, ContrastError> {
        if batch.len() > self.capacity {
            return Err(ContrastError::BatchTooLarge {
                batch: batch.len(),
                capacity: self.capacity,
            });
        }
        self.entries.extend(batch);
        let evict = self.entries.len().saturating_sub(self.capacity);
        self.entries.drain(..evict);
        Ok(evict)
    }

    /// Entries stacked as rows, oldest first.
    pub fn to_matrix<T: Scalar>(&self, width: usize) -> Result<Matrix<T>, ContrastError> {
        let mut data = Vec::with_capacity(self.len() * width);
        for e in &self.entries {
            if e.dim() != width {
                return Err(ContrastError::Width {
                    got: e.dim(),
                    expected: width,
                });
            }
            data.extend(e.vector.iter().map(|v| T::from_f64(*v)));
        }
        Ok(Matrix::from_vec(self.len(), width, data))
    }
}

pub fn step_queue(queue: &mut MemoryQueue, batch: Vec<Representation>) -> Result<(), ContrastError> {
    queue.step(batch).map(|_| ())
}

fn checked_norm(v: &[f64]) -> Result<f64, ContrastError> {
    let n = Float::sqrt(dot(v, v));
    if !(n > COSINE_EPS) {
        return Err(ContrastError::Degenerate { norm: n });
    }
    Ok(n)
}

pub fn cosine_sim(a: &Representation, b: &Representation) -> Result<f64, ContrastError> {
    if a.dim() != b.dim() {
        return Err(ContrastError::Width {
            got: b.dim(),
            expected: a.dim(),
        });
    }
    let na = checked_norm(&a.vector)?;
    let nb = checked_norm(&b.vector)?;
    Ok((dot(&a.vector, &b.vector) / (na * nb)).clamp(-1.0, 1.0))
}

/// `−log softmax` of the positive among `{positive} ∪ negatives` with cosine
/// logits scaled by `1/tau`. Empty negatives give exactly 0.
pub fn info_nce(
    anchor: &Representation,
    positive: &Representation,
    negatives: &[Representation],
    tau: f64,
) -> Result<f64, ContrastError> {
    let mut logits = Vec::with_capacity(1 + negatives.len());
    logits.push(cosine_sim(anchor, positive)? / tau);
    for n in negatives {
        logits.push(cosine_sim(anchor, n)? / tau);
    }
    Ok((log_sum_exp(&logits) - logits[0]).max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub ce: f64,
    pub ctr_cs: f64,
    pub ctr_ch: f64,
    pub ctr_gs: f64,
    pub ctr_gh: f64,
    pub ctr_c: f64,
    pub ctr_g: f64,
    pub total: f64,
}

impl LossBundle {
    /// Componentwise mean.
    pub fn mean(items: &[LossBundle]) -> LossBundle {
        let n = items.len().max(1) as f64;
        let mut out = LossBundle::default();
        for b in items {
            out.ce += b.ce;
            out.ctr_cs += b.ctr_cs;
            out.ctr_ch += b.ctr_ch;
            out.ctr_gs += b.ctr_gs;
            out.ctr_gh += b.ctr_gh;
            out.ctr_c += b.ctr_c;
            out.ctr_g += b.ctr_g;
            out.total += b.total;
        }
        out.ce /= n;
        out.ctr_cs /= n;
        out.ctr_ch /= n;
        out.ctr_gs /= n;
        out.ctr_gh /= n;
        out.ctr_c /= n;
        out.ctr_g /= n;
        out.total /= n;
        out
    }
}

/// Weights applied to `(ce, cs, ch, gs, gh)` to form the total loss.
pub fn loss_weights(cfg: &ContrastiveConfig, hard_mask: bool) -> [f64; 5] {
    let hard = if hard_mask { 0.5 * cfg.beta } else { 0.0 };
    [1.0, 0.5 * cfg.alpha, hard, 0.5 * cfg.alpha, hard]
}

pub fn compose_losses(
    ce: f64,
    ctr_cs: f64,
    ctr_ch: f64,
    ctr_gs: f64,
    ctr_gh: f64,
    cfg: &ContrastiveConfig,
    hard_mask: bool,
) -> Result<LossBundle, ContrastError> {
    for (v, component) in [
        (ce, "ce"),
        (ctr_cs, "ctrCS"),
        (ctr_ch, "ctrCH"),
        (ctr_gs, "ctrGS"),
        (ctr_gh, "ctrGH"),
    ] {
        if !v.is_finite() {
            return Err(ContrastError::NonFinite { component });
        }
    }
    let (ctr_ch, ctr_gh) = if hard_mask { (ctr_ch, ctr_gh) } else { (0.0, 0.0) };
    let ctr_c = cfg.alpha * ctr_cs + cfg.beta * ctr_ch;
    let ctr_g = cfg.alpha * ctr_gs + cfg.beta * ctr_gh;
    Ok(LossBundle {
        ce,
        ctr_cs,
        ctr_ch,
        ctr_gs,
        ctr_gh,
        ctr_c,
        ctr_g,
        total: ce + 0.5 * ctr_c + 0.5 * ctr_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn r(v: &[f64]) -> Representation {
        Representation::new(v.to_vec())
    }

    #[test]
    fn defaults_and_validation() {
        let c = ContrastiveConfig::default();
        assert_eq!((c.tau, c.queue_size, c.n_h), (0.07, 4096, 64));
        assert_eq!((c.alpha, c.beta, c.momentum), (1.0, 0.5, 0.999));
        assert!(c.validate().is_ok());
        let bad = ContrastiveConfig { tau: 0.0, ..c.clone() };
        assert_eq!(
            bad.validate(),
            Err(ContrastError::Config { key: "tau", bound: "must be > 0" })
        );
        assert!(ContrastiveConfig { queue_size: 0, ..c.clone() }.validate().is_err());
        assert!(ContrastiveConfig { beta: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn momentum_arithmetic() {
        let mut k = vec![Matrix::from_vec(1, 1, vec![2.0f64])];
        let q = vec![Matrix::from_vec(1, 1, vec![1.0f64])];
        momentum_update_values(&mut k, &q, 0.999);
        assert!((k[0].item() - 1.999).abs() < 1e-12);
        momentum_update_values(&mut k, &q, 1.0);
        assert!((k[0].item() - 1.999).abs() < 1e-12);
        momentum_update_values(&mut k, &q, 0.0);
        assert_eq!(k[0].item(), 1.0);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_sim(&r(&[3.0, 4.0]), &r(&[3.0, 4.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&r(&[1.0, 0.0]), &r(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine_sim(&r(&[1.0, 0.0]), &r(&[-1.0, 0.0])).unwrap(), -1.0);
        assert!(matches!(
            cosine_sim(&r(&[0.0, 0.0]), &r(&[1.0, 0.0])),
            Err(ContrastError::Degenerate { .. })
        ));
    }

    #[test]
    fn info_nce_cases() {
        let a = r(&[1.0, 0.0]);
        let got = info_nce(&a, &a, &[r(&[0.0, 1.0]), r(&[-1.0, 0.0])], 1.0).unwrap();
        let e = core::f64::consts::E;
        let want = -(e / (e + 1.0 + 1.0 / e)).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.4076).abs() < 1e-4);
        assert_eq!(info_nce(&a, &a, &[], 0.07).unwrap(), 0.0);
        let same: Vec<_> = (0..7).map(|_| r(&[2.0, 0.0])).collect();
        let got = info_nce(&a, &a, &same, 0.07).unwrap();
        assert!((got - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn compose_cases() {
        let c = ContrastiveConfig::default();
        assert_eq!(compose_losses(1.0, 0.0, 0.0, 0.0, 0.0, &c, true).unwrap().total, 1.0);
        assert_eq!(compose_losses(0.0, 1.0, 0.0, 1.0, 0.0, &c, true).unwrap().total, 1.0);
        let b = compose_losses(2.0, 1.0, 2.0, 1.0, 2.0, &c, true).unwrap();
        assert_eq!((b.ctr_c, b.ctr_g, b.total), (2.0, 2.0, 4.0));
        let b = compose_losses(2.0, 1.0, 2.0, 1.0, 2.0, &c, false).unwrap();
        assert_eq!((b.ctr_ch, b.ctr_gh, b.total), (0.0, 0.0, 3.0));
        assert_eq!(
            compose_losses(f64::NAN, 0.0, 0.0, 0.0, 0.0, &c, true),
            Err(ContrastError::NonFinite { component: "ce" })
        );
        assert_eq!(
            compose_losses(0.0, 0.0, 0.0, 0.0, f64::INFINITY, &c, true),
            Err(ContrastError::NonFinite { component: "ctrGH" })
        );
    }

    #[test]
    fn queue_fifo() {
        let mut q = MemoryQueue::new(3);
        q.step((1..=3).map(|i| r(&[i as f64])).collect()).unwrap();
        assert_eq!(q.step(vec![r(&[4.0])]).unwrap(), 1);
        let got: Vec<f64> = q.iter().map(|e| e.vector[0]).collect();
        assert_eq!(got, vec![2.0, 3.0, 4.0]);
        assert!(q.step((0..4).map(|_| r(&[0.0])).collect()).is_err());

        let mut big = MemoryQueue::new(4096);
        big.step(vec![r(&[1.0]), r(&[2.0])]).unwrap();
        assert_eq!(big.len(), 2);
        let m: Matrix<f32> = big.to_matrix(1).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0]);
    }
}
