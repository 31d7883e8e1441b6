//! Mini-batch training.
//!
//! Randomness comes from one ChaCha8 generator seeded with `seed` on stream
//! 1 (initial weights use stream 0 through [`build_network`]). Each epoch
//! draws a permutation of the records; then, per sample in permuted order,
//! the stop iteration `k`, the D4 element and a 64-bit dropout seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backward, build_network, forward_cached, loss, loss_backward, make_sample, LossParts, NetworkParams, Pass, D4_ORDER};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Tensor};
use crate::probgen::DatasetRecord;

pub const MAX_STOP_ITERATION: usize = 99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KDistribution {
    Poisson { lambda: f64 },
    /// Discrete uniform on `1..=100`.
    Uniform,
}

impl KDistribution {
    /// Parses `P5`, `P10`, `P30` (any positive rate) or `U`.
    pub fn preset(name: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown k distribution '{name}' (use P<λ> or U)"));
        match name {
            "U" | "u" => Ok(Self::Uniform),
            _ => {
                let l: f64 = name
                    .strip_prefix(['P', 'p'])
                    .ok_or_else(bad)?
                    .parse()
                    .map_err(|_| bad())?;
                if l > 0.0 && l.is_finite() {
                    Ok(Self::Poisson { lambda: l })
                } else {
                    Err(bad())
                }
            }
        }
    }

    /// Method label as used in result tables, e.g. `CNN P(10)`.
    pub fn label(&self) -> String {
        match self {
            Self::Poisson { lambda } => format!("CNN P({lambda})"),
            Self::Uniform => "CNN U[1,100]".into(),
        }
    }

    /// Draws a stop iteration, clamped into `[1, max_k]`.
    pub fn sample(&self, rng: &mut impl Rng, max_k: usize) -> usize {
        let k = match self {
            Self::Poisson { lambda } => Poisson::new(*lambda)
                .expect("validated rate")
                .sample(rng) as usize,
            Self::Uniform => rng.random_range(1..=100),
        };
        k.clamp(1, max_k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_distribution: KDistribution,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_distribution: KDistribution::Poisson { lambda: 10.0 },
            beta: 1.0,
            epochs: 30,
            batch_size: 64,
            lr: AdamConfig::default().lr,
            dropout: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if let KDistribution::Poisson { lambda } = self.k_distribution {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return bad(format!("Poisson rate must be positive, got {lambda}"));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// The epoch at whose start the learning rate is halved.
    pub fn halving_epoch(&self) -> usize {
        self.epochs / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub conf: f64,
    pub vol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
}

struct Draw {
    record: usize,
    k: usize,
    transform: usize,
    dropout_seed: u64,
}

fn sample_gradient(
    params: &NetworkParams,
    record: &DatasetRecord,
    d: &Draw,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, LossParts)> {
    let s = make_sample(record, d.k, d.transform)?;
    let mut rng = ChaCha8Rng::seed_from_u64(d.dropout_seed);
    let cache = forward_cached(params, &s.input()?, Pass::Train { dropout: cfg.dropout }, &mut rng)?;
    let pred = cache.output().data();
    let parts = loss(pred, s.target.data(), cfg.beta)?;
    let g = loss_backward(pred, s.target.data(), cfg.beta)?;
    let grads = backward(params, &cache, &Tensor::new(cache.output().shape(), g)?)?;
    Ok((grads, parts))
}

/// Trains a fresh network on `records`, reporting each finished epoch.
pub fn train(
    records: &[DatasetRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if let Some(i) = records.iter().position(|r| r.frame_count() < 2) {
        return Err(Error::InvalidParameter(format!("record {i} has fewer than 2 frames")));
    }
    let mut params = build_network(cfg.seed);
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if epoch == cfg.halving_epoch() {
            adam.config.lr *= 0.5;
        }
        order.shuffle(&mut rng);
        let draws: Vec<Draw> = order
            .iter()
            .map(|&record| {
                let max_k = MAX_STOP_ITERATION.min(records[record].frame_count() - 1);
                Draw {
                    record,
                    k: cfg.k_distribution.sample(&mut rng, max_k),
                    transform: rng.random_range(0..D4_ORDER),
                    dropout_seed: rng.random(),
                }
            })
            .collect();

        let mut sums = LossParts::default();
        for (batch, chunk) in draws.chunks(cfg.batch_size).enumerate() {
            let fail = |message: String| Error::Training {
                epoch,
                batch,
                lr: adam.config.lr,
                message,
            };
            let results: Vec<_> = chunk
                .par_iter()
                .map(|d| sample_gradient(&params, &records[d.record], d, cfg))
                .collect::<Result<_>>()?;
            let mut total = NetworkParams::zeros();
            for (j, (g, parts)) in results.iter().enumerate() {
                if !parts.total.is_finite() {
                    return Err(fail(format!(
                        "non-finite loss on record {} (k = {})",
                        chunk[j].record, chunk[j].k
                    )));
                }
                total.accumulate(g);
                sums.total += parts.total;
                sums.conf += parts.conf;
                sums.vol += parts.vol;
            }
            total.scale(1.0 / chunk.len() as f64);
            let grads = total.flatten();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(fail("non-finite gradient".into()));
            }
            adam_step(&mut flat, &grads, &mut adam)?;
            params.assign_flat(&flat)?;
        }
        let n = draws.len() as f64;
        let entry = EpochLog {
            epoch,
            lr: adam.config.lr,
            loss: sums.total / n,
            conf: sums.conf / n,
            vol: sums.vol / n,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(KDistribution::preset("P10").unwrap(), KDistribution::Poisson { lambda: 10.0 });
        assert_eq!(KDistribution::preset("U").unwrap(), KDistribution::Uniform);
        assert!(KDistribution::preset("P0").is_err());
        assert!(KDistribution::preset("Q5").is_err());
        assert_eq!(KDistribution::Poisson { lambda: 5.0 }.label(), "CNN P(5)");
        assert_eq!(KDistribution::Uniform.label(), "CNN U[1,100]");
    }

    #[test]
    fn draws_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = KDistribution::Poisson { lambda: 0.01 };
        let u = KDistribution::Uniform;
        for _ in 0..2000 {
            assert_eq!(p.sample(&mut rng, 99), 1);
            assert!((1..=99).contains(&u.sample(&mut rng, 99)));
        }
        let big = KDistribution::Poisson { lambda: 500.0 };
        assert_eq!(big.sample(&mut rng, 99), 99);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().halving_epoch(), 15);
        for c in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { beta: -1.0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
