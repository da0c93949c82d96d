use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the master decides when an iteration's uplink phase is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    /// Wait for all `M` gradients.
    Batch,
    /// Wait a fixed window of `T_s` slots and use whatever arrived.
    #[serde(alias = "mini-batch")]
    Minibatch,
}

impl std::str::FromStr for SyncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "batch" => Ok(SyncMode::Batch),
            "minibatch" | "mini-batch" => Ok(SyncMode::Minibatch),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SyncMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SyncMode::Batch => "batch",
            SyncMode::Minibatch => "minibatch",
        })
    }
}

/// Scale applied to cumulative seconds before they enter `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostNormalizer {
    /// Raw seconds.
    None,
    /// Divide by `K · (ℓ1 + ℓ2 + ℓ4 + M slots)`, the cost of `K` iterations
    /// in which every worker gets the channel on its first attempt.
    Horizon,
    /// Divide by a fixed number of seconds.
    Fixed(f64),
}

impl std::str::FromStr for CostNormalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CostNormalizer::None),
            "horizon" => Ok(CostNormalizer::Horizon),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .map(CostNormalizer::Fixed)
                .ok_or_else(|| {
                    Error::config(format!(
                        "normalizer must be none, horizon or a positive number of seconds, got {other:?}"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// Binary 0/1 subset of MNIST read from IDX files in `dir`.
    Mnist {
        dir: PathBuf,
        /// Target sample count after seeded truncation; `None` keeps all.
        #[serde(default = "default_mnist_count")]
        count: Option<usize>,
    },
    /// Separable Gaussian blobs.
    Synth {
        d: usize,
        n: usize,
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_mnist_count() -> Option<usize> {
    Some(crate::data::DEFAULT_SAMPLE_COUNT)
}

fn default_margin() -> f64 {
    2.0
}

impl DatasetSpec {
    /// Parses `d=2,n=100[,margin=2][,seed=0]`.
    pub fn parse_synth(s: &str) -> Result<Self> {
        let (mut d, mut n, mut margin, mut seed) = (None, None, default_margin(), 0u64);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("synth parameter {part:?} is not key=value")))?;
            let bad = || Error::config(format!("bad value for synth parameter {key}: {value:?}"));
            match key {
                "d" => d = Some(value.parse().map_err(|_| bad())?),
                "n" => n = Some(value.parse().map_err(|_| bad())?),
                "margin" => margin = value.parse().map_err(|_| bad())?,
                "seed" => seed = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::config(format!("unknown synth parameter {key:?}"))),
            }
        }
        match (d, n) {
            (Some(d), Some(n)) => Ok(DatasetSpec::Synth { d, n, margin, seed }),
            _ => Err(Error::config("synth dataset needs both d and n")),
        }
    }
}

/// Every knob of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub workers: usize,
    pub background_prob: f64,
    pub mode: SyncMode,
    /// Mini-batch window `T_s` in slots; defaults to `4·M`.
    pub window_slots: Option<u64>,
    pub beta: f64,
    /// Constant step size; defaults to `1/L`.
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub seed: u64,
    pub runs: usize,
    pub slot_seconds: f64,
    pub payload_bits: u64,
    pub downlink_rate_bps: f64,
    pub backoff_base: u64,
    pub max_backoff_doublings: u32,
    pub max_slots_per_iteration: u64,
    pub l2_seconds: f64,
    pub l4_seconds: f64,
    pub dataset: DatasetSpec,
    pub cost_normalizer: CostNormalizer,
    /// End the run when the causal rule fires instead of recording the full horizon.
    pub stop_at_causal: bool,
    pub trace_slots: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            workers: 10,
            background_prob: 0.02,
            mode: SyncMode::Batch,
            window_slots: None,
            beta: 0.5,
            alpha: None,
            max_iters: 100,
            seed: 1,
            runs: 1,
            slot_seconds: 1e-6,
            payload_bits: 25_088,
            downlink_rate_bps: 1e6,
            backoff_base: 2,
            max_backoff_doublings: 16,
            max_slots_per_iteration: 10_000_000,
            l2_seconds: 50e-6,
            l4_seconds: 10e-6,
            dataset: DatasetSpec::Mnist {
                dir: PathBuf::from("data/mnist"),
                count: default_mnist_count(),
            },
            cost_normalizer: CostNormalizer::Horizon,
            stop_at_causal: false,
            trace_slots: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.workers < 1 {
            return fail("workers must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.background_prob) {
            return fail(format!("background probability {} not in [0, 1]", self.background_prob));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta {} not in [0, 1]", self.beta));
        }
        if self.window_slots == Some(0) {
            return fail("window T_s must be >= 1 slot".into());
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return fail(format!("step size {a} must be positive"));
            }
        }
        if self.max_iters < 1 {
            return fail("max iterations must be >= 1".into());
        }
        if self.runs < 1 {
            return fail("runs must be >= 1".into());
        }
        if !(self.slot_seconds > 0.0 && self.slot_seconds.is_finite()) {
            return fail("slot duration must be positive".into());
        }
        if !(self.downlink_rate_bps > 0.0 && self.downlink_rate_bps.is_finite()) {
            return fail("downlink rate must be positive".into());
        }
        if self.payload_bits < 1 {
            return fail("payload must be >= 1 bit".into());
        }
        if self.backoff_base < 1 {
            return fail("backoff base window must be >= 1".into());
        }
        if self.max_slots_per_iteration < 1 {
            return fail("slot cap must be >= 1".into());
        }
        for (name, v) in [("l2", self.l2_seconds), ("l4", self.l4_seconds)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} latency must be >= 0"));
            }
        }
        if let CostNormalizer::Fixed(s) = self.cost_normalizer {
            if !(s > 0.0 && s.is_finite()) {
                return fail("fixed cost normalizer must be positive".into());
            }
        }
        match &self.dataset {
            DatasetSpec::Synth { d, n, margin, .. } => {
                if *d < 1 || *n < 1 {
                    return fail("synth dataset needs d >= 1 and n >= 1".into());
                }
                if !(margin.is_finite() && *margin >= 0.0) {
                    return fail("synth margin must be finite and >= 0".into());
                }
            }
            DatasetSpec::Mnist { count, .. } => {
                if *count == Some(0) {
                    return fail("MNIST sample count must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// `T_s`, falling back to `4·M`.
    pub fn window(&self) -> u64 {
        self.window_slots.unwrap_or(4 * self.workers as u64)
    }

    /// Broadcast latency `ℓ1 = payload / C`.
    pub fn l1_seconds(&self) -> f64 {
        self.payload_bits as f64 / self.downlink_rate_bps
    }

    /// Divisor applied to cumulative seconds inside `G`.
    pub fn normalizer_seconds(&self) -> f64 {
        match self.cost_normalizer {
            CostNormalizer::None => 1.0,
            CostNormalizer::Fixed(s) => s,
            CostNormalizer::Horizon => {
                let per_iter =
                    self.l1_seconds() + self.l2_seconds + self.l4_seconds + self.workers as f64 * self.slot_seconds;
                self.max_iters as f64 * per_iter
            }
        }
    }

    /// Same experiment apart from mode and window.
    pub fn same_except_mode(&self, other: &SimConfig) -> bool {
        let mut a = self.clone();
        a.mode = other.mode;
        a.window_slots = other.window_slots;
        &a == other
    }

    /// Seed for run `run_id`.
    pub fn run_seed(&self, run_id: usize) -> u64 {
        self.seed.wrapping_add(run_id as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
        assert_eq!(SimConfig::default().window(), 40);
        assert!((SimConfig::default().l1_seconds() - 0.025088).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range() {
        let base = SimConfig::default();
        for bad in [
            SimConfig {
                workers: 0,
                ..base.clone()
            },
            SimConfig {
                background_prob: 1.5,
                ..base.clone()
            },
            SimConfig {
                beta: -0.1,
                ..base.clone()
            },
            SimConfig {
                window_slots: Some(0),
                ..base.clone()
            },
            SimConfig {
                max_iters: 0,
                ..base.clone()
            },
            SimConfig {
                runs: 0,
                ..base.clone()
            },
            SimConfig {
                alpha: Some(0.0),
                ..base.clone()
            },
        ] {
            assert!(bad.validate().unwrap_err().is_config(), "{bad:?}");
        }
    }

    #[test]
    fn synth_spec_parsing() {
        assert_eq!(
            DatasetSpec::parse_synth("d=2,n=100").unwrap(),
            DatasetSpec::Synth {
                d: 2,
                n: 100,
                margin: 2.0,
                seed: 0
            }
        );
        assert_eq!(
            DatasetSpec::parse_synth("n=5, d=3, margin=0.5, seed=9").unwrap(),
            DatasetSpec::Synth {
                d: 3,
                n: 5,
                margin: 0.5,
                seed: 9
            }
        );
        assert!(DatasetSpec::parse_synth("d=2").is_err());
        assert!(DatasetSpec::parse_synth("d=2,n=x").is_err());
        assert!(DatasetSpec::parse_synth("d=2,n=3,q=1").is_err());
    }

    #[test]
    fn mode_only_comparison() {
        let a = SimConfig::default();
        let b = SimConfig {
            mode: SyncMode::Minibatch,
            window_slots: Some(8),
            ..a.clone()
        };
        assert!(a.same_except_mode(&b));
        let c = SimConfig {
            workers: 5,
            ..b.clone()
        };
        assert!(!a.same_except_mode(&c));
    }
}
