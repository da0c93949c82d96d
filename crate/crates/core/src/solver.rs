//! Distributed gradient descent driven by the simulated uplink.
//!
//! Iteration `k` broadcasts `w_{k−1}` (ℓ1), lets every worker compute its
//! local gradient (ℓ2), pushes the gradients through the uplink (ℓ3) and
//! updates at the master (ℓ4). Batch mode waits for all `M` gradients;
//! mini-batch mode waits exactly `T_s` slots and averages what arrived.

use crate::config::{SimConfig, SyncMode};
use crate::error::{Error, Result};
use crate::model::{self, global_loss, lipschitz_estimate, local_gradient, GradientVector, ParamVector, WorkerShard};
use crate::netsim::{ChannelConfig, GradientRef, Network, SlotEvent};
use crate::scalar::Scalar;
use crate::stopping::{self, Prop2Report};

/// Per-iteration latency in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown<T> {
    pub l1_broadcast: T,
    pub l2_compute: T,
    pub l3_uplink: T,
    pub l4_update: T,
}

impl<T: Scalar> LatencyBreakdown<T> {
    pub fn zero() -> Self {
        Self {
            l1_broadcast: T::zero(),
            l2_compute: T::zero(),
            l3_uplink: T::zero(),
            l4_update: T::zero(),
        }
    }

    /// `c_k`.
    pub fn total(&self) -> T {
        self.l1_broadcast + self.l2_compute + self.l3_uplink + self.l4_update
    }
}

/// One row of a run's trace. Row `k = 0` describes the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub k: usize,
    /// `f(w_k)`.
    pub loss: T,
    pub latency: LatencyBreakdown<T>,
    /// `C_k` in seconds.
    pub cum_cost: T,
    /// `G(k)`, computed on normalised cost.
    pub objective: T,
    pub grads_received: usize,
    pub mean_queue_len: T,
    /// Norm of the averaged gradient applied in this iteration.
    pub grad_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingResult<T> {
    pub k: usize,
    pub objective: T,
    pub loss: T,
    pub w: ParamVector<T>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub records: Vec<IterationRecord<T>>,
    /// Where the causal rule stopped (or the last iteration if it never fired).
    pub causal: StoppingResult<T>,
    /// `w_0 ..= w_K` for the recorded iterations.
    pub trajectory: Vec<ParamVector<T>>,
    pub alpha: T,
    /// Divisor applied to seconds before they enter `G`.
    pub cost_scale: T,
    /// An iteration hit the slot cap; the trace ends before it.
    pub incomplete: bool,
    pub slot_trace: Vec<SlotEvent>,
}

impl<T: Scalar> RunOutput<T> {
    pub fn losses(&self) -> Vec<T> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `c_1 ..= c_K` divided by the cost scale, as used in `G`.
    pub fn normalized_costs(&self) -> Vec<T> {
        self.records[1..]
            .iter()
            .map(|r| r.latency.total() / self.cost_scale)
            .collect()
    }

    pub fn objectives(&self) -> Vec<T> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn prop2(&self, beta: T) -> Result<Prop2Report<T>> {
        stopping::check_prop2(&self.losses(), &self.normalized_costs(), beta)
    }
}

/// `w − α · Σ g / |received|`, summed in the order given. An empty set leaves `w` unchanged.
pub fn gd_step<T: Scalar>(w: &ParamVector<T>, gradients: &[&GradientVector<T>], alpha: T) -> Result<ParamVector<T>> {
    if alpha.is_nan() || alpha <= T::zero() {
        return Err(Error::config("step size must be positive"));
    }
    let Some(first) = gradients.first() else {
        return Ok(w.clone());
    };
    let mut sum = vec![T::zero(); w.dim()];
    for g in gradients {
        if g.dim() != w.dim() {
            return Err(Error::Dimension {
                expected: w.dim(),
                found: g.dim(),
            });
        }
        if g.iteration != first.iteration {
            return Err(Error::config("gradients from different iterations in one update"));
        }
        for (s, &v) in sum.iter_mut().zip(&g.values) {
            *s += v;
        }
    }
    let n = T::from_usize(gradients.len()).expect("count fits scalar");
    let next = w
        .as_slice()
        .iter()
        .zip(&sum)
        .map(|(&wi, &si)| wi - alpha * (si / n))
        .collect();
    ParamVector::from_vec(next)
}

/// `1/L` with the logistic smoothness bound, or the configured override.
pub fn step_size<T: Scalar>(config: &SimConfig, shards: &[WorkerShard<T>]) -> T {
    if let Some(a) = config.alpha {
        return T::lit(a);
    }
    let l = lipschitz_estimate(shards);
    if l > T::zero() {
        T::one() / l
    } else {
        T::one()
    }
}

pub fn channel_config(config: &SimConfig) -> ChannelConfig {
    ChannelConfig {
        workers: config.workers,
        background_prob: config.background_prob,
        backoff_base: config.backoff_base,
        max_backoff_doublings: config.max_backoff_doublings,
        slot_seconds: config.slot_seconds,
    }
}

/// Builds the network for `seed` and runs the configured mode.
pub fn run<T: Scalar>(config: &SimConfig, shards: &[WorkerShard<T>], seed: u64) -> Result<RunOutput<T>> {
    config.validate()?;
    let mut net = Network::new(channel_config(config), seed)?;
    if config.trace_slots {
        net.enable_trace();
    }
    match config.mode {
        SyncMode::Batch => run_batch(config, shards, &mut net),
        SyncMode::Minibatch => run_minibatch(config, shards, &mut net),
    }
}

pub fn run_batch<T: Scalar>(config: &SimConfig, shards: &[WorkerShard<T>], net: &mut Network) -> Result<RunOutput<T>> {
    drive(config, shards, net, SyncMode::Batch)
}

pub fn run_minibatch<T: Scalar>(
    config: &SimConfig,
    shards: &[WorkerShard<T>],
    net: &mut Network,
) -> Result<RunOutput<T>> {
    drive(config, shards, net, SyncMode::Minibatch)
}

struct Uplink {
    received: Vec<usize>,
    slots: u64,
    mean_queue_len: f64,
    aborted: bool,
}

fn uplink_batch(config: &SimConfig, net: &mut Network, ids: &[GradientRef]) -> Uplink {
    let up = net.run_until_all_delivered(ids, config.max_slots_per_iteration);
    Uplink {
        received: up.deliveries.iter().map(|(g, _)| g.worker).collect(),
        slots: up.slots_elapsed,
        mean_queue_len: up.stats.mean_queue_len(),
        aborted: up.aborted,
    }
}

fn uplink_window(config: &SimConfig, net: &mut Network, ids: &[GradientRef]) -> Result<Uplink> {
    let window = config.window();
    let up = net.run_window(window, ids)?;
    Ok(Uplink {
        received: up.delivered.iter().map(|g| g.worker).collect(),
        slots: window,
        mean_queue_len: up.stats.mean_queue_len(),
        aborted: false,
    })
}

fn drive<T: Scalar>(
    config: &SimConfig,
    shards: &[WorkerShard<T>],
    net: &mut Network,
    mode: SyncMode,
) -> Result<RunOutput<T>> {
    config.validate()?;
    if shards.len() != config.workers || net.workers() != config.workers {
        return Err(Error::config(format!(
            "{} shards and {} network nodes for {} workers",
            shards.len(),
            net.workers(),
            config.workers
        )));
    }
    if let Some(s) = shards.iter().enumerate().find(|(i, s)| s.worker_id() != i + 1) {
        return Err(Error::config(format!(
            "shard {} has worker id {}",
            s.0 + 1,
            s.1.worker_id()
        )));
    }
    let d = shards[0].dim();
    let alpha = step_size(config, shards);
    let beta = T::lit(config.beta);
    let keep = T::one() - beta;
    let scale = T::lit(config.normalizer_seconds());
    let slot = T::lit(config.slot_seconds);
    let fixed = LatencyBreakdown {
        l1_broadcast: T::lit(config.l1_seconds()),
        l2_compute: T::lit(config.l2_seconds),
        l3_uplink: T::zero(),
        l4_update: T::lit(config.l4_seconds),
    };

    let mut w = ParamVector::zeros(d);
    let f0 = global_loss(&w, shards)?;
    let mut records = vec![IterationRecord {
        k: 0,
        loss: f0,
        latency: LatencyBreakdown::zero(),
        cum_cost: T::zero(),
        objective: keep * f0,
        grads_received: 0,
        mean_queue_len: T::zero(),
        grad_norm: T::zero(),
    }];
    let mut trajectory = vec![w.clone()];
    let mut cum_cost = T::zero();
    let mut cum_scaled = T::zero();
    let mut causal_k = None;
    let mut incomplete = false;

    for k in 1..=config.max_iters {
        let grads = shards
            .iter()
            .map(|s| local_gradient(&w, s, k as u64))
            .collect::<Result<Vec<_>>>()?;
        let ids = (1..=config.workers)
            .map(|j| net.enqueue_gradient(j, k as u64))
            .collect::<Result<Vec<_>>>()?;

        let up = match mode {
            SyncMode::Batch => uplink_batch(config, net, &ids),
            SyncMode::Minibatch => uplink_window(config, net, &ids)?,
        };
        if up.aborted {
            incomplete = true;
            break;
        }

        let mut received = up.received;
        received.sort_unstable();
        let used: Vec<&GradientVector<T>> = received.iter().map(|&j| &grads[j - 1]).collect();
        let next = gd_step(&w, &used, alpha)?;
        let avg_norm = if used.is_empty() {
            T::zero()
        } else {
            let n = T::from_usize(used.len()).expect("count fits scalar");
            let avg: Vec<T> = (0..d)
                .map(|i| used.iter().map(|g| g.values[i]).sum::<T>() / n)
                .collect();
            model::norm(&avg)
        };

        let latency = LatencyBreakdown {
            l3_uplink: T::from_u64(up.slots).expect("slot count fits scalar") * slot,
            ..fixed
        };
        let c = latency.total();
        cum_cost += c;
        cum_scaled += c / scale;
        let loss = global_loss(&next, shards)?;
        let objective = beta * cum_scaled + keep * loss;
        let prev_objective = records[k - 1].objective;
        records.push(IterationRecord {
            k,
            loss,
            latency,
            cum_cost,
            objective,
            grads_received: received.len(),
            mean_queue_len: T::lit(up.mean_queue_len),
            grad_norm: avg_norm,
        });
        trajectory.push(next.clone());
        w = next;

        if causal_k.is_none() && objective >= prev_objective {
            causal_k = Some(k - 1);
            if config.stop_at_causal {
                break;
            }
        }
    }

    let k_c = causal_k.unwrap_or(records.len() - 1);
    let causal = StoppingResult {
        k: k_c,
        objective: records[k_c].objective,
        loss: records[k_c].loss,
        w: trajectory[k_c].clone(),
    };
    Ok(RunOutput {
        records,
        causal,
        trajectory,
        alpha,
        cost_scale: scale,
        incomplete,
        slot_trace: net.take_trace(),
    })
}
