//! Slot-synchronous simulator of the uplink multiple-access channel.
//!
//! Each worker owns an unbounded FIFO fed by Bernoulli(`p_b`) background
//! arrivals and by the gradients the solver enqueues. The channel carries at
//! most one packet per slot: a lone transmitter succeeds, two or more
//! collide and every collider backs off with a doubled window.
//!
//! Within slot `t` the order is: background arrivals, transmissions of every
//! head-of-line packet scheduled for `t`, resolution. A packet that reaches
//! the head of its queue during slot `t` first transmits at `t + 1`; a
//! gradient enqueued between slots into an empty queue transmits in the next
//! simulated slot.
//!
//! Slots in which nothing can happen are skipped in bulk; background arrivals
//! are drawn as geometric inter-arrival gaps, which is equivalent in law to a
//! per-slot coin flip.

mod backoff;
mod queue;
mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

pub use backoff::BackoffState;
pub use queue::{Departure, GradientRef, PacketKind, QueuedPacket};
pub use trace::{write_slot_trace, SlotEvent, SlotEventKind};

use crate::error::{Error, Result};
use queue::FifoQueue;

/// Packets the channel can carry per slot.
pub const CHANNEL_CAPACITY: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub workers: usize,
    pub background_prob: f64,
    pub backoff_base: u64,
    pub max_backoff_doublings: u32,
    pub slot_seconds: f64,
}

impl ChannelConfig {
    pub fn new(workers: usize, background_prob: f64) -> Self {
        Self {
            workers,
            background_prob,
            backoff_base: 2,
            max_backoff_doublings: 16,
            slot_seconds: 1e-6,
        }
    }

    pub fn with_backoff_base(mut self, b: u64) -> Self {
        self.backoff_base = b;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("network needs at least one worker"));
        }
        if !(0.0..=1.0).contains(&self.background_prob) {
            return Err(Error::config("background probability must lie in [0, 1]"));
        }
        if self.backoff_base == 0 {
            return Err(Error::config("backoff base window must be >= 1"));
        }
        if self.slot_seconds.is_nan() || self.slot_seconds <= 0.0 {
            return Err(Error::config("slot duration must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotClock {
    current_slot: u64,
    slot_seconds: f64,
}

impl SlotClock {
    /// Index of the next slot to be simulated.
    pub fn current_slot(&self) -> u64 {
        self.current_slot
    }

    pub fn slot_seconds(&self) -> f64 {
        self.slot_seconds
    }

    pub fn seconds(&self, slots: u64) -> f64 {
        slots as f64 * self.slot_seconds
    }
}

#[derive(Debug, Clone)]
struct Node {
    queue: FifoQueue,
    backoff: BackoffState,
    next_arrival: Option<u64>,
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: u64,
    pub transmitters: usize,
    pub delivered: Option<Departure>,
    /// Queue length of every worker at the end of the slot.
    pub queue_lengths: Vec<u64>,
}

impl SlotOutcome {
    pub fn collided(&self) -> bool {
        self.transmitters > CHANNEL_CAPACITY
    }

    pub fn idle(&self) -> bool {
        self.transmitters == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct SlotResult {
    transmitters: usize,
    delivered: Option<Departure>,
}

/// Queue occupancy over a stretch of slots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueStats {
    pub slots: u64,
    /// Σ over slots of Σ over workers of the end-of-slot queue length.
    pub occupancy_sum: u128,
    pub collisions: u64,
    pub deliveries: u64,
    pub final_lengths: Vec<u64>,
}

impl QueueStats {
    /// Time- and worker-averaged queue length.
    pub fn mean_queue_len(&self) -> f64 {
        let workers = self.final_lengths.len().max(1) as f64;
        if self.slots == 0 {
            return self.final_lengths.iter().sum::<u64>() as f64 / workers;
        }
        self.occupancy_sum as f64 / (self.slots as f64 * workers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchUplink {
    /// Gradients with the slot in which each reached the master.
    pub deliveries: Vec<(GradientRef, u64)>,
    /// Slots from the first uplink slot up to and including the last delivery.
    pub slots_elapsed: u64,
    pub stats: QueueStats,
    /// The slot cap was hit before every gradient arrived.
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowUplink {
    /// Gradients of the requested set that arrived within the window, in arrival order.
    pub delivered: Vec<GradientRef>,
    pub stats: QueueStats,
}

pub struct Network {
    config: ChannelConfig,
    clock: SlotClock,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    arrivals: Option<Geometric>,
    trace: Option<Vec<SlotEvent>>,
    transmitters: Vec<usize>,
    queued: u64,
}

impl Network {
    pub fn new(config: ChannelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrivals = if config.background_prob > 0.0 {
            Some(Geometric::new(config.background_prob).map_err(|e| Error::config(e.to_string()))?)
        } else {
            None
        };
        let nodes = (0..config.workers)
            .map(|_| Node {
                queue: FifoQueue::default(),
                backoff: BackoffState::new(config.backoff_base, config.max_backoff_doublings),
                next_arrival: arrivals.as_ref().map(|g| g.sample(&mut rng)),
            })
            .collect();
        Ok(Self {
            clock: SlotClock {
                current_slot: 0,
                slot_seconds: config.slot_seconds,
            },
            config,
            nodes,
            rng,
            arrivals,
            trace: None,
            transmitters: Vec::new(),
            queued: 0,
        })
    }

    /// Starts recording per-slot events.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<SlotEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn clock(&self) -> SlotClock {
        self.clock
    }

    pub fn workers(&self) -> usize {
        self.nodes.len()
    }

    pub fn queue_len(&self, worker: usize) -> u64 {
        self.nodes[worker - 1].queue.len()
    }

    pub fn queue_lengths(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.queue.len()).collect()
    }

    pub fn total_queued(&self) -> u64 {
        self.queued
    }

    pub fn backoff(&self, worker: usize) -> &BackoffState {
        &self.nodes[worker - 1].backoff
    }

    /// 1-based position of a gradient in its worker's queue, if still queued.
    pub fn queue_position(&self, id: GradientRef) -> Option<u64> {
        self.nodes.get(id.worker.checked_sub(1)?)?.queue.position_of(id)
    }

    fn record(&mut self, slot: u64, worker_idx: usize, kind: SlotEventKind) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(SlotEvent {
                slot,
                worker: worker_idx + 1,
                kind,
                queue_len: self.nodes[worker_idx].queue.len(),
            });
        }
    }

    /// Appends a background packet to a worker's queue at the current slot boundary.
    pub fn enqueue_background(&mut self, worker: usize) -> Result<()> {
        let idx = self.worker_index(worker)?;
        let slot = self.clock.current_slot;
        let node = &mut self.nodes[idx];
        if node.queue.is_empty() {
            node.backoff.schedule_first_attempt(slot);
        }
        node.queue.push_background();
        self.queued += 1;
        self.record(slot, idx, SlotEventKind::EnqueueBackground);
        Ok(())
    }

    /// Appends worker `worker`'s gradient for `iteration` behind its backlog.
    pub fn enqueue_gradient(&mut self, worker: usize, iteration: u64) -> Result<GradientRef> {
        let idx = self.worker_index(worker)?;
        let slot = self.clock.current_slot;
        let id = GradientRef { iteration, worker };
        let node = &mut self.nodes[idx];
        if node.queue.is_empty() {
            node.backoff.schedule_first_attempt(slot);
        }
        node.queue.push_gradient(QueuedPacket {
            kind: PacketKind::Gradient(id),
            origin_worker: worker,
            enqueue_slot: slot,
        });
        self.queued += 1;
        self.record(slot, idx, SlotEventKind::EnqueueGradient);
        Ok(id)
    }

    fn worker_index(&self, worker: usize) -> Result<usize> {
        if worker == 0 || worker > self.nodes.len() {
            return Err(Error::config(format!(
                "unknown worker id {worker} (have 1..={})",
                self.nodes.len()
            )));
        }
        Ok(worker - 1)
    }

    /// Simulates exactly one slot.
    pub fn step_slot(&mut self) -> SlotOutcome {
        let slot = self.clock.current_slot;
        let r = self.advance_slot();
        SlotOutcome {
            slot,
            transmitters: r.transmitters,
            delivered: r.delivered,
            queue_lengths: self.queue_lengths(),
        }
    }

    fn advance_slot(&mut self) -> SlotResult {
        let t = self.clock.current_slot;

        self.transmitters.clear();
        for idx in 0..self.nodes.len() {
            let node = &mut self.nodes[idx];
            if node.next_arrival == Some(t) {
                if node.queue.is_empty() {
                    node.backoff.schedule_first_attempt(t + 1);
                }
                node.queue.push_background();
                let gap = self
                    .arrivals
                    .as_ref()
                    .expect("arrivals scheduled")
                    .sample(&mut self.rng);
                node.next_arrival = Some(t + 1 + gap);
                self.queued += 1;
                self.record(t, idx, SlotEventKind::EnqueueBackground);
            }
            let node = &self.nodes[idx];
            if !node.queue.is_empty() && node.backoff.scheduled_slot() == Some(t) {
                self.transmitters.push(idx);
            }
        }

        let mut delivered = None;
        let count = self.transmitters.len();
        match count {
            0 => {}
            1 => {
                let idx = self.transmitters[0];
                self.record(t, idx, SlotEventKind::Transmit);
                let node = &mut self.nodes[idx];
                let departure = node.queue.pop_front(idx + 1).expect("transmitter has a packet");
                self.queued -= 1;
                node.backoff.on_success();
                if !node.queue.is_empty() {
                    node.backoff.schedule_first_attempt(t + 1);
                }
                delivered = Some(departure);
                self.record(t, idx, SlotEventKind::Delivery);
            }
            _ => {
                for i in 0..count {
                    let idx = self.transmitters[i];
                    self.record(t, idx, SlotEventKind::Transmit);
                    self.nodes[idx].backoff.on_collision(t, &mut self.rng);
                    self.record(t, idx, SlotEventKind::Collision);
                }
            }
        }

        self.clock.current_slot = t + 1;
        SlotResult {
            transmitters: count,
            delivered,
        }
    }

    /// Earliest slot `>= now` in which an arrival or a transmission can happen.
    fn next_event_slot(&self) -> Option<u64> {
        let mut best = u64::MAX;
        for n in &self.nodes {
            let arrival = n.next_arrival.unwrap_or(u64::MAX);
            let tx = if n.queue.is_empty() {
                u64::MAX
            } else {
                n.backoff.scheduled_slot().unwrap_or(u64::MAX)
            };
            best = best.min(arrival).min(tx);
        }
        (best != u64::MAX).then_some(best)
    }

    /// Advances the clock over slots in which nothing happens, never beyond `limit`.
    fn skip_idle(&mut self, limit: u64, stats: &mut QueueStats) {
        let now = self.clock.current_slot;
        let target = self.next_event_slot().unwrap_or(limit).min(limit);
        if target > now {
            let skipped = target - now;
            stats.slots += skipped;
            stats.occupancy_sum += skipped as u128 * self.total_queued() as u128;
            self.clock.current_slot = target;
        }
    }

    fn account(&self, r: &SlotResult, stats: &mut QueueStats) {
        stats.slots += 1;
        stats.occupancy_sum += self.total_queued() as u128;
        if r.transmitters > CHANNEL_CAPACITY {
            stats.collisions += 1;
        }
        if r.delivered.is_some() {
            stats.deliveries += 1;
        }
    }

    /// Runs slots until every gradient in `gradients` has reached the master
    /// or `max_slots` have elapsed.
    pub fn run_until_all_delivered(&mut self, gradients: &[GradientRef], max_slots: u64) -> BatchUplink {
        let start = self.clock.current_slot;
        let limit = start.saturating_add(max_slots);
        let mut pending: Vec<GradientRef> = gradients.to_vec();
        let mut deliveries = Vec::with_capacity(gradients.len());
        let mut stats = QueueStats::default();
        let mut last_delivery = start;

        while !pending.is_empty() && self.clock.current_slot < limit {
            self.skip_idle(limit, &mut stats);
            if self.clock.current_slot >= limit {
                break;
            }
            let slot = self.clock.current_slot;
            let r = self.advance_slot();
            self.account(&r, &mut stats);
            if let Some(Departure {
                kind: PacketKind::Gradient(id),
                void: false,
                ..
            }) = r.delivered
            {
                if let Some(pos) = pending.iter().position(|p| *p == id) {
                    pending.swap_remove(pos);
                    deliveries.push((id, slot));
                    last_delivery = slot + 1;
                }
            }
        }

        let aborted = !pending.is_empty();
        stats.final_lengths = self.queue_lengths();
        BatchUplink {
            deliveries,
            slots_elapsed: if aborted {
                self.clock.current_slot - start
            } else {
                last_delivery - start
            },
            stats,
            aborted,
        }
    }

    /// Runs exactly `window` slots. Gradients of `gradients` still queued
    /// afterwards are voided: they keep their place and will use the channel,
    /// but the master discards them.
    pub fn run_window(&mut self, window: u64, gradients: &[GradientRef]) -> Result<WindowUplink> {
        if window == 0 {
            return Err(Error::config("window T_s must be >= 1 slot"));
        }
        let end = self.clock.current_slot + window;
        let mut delivered = Vec::new();
        let mut stats = QueueStats::default();
        while self.clock.current_slot < end {
            self.skip_idle(end, &mut stats);
            if self.clock.current_slot >= end {
                break;
            }
            let r = self.advance_slot();
            self.account(&r, &mut stats);
            if let Some(Departure {
                kind: PacketKind::Gradient(id),
                void: false,
                ..
            }) = r.delivered
            {
                if gradients.contains(&id) {
                    delivered.push(id);
                }
            }
        }
        for id in gradients {
            if !delivered.contains(id) {
                if let Some(node) = self.nodes.get_mut(id.worker.wrapping_sub(1)) {
                    node.queue.void_gradient(*id);
                }
            }
        }
        stats.final_lengths = self.queue_lengths();
        Ok(WindowUplink { delivered, stats })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(workers: usize) -> Network {
        Network::new(ChannelConfig::new(workers, 0.0), 1).unwrap()
    }

    #[test]
    fn lone_packet_goes_through() {
        let mut net = quiet(1);
        net.enqueue_gradient(1, 0).unwrap();
        let out = net.step_slot();
        assert_eq!(out.transmitters, 1);
        assert!(matches!(
            out.delivered,
            Some(Departure {
                kind: PacketKind::Gradient(_),
                ..
            })
        ));
        assert_eq!(out.queue_lengths, vec![0]);
    }

    #[test]
    fn simultaneous_head_packets_collide() {
        let mut net = quiet(2);
        net.enqueue_gradient(1, 0).unwrap();
        net.enqueue_gradient(2, 0).unwrap();
        let out = net.step_slot();
        assert!(out.collided());
        assert!(out.delivered.is_none());
        for w in 1..=2 {
            assert_eq!(net.backoff(w).current_window(), 4);
            assert_eq!(net.backoff(w).collision_count(), 1);
        }
        assert_eq!(out.queue_lengths, vec![1, 1]);
    }

    #[test]
    fn unknown_worker_rejected() {
        let mut net = quiet(2);
        assert!(net.enqueue_gradient(0, 0).unwrap_err().is_config());
        assert!(net.enqueue_gradient(3, 0).unwrap_err().is_config());
    }

    #[test]
    fn gradient_waits_behind_background() {
        let mut net = quiet(1);
        for _ in 0..3 {
            net.enqueue_background(1).unwrap();
        }
        let g = net.enqueue_gradient(1, 5).unwrap();
        assert_eq!(net.queue_position(g), Some(4));
        let up = net.run_until_all_delivered(&[g], 100);
        assert_eq!(up.slots_elapsed, 4);
        assert_eq!(up.deliveries, vec![(g, 3)]);
    }

    #[test]
    fn same_worker_gradients_keep_order() {
        let mut net = quiet(1);
        let a = net.enqueue_gradient(1, 1).unwrap();
        let b = net.enqueue_gradient(1, 2).unwrap();
        let up = net.run_until_all_delivered(&[b, a], 100);
        let order: Vec<_> = up.deliveries.iter().map(|d| d.0).collect();
        assert_eq!(order, vec![a, b]);
    }

    #[test]
    fn single_worker_batch_is_one_slot() {
        let mut net = quiet(1);
        let g = net.enqueue_gradient(1, 0).unwrap();
        let up = net.run_until_all_delivered(&[g], 10);
        assert_eq!(up.slots_elapsed, 1);
        assert!(!up.aborted);
    }

    #[test]
    fn two_workers_need_at_least_three_slots() {
        for seed in 0..50 {
            let mut net = Network::new(ChannelConfig::new(2, 0.0), seed).unwrap();
            let ids = [net.enqueue_gradient(1, 0).unwrap(), net.enqueue_gradient(2, 0).unwrap()];
            let up = net.run_until_all_delivered(&ids, 1000);
            assert!(up.slots_elapsed >= 3, "seed {seed}: {}", up.slots_elapsed);
        }
    }

    #[test]
    fn slot_cap_aborts() {
        let mut net = Network::new(ChannelConfig::new(2, 1.0), 3).unwrap();
        for _ in 0..200 {
            net.enqueue_background(1).unwrap();
        }
        let ids = [net.enqueue_gradient(1, 0).unwrap(), net.enqueue_gradient(2, 0).unwrap()];
        let up = net.run_until_all_delivered(&ids, 50);
        assert!(up.aborted);
        assert_eq!(up.slots_elapsed, 50);
    }

    #[test]
    fn window_of_one_slot() {
        let mut net = quiet(1);
        let g = net.enqueue_gradient(1, 0).unwrap();
        let w = net.run_window(1, &[g]).unwrap();
        assert_eq!(w.delivered, vec![g]);
        assert_eq!(w.stats.slots, 1);

        let mut net = quiet(2);
        let ids = [net.enqueue_gradient(1, 0).unwrap(), net.enqueue_gradient(2, 0).unwrap()];
        let w = net.run_window(1, &ids).unwrap();
        assert!(w.delivered.is_empty());
        assert!(net.run_window(0, &ids).unwrap_err().is_config());
    }

    #[test]
    fn stale_gradient_is_discarded_later() {
        let mut net = quiet(2);
        let first = [net.enqueue_gradient(1, 0).unwrap(), net.enqueue_gradient(2, 0).unwrap()];
        net.run_window(1, &first).unwrap();
        // both gradients of iteration 0 are still queued, now void
        assert_eq!(net.total_queued(), 2);
        let second = [net.enqueue_gradient(1, 1).unwrap(), net.enqueue_gradient(2, 1).unwrap()];
        let w = net.run_window(10_000, &second).unwrap();
        assert_eq!(net.total_queued(), 0);
        assert!(w.delivered.iter().all(|g| g.iteration == 1));
        assert_eq!(w.stats.deliveries, 4);
    }

    #[test]
    fn window_runs_exact_slot_count_even_when_idle() {
        let mut net = quiet(3);
        let w = net.run_window(17, &[]).unwrap();
        assert_eq!(w.stats.slots, 17);
        assert_eq!(net.clock().current_slot(), 17);
    }

    #[test]
    fn enqueue_background_respected_by_trace() {
        let mut net = quiet(1);
        net.enable_trace();
        net.enqueue_background(1).unwrap();
        net.enqueue_gradient(1, 0).unwrap();
        net.step_slot();
        let kinds: Vec<_> = net.take_trace().into_iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SlotEventKind::EnqueueBackground,
                SlotEventKind::EnqueueGradient,
                SlotEventKind::Transmit,
                SlotEventKind::Delivery
            ]
        );
    }
}
