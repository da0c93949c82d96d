use rand::Rng;

/// Binary exponential backoff for the packet at the head of one worker's queue.
///
/// After `c` collisions the window is `b · 2^c`, clamped at `b · 2^cap`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackoffState {
    base_window: u64,
    current_window: u64,
    scheduled_slot: Option<u64>,
    collision_count: u32,
    max_doublings: u32,
}

impl BackoffState {
    pub fn new(base_window: u64, max_doublings: u32) -> Self {
        assert!(base_window >= 1, "backoff base window must be >= 1");
        Self {
            base_window,
            current_window: base_window,
            scheduled_slot: None,
            collision_count: 0,
            max_doublings,
        }
    }

    pub fn base_window(&self) -> u64 {
        self.base_window
    }

    pub fn current_window(&self) -> u64 {
        self.current_window
    }

    pub fn scheduled_slot(&self) -> Option<u64> {
        self.scheduled_slot
    }

    pub fn collision_count(&self) -> u32 {
        self.collision_count
    }

    /// A packet reached the queue head; it transmits at the start of `slot`.
    pub(crate) fn schedule_first_attempt(&mut self, slot: u64) {
        self.scheduled_slot = Some(slot);
    }

    /// Doubles the window and redraws a delay uniformly from `[1, window]`.
    pub(crate) fn on_collision<R: Rng>(&mut self, slot: u64, rng: &mut R) -> u64 {
        self.collision_count = self.collision_count.saturating_add(1);
        let doublings = self.collision_count.min(self.max_doublings);
        self.current_window = self.base_window << doublings;
        let delay = rng.random_range(1..=self.current_window);
        self.scheduled_slot = Some(slot + delay);
        delay
    }

    pub(crate) fn on_success(&mut self) {
        self.collision_count = 0;
        self.current_window = self.base_window;
        self.scheduled_slot = None;
    }
}
