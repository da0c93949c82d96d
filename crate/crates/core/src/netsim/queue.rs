use std::collections::VecDeque;

/// Identifies the gradient of worker `worker` for iteration `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GradientRef {
    pub iteration: u64,
    pub worker: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    Background,
    Gradient(GradientRef),
}

/// A gradient packet waiting in a worker's FIFO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedPacket {
    pub kind: PacketKind,
    pub origin_worker: usize,
    pub enqueue_slot: u64,
}

impl QueuedPacket {
    pub fn gradient_ref(&self) -> Option<GradientRef> {
        match self.kind {
            PacketKind::Gradient(g) => Some(g),
            PacketKind::Background => None,
        }
    }
}

/// A packet that left a queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Departure {
    pub kind: PacketKind,
    pub origin_worker: usize,
    /// Gradient whose mini-batch window closed before it got through.
    pub void: bool,
}

#[derive(Debug, Clone)]
enum Entry {
    /// Consecutive background packets; they carry nothing but their count.
    Background(u64),
    Gradient {
        packet: QueuedPacket,
        void: bool,
    },
}

/// Unbounded FIFO of one worker. Runs of background packets are stored as counts.
#[derive(Debug, Clone, Default)]
pub(crate) struct FifoQueue {
    entries: VecDeque<Entry>,
    len: u64,
}

impl FifoQueue {
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push_background(&mut self) {
        self.len += 1;
        if let Some(Entry::Background(n)) = self.entries.back_mut() {
            *n += 1;
        } else {
            self.entries.push_back(Entry::Background(1));
        }
    }

    pub fn push_gradient(&mut self, packet: QueuedPacket) {
        self.len += 1;
        self.entries.push_back(Entry::Gradient { packet, void: false });
    }

    pub fn pop_front(&mut self, origin_worker: usize) -> Option<Departure> {
        let departure = match self.entries.front_mut()? {
            Entry::Background(n) => {
                *n -= 1;
                let done = *n == 0;
                if done {
                    self.entries.pop_front();
                }
                Departure {
                    kind: PacketKind::Background,
                    origin_worker,
                    void: false,
                }
            }
            Entry::Gradient { .. } => match self.entries.pop_front() {
                Some(Entry::Gradient { packet, void }) => Departure {
                    kind: packet.kind,
                    origin_worker,
                    void,
                },
                _ => unreachable!(),
            },
        };
        self.len -= 1;
        Some(departure)
    }

    /// Marks a still-queued gradient as void. Returns whether it was found.
    pub fn void_gradient(&mut self, id: GradientRef) -> bool {
        for e in &mut self.entries {
            if let Entry::Gradient { packet, void } = e {
                if packet.gradient_ref() == Some(id) {
                    *void = true;
                    return true;
                }
            }
        }
        false
    }

    /// Position (1-based) of a gradient in the queue.
    pub fn position_of(&self, id: GradientRef) -> Option<u64> {
        let mut pos = 0;
        for e in &self.entries {
            match e {
                Entry::Background(n) => pos += n,
                Entry::Gradient { packet, .. } => {
                    pos += 1;
                    if packet.gradient_ref() == Some(id) {
                        return Some(pos);
                    }
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad(iteration: u64) -> QueuedPacket {
        let id = GradientRef { iteration, worker: 1 };
        QueuedPacket {
            kind: PacketKind::Gradient(id),
            origin_worker: 1,
            enqueue_slot: 0,
        }
    }

    #[test]
    fn fifo_order_with_background_runs() {
        let mut q = FifoQueue::default();
        q.push_background();
        q.push_background();
        q.push_gradient(grad(1));
        q.push_background();
        q.push_gradient(grad(2));
        assert_eq!(q.len(), 5);
        assert_eq!(
            q.position_of(GradientRef {
                iteration: 2,
                worker: 1
            }),
            Some(5)
        );
        let kinds: Vec<_> = std::iter::from_fn(|| q.pop_front(1)).map(|d| d.kind).collect();
        assert_eq!(kinds[0], PacketKind::Background);
        assert_eq!(kinds[1], PacketKind::Background);
        assert_eq!(kinds[2], grad(1).kind);
        assert_eq!(kinds[3], PacketKind::Background);
        assert_eq!(kinds[4], grad(2).kind);
        assert!(q.is_empty());
    }

    #[test]
    fn voided_gradient_still_departs() {
        let mut q = FifoQueue::default();
        q.push_gradient(grad(3));
        assert!(q.void_gradient(GradientRef {
            iteration: 3,
            worker: 1
        }));
        assert!(!q.void_gradient(GradientRef {
            iteration: 4,
            worker: 1
        }));
        let d = q.pop_front(1).unwrap();
        assert!(d.void);
        assert_eq!(q.len(), 0);
    }
}
