use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotEventKind {
    #[serde(rename = "enqueue_bg")]
    EnqueueBackground,
    #[serde(rename = "enqueue_grad")]
    EnqueueGradient,
    #[serde(rename = "tx")]
    Transmit,
    #[serde(rename = "collision")]
    Collision,
    #[serde(rename = "delivery")]
    Delivery,
}

/// One row of the per-slot event trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotEvent {
    pub slot: u64,
    pub worker: usize,
    #[serde(rename = "event")]
    pub kind: SlotEventKind,
    /// Worker's queue length right after the event.
    pub queue_len: u64,
}

/// Writes `slot,worker,event,queue_len` rows.
pub fn write_slot_trace<W: Write>(out: W, events: &[SlotEvent]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    if events.is_empty() {
        w.write_record(["slot", "worker", "event", "queue_len"])?;
    }
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
