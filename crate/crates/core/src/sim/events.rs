//! Minimal time-ordered event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Event {
    PhaseEnd(usize),
    Watchdog,
}

impl Event {
    // phase completions at the same instant win over the watchdog
    fn rank(&self) -> u8 {
        match self {
            Event::PhaseEnd(_) => 0,
            Event::Watchdog => 1,
        }
    }
}

#[derive(Debug)]
struct Entry {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.event.rank().cmp(&self.event.rank()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl EventQueue {
    pub fn schedule(&mut self, time: f64, event: Event) {
        self.seq += 1;
        self.heap.push(Entry {
            time,
            seq: self.seq,
            event,
        });
    }

    pub fn pop(&mut self) -> Option<(f64, Event)> {
        self.heap.pop().map(|e| (e.time, e.event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_rank_then_insertion() {
        let mut q = EventQueue::default();
        q.schedule(5.0, Event::Watchdog);
        q.schedule(5.0, Event::PhaseEnd(2));
        q.schedule(1.0, Event::PhaseEnd(0));
        q.schedule(5.0, Event::PhaseEnd(3));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(
            order,
            vec![
                (1.0, Event::PhaseEnd(0)),
                (5.0, Event::PhaseEnd(2)),
                (5.0, Event::PhaseEnd(3)),
                (5.0, Event::Watchdog),
            ]
        );
    }
}
