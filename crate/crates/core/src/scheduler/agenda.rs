//! Pending wake-ups ordered by (time, actor, insertion sequence).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Tie-break rank at equal virtual times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Formulation = 0,
    Articulation = 1,
    Playback = 2,
}

struct Entry<T> {
    time: f64,
    actor: Actor,
    seq: u64,
    item: T,
}

impl<T> Entry<T> {
    fn key(&self) -> (f64, Actor, u64) {
        (self.time, self.actor, self.seq)
    }
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, aa, sa) = self.key();
        let (tb, ab, sb) = other.key();
        tb.total_cmp(&ta).then(ab.cmp(&aa)).then(sb.cmp(&sa))
    }
}

pub struct Agenda<T> {
    heap: BinaryHeap<Entry<T>>,
    next_seq: u64,
}

impl<T> Default for Agenda<T> {
    fn default() -> Self {
        Agenda {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<T> Agenda<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, actor: Actor, item: T) {
        assert!(time.is_finite(), "scheduled time must be finite");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, actor, seq, item });
    }

    pub fn pop(&mut self) -> Option<(f64, Actor, T)> {
        self.heap.pop().map(|e| (e.time, e.actor, e.item))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn clear(&mut self) {
        self.heap.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formulation_wins_ties() {
        let mut a = Agenda::new();
        a.push(1.0, Actor::Playback, "p");
        a.push(1.0, Actor::Articulation, "a");
        a.push(1.0, Actor::Formulation, "f");
        a.push(0.5, Actor::Playback, "early");
        let order: Vec<_> = std::iter::from_fn(|| a.pop().map(|(_, _, x)| x)).collect();
        assert_eq!(order, ["early", "f", "a", "p"]);
    }

    #[test]
    fn insertion_order_breaks_remaining_ties() {
        let mut a = Agenda::new();
        for i in 0..5 {
            a.push(2.0, Actor::Articulation, i);
        }
        let order: Vec<_> = std::iter::from_fn(|| a.pop().map(|(_, _, x)| x)).collect();
        assert_eq!(order, [0, 1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn pops_sorted(items in proptest::collection::vec((0u32..50, 0u8..3), 0..200)) {
            let mut a = Agenda::new();
            for (i, (t, actor)) in items.iter().enumerate() {
                let actor = match actor { 0 => Actor::Formulation, 1 => Actor::Articulation, _ => Actor::Playback };
                a.push(*t as f64 / 4.0, actor, i);
            }
            let mut last: Option<(f64, Actor, usize)> = None;
            while let Some((t, actor, i)) = a.pop() {
                if let Some((lt, la, li)) = last {
                    prop_assert!(lt < t || (lt == t && (la < actor || (la == actor && li < i))));
                }
                last = Some((t, actor, i));
            }
        }
    }
}
