//! Round-robin arbitration primitives.
//!
//! Two disciplines are used by the machine:
//!
//! * [`RoundRobin`] — grant the first requester at or after the pointer,
//!   then move the pointer just past the winner. With `k` continuous
//!   requesters, any `k` consecutive grants contain each requester exactly
//!   once.
//! * [`RotatingPriority`] — the pointer advances by one every cycle
//!   independent of grants; callers walk `order()` to try requesters in
//!   priority order. Used where several resources arbitrate in the same
//!   cycle under one shared priority.

use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct RoundRobin {
    next: usize,
    n: usize,
}

impl RoundRobin {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        RoundRobin { next: 0, n }
    }

    /// Grant one requester among `candidates` (indexed by position),
    /// favouring the first candidate at or after the pointer. Advances the
    /// pointer past the winner; no candidates leaves the pointer alone.
    pub fn grant(&mut self, candidates: &[bool]) -> Option<usize> {
        debug_assert_eq!(candidates.len(), self.n);
        for offset in 0..self.n {
            let idx = (self.next + offset) % self.n;
            if candidates[idx] {
                self.next = (idx + 1) % self.n;
                return Some(idx);
            }
        }
        None
    }

    /// First candidate at or after the pointer, without moving it.
    pub fn peek(&self, candidates: &[bool]) -> Option<usize> {
        debug_assert_eq!(candidates.len(), self.n);
        (0..self.n)
            .map(|offset| (self.next + offset) % self.n)
            .find(|&idx| candidates[idx])
    }

    /// Move the pointer just past `idx`, as if `idx` had been granted.
    pub fn advance_past(&mut self, idx: usize) {
        debug_assert!(idx < self.n);
        self.next = (idx + 1) % self.n;
    }
}

#[derive(Debug, Clone)]
pub struct RotatingPriority {
    head: usize,
    n: usize,
}

impl RotatingPriority {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        RotatingPriority { head: 0, n }
    }

    /// Indices in this cycle's priority order, highest first.
    pub fn order(&self) -> Vec<usize> {
        (0..self.n).map(|o| (self.head + o) % self.n).collect()
    }

    /// Rotate the priority by one position; call once per cycle.
    pub fn rotate(&mut self) {
        self.head = (self.head + 1) % self.n;
    }
}
