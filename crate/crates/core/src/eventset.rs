//! Fixed-width bitset over dense event indices.

use std::fmt;

/// Largest history the search engine accepts.
pub const MAX_EVENTS: usize = 128;

/// A set of event indices in `0..MAX_EVENTS`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct EventSet(u128);

impl EventSet {
    pub const EMPTY: EventSet = EventSet(0);

    #[inline]
    pub fn singleton(ev: usize) -> Self {
        EventSet(1u128 << ev)
    }

    /// The set `{0, .., n-1}`.
    #[inline]
    pub fn full(n: usize) -> Self {
        if n >= 128 {
            EventSet(u128::MAX)
        } else {
            EventSet((1u128 << n) - 1)
        }
    }

    #[inline]
    pub fn bits(self) -> u128 {
        self.0
    }

    #[inline]
    pub fn from_bits(bits: u128) -> Self {
        EventSet(bits)
    }

    #[inline]
    pub fn contains(self, ev: usize) -> bool {
        self.0 >> ev & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, ev: usize) {
        self.0 |= 1u128 << ev;
    }

    #[inline]
    pub fn remove(&mut self, ev: usize) {
        self.0 &= !(1u128 << ev);
    }

    #[inline]
    pub fn union(self, other: EventSet) -> EventSet {
        EventSet(self.0 | other.0)
    }

    #[inline]
    pub fn intersection(self, other: EventSet) -> EventSet {
        EventSet(self.0 & other.0)
    }

    #[inline]
    pub fn difference(self, other: EventSet) -> EventSet {
        EventSet(self.0 & !other.0)
    }

    #[inline]
    pub fn is_subset(self, other: EventSet) -> bool {
        self.0 & !other.0 == 0
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> EventSetIter {
        EventSetIter(self.0)
    }
}

impl FromIterator<usize> for EventSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut set = EventSet::EMPTY;
        for ev in iter {
            set.insert(ev);
        }
        set
    }
}

impl IntoIterator for EventSet {
    type Item = usize;
    type IntoIter = EventSetIter;

    fn into_iter(self) -> EventSetIter {
        self.iter()
    }
}

/// Ascending iterator over the members of an [`EventSet`].
pub struct EventSetIter(u128);

impl Iterator for EventSetIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let ev = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(ev)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl fmt::Debug for EventSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
