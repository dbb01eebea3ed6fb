//! The six visibility levels and (partial) abstract executions.
//!
//! A level constrains which earlier operations each operation must observe.
//! Two formulations live here:
//!
//! * [`required_vis`] gives, for an operation being placed, the set of
//!   operations it is obliged to see given what was placed before it and the
//!   candidate set it is about to see. The search uses this incrementally.
//! * [`satisfies`] re-states each level as a first-order predicate evaluated
//!   at every placed operation of a finished execution. It is the
//!   independent cross-check for the incremental route.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eventset::EventSet;
use crate::history::EventId;
use crate::instance::Instance;

/// Visibility levels, weakest first.
#[derive(
    Clone,
    Copy,
    Debug,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Weak = 0,
    Basic = 1,
    Monotonic = 2,
    Peer = 3,
    Causal = 4,
    Complete = 5,
}

impl Level {
    pub const ALL: [Level; 6] = [
        Level::Weak,
        Level::Basic,
        Level::Monotonic,
        Level::Peer,
        Level::Causal,
        Level::Complete,
    ];

    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn from_rank(rank: usize) -> Option<Level> {
        Self::ALL.get(rank).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Weak => "weak",
            Level::Basic => "basic",
            Level::Monotonic => "monotonic",
            Level::Peer => "peer",
            Level::Causal => "causal",
            Level::Complete => "complete",
        }
    }

    /// Column head used in measurement tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            Level::Weak => "W",
            Level::Basic => "B",
            Level::Monotonic => "M",
            Level::Peer => "P",
            Level::Causal => "Ca",
            Level::Complete => "Co",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Level, String> {
        Level::ALL
            .into_iter()
            .find(|l| l.name() == s || l.abbrev() == s)
            .ok_or_else(|| format!("unknown level {s:?}"))
    }
}

const UNPLACED: u16 = u16::MAX;

/// A prefix of an arbitration order together with the visibility relation
/// over the placed events.
///
/// Visibility is stored as, for each event, the set of events visible to it.
/// Every visible pair points forward in `lin`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PartialExecution {
    lin: Vec<u16>,
    pos: Vec<u16>,
    vis: Vec<EventSet>,
    placed: EventSet,
}

impl PartialExecution {
    /// The empty execution over `n` events.
    pub fn empty(n: usize) -> Self {
        PartialExecution {
            lin: Vec::with_capacity(n),
            pos: vec![UNPLACED; n],
            vis: vec![EventSet::EMPTY; n],
            placed: EventSet::EMPTY,
        }
    }

    /// Builds an execution from an arbitration prefix and visible pairs
    /// `(x, y)` meaning `x` is visible to `y`.
    pub fn from_parts(n: usize, lin: &[usize], vis_pairs: &[(usize, usize)]) -> Self {
        let mut exec = PartialExecution::empty(n);
        for &e in lin {
            exec.append(e);
        }
        for &(x, y) in vis_pairs {
            exec.vis[y].insert(x);
        }
        exec
    }

    /// Number of events in the underlying history.
    pub fn universe(&self) -> usize {
        self.pos.len()
    }

    pub fn lin(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.lin.iter().map(|&e| e as usize)
    }

    pub fn len(&self) -> usize {
        self.lin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lin.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.lin.len() == self.pos.len()
    }

    pub fn placed(&self) -> EventSet {
        self.placed
    }

    pub fn last(&self) -> Option<usize> {
        self.lin.last().map(|&e| e as usize)
    }

    #[inline]
    pub fn position(&self, ev: usize) -> Option<usize> {
        match self.pos[ev] {
            UNPLACED => None,
            p => Some(p as usize),
        }
    }

    /// Whether both are placed and `a` comes first.
    #[inline]
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        let (pa, pb) = (self.pos[a], self.pos[b]);
        pa != UNPLACED && pb != UNPLACED && pa < pb
    }

    /// Events visible to `ev`.
    #[inline]
    pub fn vis_of(&self, ev: usize) -> EventSet {
        self.vis[ev]
    }

    #[inline]
    pub fn is_visible(&self, x: usize, y: usize) -> bool {
        self.vis[y].contains(x)
    }

    /// Events placed before `ev`.
    pub fn before(&self, ev: usize) -> EventSet {
        match self.position(ev) {
            None => EventSet::EMPTY,
            Some(p) => self.lin[..p].iter().map(|&e| e as usize).collect(),
        }
    }

    /// All visible pairs, grouped by target in arbitration order.
    pub fn vis_pairs(&self) -> Vec<(usize, usize)> {
        self.lin()
            .flat_map(|y| self.vis[y].iter().map(move |x| (x, y)))
            .collect()
    }

    /// Appends `ev` to the arbitration order with no incoming visibility.
    pub fn append(&mut self, ev: usize) {
        debug_assert_eq!(self.pos[ev], UNPLACED);
        self.pos[ev] = self.lin.len() as u16;
        self.lin.push(ev as u16);
        self.placed.insert(ev);
    }

    /// Removes the newest event and its visibility set.
    pub fn pop(&mut self) -> Option<usize> {
        let ev = self.lin.pop()? as usize;
        self.pos[ev] = UNPLACED;
        self.vis[ev] = EventSet::EMPTY;
        self.placed.remove(ev);
        Some(ev)
    }

    /// Replaces the set of events visible to `ev`.
    pub fn set_vis(&mut self, ev: usize, seen: EventSet) {
        self.vis[ev] = seen;
    }

    /// Updates, visible to `q`, in arbitration order.
    pub fn context<'a>(&'a self, inst: &'a Instance, q: usize) -> impl Iterator<Item = usize> + 'a {
        let seen = self.vis[q].intersection(inst.updates());
        self.lin().filter(move |&e| seen.contains(e))
    }

    /// Human-readable dump: arbitration order then visibility per event.
    pub fn describe(&self, ids: impl Fn(usize) -> EventId) -> String {
        let lin: Vec<String> = self.lin().map(|e| ids(e).to_string()).collect();
        let mut out = format!("lin: [{}]\n", lin.join(", "));
        for e in self.lin() {
            let seen: Vec<String> = self.vis[e].iter().map(|x| ids(x).to_string()).collect();
            out.push_str(&format!("vis -> {}: {{{}}}\n", ids(e), seen.join(", ")));
        }
        out
    }
}

impl fmt::Debug for PartialExecution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartialExecution")
            .field("lin", &self.lin)
            .field("vis", &self.vis_pairs())
            .finish()
    }
}

/// The set of placed events `o` must see, given the execution before `o`
/// and the candidate set `candidate` of events visible to `o`.
///
/// `o` may already be appended to `exec`; it is never part of the result.
pub fn required_vis(
    level: Level,
    exec: &PartialExecution,
    candidate: EventSet,
    o: usize,
    inst: &Instance,
) -> EventSet {
    let mut placed = exec.placed();
    placed.remove(o);
    let hb = inst.hb(o).intersection(placed);
    let monotonic = || hb.iter().fold(hb, |acc, y| acc.union(exec.vis_of(y)));
    let required = match level {
        Level::Weak => EventSet::EMPTY,
        Level::Basic => hb,
        Level::Monotonic => monotonic(),
        Level::Peer => candidate
            .iter()
            .fold(monotonic(), |acc, x| acc.union(inst.hb(x))),
        Level::Causal => {
            // ancestors of `o` under vis ∪ candidate×{o}
            let mut closure = candidate;
            let mut frontier = candidate;
            while !frontier.is_empty() {
                let next = frontier
                    .iter()
                    .fold(EventSet::EMPTY, |acc, x| acc.union(exec.vis_of(x)));
                frontier = next.difference(closure);
                closure = closure.union(frontier);
            }
            closure.union(hb)
        }
        Level::Complete => placed,
    };
    required.intersection(placed)
}

/// Whether letting `o` see exactly `candidate` meets `level`.
pub fn vis_choice_valid(
    level: Level,
    exec: &PartialExecution,
    candidate: EventSet,
    o: usize,
    inst: &Instance,
) -> bool {
    required_vis(level, exec, candidate, o, inst).is_subset(candidate)
}

/// The least valid visibility set for `o` containing `seed`.
pub fn least_valid_superset(
    level: Level,
    exec: &PartialExecution,
    seed: EventSet,
    o: usize,
    inst: &Instance,
) -> EventSet {
    let mut current = seed;
    loop {
        let next = current.union(required_vis(level, exec, current, o, inst));
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Whether `exec` is structurally well formed: arbitration respects session
/// order and every visible pair points forward in arbitration.
pub fn well_formed(exec: &PartialExecution, inst: &Instance) -> bool {
    exec.lin().all(|y| {
        let before = exec.before(y);
        inst.hb(y).is_subset(before) && exec.vis_of(y).is_subset(before)
    }) && exec
        .placed()
        .iter()
        .all(|e| inst.hb(e).is_subset(exec.placed()))
        && (0..exec.universe())
            .filter(|&e| !exec.placed().contains(e))
            .all(|e| exec.vis_of(e).is_empty())
}

/// Evaluates the level's predicate directly at every placed event.
pub fn satisfies(level: Level, exec: &PartialExecution, inst: &Instance) -> bool {
    if !well_formed(exec, inst) {
        return false;
    }
    exec.lin().all(|o| {
        let seen = exec.vis_of(o);
        let hb = inst.hb(o);
        let basic = hb.is_subset(seen);
        let monotonic = || hb.iter().all(|p| exec.vis_of(p).is_subset(seen));
        match level {
            Level::Weak => true,
            Level::Basic => basic,
            // each operation counts as visible to itself, so monotonic
            // includes the predecessors themselves
            Level::Monotonic => basic && monotonic(),
            Level::Peer => basic && monotonic() && seen.iter().all(|v| inst.hb(v).is_subset(seen)),
            Level::Causal => basic && seen.iter().all(|v| exec.vis_of(v).is_subset(seen)),
            Level::Complete => exec.before(o).is_subset(seen),
        }
    })
}

/// [`satisfies`] restricted to executions covering every event.
pub fn full_execution_satisfies(level: Level, exec: &PartialExecution, inst: &Instance) -> bool {
    exec.is_complete() && satisfies(level, exec, inst)
}
