//! Backtracking search for a certificate abstract execution.
//!
//! States live in a double-ended queue. Each iteration polls the head,
//! discards it if a placed query contradicts its context, and otherwise
//! pushes its successors back at the head, so the traversal is depth-first.
//! A successor appends one event to the arbitration order (one choice per
//! session whose next event is unplaced) and then fixes the set of placed
//! events visible to it.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::eventset::EventSet;
use crate::instance::Instance;
use crate::pruning::Pruner;
use crate::visibility::{least_valid_superset, vis_choice_valid, Level, PartialExecution};

/// Explored-state cap applied when none is given.
pub const DEFAULT_BUDGET: u64 = 5_000_000;

/// How the visibility step enumerates candidate sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisMode {
    /// Every subset of the placed events that meets the level.
    Exhaustive,
    /// Updates see the least valid set. Queries see the inclusion-minimal
    /// sets among the least valid supersets of each subset of placed
    /// updates that justify the recorded return.
    ///
    /// A query's return depends only on the updates it sees, and every
    /// level's obligation on later events only grows with earlier
    /// visibility sets, so any certificate can be shrunk to one of these.
    #[default]
    Minimal,
}

/// Distinct states remembered for duplicate detection, per search.
pub const DEFAULT_MEMO_CAP: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub budget: u64,
    pub vis_mode: VisMode,
    /// Skip states equivalent to one already expanded.
    pub dedup: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: DEFAULT_BUDGET,
            vis_mode: VisMode::default(),
            dedup: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Satisfied,
    Violated,
    BudgetExceeded,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Satisfied => "satisfied",
            Outcome::Violated => "violated",
            Outcome::BudgetExceeded => "budget_exceeded",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// States polled from the deque.
    pub states_explored: u64,
    /// Successors dropped by pruning predicates before insertion.
    pub states_pruned: u64,
    /// Successors produced by the extension steps, pruned or not.
    pub states_generated: u64,
    pub max_deque_depth: u64,
}

impl SearchStats {
    pub fn merge(&mut self, other: &SearchStats) {
        self.states_explored += other.states_explored;
        self.states_pruned += other.states_pruned;
        self.states_generated += other.states_generated;
        self.max_deque_depth = self.max_deque_depth.max(other.max_deque_depth);
    }
}

/// One node of the search tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SearchState {
    exec: PartialExecution,
}

impl SearchState {
    pub fn root(n: usize) -> Self {
        SearchState {
            exec: PartialExecution::empty(n),
        }
    }

    pub fn from_exec(exec: PartialExecution) -> Self {
        SearchState { exec }
    }

    pub fn exec(&self) -> &PartialExecution {
        &self.exec
    }

    pub fn into_exec(self) -> PartialExecution {
        self.exec
    }

    pub fn is_complete(&self) -> bool {
        self.exec.is_complete()
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub outcome: Outcome,
    pub stats: SearchStats,
    pub certificate: Option<PartialExecution>,
}

/// One successor per session whose next event is unplaced, in session order.
pub fn lin_extend(state: &SearchState, inst: &Instance) -> Vec<SearchState> {
    let placed = state.exec.placed();
    inst.session_ranges()
        .iter()
        .filter_map(|&(start, end)| {
            let done = placed
                .intersection(EventSet::full(end).difference(EventSet::full(start)))
                .len();
            (start + done < end).then(|| {
                let mut exec = state.exec.clone();
                exec.append(start + done);
                SearchState { exec }
            })
        })
        .collect()
}

/// Every valid visibility choice for the newest event, larger sets first.
pub fn vis_extend(state: &SearchState, level: Level, inst: &Instance) -> Vec<SearchState> {
    let mut out = Vec::new();
    extend_vis(state, level, inst, VisMode::Exhaustive, &mut out);
    out
}

/// The reduced visibility step used by default; see [`VisMode::Minimal`].
pub fn vis_extend_minimal(state: &SearchState, level: Level, inst: &Instance) -> Vec<SearchState> {
    let mut out = Vec::new();
    extend_vis(state, level, inst, VisMode::Minimal, &mut out);
    out
}

fn extend_vis(
    state: &SearchState,
    level: Level,
    inst: &Instance,
    mode: VisMode,
    out: &mut Vec<SearchState>,
) {
    let exec = &state.exec;
    let Some(o) = exec.last() else { return };
    let mut earlier = exec.placed();
    earlier.remove(o);
    let forced = required_base(level, exec, o, inst);
    let with = |seen: EventSet| {
        let mut exec = exec.clone();
        exec.set_vis(o, seen);
        SearchState { exec }
    };
    match mode {
        VisMode::Exhaustive => {
            for extra in SubsetsBySize::new(earlier.difference(forced)) {
                let seen = forced.union(extra);
                if vis_choice_valid(level, exec, seen, o, inst) {
                    out.push(with(seen));
                }
            }
        }
        VisMode::Minimal if inst.is_update(o) => {
            out.push(with(least_valid_superset(level, exec, forced, o, inst)));
        }
        VisMode::Minimal => {
            let updates = inst.updates();
            let forced_updates = forced.intersection(updates);
            let mut justified = Vec::new();
            for extra in SubsetsBySize::new(earlier.intersection(updates).difference(forced)) {
                let wanted = forced_updates.union(extra);
                let seen = least_valid_superset(level, exec, forced.union(extra), o, inst);
                if seen.intersection(updates) == wanted {
                    let context = exec.lin().filter(|&e| wanted.contains(e));
                    if inst.query_ok(context, o) {
                        justified.push(seen);
                    }
                }
            }
            // smallest first, so each kept set has no kept subset
            justified.reverse();
            justified.sort_by_key(|s| s.len());
            let mut minimal: Vec<EventSet> = Vec::new();
            for seen in justified {
                if !minimal.iter().any(|m| m.is_subset(seen)) {
                    minimal.push(seen);
                }
            }
            out.extend(minimal.into_iter().rev().map(with));
        }
    }
}

/// The part of the obligation that holds for every candidate set.
fn required_base(level: Level, exec: &PartialExecution, o: usize, inst: &Instance) -> EventSet {
    crate::visibility::required_vis(level, exec, EventSet::EMPTY, o, inst)
}

/// Whether every placed query's recorded outcome matches its context.
pub fn is_valid(state: &SearchState, inst: &Instance) -> bool {
    state
        .exec
        .lin()
        .all(|q| inst.check_of(q).is_none() || inst.query_ok(state.exec.context(inst, q), q))
}

/// Validity of the newest event only. Earlier queries' contexts never change
/// as the prefix grows, so along a search path this agrees with
/// [`is_valid`].
pub fn newest_valid(state: &SearchState, inst: &Instance) -> bool {
    match state.exec.last() {
        Some(q) if inst.check_of(q).is_some() => inst.query_ok(state.exec.context(inst, q), q),
        _ => true,
    }
}

/// What polling one state produced.
pub(crate) enum Step {
    Invalid,
    Duplicate,
    Certificate,
    Expanded,
}

/// Keys of states already expanded.
#[derive(Default)]
pub(crate) struct Memo {
    seen: HashSet<Box<[u8]>>,
}

impl Memo {
    /// Records `key`; false if it was already present. Past the cap new
    /// keys are not stored, which only costs duplicate work.
    fn insert(&mut self, key: Box<[u8]>) -> bool {
        if self.seen.contains(&key) {
            return false;
        }
        if self.seen.len() < DEFAULT_MEMO_CAP {
            self.seen.insert(key);
        }
        true
    }
}

/// The search skeleton for one history and level.
#[derive(Clone)]
pub struct Search<'a> {
    inst: &'a Instance,
    level: Level,
    pruner: Option<&'a Pruner>,
    mode: VisMode,
    dedup: bool,
    /// Dense element number of each update.
    element_class: Vec<u16>,
}

impl<'a> Search<'a> {
    pub fn new(
        inst: &'a Instance,
        level: Level,
        pruner: Option<&'a Pruner>,
        opts: &SearchOptions,
    ) -> Self {
        let mut elements: Vec<i64> = inst.ops().iter().filter_map(|op| op.element()).collect();
        elements.sort_unstable();
        elements.dedup();
        let element_class = inst
            .ops()
            .iter()
            .map(|op| {
                op.element()
                    .map_or(0, |e| elements.binary_search(&e).expect("collected") as u16)
            })
            .collect();
        Search {
            inst,
            level,
            pruner,
            mode: opts.vis_mode,
            dedup: opts.dedup,
            element_class,
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    /// Everything about a partial execution its completions depend on.
    ///
    /// Operations on different elements commute in every supported data
    /// type, so a query's value depends only on the per-element order of
    /// the updates it sees. Visibility sets of placed events constrain
    /// later events only at levels that inherit them.
    fn memo_key(&self, exec: &PartialExecution) -> Box<[u8]> {
        let n = self.inst.len();
        let width = n.div_ceil(8);
        let mut key = Vec::with_capacity(16 + n + width * n);
        key.extend_from_slice(&exec.placed().bits().to_le_bytes()[..width]);
        let mut updates: Vec<(u16, usize)> = exec
            .lin()
            .filter(|&e| self.inst.is_update(e))
            .map(|e| (self.element_class[e], e))
            .collect();
        // stable: lin order within an element
        updates.sort_by_key(|&(class, _)| class);
        key.extend(updates.iter().map(|&(_, e)| e as u8));
        if matches!(self.level, Level::Monotonic | Level::Peer | Level::Causal) {
            for e in exec.placed().iter() {
                key.extend_from_slice(&exec.vis_of(e).bits().to_le_bytes()[..width]);
            }
        }
        key.into_boxed_slice()
    }

    /// Validates `state` and, if it is valid, incomplete and new, writes
    /// its surviving successors to `out` in exploration order.
    pub(crate) fn step(
        &self,
        state: &SearchState,
        out: &mut Vec<SearchState>,
        stats: &mut SearchStats,
        memo: &mut Memo,
    ) -> Step {
        stats.states_explored += 1;
        if !newest_valid(state, self.inst) {
            return Step::Invalid;
        }
        if state.is_complete() {
            return Step::Certificate;
        }
        if self.dedup && !memo.insert(self.memo_key(&state.exec)) {
            return Step::Duplicate;
        }
        for lin_state in lin_extend(state, self.inst) {
            let before = out.len();
            extend_vis(&lin_state, self.level, self.inst, self.mode, out);
            stats.states_generated += (out.len() - before) as u64;
            if let Some(pruner) = self.pruner {
                let mut kept = before;
                for i in before..out.len() {
                    if pruner.violated(&out[i]) {
                        stats.states_pruned += 1;
                    } else {
                        out.swap(kept, i);
                        kept += 1;
                    }
                }
                out.truncate(kept);
            }
        }
        Step::Expanded
    }

    /// Runs depth-first until a certificate is found, the deque drains, or
    /// `budget` states have been explored in total.
    pub fn run_deque(
        &self,
        deque: &mut VecDeque<SearchState>,
        stats: &mut SearchStats,
        budget: u64,
    ) -> (Outcome, Option<PartialExecution>) {
        let mut buf = Vec::new();
        let mut memo = Memo::default();
        while let Some(state) = deque.pop_front() {
            if stats.states_explored >= budget {
                deque.push_front(state);
                return (Outcome::BudgetExceeded, None);
            }
            match self.step(&state, &mut buf, stats, &mut memo) {
                Step::Invalid | Step::Duplicate => {}
                Step::Certificate => return (Outcome::Satisfied, Some(state.into_exec())),
                Step::Expanded => {
                    for s in buf.drain(..).rev() {
                        deque.push_front(s);
                    }
                    stats.max_deque_depth = stats.max_deque_depth.max(deque.len() as u64);
                }
            }
        }
        (Outcome::Violated, None)
    }

    pub fn run(&self, budget: u64) -> CheckResult {
        let mut deque = VecDeque::from([SearchState::root(self.inst.len())]);
        let mut stats = SearchStats::default();
        let (outcome, certificate) = self.run_deque(&mut deque, &mut stats, budget);
        CheckResult {
            outcome,
            stats,
            certificate,
        }
    }
}

/// Sequential check of one history at one level.
pub fn check(
    inst: &Instance,
    level: Level,
    pruner: Option<&Pruner>,
    opts: &SearchOptions,
) -> CheckResult {
    Search::new(inst, level, pruner, opts).run(opts.budget)
}

/// Subsets of a set, largest first; equal sizes in colexicographic order.
pub struct SubsetsBySize {
    members: Vec<usize>,
    size: usize,
    current: Option<u128>,
}

impl SubsetsBySize {
    pub fn new(set: EventSet) -> Self {
        let members: Vec<usize> = set.iter().collect();
        let size = members.len();
        SubsetsBySize {
            current: Some(low_bits(size)),
            members,
            size,
        }
    }

    fn materialize(&self, mask: u128) -> EventSet {
        let mut out = EventSet::EMPTY;
        let mut m = mask;
        while m != 0 {
            out.insert(self.members[m.trailing_zeros() as usize]);
            m &= m - 1;
        }
        out
    }
}

fn low_bits(k: usize) -> u128 {
    if k >= 128 {
        u128::MAX
    } else {
        (1u128 << k) - 1
    }
}

impl Iterator for SubsetsBySize {
    type Item = EventSet;

    fn next(&mut self) -> Option<EventSet> {
        let mask = self.current?;
        let out = self.materialize(mask);
        let n = self.members.len();
        // next combination of the same size (Gosper), else drop a size
        self.current = if mask == 0 {
            None
        } else {
            let c = mask & mask.wrapping_neg();
            let r = mask.checked_add(c);
            let next = r.map(|r| (((r ^ mask) >> 2) / c) | r);
            match next {
                Some(next) if n >= 128 || next >> n == 0 => Some(next),
                _ => {
                    self.size -= 1;
                    Some(low_bits(self.size))
                }
            }
        };
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datatype::DataType;
    use crate::history::{History, Scalar, Value};

    fn op(m: &str, a: &[i64], r: Value) -> (String, Vec<Scalar>, Value) {
        (
            m.to_string(),
            a.iter().map(|&x| Scalar::Int(x)).collect(),
            r,
        )
    }

    fn upd(m: &str, a: &[i64]) -> (String, Vec<Scalar>, Value) {
        op(m, a, Value::Nil)
    }

    /// A=[add(1)], B=[add(2), remove(2), size()=>0]
    fn size_after_remove() -> Instance {
        let h = History::from_sessions([
            (0, vec![upd("add", &[1])]),
            (
                1,
                vec![
                    upd("add", &[2]),
                    upd("remove", &[2]),
                    op("size", &[], Value::Int(0)),
                ],
            ),
        ])
        .unwrap();
        Instance::new(&h, DataType::Set).unwrap()
    }

    #[test]
    fn subsets_largest_first() {
        let set: EventSet = [1, 4, 6].into_iter().collect();
        let subsets: Vec<Vec<usize>> = SubsetsBySize::new(set)
            .map(|s| s.iter().collect())
            .collect();
        assert_eq!(subsets.len(), 8);
        assert_eq!(subsets[0], vec![1, 4, 6]);
        assert_eq!(subsets[7], Vec::<usize>::new());
        let sizes: Vec<usize> = subsets.iter().map(Vec::len).collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        let distinct: std::collections::HashSet<_> = subsets.into_iter().collect();
        assert_eq!(distinct.len(), 8);
        assert_eq!(SubsetsBySize::new(EventSet::EMPTY).count(), 1);
    }

    #[test]
    fn lin_extend_one_per_open_session() {
        let inst = size_after_remove();
        let root = SearchState::root(inst.len());
        let next = lin_extend(&root, &inst);
        assert_eq!(next.len(), 2);
        assert_eq!(next[0].exec().last(), Some(0));
        assert_eq!(next[1].exec().last(), Some(1));
        // session A exhausted
        let after_a = &next[0];
        let next = lin_extend(after_a, &inst);
        assert_eq!(next.len(), 1);
        let full = SearchState::from_exec(PartialExecution::from_parts(4, &[0, 1, 2, 3], &[]));
        assert!(lin_extend(&full, &inst).is_empty());
    }

    #[test]
    fn lin_extend_three_sessions_one_exhausted() {
        let h = History::from_sessions([
            (0, vec![upd("add", &[1])]),
            (1, vec![upd("add", &[2])]),
            (2, vec![upd("add", &[3]), upd("add", &[4])]),
        ])
        .unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        let state = SearchState::from_exec(PartialExecution::from_parts(4, &[0], &[]));
        assert_eq!(lin_extend(&state, &inst).len(), 2);
    }

    #[test]
    fn vis_extend_counts() {
        let inst = size_after_remove();
        // size() placed after the three updates
        let state = SearchState::from_exec(PartialExecution::from_parts(4, &[0, 1, 2, 3], &[]));
        assert_eq!(vis_extend(&state, Level::Complete, &inst).len(), 1);
        assert_eq!(vis_extend(&state, Level::Weak, &inst).len(), 8);
        // basic: the two session predecessors are forced, add(1) is free
        assert_eq!(vis_extend(&state, Level::Basic, &inst).len(), 2);
        let first = &vis_extend(&state, Level::Weak, &inst)[0];
        assert_eq!(first.exec().vis_of(3).len(), 3);
    }

    #[test]
    fn vis_extend_basic_one_predecessor_of_two() {
        // o has one session predecessor among two placed events
        let inst = size_after_remove();
        let state = SearchState::from_exec(PartialExecution::from_parts(4, &[0, 1, 2], &[]));
        let succ = vis_extend(&state, Level::Basic, &inst);
        assert_eq!(succ.len(), 2);
        assert!(succ.iter().all(|s| s.exec().is_visible(1, 2)));
    }

    #[test]
    fn validity_of_size_after_remove_states() {
        let inst = size_after_remove();
        let bad = SearchState::from_exec(PartialExecution::from_parts(4, &[0, 3], &[(0, 3)]));
        assert!(!is_valid(&bad, &inst));
        let none = SearchState::from_exec(PartialExecution::from_parts(4, &[0, 1], &[(0, 1)]));
        assert!(is_valid(&none, &inst));
        let good = SearchState::from_exec(PartialExecution::from_parts(
            4,
            &[1, 2, 3],
            &[(1, 2), (1, 3), (2, 3)],
        ));
        assert!(is_valid(&good, &inst));
        assert!(newest_valid(&good, &inst));
    }

    #[test]
    fn size_after_remove_satisfies_basic_with_expected_context() {
        let inst = size_after_remove();
        for mode in [VisMode::Exhaustive, VisMode::Minimal] {
            let opts = SearchOptions {
                vis_mode: mode,
                ..Default::default()
            };
            let res = check(&inst, Level::Basic, None, &opts);
            assert_eq!(res.outcome, Outcome::Satisfied);
            let cert = res.certificate.unwrap();
            let ctx: Vec<usize> = cert.context(&inst, 3).collect();
            assert_eq!(ctx, vec![1, 2]);
        }
    }

    #[test]
    fn empty_history_satisfied() {
        let inst = Instance::new(&History::default(), DataType::Set).unwrap();
        for level in Level::ALL {
            let res = check(&inst, level, None, &SearchOptions::default());
            assert_eq!(res.outcome, Outcome::Satisfied);
            assert_eq!(res.stats.states_explored, 1);
        }
    }

    #[test]
    fn contradicting_session_violates_complete() {
        let h = History::from_sessions([(
            0,
            vec![upd("add", &[1]), op("contains", &[1], Value::Bool(false))],
        )])
        .unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        let res = check(&inst, Level::Complete, None, &SearchOptions::default());
        assert_eq!(res.outcome, Outcome::Violated);
        let res = check(&inst, Level::Weak, None, &SearchOptions::default());
        assert_eq!(res.outcome, Outcome::Satisfied);
    }

    #[test]
    fn budget_is_enforced() {
        let inst = size_after_remove();
        let opts = SearchOptions {
            budget: 2,
            vis_mode: VisMode::Exhaustive,
            dedup: false,
        };
        let res = check(&inst, Level::Weak, None, &opts);
        assert_eq!(res.outcome, Outcome::BudgetExceeded);
        assert_eq!(res.stats.states_explored, 2);
    }
}
