//! Query clusters and the pruning predicates extracted from them.
//!
//! A cluster is one single-element query plus every update on that element.
//! All valid executions of the cluster are summarized, and the relations
//! shared by all of them (an arbitration pair, or a visibility edge or
//! non-edge under a set of arbitration pairs) become predicates. The
//! projection of any certificate onto a cluster is itself a valid cluster
//! execution, so a state violating a predicate can be dropped.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datatype::Op;
use crate::eventset::EventSet;
use crate::history::{EventId, History, Value};
use crate::instance::{Instance, QueryCheck};
use crate::search::{SearchState, SubsetsBySize};
use crate::visibility::{least_valid_superset, Level, PartialExecution};

/// Largest cluster, in events, that is enumerated.
pub const CLUSTER_SIZE_CAP: usize = 8;

/// Closure evaluations allowed per cluster before it is skipped.
pub const CLUSTER_WORK_BUDGET: u64 = 200_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryCluster {
    pub element: i64,
    /// Dense index of the dictated query.
    pub query: usize,
    /// Dense indices of the dictating updates, ascending.
    pub updates: Vec<usize>,
}

impl QueryCluster {
    /// All member events, ascending.
    pub fn events(&self) -> Vec<usize> {
        let mut events = self.updates.clone();
        events.push(self.query);
        events.sort_unstable();
        events
    }

    pub fn len(&self) -> usize {
        self.updates.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Session-order pairs among member events.
    pub fn sub_session_order(&self, history: &History) -> Vec<(usize, usize)> {
        let events = self.events();
        let mut pairs = Vec::new();
        for &a in &events {
            for &b in &events {
                if history.so(a, b) {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }
}

/// One cluster per query that names or returns a single element.
pub fn build_clusters(inst: &Instance) -> Vec<QueryCluster> {
    (0..inst.len())
        .filter(|&q| !inst.is_update(q))
        .filter_map(|q| {
            let element = match (inst.op(q), &inst.history().event(q).ret) {
                (Op::GetMax, Value::Pair(e, _)) => *e,
                (op, _) => op.element()?,
            };
            let updates = inst
                .updates()
                .iter()
                .filter(|&u| inst.op(u).element() == Some(element))
                .collect();
            Some(QueryCluster {
                element,
                query: q,
                updates,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PredicateKind {
    Arb,
    Vis,
    NotVis,
}

/// A relation every certificate must satisfy. Events are dense indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PruningPredicate {
    pub kind: PredicateKind,
    pub x: usize,
    pub y: usize,
    /// Arbitration pairs under which the visibility claim applies.
    pub slin: Vec<(usize, usize)>,
}

impl PruningPredicate {
    pub fn arb(x: usize, y: usize) -> Self {
        PruningPredicate {
            kind: PredicateKind::Arb,
            x,
            y,
            slin: Vec::new(),
        }
    }

    /// Every event the predicate mentions.
    pub fn participants(&self) -> EventSet {
        let mut set = EventSet::singleton(self.x);
        set.insert(self.y);
        for &(a, b) in &self.slin {
            set.insert(a);
            set.insert(b);
        }
        set
    }

    /// Whether `exec` already contradicts the predicate. Unplaced
    /// participants leave it undecided, which counts as not violated.
    pub fn violated(&self, exec: &PartialExecution) -> bool {
        let (x, y) = (self.x, self.y);
        let slin_holds = || self.slin.iter().all(|&(a, b)| exec.precedes(a, b));
        match self.kind {
            PredicateKind::Arb => exec.precedes(y, x),
            PredicateKind::Vis => exec.precedes(x, y) && !exec.is_visible(x, y) && slin_holds(),
            PredicateKind::NotVis => exec.is_visible(x, y) && slin_holds(),
        }
    }

    /// Whether a complete execution satisfies the predicate.
    pub fn holds_in(&self, exec: &PartialExecution) -> bool {
        !self.violated(exec)
    }

    pub fn to_record(&self, history: &History) -> PredicateRecord {
        let id = |e: usize| history.event(e).id;
        PredicateRecord {
            kind: self.kind,
            x: id(self.x),
            y: id(self.y),
            slin: self.slin.iter().map(|&(a, b)| (id(a), id(b))).collect(),
        }
    }
}

/// [`PruningPredicate::violated`] on a search state.
pub fn predicate_violated(p: &PruningPredicate, state: &SearchState) -> bool {
    p.violated(state.exec())
}

/// Serialized form of a predicate, naming events by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateRecord {
    pub kind: PredicateKind,
    pub x: EventId,
    pub y: EventId,
    pub slin: Vec<(EventId, EventId)>,
}

impl fmt::Display for PredicateRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}(", self.kind)?;
        if self.kind != PredicateKind::Arb {
            let pairs: Vec<String> = self.slin.iter().map(|(a, b)| format!("{a}<{b}")).collect();
            write!(f, "{{{}}}, ", pairs.join(", "))?;
        }
        write!(f, "{}, {})", self.x, self.y)
    }
}

/// A cluster re-indexed as a standalone instance.
struct ClusterInstance {
    inst: Instance,
    /// Local index to global index.
    global: Vec<usize>,
    query: usize,
}

impl ClusterInstance {
    fn new(parent: &Instance, c: &QueryCluster) -> ClusterInstance {
        let global = c.events();
        let history = parent.history();
        let mut sessions: Vec<(u32, Vec<_>)> = Vec::new();
        for &g in &global {
            let ev = history.event(g);
            if sessions.last().map(|s| s.0) != Some(ev.id.session) {
                sessions.push((ev.id.session, Vec::new()));
            }
            let s = sessions.last_mut().expect("just pushed");
            s.1.push((ev.method.clone(), ev.args.clone(), ev.ret.clone()));
        }
        let sub = History::from_sessions(sessions).expect("projection of a valid history");
        let ops: Vec<Op> = global.iter().map(|&g| parent.op(g).clone()).collect();
        let query = global
            .iter()
            .position(|&g| g == c.query)
            .expect("query is a member");
        let checks = (0..global.len())
            .map(|i| {
                (i == query).then(|| match (&ops[i], &sub.event(i).ret) {
                    (Op::GetMax, Value::Pair(e, p)) => QueryCheck::HasPriority {
                        element: *e,
                        priority: *p,
                    },
                    (_, ret) => QueryCheck::Exact(ret.clone()),
                })
            })
            .collect();
        let inst =
            Instance::with_checks(&sub, parent.data_type(), ops, checks).expect("cluster fits");
        ClusterInstance {
            inst,
            global,
            query,
        }
    }

    fn to_global(&self, exec: &PartialExecution, universe: usize) -> PartialExecution {
        let lin: Vec<usize> = exec.lin().map(|e| self.global[e]).collect();
        let vis: Vec<(usize, usize)> = exec
            .vis_pairs()
            .into_iter()
            .map(|(x, y)| (self.global[x], self.global[y]))
            .collect();
        PartialExecution::from_parts(universe, &lin, &vis)
    }
}

/// Arbitration orders of `inst` consistent with session order.
fn for_each_lin(inst: &Instance, mut f: impl FnMut(&[usize]) -> bool) {
    fn go(
        inst: &Instance,
        lin: &mut Vec<usize>,
        placed: EventSet,
        f: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        if lin.len() == inst.len() {
            return f(lin);
        }
        for e in 0..inst.len() {
            if !placed.contains(e) && inst.hb(e).is_subset(placed) {
                lin.push(e);
                let mut next = placed;
                next.insert(e);
                let go_on = go(inst, lin, next, f);
                lin.pop();
                if !go_on {
                    return false;
                }
            }
        }
        true
    }
    go(inst, &mut Vec::new(), EventSet::EMPTY, &mut f);
}

/// Every valid execution of the cluster at `level`, over the parent's
/// event indices. Returns `None` when the cluster exceeds `cap` events or
/// more than `limit` executions exist.
pub fn enumerate_cluster_executions(
    c: &QueryCluster,
    inst: &Instance,
    level: Level,
    cap: usize,
    limit: usize,
) -> Option<Vec<PartialExecution>> {
    if c.len() > cap {
        return None;
    }
    let ci = ClusterInstance::new(inst, c);
    let local = &ci.inst;
    let mut out = Vec::new();
    let mut overflow = false;
    for_each_lin(local, |lin| {
        let mut exec = PartialExecution::empty(local.len());
        assign_vis(local, level, lin, 0, &mut exec, &mut |exec| {
            if local.query_ok(exec.context(local, ci.query), ci.query) {
                out.push(ci.to_global(exec, inst.len()));
            }
            if out.len() > limit {
                overflow = true;
            }
            !overflow
        });
        !overflow
    });
    (!overflow).then_some(out)
}

fn assign_vis(
    inst: &Instance,
    level: Level,
    lin: &[usize],
    i: usize,
    exec: &mut PartialExecution,
    f: &mut dyn FnMut(&PartialExecution) -> bool,
) -> bool {
    if i == lin.len() {
        return f(exec);
    }
    let o = lin[i];
    exec.append(o);
    let mut earlier = exec.placed();
    earlier.remove(o);
    for seen in SubsetsBySize::new(earlier) {
        if crate::visibility::vis_choice_valid(level, exec, seen, o, inst) {
            exec.set_vis(o, seen);
            if !assign_vis(inst, level, lin, i + 1, exec, f) {
                exec.pop();
                return false;
            }
        }
    }
    exec.pop();
    true
}

/// Ordered pairs `(a, b)` with `a` before `b` in `lin`.
fn lin_pairs(lin: &[usize]) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for i in 0..lin.len() {
        for j in i + 1..lin.len() {
            pairs.insert((lin[i], lin[j]));
        }
    }
    pairs
}

fn intersect_all<'a>(
    mut sets: impl Iterator<Item = &'a BTreeSet<(usize, usize)>>,
) -> Option<BTreeSet<(usize, usize)>> {
    let first = sets.next()?.clone();
    Some(sets.fold(first, |acc, s| acc.intersection(s).copied().collect()))
}

/// One valid arbitration order of a cluster with the visible pairs that
/// some valid execution over it includes, and those that some excludes.
#[derive(Clone, Debug)]
struct LinSummary {
    lin: BTreeSet<(usize, usize)>,
    may_see: BTreeSet<(usize, usize)>,
    may_miss: BTreeSet<(usize, usize)>,
}

impl LinSummary {
    fn of_execs(execs: &[PartialExecution]) -> Vec<LinSummary> {
        let mut out: Vec<LinSummary> = Vec::new();
        for exec in execs {
            let lin: Vec<usize> = exec.lin().collect();
            let pairs = lin_pairs(&lin);
            let idx = match out.iter().position(|s| s.lin == pairs) {
                Some(i) => i,
                None => {
                    out.push(LinSummary {
                        lin: pairs.clone(),
                        may_see: BTreeSet::new(),
                        may_miss: BTreeSet::new(),
                    });
                    out.len() - 1
                }
            };
            for &(a, b) in &pairs {
                if exec.is_visible(a, b) {
                    out[idx].may_see.insert((a, b));
                } else {
                    out[idx].may_miss.insert((a, b));
                }
            }
        }
        out
    }
}

fn arb_from(summaries: &[LinSummary], so: &BTreeSet<(usize, usize)>) -> Vec<PruningPredicate> {
    let Some(common) = intersect_all(summaries.iter().map(|s| &s.lin)) else {
        return Vec::new();
    };
    // `common` is a transitive order; keep only its covering pairs, since
    // the rest follow from them and from session order
    let implied = |&(x, y): &(usize, usize)| {
        common
            .iter()
            .any(|&(a, z)| a == x && z != y && common.contains(&(z, y)))
    };
    common
        .iter()
        .filter(|p| !so.contains(p) && !implied(p))
        .map(|&(x, y)| PruningPredicate::arb(x, y))
        .collect()
}

type PairsOf = fn(&LinSummary) -> &BTreeSet<(usize, usize)>;

fn vis_from(
    summaries: &[LinSummary],
    kind: PredicateKind,
    so: &BTreeSet<(usize, usize)>,
) -> Vec<PruningPredicate> {
    let (holds, fails): (PairsOf, PairsOf) = match kind {
        PredicateKind::Vis => (|s| &s.may_see, |s| &s.may_miss),
        _ => (|s| &s.may_miss, |s| &s.may_see),
    };
    let union: BTreeSet<(usize, usize)> = summaries
        .iter()
        .flat_map(|s| holds(s).iter().copied())
        .collect();
    let mut out = Vec::new();
    for pair in union {
        let Some(s_arb) = intersect_all(
            summaries
                .iter()
                .filter(|s| holds(s).contains(&pair))
                .map(|s| &s.lin),
        ) else {
            continue;
        };
        // an execution without the relation but with every pair of s_arb
        // (which includes `pair` itself) refutes it
        let refuted = summaries
            .iter()
            .any(|s| fails(s).contains(&pair) && s_arb.is_subset(&s.lin));
        if !refuted {
            let slin = s_arb
                .into_iter()
                .filter(|p| *p != pair && !so.contains(p))
                .collect();
            out.push(PruningPredicate {
                kind,
                x: pair.0,
                y: pair.1,
                slin,
            });
        }
    }
    out
}

fn so_pairs(execs_history: &History, events: &[usize]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for &a in events {
        for &b in events {
            if execs_history.so(a, b) {
                out.insert((a, b));
            }
        }
    }
    out
}

fn participants_of(execs: &[PartialExecution]) -> Vec<usize> {
    execs
        .first()
        .map(|e| e.lin().collect::<Vec<_>>())
        .unwrap_or_default()
}

fn so_among(history: &History, execs: &[PartialExecution]) -> BTreeSet<(usize, usize)> {
    so_pairs(history, &participants_of(execs))
}

/// Arbitration pairs shared by every execution, minus session order.
pub fn extract_tarb(execs: &[PartialExecution], history: &History) -> Vec<PruningPredicate> {
    arb_from(&LinSummary::of_execs(execs), &so_among(history, execs))
}

/// Visibility edges forced under a set of arbitration pairs.
pub fn extract_tvis(execs: &[PartialExecution], history: &History) -> Vec<PruningPredicate> {
    vis_from(
        &LinSummary::of_execs(execs),
        PredicateKind::Vis,
        &so_among(history, execs),
    )
}

/// Visibility non-edges forced under a set of arbitration pairs.
pub fn extract_tnotvis(execs: &[PartialExecution], history: &History) -> Vec<PruningPredicate> {
    vis_from(
        &LinSummary::of_execs(execs),
        PredicateKind::NotVis,
        &so_among(history, execs),
    )
}

/// Summarizes a cluster's valid executions without listing them.
///
/// For each arbitration order and each set of updates the query may see,
/// the least visibility relation containing that choice is computed;
/// valid relations are closed under intersection, so a pair may be absent
/// iff the least relation lacks it, and may be present iff adding it keeps
/// the query's update set unchanged.
fn summarize_cluster(ci: &ClusterInstance, level: Level, budget: u64) -> Option<Vec<LinSummary>> {
    let local = &ci.inst;
    let q = ci.query;
    let updates = local.updates();
    let mut work = 0u64;
    let mut out = Vec::new();
    let mut exhausted = false;
    for_each_lin(local, |lin| {
        let pos_q = lin.iter().position(|&e| e == q).expect("query placed");
        let before_q: EventSet = lin[..pos_q].iter().copied().collect();
        let mut summary = LinSummary {
            lin: lin_pairs(lin),
            may_see: BTreeSet::new(),
            may_miss: BTreeSet::new(),
        };
        let mut valid = false;
        for seen in SubsetsBySize::new(before_q.intersection(updates)) {
            let ctx = lin.iter().copied().filter(|&e| seen.contains(e));
            if !local.query_ok(ctx, q) {
                continue;
            }
            work += 1;
            let least = least_relation(local, level, lin, &[(q, seen)]);
            if least[q].intersection(updates) != seen {
                continue;
            }
            valid = true;
            for &(a, b) in &summary.lin {
                if least[b].contains(a) {
                    summary.may_see.insert((a, b));
                    continue;
                }
                summary.may_miss.insert((a, b));
                if summary.may_see.contains(&(a, b)) {
                    continue;
                }
                work += 1;
                let mut seed = EventSet::singleton(a);
                if b == q {
                    seed = seed.union(seen);
                }
                let forced = if b == q {
                    least_relation(local, level, lin, &[(q, seed)])
                } else {
                    least_relation(local, level, lin, &[(q, seen), (b, seed)])
                };
                if forced[q].intersection(updates) == seen {
                    summary.may_see.insert((a, b));
                }
            }
            if work > budget {
                exhausted = true;
                return false;
            }
        }
        if valid {
            out.push(summary);
        }
        true
    });
    (!exhausted).then_some(out)
}

/// The least visibility relation over `lin` that meets `level` and
/// contains the given seeds, as per-event visible sets (local indices).
fn least_relation(
    inst: &Instance,
    level: Level,
    lin: &[usize],
    seeds: &[(usize, EventSet)],
) -> Vec<EventSet> {
    let mut exec = PartialExecution::empty(inst.len());
    for &e in lin {
        exec.append(e);
        let seed = seeds
            .iter()
            .filter(|(s, _)| *s == e)
            .fold(EventSet::EMPTY, |acc, (_, set)| acc.union(*set));
        let seen = least_valid_superset(level, &exec, seed, e, inst);
        exec.set_vis(e, seen);
    }
    (0..inst.len()).map(|e| exec.vis_of(e)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneOptions {
    pub cluster_cap: usize,
    pub work_budget: u64,
}

impl Default for PruneOptions {
    fn default() -> Self {
        PruneOptions {
            cluster_cap: CLUSTER_SIZE_CAP,
            work_budget: CLUSTER_WORK_BUDGET,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStats {
    pub clusters: usize,
    pub skipped_clusters: usize,
    pub predicates: usize,
}

/// Predicates for one history and level, indexed by participant.
#[derive(Clone, Debug, Default)]
pub struct Pruner {
    predicates: Vec<PruningPredicate>,
    participants: Vec<EventSet>,
    by_event: Vec<Vec<u32>>,
    stats: PruneStats,
}

impl Pruner {
    pub fn build(inst: &Instance, level: Level, opts: &PruneOptions) -> Pruner {
        let clusters = build_clusters(inst);
        let mut stats = PruneStats {
            clusters: clusters.len(),
            ..Default::default()
        };
        let mut all = BTreeSet::new();
        for c in &clusters {
            match cluster_predicates(inst, c, level, opts) {
                Some(preds) => all.extend(preds),
                None => stats.skipped_clusters += 1,
            }
        }
        Pruner::from_predicates(inst.len(), all.into_iter().collect(), stats)
    }

    pub fn from_predicates(
        n: usize,
        predicates: Vec<PruningPredicate>,
        mut stats: PruneStats,
    ) -> Pruner {
        stats.predicates = predicates.len();
        let participants: Vec<EventSet> = predicates
            .iter()
            .map(PruningPredicate::participants)
            .collect();
        let mut by_event = vec![Vec::new(); n];
        for (i, set) in participants.iter().enumerate() {
            for e in set.iter() {
                by_event[e].push(i as u32);
            }
        }
        Pruner {
            predicates,
            participants,
            by_event,
            stats,
        }
    }

    pub fn predicates(&self) -> &[PruningPredicate] {
        &self.predicates
    }

    pub fn stats(&self) -> PruneStats {
        self.stats
    }

    /// Whether a predicate whose last participant is the newest placed
    /// event is violated. Earlier placements were checked when they were
    /// newest, so this covers every decided predicate along a search path.
    pub fn violated(&self, state: &SearchState) -> bool {
        let exec = state.exec();
        let Some(newest) = exec.last() else {
            return false;
        };
        let placed = exec.placed();
        self.by_event[newest].iter().any(|&i| {
            let i = i as usize;
            self.participants[i].is_subset(placed) && self.predicates[i].violated(exec)
        })
    }

    pub fn records(&self, history: &History) -> Vec<PredicateRecord> {
        self.predicates
            .iter()
            .map(|p| p.to_record(history))
            .collect()
    }
}

/// Predicates of one cluster, or `None` when it is skipped.
pub fn cluster_predicates(
    inst: &Instance,
    c: &QueryCluster,
    level: Level,
    opts: &PruneOptions,
) -> Option<Vec<PruningPredicate>> {
    if c.len() > opts.cluster_cap {
        return None;
    }
    let ci = ClusterInstance::new(inst, c);
    let local = summarize_cluster(&ci, level, opts.work_budget)?;
    let to_global = |pairs: &BTreeSet<(usize, usize)>| -> BTreeSet<(usize, usize)> {
        pairs
            .iter()
            .map(|&(a, b)| (ci.global[a], ci.global[b]))
            .collect()
    };
    let summaries: Vec<LinSummary> = local
        .iter()
        .map(|s| LinSummary {
            lin: to_global(&s.lin),
            may_see: to_global(&s.may_see),
            may_miss: to_global(&s.may_miss),
        })
        .collect();
    let so = so_pairs(inst.history(), &c.events());
    let mut out = arb_from(&summaries, &so);
    out.extend(vis_from(&summaries, PredicateKind::Vis, &so));
    out.extend(vis_from(&summaries, PredicateKind::NotVis, &so));
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datatype::DataType;
    use crate::history::{parse_history, Scalar};

    fn ev(m: &str, a: &[i64], r: Value) -> (String, Vec<Scalar>, Value) {
        (
            m.to_string(),
            a.iter().map(|&x| Scalar::Int(x)).collect(),
            r,
        )
    }

    fn get_pri_history() -> Instance {
        // {insert(x,5); inc(x,1)} || {get_pri(x) => 6}, x = 7
        let h = History::from_sessions([
            (
                0,
                vec![
                    ev("insert", &[7, 5], Value::Nil),
                    ev("inc", &[7, 1], Value::Nil),
                ],
            ),
            (1, vec![ev("get_pri", &[7], Value::Int(6))]),
        ])
        .unwrap();
        Instance::new(&h, DataType::PQueue).unwrap()
    }

    #[test]
    fn get_pri_cluster_shape() {
        let inst = get_pri_history();
        let clusters = build_clusters(&inst);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].updates, vec![0, 1]);
        assert_eq!(clusters[0].query, 2);
        assert_eq!(clusters[0].sub_session_order(inst.history()), vec![(0, 1)]);
    }

    #[test]
    fn get_pri_cluster_yields_single_arb() {
        let inst = get_pri_history();
        let c = &build_clusters(&inst)[0];
        let execs =
            enumerate_cluster_executions(c, &inst, Level::Weak, CLUSTER_SIZE_CAP, 1 << 20).unwrap();
        assert!(!execs.is_empty());
        assert!(execs.iter().all(|e| e.precedes(1, 2)));
        assert_eq!(
            extract_tarb(&execs, inst.history()),
            vec![PruningPredicate::arb(1, 2)]
        );
        let preds = cluster_predicates(&inst, c, Level::Weak, &PruneOptions::default()).unwrap();
        let arbs: Vec<_> = preds
            .iter()
            .filter(|p| p.kind == PredicateKind::Arb)
            .collect();
        assert_eq!(arbs, vec![&PruningPredicate::arb(1, 2)]);
    }

    #[test]
    fn get_pri_pattern_prunes_at_weak() {
        use crate::search::{check, Outcome, SearchOptions, VisMode};
        let inst = get_pri_history();
        let pruner = Pruner::build(&inst, Level::Weak, &PruneOptions::default());
        let opts = SearchOptions {
            vis_mode: VisMode::Exhaustive,
            ..Default::default()
        };
        let res = check(&inst, Level::Weak, Some(&pruner), &opts);
        assert_eq!(res.outcome, Outcome::Satisfied);
        assert!(res.stats.states_pruned > 0);
    }

    #[test]
    fn size_only_history_has_no_clusters() {
        let h = parse_history(
            r#"{"session":0,"index":0,"method":"add","args":[1],"ret":null}
{"session":1,"index":0,"method":"size","args":[],"ret":1}"#,
        )
        .unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        assert!(build_clusters(&inst).is_empty());
    }

    #[test]
    fn get_max_cluster_uses_returned_element() {
        let h = History::from_sessions([
            (
                0,
                vec![
                    ev("insert", &[1, 7], Value::Nil),
                    ev("insert", &[2, 3], Value::Nil),
                ],
            ),
            (1, vec![ev("get_max", &[], Value::Pair(1, 7))]),
        ])
        .unwrap();
        let inst = Instance::new(&h, DataType::PQueue).unwrap();
        let clusters = build_clusters(&inst);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].element, 1);
        assert_eq!(clusters[0].updates, vec![0]);
    }

    #[test]
    fn empty_cluster_accepts_everything() {
        let h =
            History::from_sessions([(0, vec![ev("contains", &[3], Value::Bool(false))])]).unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        let c = &build_clusters(&inst)[0];
        let execs = enumerate_cluster_executions(c, &inst, Level::Weak, 8, 100).unwrap();
        assert_eq!(execs.len(), 1);
    }

    #[test]
    fn single_update_cluster_by_hand() {
        // add(1) || contains(1) => true: add must come first and be visible
        let h = History::from_sessions([
            (0, vec![ev("add", &[1], Value::Nil)]),
            (1, vec![ev("contains", &[1], Value::Bool(true))]),
        ])
        .unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        let c = &build_clusters(&inst)[0];
        let execs = enumerate_cluster_executions(c, &inst, Level::Weak, 8, 100).unwrap();
        assert_eq!(execs.len(), 1);
        assert_eq!(execs[0].lin().collect::<Vec<_>>(), vec![0, 1]);
        assert!(execs[0].is_visible(0, 1));
        let tvis = extract_tvis(&execs, inst.history());
        assert_eq!(tvis.len(), 1);
        assert_eq!((tvis[0].x, tvis[0].y), (0, 1));
        assert!(tvis[0].slin.is_empty());
    }

    /// add(z); contains(z) => false || remove(z)
    fn false_contains() -> Instance {
        let h = History::from_sessions([
            (
                0,
                vec![
                    ev("add", &[9], Value::Nil),
                    ev("contains", &[9], Value::Bool(false)),
                ],
            ),
            (1, vec![ev("remove", &[9], Value::Nil)]),
        ])
        .unwrap();
        Instance::new(&h, DataType::Set).unwrap()
    }

    /// contains(z) => true; add(z) || add(z); remove(z)
    fn true_contains() -> Instance {
        let h = History::from_sessions([
            (
                0,
                vec![
                    ev("contains", &[9], Value::Bool(true)),
                    ev("add", &[9], Value::Nil),
                ],
            ),
            (
                1,
                vec![ev("add", &[9], Value::Nil), ev("remove", &[9], Value::Nil)],
            ),
        ])
        .unwrap();
        Instance::new(&h, DataType::Set).unwrap()
    }

    #[test]
    fn remove_must_be_visible_to_false_contains() {
        let inst = false_contains();
        let c = &build_clusters(&inst)[0];
        let preds = cluster_predicates(&inst, c, Level::Basic, &PruneOptions::default()).unwrap();
        // once add(z) precedes remove(z), remove(z) must be visible
        let want = PruningPredicate {
            kind: PredicateKind::Vis,
            x: 2,
            y: 1,
            slin: vec![(0, 2)],
        };
        assert!(preds.contains(&want), "{preds:?}");
    }

    #[test]
    fn remove_must_be_hidden_from_true_contains() {
        let inst = true_contains();
        let c = &build_clusters(&inst)[0];
        let preds = cluster_predicates(&inst, c, Level::Weak, &PruneOptions::default()).unwrap();
        assert!(
            preds
                .iter()
                .any(|p| p.kind == PredicateKind::NotVis && p.x == 3 && p.y == 0),
            "{preds:?}"
        );
    }

    #[test]
    fn summary_matches_enumeration() {
        for inst in [&false_contains(), &true_contains(), &get_pri_history()] {
            for level in Level::ALL {
                for c in build_clusters(inst) {
                    let execs = enumerate_cluster_executions(&c, inst, level, 8, 1 << 20).unwrap();
                    let mut expected: BTreeSet<_> =
                        extract_tarb(&execs, inst.history()).into_iter().collect();
                    expected.extend(extract_tvis(&execs, inst.history()));
                    expected.extend(extract_tnotvis(&execs, inst.history()));
                    let got: BTreeSet<_> =
                        cluster_predicates(inst, &c, level, &PruneOptions::default())
                            .unwrap()
                            .into_iter()
                            .collect();
                    assert_eq!(got, expected, "level {level}");
                    for p in &got {
                        assert!(execs.iter().all(|e| p.holds_in(e)), "{p:?} at {level}");
                    }
                }
            }
        }
    }

    #[test]
    fn predicate_evaluation() {
        let arb = PruningPredicate::arb(0, 1);
        assert!(arb.violated(&PartialExecution::from_parts(3, &[1, 0], &[])));
        assert!(!arb.violated(&PartialExecution::from_parts(3, &[1], &[])));
        let vis = PruningPredicate {
            kind: PredicateKind::Vis,
            x: 0,
            y: 1,
            slin: vec![(2, 0)],
        };
        assert!(!vis.violated(&PartialExecution::from_parts(3, &[0], &[])));
        assert!(vis.violated(&PartialExecution::from_parts(3, &[2, 0, 1], &[])));
        assert!(!vis.violated(&PartialExecution::from_parts(3, &[0, 2, 1], &[])));
        assert!(!vis.violated(&PartialExecution::from_parts(3, &[2, 0, 1], &[(0, 1)])));
        let notvis = PruningPredicate {
            kind: PredicateKind::NotVis,
            x: 0,
            y: 1,
            slin: vec![],
        };
        assert!(notvis.violated(&PartialExecution::from_parts(3, &[0, 1], &[(0, 1)])));
    }

    #[test]
    fn oversize_cluster_is_skipped() {
        let adds: Vec<_> = (0..8).map(|_| ev("add", &[1], Value::Nil)).collect();
        let h = History::from_sessions([
            (0, adds),
            (1, vec![ev("contains", &[1], Value::Bool(true))]),
        ])
        .unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        let pruner = Pruner::build(&inst, Level::Weak, &PruneOptions::default());
        assert_eq!(pruner.stats().clusters, 1);
        assert_eq!(pruner.stats().skipped_clusters, 1);
        assert!(pruner.predicates().is_empty());
    }
}
