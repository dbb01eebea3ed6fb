//! An in-process replicated store that produces histories with known
//! visibility.
//!
//! Sessions are pinned to replicas. Updates apply at their origin replica
//! at once and reach the others according to the delivery mode; queries
//! read the local replica. Concurrent updates on one element are resolved
//! by the configured add-wins or remove-wins rule, where two updates are
//! concurrent when neither was delivered at the other's origin before it
//! ran.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datatype::{DataType, Op};
use crate::eventset::EventSet;
use crate::history::{EventId, History, Scalar, Value};
use crate::visibility::PartialExecution;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ground truth names unknown event {0}")]
    UnknownEvent(EventId),
    #[error("ground truth lacks event {0}")]
    MissingEvent(EventId),
    #[error("ground truth lists event {0} twice")]
    DuplicateEvent(EventId),
    #[error("event {event} sees {seen}, which runs after it")]
    NotTopological { event: EventId, seen: EventId },
    #[error("event {event} sees {seen}, which is not an update")]
    NotAnUpdate { event: EventId, seen: EventId },
    #[error("event {0} runs before its session predecessor")]
    SessionOrder(EventId),
    #[error("invalid workload configuration: {0}")]
    Config(String),
    #[error(transparent)]
    DataType(#[from] crate::datatype::DataTypeError),
}

/// Shape of a random workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub data_type: DataType,
    pub min_ops: usize,
    pub max_ops: usize,
    pub min_sessions: usize,
    pub max_sessions: usize,
    /// Arguments are drawn uniformly from `0..=arg_max`.
    pub arg_max: i64,
    /// Relative method weights.
    pub mix: Vec<(String, u32)>,
    pub seed: u64,
}

impl WorkloadConfig {
    /// Default mix for `dt`: 60% updates, 15 to 17 operations over 3 to 5
    /// sessions, arguments in 0..=5.
    pub fn new(dt: DataType, seed: u64) -> Self {
        WorkloadConfig {
            data_type: dt,
            min_ops: 15,
            max_ops: 17,
            min_sessions: 3,
            max_sessions: 5,
            arg_max: 5,
            mix: default_mix(dt)
                .iter()
                .map(|&(m, w)| (m.to_string(), w))
                .collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        if self.min_ops > self.max_ops || self.min_sessions > self.max_sessions {
            return bad("empty range");
        }
        if self.min_sessions == 0 || self.min_ops < self.max_sessions {
            return bad("every session needs an operation");
        }
        if self.mix.iter().map(|(_, w)| *w as u64).sum::<u64>() == 0 {
            return bad("weights sum to zero");
        }
        if self.arg_max < 0 {
            return bad("negative argument range");
        }
        for (m, _) in &self.mix {
            self.data_type.signature(m)?;
        }
        Ok(())
    }
}

pub fn default_mix(dt: DataType) -> &'static [(&'static str, u32)] {
    match dt {
        DataType::Set => &[("add", 40), ("remove", 20), ("contains", 20), ("size", 20)],
        DataType::Map => &[("put", 40), ("delete", 20), ("get", 20), ("size", 20)],
        DataType::PQueue => &[
            ("insert", 30),
            ("inc", 30),
            ("get_pri", 20),
            ("get_max", 20),
        ],
    }
}

/// Operations per session, without return values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    pub data_type: DataType,
    pub sessions: Vec<Vec<(String, Vec<Scalar>)>>,
}

impl Workload {
    pub fn op_count(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }
}

/// Splits `total` by `weights` with the largest-remainder method, so each
/// count is within one of its exact share.
pub fn apportion(total: usize, weights: &[u32]) -> Vec<usize> {
    let sum: u64 = weights.iter().map(|&w| w as u64).sum();
    let exact: Vec<(usize, u64)> = weights
        .iter()
        .map(|&w| {
            let num = total as u64 * w as u64;
            ((num / sum) as usize, num % sum)
        })
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.0).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

pub fn generate_workload(cfg: &WorkloadConfig) -> Result<Workload, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ops = rng.gen_range(cfg.min_ops..=cfg.max_ops);
    let sessions = rng.gen_range(cfg.min_sessions..=cfg.max_sessions);
    let weights: Vec<u32> = cfg.mix.iter().map(|(_, w)| *w).collect();
    let mut methods: Vec<&str> = Vec::with_capacity(ops);
    for ((m, _), n) in cfg.mix.iter().zip(apportion(ops, &weights)) {
        methods.extend(std::iter::repeat_n(m.as_str(), n));
    }
    methods.shuffle(&mut rng);
    let mut out = vec![Vec::new(); sessions];
    for (i, m) in methods.into_iter().enumerate() {
        let arity = cfg.data_type.signature(m)?.arity;
        let args = (0..arity)
            .map(|_| Scalar::Int(rng.gen_range(0..=cfg.arg_max)))
            .collect();
        out[i % sessions].push((m.to_string(), args));
    }
    Ok(Workload {
        data_type: cfg.data_type,
        sessions: out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    /// Every update reaches every replica before the next operation.
    Sync,
    /// Updates are delivered at random times, each only after everything
    /// its origin had seen.
    CausalBroadcast,
    /// Updates are delivered at random times in any order; when more than
    /// `max_in_flight` are undelivered somewhere, the oldest is flushed.
    RandomDelay { max_in_flight: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    #[default]
    #[value(alias = "addwin")]
    AddWin,
    #[value(alias = "removewin")]
    RemoveWin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replicas: usize,
    pub mode: DeliveryMode,
    pub resolution: Resolution,
    /// Chance that a deliverable update is delivered to a replica at each
    /// step.
    pub deliver_prob: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(mode: DeliveryMode, resolution: Resolution, seed: u64) -> Self {
        SimConfig {
            replicas: 3,
            mode,
            resolution,
            deliver_prob: 0.3,
            seed,
        }
    }
}

/// Per-event delivery record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub id: EventId,
    /// Position in the global execution order.
    pub step: usize,
    /// Updates applied at the event's replica before it ran.
    pub delivered: Vec<EventId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub events: Vec<TruthEvent>,
}

struct Executed {
    id: EventId,
    op: Op,
    method: String,
    args: Vec<Scalar>,
    ret: Value,
    /// Updates (by step) delivered at the origin before it ran.
    deps: BTreeSet<usize>,
}

struct Replica {
    applied: BTreeSet<usize>,
}

/// Runs `workload` on the simulated store.
pub fn simulate(workload: &Workload, cfg: &SimConfig) -> Result<(History, GroundTruth), SimError> {
    let dt = workload.data_type;
    let replicas = cfg.replicas.max(1);
    let mut sched = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ChaCha8Rng::seed_from_u64(cfg.seed);
    net.set_stream(1);
    let mut store: Vec<Replica> = (0..replicas)
        .map(|_| Replica {
            applied: BTreeSet::new(),
        })
        .collect();
    let mut executed: Vec<Executed> = Vec::new();
    let mut next = vec![0usize; workload.sessions.len()];
    // updates not yet at every replica, oldest first
    let mut in_flight: Vec<usize> = Vec::new();
    loop {
        let open: Vec<usize> = (0..workload.sessions.len())
            .filter(|&s| next[s] < workload.sessions[s].len())
            .collect();
        let Some(&s) = open.choose(&mut sched) else {
            break;
        };
        let (method, args) = &workload.sessions[s][next[s]];
        let op = Op::compile(dt, method, args)?;
        let r = s % replicas;
        let step = executed.len();
        let deps = store[r].applied.clone();
        let ret = if op.is_update() {
            Value::Nil
        } else {
            answer(&op, &deps, &executed, cfg.resolution)
        };
        executed.push(Executed {
            id: EventId {
                session: s as u32,
                index: next[s] as u32,
            },
            op,
            method: method.clone(),
            args: args.clone(),
            ret,
            deps,
        });
        next[s] += 1;
        if executed[step].op.is_update() {
            store[r].applied.insert(step);
            in_flight.push(step);
        }
        deliver(&mut store, &mut in_flight, &executed, cfg, &mut net);
    }
    for replica in &mut store {
        replica.applied.extend(in_flight.iter().copied());
    }
    Ok(record(&executed))
}

fn deliver(
    store: &mut [Replica],
    in_flight: &mut Vec<usize>,
    executed: &[Executed],
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let flush = |store: &mut [Replica], u: usize| {
        for replica in store.iter_mut() {
            replica.applied.insert(u);
        }
    };
    match cfg.mode {
        DeliveryMode::Sync => {
            for u in in_flight.drain(..) {
                flush(store, u);
            }
            return;
        }
        DeliveryMode::RandomDelay { max_in_flight } => {
            while in_flight.len() > max_in_flight {
                let u = in_flight.remove(0);
                flush(store, u);
            }
            for replica in store.iter_mut() {
                for &u in in_flight.iter() {
                    if !replica.applied.contains(&u) && rng.gen_bool(cfg.deliver_prob) {
                        replica.applied.insert(u);
                    }
                }
            }
        }
        DeliveryMode::CausalBroadcast => {
            for replica in store.iter_mut() {
                // oldest first, so a dependency delivered here can enable a
                // later update in the same pass
                for &u in in_flight.iter() {
                    if !replica.applied.contains(&u)
                        && executed[u].deps.is_subset(&replica.applied)
                        && rng.gen_bool(cfg.deliver_prob)
                    {
                        replica.applied.insert(u);
                    }
                }
            }
        }
    }
    in_flight.retain(|u| store.iter().any(|r| !r.applied.contains(u)));
}

/// Updates in `seen` on `element`, keeping only those no other such update
/// has observed.
fn maximal(seen: &BTreeSet<usize>, executed: &[Executed], element: i64) -> Vec<usize> {
    let on: Vec<usize> = seen
        .iter()
        .copied()
        .filter(|&u| executed[u].op.element() == Some(element))
        .collect();
    on.iter()
        .copied()
        .filter(|&u| !on.iter().any(|&v| executed[v].deps.contains(&u)))
        .collect()
}

fn elements(seen: &BTreeSet<usize>, executed: &[Executed]) -> BTreeSet<i64> {
    seen.iter()
        .filter_map(|&u| executed[u].op.element())
        .collect()
}

fn set_present(seen: &BTreeSet<usize>, executed: &[Executed], e: i64, res: Resolution) -> bool {
    let top = maximal(seen, executed, e);
    let is_add = |u: &usize| matches!(executed[*u].op, Op::Add(_));
    match res {
        Resolution::AddWin => top.iter().any(is_add),
        Resolution::RemoveWin => !top.is_empty() && top.iter().all(is_add),
    }
}

fn map_value(
    seen: &BTreeSet<usize>,
    executed: &[Executed],
    k: i64,
    res: Resolution,
) -> Option<Value> {
    let top = maximal(seen, executed, k);
    let puts: Vec<usize> = top
        .iter()
        .copied()
        .filter(|&u| matches!(executed[u].op, Op::Put(..)))
        .collect();
    let live = match res {
        Resolution::AddWin => !puts.is_empty(),
        Resolution::RemoveWin => !top.is_empty() && puts.len() == top.len(),
    };
    let winner = puts.into_iter().max()?;
    match (&executed[winner].op, live) {
        (Op::Put(_, v), true) => Some(Value::from(v.clone())),
        _ => None,
    }
}

fn pqueue_priority(
    seen: &BTreeSet<usize>,
    executed: &[Executed],
    e: i64,
    res: Resolution,
) -> Option<i64> {
    let on: Vec<usize> = seen
        .iter()
        .copied()
        .filter(|&u| executed[u].op.element() == Some(e))
        .collect();
    let inserts: Vec<usize> = on
        .iter()
        .copied()
        .filter(|&u| matches!(executed[u].op, Op::Insert(..)))
        .collect();
    let &winner = inserts.iter().min()?;
    let Op::Insert(_, base) = executed[winner].op else {
        unreachable!()
    };
    let mut priority = base;
    for &u in &on {
        let Op::Inc(_, delta) = executed[u].op else {
            continue;
        };
        let observed_insert = inserts.iter().any(|i| executed[u].deps.contains(i));
        let concurrent = !executed[u].deps.contains(&winner) && !executed[winner].deps.contains(&u);
        let counts = match res {
            Resolution::AddWin => observed_insert || concurrent,
            Resolution::RemoveWin => observed_insert,
        };
        if counts {
            priority += delta;
        }
    }
    Some(priority)
}

/// A query's answer at a replica that has applied `seen`.
fn answer(q: &Op, seen: &BTreeSet<usize>, executed: &[Executed], res: Resolution) -> Value {
    match *q {
        Op::Contains(e) => Value::Bool(set_present(seen, executed, e, res)),
        Op::SetSize => {
            let n = elements(seen, executed)
                .into_iter()
                .filter(|&e| set_present(seen, executed, e, res))
                .count();
            Value::Int(n as i64)
        }
        Op::Get(k) => map_value(seen, executed, k, res).unwrap_or(Value::Nil),
        Op::MapSize => {
            let n = elements(seen, executed)
                .into_iter()
                .filter(|&k| map_value(seen, executed, k, res).is_some())
                .count();
            Value::Int(n as i64)
        }
        Op::GetPri(e) => pqueue_priority(seen, executed, e, res).map_or(Value::Nil, Value::Int),
        Op::GetMax => elements(seen, executed)
            .into_iter()
            .filter_map(|e| pqueue_priority(seen, executed, e, res).map(|p| (e, p)))
            // highest priority, then smallest id
            .min_by_key(|&(e, p)| (std::cmp::Reverse(p), e))
            .map_or(Value::Nil, |(e, p)| Value::Pair(e, p)),
        _ => unreachable!("updates have no answer"),
    }
}

fn record(executed: &[Executed]) -> (History, GroundTruth) {
    let mut sessions: BTreeMap<u32, Vec<(String, Vec<Scalar>, Value)>> = BTreeMap::new();
    for ev in executed {
        sessions.entry(ev.id.session).or_default().push((
            ev.method.clone(),
            ev.args.clone(),
            ev.ret.clone(),
        ));
    }
    let history = History::from_sessions(sessions).expect("simulated sessions are well formed");
    let events = executed
        .iter()
        .enumerate()
        .map(|(step, ev)| TruthEvent {
            id: ev.id,
            step,
            delivered: ev.deps.iter().map(|&u| executed[u].id).collect(),
        })
        .collect();
    (history, GroundTruth { events })
}

/// Generates a workload from `wl` and runs it under `sim`.
pub fn simulate_random(
    wl: &WorkloadConfig,
    sim: &SimConfig,
) -> Result<(History, GroundTruth), SimError> {
    simulate(&generate_workload(wl)?, sim)
}

/// The execution the simulator actually performed.
///
/// Arbitration is the global execution order. An event sees the updates
/// delivered at its replica before it ran, and every earlier query whose
/// delivered set is contained in its own.
pub fn ground_truth_execution(h: &History, gt: &GroundTruth) -> Result<PartialExecution, SimError> {
    let n = h.len();
    let mut step_of = vec![None; n];
    let mut delivered = vec![EventSet::EMPTY; n];
    let index: HashMap<EventId, usize> = (0..n).map(|i| (h.event(i).id, i)).collect();
    for t in &gt.events {
        let &e = index.get(&t.id).ok_or(SimError::UnknownEvent(t.id))?;
        if step_of[e].is_some() {
            return Err(SimError::DuplicateEvent(t.id));
        }
        step_of[e] = Some(t.step);
        for d in &t.delivered {
            delivered[e].insert(*index.get(d).ok_or(SimError::UnknownEvent(*d))?);
        }
    }
    if let Some(e) = (0..n).find(|&e| step_of[e].is_none()) {
        return Err(SimError::MissingEvent(h.event(e).id));
    }
    let step = |e: usize| step_of[e].expect("checked above");
    let mut lin: Vec<usize> = (0..n).collect();
    lin.sort_by_key(|&e| (step(e), h.event(e).id));
    let updates: EventSet = (0..n)
        .filter(|&e| crate::datatype::is_update_method(&h.event(e).method))
        .collect();
    let mut exec = PartialExecution::empty(n);
    for (pos, &e) in lin.iter().enumerate() {
        let id = h.event(e).id;
        if id.index > 0
            && h.index_of(EventId {
                index: id.index - 1,
                ..id
            })
            .is_none_or(|p| !exec.placed().contains(p))
        {
            return Err(SimError::SessionOrder(id));
        }
        for u in delivered[e].iter() {
            if !exec.placed().contains(u) {
                return Err(SimError::NotTopological {
                    event: id,
                    seen: h.event(u).id,
                });
            }
            if !updates.contains(u) {
                return Err(SimError::NotAnUpdate {
                    event: id,
                    seen: h.event(u).id,
                });
            }
        }
        let queries = lin[..pos]
            .iter()
            .copied()
            .filter(|&q| !updates.contains(q) && delivered[q].is_subset(delivered[e]));
        let seen = queries.fold(delivered[e], |mut acc, q| {
            acc.insert(q);
            acc
        });
        exec.append(e);
        exec.set_vis(e, seen);
    }
    Ok(exec)
}
