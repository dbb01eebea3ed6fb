#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vischeck::history::{Event, Scalar};
use vischeck::{DataType, History, Level, Value};

const UPDATES: [&str; 6] = ["add", "remove", "put", "delete", "insert", "inc"];

pub fn is_update(method: &str) -> bool {
    UPDATES.contains(&method)
}

fn int(s: &Scalar) -> i64 {
    match s {
        Scalar::Int(i) => *i,
        Scalar::Str(s) => panic!("unexpected string argument {s:?}"),
    }
}

/// Single-replica interpreter: applies `context` in order, then answers `q`.
pub fn interpret(dt: DataType, context: &[&Event], q: &Event) -> Value {
    match dt {
        DataType::Set => {
            let mut live = BTreeSet::new();
            for e in context {
                let x = int(&e.args[0]);
                if e.method == "add" {
                    live.insert(x);
                } else {
                    live.remove(&x);
                }
            }
            if q.method == "size" {
                Value::Int(live.len() as i64)
            } else {
                Value::Bool(live.contains(&int(&q.args[0])))
            }
        }
        DataType::Map => {
            let mut map: BTreeMap<i64, Value> = BTreeMap::new();
            for e in context {
                let k = int(&e.args[0]);
                if e.method == "put" {
                    map.insert(k, Value::from(e.args[1].clone()));
                } else {
                    map.remove(&k);
                }
            }
            if q.method == "size" {
                Value::Int(map.len() as i64)
            } else {
                map.get(&int(&q.args[0])).cloned().unwrap_or(Value::Nil)
            }
        }
        DataType::PQueue => {
            let mut pri: BTreeMap<i64, i64> = BTreeMap::new();
            for e in context {
                let (x, v) = (int(&e.args[0]), int(&e.args[1]));
                if e.method == "insert" {
                    pri.entry(x).or_insert(v);
                } else if let Some(p) = pri.get_mut(&x) {
                    *p += v;
                }
            }
            if q.method == "get_pri" {
                return pri
                    .get(&int(&q.args[0]))
                    .map_or(Value::Nil, |&p| Value::Int(p));
            }
            let mut best: Option<(i64, i64)> = None;
            for (&x, &p) in &pri {
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((x, p));
                }
            }
            best.map_or(Value::Nil, |(x, p)| Value::Pair(x, p))
        }
    }
}

/// Brute force: every session-respecting interleaving, every visibility
/// subset for every event. A level predicate is evaluated at an event as
/// soon as every set it mentions has been chosen.
pub fn oracle(h: &History, dt: DataType, level: Level) -> bool {
    let n = h.len();
    assert!(n <= 16, "oracle is exponential");
    let hb = session_predecessors(h);
    let mut next = vec![0usize; h.sessions().len()];
    let mut lin = Vec::with_capacity(n);
    interleavings(h, &mut next, &mut lin, &mut |lin| {
        let mut vis = vec![0u32; n];
        assign(h, dt, level, &hb, lin, 0, &mut vis)
    })
}

fn session_predecessors(h: &History) -> Vec<u32> {
    let mut hb = vec![0u32; h.len()];
    for s in h.sessions() {
        for (i, &e) in s.events.iter().enumerate() {
            hb[e] = s.events[..i].iter().fold(0, |m, &p| m | 1 << p);
        }
    }
    hb
}

/// Direct evaluation of one complete execution: return values and the
/// level predicate at every event. `vis[e]` is a bit mask of events.
pub fn execution_satisfies(
    h: &History,
    dt: DataType,
    level: Level,
    lin: &[usize],
    vis: &[u32],
) -> bool {
    predicates_hold(h, level, lin, vis) && lin.iter().all(|&o| returns_ok(h, dt, lin, o, vis[o]))
}

/// The level predicate alone, ignoring return values.
pub fn predicates_hold(h: &History, level: Level, lin: &[usize], vis: &[u32]) -> bool {
    let hb = session_predecessors(h);
    lin.iter().enumerate().all(|(k, &o)| {
        let before = lin[..k].iter().fold(0u32, |m, &e| m | 1 << e);
        vis[o] & !before == 0 && holds(level, &hb, vis, lin, k, o)
    })
}

/// A random session-respecting arbitration and a random visibility that
/// points backwards in it.
pub fn random_execution(h: &History, seed: u64) -> (Vec<usize>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = vec![0; h.sessions().len()];
    let mut lin = Vec::with_capacity(h.len());
    while lin.len() < h.len() {
        let open: Vec<usize> = (0..next.len())
            .filter(|&s| next[s] < h.sessions()[s].events.len())
            .collect();
        let s = *open.choose(&mut rng).unwrap();
        lin.push(h.sessions()[s].events[next[s]]);
        next[s] += 1;
    }
    let p = rng.gen_range(0.2..1.0);
    let mut vis = vec![0u32; h.len()];
    for (k, &o) in lin.iter().enumerate() {
        vis[o] = lin[..k]
            .iter()
            .filter(|_| rng.gen_bool(p))
            .fold(0, |m, &e| m | 1 << e);
    }
    (lin, vis)
}

fn interleavings(
    h: &History,
    next: &mut [usize],
    lin: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if lin.len() == h.len() {
        return f(lin);
    }
    for s in 0..next.len() {
        let evs = &h.sessions()[s].events;
        if next[s] < evs.len() {
            lin.push(evs[next[s]]);
            next[s] += 1;
            let found = interleavings(h, next, lin, f);
            next[s] -= 1;
            lin.pop();
            if found {
                return true;
            }
        }
    }
    false
}

fn assign(
    h: &History,
    dt: DataType,
    level: Level,
    hb: &[u32],
    lin: &[usize],
    k: usize,
    vis: &mut [u32],
) -> bool {
    if k == lin.len() {
        return true;
    }
    let o = lin[k];
    for choice in 0u32..1 << k {
        let seen = (0..k)
            .filter(|i| choice >> i & 1 == 1)
            .fold(0u32, |m, i| m | 1 << lin[i]);
        vis[o] = seen;
        if !returns_ok(h, dt, lin, o, seen) || !holds(level, hb, vis, lin, k, o) {
            continue;
        }
        if assign(h, dt, level, hb, lin, k + 1, vis) {
            return true;
        }
    }
    false
}

fn returns_ok(h: &History, dt: DataType, lin: &[usize], o: usize, seen: u32) -> bool {
    let ev = h.event(o);
    if is_update(&ev.method) {
        return true;
    }
    let context: Vec<&Event> = lin
        .iter()
        .filter(|&&e| seen >> e & 1 == 1 && is_update(&h.event(e).method))
        .map(|&e| h.event(e))
        .collect();
    interpret(dt, &context, ev) == ev.ret
}

fn members(m: u32) -> impl Iterator<Item = usize> {
    (0..32).filter(move |i| m >> i & 1 == 1)
}

fn holds(level: Level, hb: &[u32], vis: &[u32], lin: &[usize], k: usize, o: usize) -> bool {
    let seen = vis[o];
    let sub = |a: u32, b: u32| a & !b == 0;
    let basic = sub(hb[o], seen);
    let monotonic = members(hb[o]).all(|p| sub(vis[p], seen));
    match level {
        Level::Weak => true,
        Level::Basic => basic,
        Level::Monotonic => basic && monotonic,
        Level::Peer => basic && monotonic && members(seen).all(|v| sub(hb[v], seen)),
        Level::Causal => basic && members(seen).all(|v| sub(vis[v], seen)),
        Level::Complete => sub(lin[..k].iter().fold(0, |m, &e| m | 1 << e), seen),
    }
}

fn methods(dt: DataType) -> (&'static [&'static str], &'static [&'static str]) {
    match dt {
        DataType::Set => (&["add", "remove"], &["contains", "size"]),
        DataType::Map => (&["put", "delete"], &["get", "size"]),
        DataType::PQueue => (&["insert", "inc"], &["get_pri", "get_max"]),
    }
}

fn random_args(rng: &mut ChaCha8Rng, method: &str) -> Vec<Scalar> {
    let el = Scalar::Int(rng.gen_range(0..3));
    match method {
        "size" | "get_max" => vec![],
        "put" => vec![el, Scalar::Int(rng.gen_range(0..3))],
        "insert" => vec![el, Scalar::Int(rng.gen_range(0..6))],
        "inc" => vec![el, Scalar::Int(rng.gen_range(-2..4))],
        _ => vec![el],
    }
}

fn random_return(rng: &mut ChaCha8Rng, method: &str) -> Value {
    match method {
        "contains" => Value::Bool(rng.gen()),
        "size" => Value::Int(rng.gen_range(0..3)),
        "get" | "get_pri" if rng.gen_bool(0.3) => Value::Nil,
        "get" => Value::Int(rng.gen_range(0..3)),
        "get_pri" => Value::Int(rng.gen_range(0..8)),
        "get_max" if rng.gen_bool(0.2) => Value::Nil,
        "get_max" => Value::Pair(rng.gen_range(0..3), rng.gen_range(0..8)),
        m => panic!("not a query: {m}"),
    }
}

/// A random history of at most `max_events` events. Return values come
/// from a random execution, then a fraction are corrupted, so the corpus
/// mixes satisfiable and unsatisfiable histories.
pub fn random_history(dt: DataType, max_events: usize, seed: u64) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_events);
    let sessions = rng.gen_range(1..=3.min(n));
    let (updates, queries) = methods(dt);
    let mut ops: Vec<Vec<(String, Vec<Scalar>)>> = vec![Vec::new(); sessions];
    for i in 0..n {
        let s = if i < sessions {
            i
        } else {
            rng.gen_range(0..sessions)
        };
        let pool = if rng.gen_bool(0.55) { updates } else { queries };
        let m = *pool.choose(&mut rng).unwrap();
        ops[s].push((m.to_string(), random_args(&mut rng, m)));
    }
    // a random interleaving and a random visibility, one event at a time
    let mut next = vec![0; sessions];
    let mut placed: Vec<(usize, usize)> = Vec::new();
    let mut rets: Vec<Vec<Value>> = ops.iter().map(|s| vec![Value::Nil; s.len()]).collect();
    let p_see = rng.gen_range(0.3..1.0);
    while placed.len() < n {
        let open: Vec<usize> = (0..sessions).filter(|&s| next[s] < ops[s].len()).collect();
        let s = *open.choose(&mut rng).unwrap();
        let i = next[s];
        next[s] += 1;
        let m = &ops[s][i].0;
        if !is_update(m) {
            let ctx: Vec<Event> = placed
                .iter()
                .filter(|&&(ps, pi)| is_update(&ops[ps][pi].0) && (ps == s || rng.gen_bool(p_see)))
                .map(|&(ps, pi)| event(ps, pi, &ops[ps][pi], Value::Nil))
                .collect();
            let refs: Vec<&Event> = ctx.iter().collect();
            let q = event(s, i, &ops[s][i], Value::Nil);
            rets[s][i] = if rng.gen_bool(0.15) {
                random_return(&mut rng, m)
            } else {
                interpret(dt, &refs, &q)
            };
        }
        placed.push((s, i));
    }
    History::from_sessions(
        ops.into_iter()
            .zip(rets)
            .enumerate()
            .map(|(s, (ops, rets))| {
                (
                    s as u32,
                    ops.into_iter()
                        .zip(rets)
                        .map(|((m, a), r)| (m, a, r))
                        .collect(),
                )
            }),
    )
    .expect("generated history is well formed")
}

fn event(s: usize, i: usize, op: &(String, Vec<Scalar>), ret: Value) -> Event {
    Event {
        id: vischeck::EventId {
            session: s as u32,
            index: i as u32,
        },
        method: op.0.clone(),
        args: op.1.clone(),
        ret,
    }
}

pub fn seeds(base: u64, count: usize) -> impl Iterator<Item = u64> {
    (0..count as u64).map(move |i| base.wrapping_mul(1_000_003).wrapping_add(i))
}
