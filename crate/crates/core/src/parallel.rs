//! Multi-threaded search with coordinator-mediated work sharing.
//!
//! The root is expanded breadth-first until the frontier can feed every
//! worker, then the frontier is split into contiguous chunks. Each worker
//! runs the sequential depth-first loop on its own deque and periodically
//! checks in: it stops if another worker has finished, and it hands half
//! of its deque to the coordinator if some worker is idle. A worker that
//! runs dry waits for a handoff; when every worker is idle and nothing is
//! in transit, the search space is exhausted.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::instance::Instance;
use crate::pruning::Pruner;
use crate::search::{
    CheckResult, Memo, Outcome, Search, SearchOptions, SearchState, SearchStats, Step,
};
use crate::visibility::{Level, PartialExecution};

/// States a worker explores between check-ins, before jitter.
pub const DEFAULT_SELF_CHECK_INTERVAL: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParallelOptions {
    pub workers: usize,
    pub self_check_interval: u64,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        ParallelOptions {
            workers: 1,
            self_check_interval: DEFAULT_SELF_CHECK_INTERVAL,
        }
    }
}

/// Search status shared by all workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResultFlag {
    Running,
    Found,
    Exhausted,
    BudgetExceeded,
}

/// What breadth-first seeding produced.
#[derive(Debug)]
pub enum Frontier {
    /// States to distribute, in generation order.
    States(Vec<SearchState>),
    Found(PartialExecution),
    Exhausted,
    BudgetExceeded,
}

/// Expands the root breadth-first until at least `4 * k` states are
/// pending or the search ends outright.
pub fn seed_frontier(
    search: &Search<'_>,
    k: usize,
    budget: u64,
    stats: &mut SearchStats,
) -> Frontier {
    assert!(k >= 1, "at least one worker");
    let target = 4 * k;
    let mut queue = VecDeque::from([SearchState::root(search.instance().len())]);
    let mut buf = Vec::new();
    let mut memo = Memo::default();
    while queue.len() < target {
        let Some(state) = queue.pop_front() else {
            return Frontier::Exhausted;
        };
        if stats.states_explored >= budget {
            return Frontier::BudgetExceeded;
        }
        match search.step(&state, &mut buf, stats, &mut memo) {
            Step::Invalid | Step::Duplicate => {}
            Step::Certificate => return Frontier::Found(state.into_exec()),
            Step::Expanded => {
                queue.extend(buf.drain(..));
                stats.max_deque_depth = stats.max_deque_depth.max(queue.len() as u64);
            }
        }
    }
    Frontier::States(queue.into())
}

struct Shared {
    idle: usize,
    result: ResultFlag,
    handoff: Vec<SearchState>,
    certificate: Option<PartialExecution>,
}

/// State shared between workers.
pub struct Coordinator {
    workers: usize,
    budget: u64,
    explored: AtomicU64,
    stop: AtomicBool,
    shared: Mutex<Shared>,
    wake: Condvar,
}

impl Coordinator {
    fn new(workers: usize, budget: u64, already_explored: u64) -> Self {
        Coordinator {
            workers,
            budget,
            explored: AtomicU64::new(already_explored),
            stop: AtomicBool::new(false),
            shared: Mutex::new(Shared {
                idle: 0,
                result: ResultFlag::Running,
                handoff: Vec::new(),
                certificate: None,
            }),
            wake: Condvar::new(),
        }
    }

    fn finish(&self, flag: ResultFlag, certificate: Option<PartialExecution>) {
        let mut shared = self.shared.lock().expect("coordinator lock");
        if shared.result == ResultFlag::Running {
            shared.result = flag;
            shared.certificate = certificate;
        }
        self.stop.store(true, Ordering::Release);
        self.wake.notify_all();
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Acquire)
    }

    /// Blocks until work arrives or the search ends. `None` means stop.
    fn wait_for_work(&self) -> Option<Vec<SearchState>> {
        let mut shared = self.shared.lock().expect("coordinator lock");
        shared.idle += 1;
        loop {
            if shared.result != ResultFlag::Running {
                return None;
            }
            if !shared.handoff.is_empty() {
                shared.idle -= 1;
                return Some(std::mem::take(&mut shared.handoff));
            }
            if shared.idle == self.workers {
                shared.result = ResultFlag::Exhausted;
                self.stop.store(true, Ordering::Release);
                self.wake.notify_all();
                return None;
            }
            shared = self.wake.wait(shared).expect("coordinator lock");
        }
    }

    /// Moves the back half of `deque` to the handoff slot if a worker is
    /// waiting for it.
    fn share(&self, deque: &mut VecDeque<SearchState>) {
        if deque.len() < 2 {
            return;
        }
        let mut shared = self.shared.lock().expect("coordinator lock");
        if shared.idle > 0 && shared.handoff.is_empty() && shared.result == ResultFlag::Running {
            let keep = deque.len() - deque.len() / 2;
            shared.handoff = deque.split_off(keep).into();
            self.wake.notify_one();
        }
    }
}

fn jittered(interval: u64, rng: &mut ChaCha8Rng) -> u64 {
    let spread = interval / 10;
    if spread == 0 {
        return interval.max(1);
    }
    rng.gen_range(interval - spread..=interval + spread)
}

fn worker(
    search: &Search<'_>,
    coord: &Coordinator,
    mut deque: VecDeque<SearchState>,
    interval: u64,
    id: usize,
) -> SearchStats {
    let mut stats = SearchStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
    let mut buf = Vec::new();
    let mut memo = Memo::default();
    'outer: loop {
        let quota = jittered(interval, &mut rng);
        for _ in 0..quota {
            let Some(state) = deque.pop_front() else {
                break;
            };
            if coord.explored.fetch_add(1, Ordering::Relaxed) >= coord.budget {
                coord.finish(ResultFlag::BudgetExceeded, None);
                break 'outer;
            }
            match search.step(&state, &mut buf, &mut stats, &mut memo) {
                Step::Invalid | Step::Duplicate => {}
                Step::Certificate => {
                    coord.finish(ResultFlag::Found, Some(state.into_exec()));
                    break 'outer;
                }
                Step::Expanded => {
                    for s in buf.drain(..).rev() {
                        deque.push_front(s);
                    }
                    stats.max_deque_depth = stats.max_deque_depth.max(deque.len() as u64);
                }
            }
        }
        if coord.stopped() {
            break;
        }
        if deque.is_empty() {
            match coord.wait_for_work() {
                Some(states) => deque.extend(states),
                None => break,
            }
        } else {
            coord.share(&mut deque);
        }
    }
    stats
}

/// Checks with `opts.workers` threads. A single worker runs the sequential
/// search unchanged.
pub fn check_parallel(
    inst: &Instance,
    level: Level,
    pruner: Option<&Pruner>,
    search_opts: &SearchOptions,
    opts: &ParallelOptions,
) -> CheckResult {
    let search = Search::new(inst, level, pruner, search_opts);
    let k = opts.workers.max(1);
    if k == 1 {
        return search.run(search_opts.budget);
    }
    let mut stats = SearchStats::default();
    let frontier = seed_frontier(&search, k, search_opts.budget, &mut stats);
    let states = match frontier {
        Frontier::States(states) => states,
        Frontier::Found(exec) => {
            return CheckResult {
                outcome: Outcome::Satisfied,
                stats,
                certificate: Some(exec),
            }
        }
        Frontier::Exhausted => {
            return CheckResult {
                outcome: Outcome::Violated,
                stats,
                certificate: None,
            }
        }
        Frontier::BudgetExceeded => {
            return CheckResult {
                outcome: Outcome::BudgetExceeded,
                stats,
                certificate: None,
            }
        }
    };
    let coord = Coordinator::new(k, search_opts.budget, stats.states_explored);
    let n = states.len();
    let mut chunks: Vec<VecDeque<SearchState>> = Vec::with_capacity(k);
    let mut it = states.into_iter();
    for i in 0..k {
        let size = (i + 1) * n / k - i * n / k;
        chunks.push(it.by_ref().take(size).collect());
    }
    let interval = opts.self_check_interval.max(1);
    let worker_stats: Vec<SearchStats> = thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .enumerate()
            .map(|(id, chunk)| {
                let (coord, search) = (&coord, &search);
                scope.spawn(move || worker(search, coord, chunk, interval, id))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    for s in &worker_stats {
        stats.merge(s);
    }
    let shared = coord.shared.into_inner().expect("coordinator lock");
    let outcome = match shared.result {
        ResultFlag::Found => Outcome::Satisfied,
        ResultFlag::Exhausted => Outcome::Violated,
        ResultFlag::BudgetExceeded => Outcome::BudgetExceeded,
        ResultFlag::Running => unreachable!("workers exit only after a result is set"),
    };
    CheckResult {
        outcome,
        stats,
        certificate: shared.certificate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datatype::DataType;
    use crate::history::{History, Scalar, Value};
    use crate::search::check;
    use crate::visibility::full_execution_satisfies;

    fn ev(m: &str, a: &[i64], r: Value) -> (String, Vec<Scalar>, Value) {
        (
            m.to_string(),
            a.iter().map(|&x| Scalar::Int(x)).collect(),
            r,
        )
    }

    fn wide() -> Instance {
        let h = History::from_sessions([
            (
                0,
                vec![
                    ev("add", &[1], Value::Nil),
                    ev("contains", &[2], Value::Bool(true)),
                ],
            ),
            (
                1,
                vec![ev("add", &[2], Value::Nil), ev("remove", &[1], Value::Nil)],
            ),
            (
                2,
                vec![
                    ev("contains", &[1], Value::Bool(false)),
                    ev("size", &[], Value::Int(1)),
                ],
            ),
            (
                3,
                vec![ev("add", &[3], Value::Nil), ev("size", &[], Value::Int(3))],
            ),
        ])
        .unwrap();
        Instance::new(&h, DataType::Set).unwrap()
    }

    #[test]
    fn workers_agree_with_sequential() {
        let inst = wide();
        for level in Level::ALL {
            let seq = check(&inst, level, None, &SearchOptions::default());
            for workers in [2, 4, 8] {
                let opts = ParallelOptions {
                    workers,
                    self_check_interval: 7,
                };
                let par = check_parallel(&inst, level, None, &SearchOptions::default(), &opts);
                assert_eq!(par.outcome, seq.outcome, "{level} with {workers} workers");
                if let Some(cert) = par.certificate {
                    assert!(full_execution_satisfies(level, &cert, &inst));
                }
            }
        }
    }

    #[test]
    fn single_worker_is_sequential() {
        let inst = wide();
        let seq = check(&inst, Level::Causal, None, &SearchOptions::default());
        let par = check_parallel(
            &inst,
            Level::Causal,
            None,
            &SearchOptions::default(),
            &ParallelOptions::default(),
        );
        assert_eq!(seq.stats, par.stats);
    }

    #[test]
    fn seeding_short_circuits_small_spaces() {
        let h = History::from_sessions([(0, vec![ev("add", &[1], Value::Nil)])]).unwrap();
        let inst = Instance::new(&h, DataType::Set).unwrap();
        let search = Search::new(&inst, Level::Complete, None, &SearchOptions::default());
        let mut stats = SearchStats::default();
        assert!(matches!(
            seed_frontier(&search, 4, 100, &mut stats),
            Frontier::Found(_)
        ));
    }

    #[test]
    fn parallel_budget_is_reported() {
        let inst = wide();
        let search_opts = SearchOptions {
            budget: 30,
            ..Default::default()
        };
        let opts = ParallelOptions {
            workers: 4,
            self_check_interval: 5,
        };
        let res = check_parallel(&inst, Level::Weak, None, &search_opts, &opts);
        if res.outcome == Outcome::BudgetExceeded {
            assert!(res.stats.states_explored <= 30 + 4);
        }
    }
}
