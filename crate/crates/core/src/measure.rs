//! Corpus-level measurement: per-history strongest level, per-level
//! violation counts, round-based termination, pruning ratios and speedup.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datatype::DataType;
use crate::history::CorpusEntry;
use crate::instance::{CheckError, Instance};
use crate::parallel::{check_parallel, ParallelOptions};
use crate::pruning::{PruneOptions, Pruner};
use crate::search::{check, Outcome, SearchOptions};
use crate::visibility::Level;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeasureOptions {
    pub search: SearchOptions,
    pub parallel: ParallelOptions,
    pub prune: bool,
    pub prune_opts: PruneOptions,
    /// Stop at the first satisfied level and mark weaker ones implied.
    pub shortcut: bool,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            search: SearchOptions::default(),
            parallel: ParallelOptions::default(),
            prune: true,
            prune_opts: PruneOptions::default(),
            shortcut: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    BudgetExceeded,
    /// Not checked; a stronger level was satisfied.
    Implied,
}

impl Verdict {
    pub fn satisfied(self) -> bool {
        matches!(self, Verdict::Satisfied | Verdict::Implied)
    }
}

impl From<Outcome> for Verdict {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Satisfied => Verdict::Satisfied,
            Outcome::Violated => Verdict::Violated,
            Outcome::BudgetExceeded => Verdict::BudgetExceeded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryMeasurement {
    pub name: String,
    /// Verdict per level, weakest first.
    pub verdicts: Vec<(Level, Verdict)>,
    /// Strongest satisfied level; `None` if nothing was satisfied.
    pub strongest: Option<Level>,
    /// Some check ran out of budget above the first satisfied level, so
    /// `strongest` is only a lower bound.
    pub inconclusive: bool,
    pub states_explored: u64,
}

impl HistoryMeasurement {
    pub fn verdict(&self, level: Level) -> Option<Verdict> {
        self.verdicts
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, v)| *v)
    }
}

fn run_check(inst: &Instance, level: Level, opts: &MeasureOptions) -> crate::search::CheckResult {
    let pruner = opts
        .prune
        .then(|| Pruner::build(inst, level, &opts.prune_opts));
    check_parallel(inst, level, pruner.as_ref(), &opts.search, &opts.parallel)
}

/// Checks levels from strongest to weakest.
pub fn measure_history(name: &str, inst: &Instance, opts: &MeasureOptions) -> HistoryMeasurement {
    let mut verdicts = Vec::new();
    let mut strongest = None;
    let mut inconclusive = false;
    let mut explored = 0;
    for &level in Level::ALL.iter().rev() {
        if strongest.is_some() && opts.shortcut {
            verdicts.push((level, Verdict::Implied));
            continue;
        }
        let res = run_check(inst, level, opts);
        explored += res.stats.states_explored;
        let v = Verdict::from(res.outcome);
        if v == Verdict::BudgetExceeded && strongest.is_none() {
            inconclusive = true;
        }
        if v == Verdict::Satisfied && strongest.is_none() {
            strongest = Some(level);
        }
        verdicts.push((level, v));
    }
    verdicts.reverse();
    HistoryMeasurement {
        name: name.to_string(),
        verdicts,
        strongest,
        inconclusive,
        states_explored: explored,
    }
}

pub fn instances(
    corpus: &[CorpusEntry],
    dt: DataType,
) -> Result<Vec<(String, Instance)>, CheckError> {
    corpus
        .iter()
        .map(|e| Ok((e.name.clone(), Instance::new(&e.history, dt)?)))
        .collect()
}

#[cfg(feature = "parallel")]
fn map_all<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn map_all<T, R, F>(items: &[T], _jobs: usize, f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Histories measured concurrently with `jobs` threads (0 means one per
/// core); results keep corpus order.
pub fn measure_all(
    entries: &[(String, Instance)],
    opts: &MeasureOptions,
    jobs: usize,
) -> Vec<HistoryMeasurement> {
    let jobs = if jobs == 0 { available_jobs() } else { jobs };
    map_all(entries, jobs, |(name, inst)| {
        measure_history(name, inst, opts)
    })
}

fn available_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundProtocol {
    pub round_size: usize,
    /// Rounds in a row that must agree before measurement stops.
    pub stable_rounds: usize,
}

impl Default for RoundProtocol {
    fn default() -> Self {
        RoundProtocol {
            round_size: 1000,
            stable_rounds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub histories: usize,
    pub strongest_clean_level: Option<Level>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub data_type: DataType,
    pub histories_checked: usize,
    /// Histories violating each level, for levels at or above the
    /// strongest clean level; weaker levels are omitted.
    pub violations: BTreeMap<Level, usize>,
    pub strongest_clean_level: Option<Level>,
    /// Histories that satisfy no level at all.
    pub below_weak: Vec<String>,
    /// Histories whose measurement hit the budget; excluded above.
    pub budget_exceeded: Vec<String>,
    pub rounds: Vec<RoundSummary>,
    pub histories: Vec<HistoryMeasurement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

/// Highest level no conclusive history violates.
fn clean_level(ms: &[HistoryMeasurement]) -> Option<Level> {
    Level::ALL.iter().rev().copied().find(|&l| {
        ms.iter()
            .filter(|m| !m.inconclusive)
            .all(|m| m.verdict(l).is_some_and(Verdict::satisfied))
    })
}

/// Measures `entries` round by round until the strongest clean level is
/// the same for `protocol.stable_rounds` consecutive rounds, or the corpus
/// runs out.
pub fn measure_corpus(
    dt: DataType,
    entries: &[(String, Instance)],
    opts: &MeasureOptions,
    protocol: &RoundProtocol,
    jobs: usize,
) -> MeasurementReport {
    let start = Instant::now();
    let mut histories = Vec::new();
    let mut rounds: Vec<RoundSummary> = Vec::new();
    for chunk in entries.chunks(protocol.round_size.max(1)) {
        let ms = measure_all(chunk, opts, jobs);
        rounds.push(RoundSummary {
            histories: ms.len(),
            strongest_clean_level: clean_level(&ms),
        });
        histories.extend(ms);
        let n = protocol.stable_rounds.max(1);
        if rounds.len() >= n {
            let tail = &rounds[rounds.len() - n..];
            if tail
                .iter()
                .all(|r| r.strongest_clean_level == tail[0].strongest_clean_level)
            {
                break;
            }
        }
    }
    let mut report = summarize(dt, histories, rounds);
    report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
    report
}

fn summarize(
    dt: DataType,
    histories: Vec<HistoryMeasurement>,
    rounds: Vec<RoundSummary>,
) -> MeasurementReport {
    let strongest_clean_level = clean_level(&histories);
    let conclusive: Vec<&HistoryMeasurement> =
        histories.iter().filter(|m| !m.inconclusive).collect();
    let violations = Level::ALL
        .iter()
        .copied()
        .filter(|&l| strongest_clean_level.is_none_or(|c| l >= c))
        .map(|l| {
            let n = conclusive
                .iter()
                .filter(|m| m.verdict(l) == Some(Verdict::Violated))
                .count();
            (l, n)
        })
        .collect();
    MeasurementReport {
        data_type: dt,
        histories_checked: histories.len(),
        violations,
        strongest_clean_level,
        below_weak: conclusive
            .iter()
            .filter(|m| m.strongest.is_none())
            .map(|m| m.name.clone())
            .collect(),
        budget_exceeded: histories
            .iter()
            .filter(|m| m.inconclusive)
            .map(|m| m.name.clone())
            .collect(),
        rounds,
        histories,
        wall_time_ms: None,
    }
}

impl MeasurementReport {
    /// JSON form; wall time only when `timing` is set, so that reports of
    /// identical runs are byte-identical by default.
    pub fn to_json(&self, timing: bool) -> String {
        let mut copy = self.clone();
        if !timing {
            copy.wall_time_ms = None;
        }
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    /// Table with columns `Co Ca P M B W #hist time`.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let levels: Vec<Level> = Level::ALL.iter().rev().copied().collect();
        for l in &levels {
            let _ = write!(out, "{:>6}", l.abbrev());
        }
        let _ = writeln!(out, "{:>8}{:>10}", "#hist", "time");
        for l in &levels {
            let cell = self
                .violations
                .get(l)
                .map_or("/".to_string(), |n| n.to_string());
            let _ = write!(out, "{cell:>6}");
        }
        let time = self
            .wall_time_ms
            .map_or("-".to_string(), |ms| format!("{:.2}s", ms as f64 / 1000.0));
        let _ = writeln!(out, "{:>8}{:>10}", self.histories_checked, time);
        let level = self.strongest_clean_level.map_or("none", Level::name);
        let _ = writeln!(out, "strongest level with 0 violations: {level}");
        if !self.budget_exceeded.is_empty() {
            let _ = writeln!(out, "budget exceeded: {}", self.budget_exceeded.join(", "));
        }
        if !self.below_weak.is_empty() {
            let _ = writeln!(
                out,
                "not even weak (data type mismatch?): {}",
                self.below_weak.join(", ")
            );
        }
        out
    }
}

/// Pruning-ratio bucket bounds on the unpruned explored-state count.
pub const RATIO_BUCKETS: [(&str, u64, u64); 4] = [
    ("small", 1, 30),
    ("moderate", 31, 300),
    ("large", 301, 3000),
    ("huge", 3001, u64::MAX),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub name: String,
    pub unpruned: u64,
    pub pruned: u64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBucket {
    pub name: String,
    pub histories: usize,
    pub median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningRatioReport {
    pub level: Level,
    pub samples: Vec<RatioSample>,
    pub buckets: Vec<RatioBucket>,
    /// Histories where either run hit the budget.
    pub skipped: Vec<String>,
}

impl PruningRatioReport {
    pub fn bucket(&self, name: &str) -> Option<&RatioBucket> {
        self.buckets.iter().find(|b| b.name == name)
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Explored states with pruning over explored states without, per
/// history, bucketed by the unpruned count. Always sequential.
pub fn pruning_ratio_report(
    entries: &[(String, Instance)],
    level: Level,
    search: &SearchOptions,
    prune_opts: &PruneOptions,
    jobs: usize,
) -> PruningRatioReport {
    let jobs = if jobs == 0 { available_jobs() } else { jobs };
    let runs = map_all(entries, jobs, |(name, inst)| {
        let plain = check(inst, level, None, search);
        let pruner = Pruner::build(inst, level, prune_opts);
        let pruned = check(inst, level, Some(&pruner), search);
        (name.clone(), plain, pruned)
    });
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (name, plain, pruned) in runs {
        if plain.outcome == Outcome::BudgetExceeded || pruned.outcome == Outcome::BudgetExceeded {
            skipped.push(name);
            continue;
        }
        let (u, p) = (plain.stats.states_explored, pruned.stats.states_explored);
        samples.push(RatioSample {
            name,
            unpruned: u,
            pruned: p,
            ratio: p as f64 / u as f64,
        });
    }
    let buckets = RATIO_BUCKETS
        .iter()
        .map(|&(name, lo, hi)| {
            let mut ratios: Vec<f64> = samples
                .iter()
                .filter(|s| (lo..=hi).contains(&s.unpruned))
                .map(|s| s.ratio)
                .collect();
            RatioBucket {
                name: name.to_string(),
                histories: ratios.len(),
                median: median(&mut ratios),
            }
        })
        .collect();
    PruningRatioReport {
        level,
        samples,
        buckets,
        skipped,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSample {
    pub workers: usize,
    pub wall_time: Duration,
    pub outcomes: Vec<Outcome>,
}

/// Wall time to check every history at `level` for each worker count.
pub fn speedup_report(
    entries: &[(String, Instance)],
    level: Level,
    opts: &MeasureOptions,
    workers: &[usize],
) -> Vec<SpeedupSample> {
    workers
        .iter()
        .map(|&k| {
            let mut o = *opts;
            o.parallel.workers = k;
            let start = Instant::now();
            let outcomes = entries
                .iter()
                .map(|(_, inst)| run_check(inst, level, &o).outcome)
                .collect();
            SpeedupSample {
                workers: k,
                wall_time: start.elapsed(),
                outcomes,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{History, Scalar, Value};

    fn ev(m: &str, a: &[i64], r: Value) -> (String, Vec<Scalar>, Value) {
        (
            m.to_string(),
            a.iter().map(|&x| Scalar::Int(x)).collect(),
            r,
        )
    }

    fn sequential() -> Instance {
        let h = History::from_sessions([(
            0,
            vec![
                ev("add", &[1], Value::Nil),
                ev("contains", &[1], Value::Bool(true)),
            ],
        )])
        .unwrap();
        Instance::new(&h, DataType::Set).unwrap()
    }

    fn impossible() -> Instance {
        let h = History::from_sessions([(0, vec![ev("size", &[], Value::Int(3))])]).unwrap();
        Instance::new(&h, DataType::Set).unwrap()
    }

    #[test]
    fn sequential_history_is_complete() {
        let m = measure_history("seq", &sequential(), &MeasureOptions::default());
        assert_eq!(m.strongest, Some(Level::Complete));
        assert_eq!(m.verdict(Level::Weak), Some(Verdict::Implied));
    }

    #[test]
    fn impossible_value_violates_everything() {
        let m = measure_history("bad", &impossible(), &MeasureOptions::default());
        assert_eq!(m.strongest, None);
        assert!(Level::ALL
            .iter()
            .all(|&l| m.verdict(l) == Some(Verdict::Violated)));
    }

    #[test]
    fn report_marks_weaker_levels() {
        let entries = vec![
            ("a".to_string(), sequential()),
            ("b".to_string(), impossible()),
        ];
        let r = measure_corpus(
            DataType::Set,
            &entries,
            &MeasureOptions::default(),
            &RoundProtocol::default(),
            1,
        );
        assert_eq!(r.strongest_clean_level, None);
        assert_eq!(r.violations.len(), 6);
        assert_eq!(r.below_weak, vec!["b".to_string()]);
        let r = measure_corpus(
            DataType::Set,
            &entries[..1],
            &MeasureOptions::default(),
            &RoundProtocol::default(),
            1,
        );
        assert_eq!(r.strongest_clean_level, Some(Level::Complete));
        assert_eq!(r.violations.len(), 1);
        assert!(r.table().contains('/'));
        assert!(!r.to_json(false).contains("wall_time_ms"));
    }

    #[test]
    fn rounds_stop_when_stable() {
        let entries: Vec<_> = (0..10).map(|i| (i.to_string(), sequential())).collect();
        let protocol = RoundProtocol {
            round_size: 2,
            stable_rounds: 3,
        };
        let r = measure_corpus(
            DataType::Set,
            &entries,
            &MeasureOptions::default(),
            &protocol,
            1,
        );
        assert_eq!(r.rounds.len(), 3);
        assert_eq!(r.histories_checked, 6);
    }

    #[test]
    fn no_predicates_means_ratio_one() {
        let entries = vec![("a".to_string(), impossible())];
        let r = pruning_ratio_report(
            &entries,
            Level::Causal,
            &SearchOptions::default(),
            &PruneOptions::default(),
            1,
        );
        assert_eq!(r.samples[0].ratio, 1.0);
        assert_eq!(r.bucket("small").unwrap().histories, 1);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
