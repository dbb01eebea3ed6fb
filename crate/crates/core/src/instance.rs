//! A history bound to a data type, precompiled for the search engine.

use thiserror::Error;

use crate::datatype::{eval_ops, pqueue_state, DataType, DataTypeError, Op};
use crate::eventset::{EventSet, MAX_EVENTS};
use crate::history::{EventId, History, Value};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("history has {0} events, the checker supports at most {MAX_EVENTS}")]
    TooManyEvents(usize),
    #[error("event {id}: {source}")]
    DataType {
        id: EventId,
        #[source]
        source: DataTypeError,
    },
}

/// What a placed query requires of its context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QueryCheck {
    /// The context must produce exactly this value.
    Exact(Value),
    /// The context must hold `element` with `priority` (a necessary
    /// condition for `get_max` returning that pair).
    HasPriority { element: i64, priority: i64 },
}

/// Compiled, immutable view of a history used by every checker.
#[derive(Clone, Debug)]
pub struct Instance {
    history: History,
    dt: DataType,
    ops: Vec<Op>,
    checks: Vec<Option<QueryCheck>>,
    hb: Vec<EventSet>,
    session_ranges: Vec<(usize, usize)>,
    updates: EventSet,
}

impl Instance {
    pub fn new(history: &History, dt: DataType) -> Result<Instance, CheckError> {
        let ops = history
            .events()
            .iter()
            .map(|e| {
                Op::from_event(dt, e).map_err(|source| CheckError::DataType { id: e.id, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let checks = history
            .events()
            .iter()
            .zip(&ops)
            .map(|(e, op)| (!op.is_update()).then(|| QueryCheck::Exact(e.ret.clone())))
            .collect();
        Self::with_checks(history, dt, ops, checks)
    }

    pub(crate) fn with_checks(
        history: &History,
        dt: DataType,
        ops: Vec<Op>,
        checks: Vec<Option<QueryCheck>>,
    ) -> Result<Instance, CheckError> {
        let n = history.len();
        if n > MAX_EVENTS {
            return Err(CheckError::TooManyEvents(n));
        }
        let mut hb = vec![EventSet::EMPTY; n];
        let mut session_ranges = Vec::with_capacity(history.sessions().len());
        for s in history.sessions() {
            let mut before = EventSet::EMPTY;
            for &e in &s.events {
                hb[e] = before;
                before.insert(e);
            }
            let start = s.events.first().copied().unwrap_or(0);
            session_ranges.push((start, start + s.events.len()));
        }
        let updates = ops
            .iter()
            .enumerate()
            .filter(|(_, op)| op.is_update())
            .map(|(i, _)| i)
            .collect();
        Ok(Instance {
            history: history.clone(),
            dt,
            ops,
            checks,
            hb,
            session_ranges,
            updates,
        })
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn data_type(&self) -> DataType {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, ev: usize) -> &Op {
        &self.ops[ev]
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn check_of(&self, ev: usize) -> Option<&QueryCheck> {
        self.checks[ev].as_ref()
    }

    /// Same-session predecessors.
    #[inline]
    pub fn hb(&self, ev: usize) -> EventSet {
        self.hb[ev]
    }

    #[inline]
    pub fn updates(&self) -> EventSet {
        self.updates
    }

    #[inline]
    pub fn is_update(&self, ev: usize) -> bool {
        self.updates.contains(ev)
    }

    /// Dense index ranges `[start, end)` of each session.
    pub fn session_ranges(&self) -> &[(usize, usize)] {
        &self.session_ranges
    }

    pub fn all(&self) -> EventSet {
        EventSet::full(self.len())
    }

    /// Whether the updates in `context` (given in arbitration order) justify
    /// the recorded outcome of query `q`.
    pub fn query_ok<I>(&self, context: I, q: usize) -> bool
    where
        I: IntoIterator<Item = usize>,
    {
        let ctx = context.into_iter().map(|e| &self.ops[e]);
        match &self.checks[q] {
            None => true,
            Some(QueryCheck::Exact(v)) => eval_ops(ctx, &self.ops[q]) == *v,
            Some(QueryCheck::HasPriority { element, priority }) => pqueue_state(ctx)
                .iter()
                .any(|&(e, p)| e == *element && p == *priority),
        }
    }
}
