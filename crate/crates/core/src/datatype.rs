//! Sequential semantics of the supported replicated data types.
//!
//! Every method is either a query (inspects state, returns a value) or an
//! update (mutates state, returns nil). A query's return value is determined
//! by folding the sequence of updates it observes, in arbitration order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{Event, Scalar, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Set,
    Map,
    #[value(name = "pqueue")]
    #[serde(rename = "pqueue")]
    PQueue,
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Set => "set",
            DataType::Map => "map",
            DataType::PQueue => "pqueue",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Query,
    Update,
}

/// Signature of one method of a data type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MethodSig {
    pub name: &'static str,
    pub arity: usize,
    pub kind: MethodKind,
    /// Position of the argument naming the data element, if the method
    /// touches a single element.
    pub element_arg: Option<usize>,
}

const fn sig(
    name: &'static str,
    arity: usize,
    kind: MethodKind,
    element_arg: Option<usize>,
) -> MethodSig {
    MethodSig {
        name,
        arity,
        kind,
        element_arg,
    }
}

use MethodKind::{Query, Update};

const SET_METHODS: &[MethodSig] = &[
    sig("add", 1, Update, Some(0)),
    sig("remove", 1, Update, Some(0)),
    sig("contains", 1, Query, Some(0)),
    sig("size", 0, Query, None),
];

const MAP_METHODS: &[MethodSig] = &[
    sig("put", 2, Update, Some(0)),
    sig("delete", 1, Update, Some(0)),
    sig("get", 1, Query, Some(0)),
    sig("size", 0, Query, None),
];

const PQUEUE_METHODS: &[MethodSig] = &[
    sig("insert", 2, Update, Some(0)),
    sig("inc", 2, Update, Some(0)),
    sig("get_pri", 1, Query, Some(0)),
    sig("get_max", 0, Query, None),
];

/// Whether `method` is an update of any supported data type.
pub fn is_update_method(method: &str) -> bool {
    [SET_METHODS, MAP_METHODS, PQUEUE_METHODS]
        .iter()
        .flat_map(|m| m.iter())
        .any(|s| s.kind == Update && s.name == method)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataTypeError {
    #[error("method {method} is not defined for {dt}")]
    UnknownMethod { dt: DataType, method: String },
    #[error("{method} expects {expected} argument(s), got {got}")]
    Arity {
        method: String,
        expected: usize,
        got: usize,
    },
    #[error("{method}: argument {pos} must be an integer")]
    ArgType { method: String, pos: usize },
    #[error("{0} is an update, not a query")]
    NotAQuery(String),
}

impl DataType {
    pub fn methods(self) -> &'static [MethodSig] {
        match self {
            DataType::Set => SET_METHODS,
            DataType::Map => MAP_METHODS,
            DataType::PQueue => PQUEUE_METHODS,
        }
    }

    pub fn signature(self, method: &str) -> Result<&'static MethodSig, DataTypeError> {
        self.methods()
            .iter()
            .find(|s| s.name == method)
            .ok_or_else(|| DataTypeError::UnknownMethod {
                dt: self,
                method: method.to_string(),
            })
    }

    pub fn all() -> [DataType; 3] {
        [DataType::Set, DataType::Map, DataType::PQueue]
    }
}

/// Classifies `method` as query or update.
pub fn classify(dt: DataType, method: &str) -> Result<MethodKind, DataTypeError> {
    dt.signature(method).map(|s| s.kind)
}

/// A type-checked invocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Add(i64),
    Remove(i64),
    Contains(i64),
    SetSize,
    Put(i64, Scalar),
    Delete(i64),
    Get(i64),
    MapSize,
    Insert(i64, i64),
    Inc(i64, i64),
    GetPri(i64),
    GetMax,
}

impl Op {
    /// Type-checks an event against `dt`.
    pub fn compile(dt: DataType, method: &str, args: &[Scalar]) -> Result<Op, DataTypeError> {
        let sig = dt.signature(method)?;
        if args.len() != sig.arity {
            return Err(DataTypeError::Arity {
                method: method.to_string(),
                expected: sig.arity,
                got: args.len(),
            });
        }
        let int = |pos: usize| match &args[pos] {
            Scalar::Int(v) => Ok(*v),
            Scalar::Str(_) => Err(DataTypeError::ArgType {
                method: method.to_string(),
                pos,
            }),
        };
        Ok(match method {
            "add" => Op::Add(int(0)?),
            "remove" => Op::Remove(int(0)?),
            "contains" => Op::Contains(int(0)?),
            "size" if dt == DataType::Set => Op::SetSize,
            "size" => Op::MapSize,
            "put" => Op::Put(int(0)?, args[1].clone()),
            "delete" => Op::Delete(int(0)?),
            "get" => Op::Get(int(0)?),
            "insert" => Op::Insert(int(0)?, int(1)?),
            "inc" => Op::Inc(int(0)?, int(1)?),
            "get_pri" => Op::GetPri(int(0)?),
            "get_max" => Op::GetMax,
            _ => unreachable!("signature table and compiler disagree on {method}"),
        })
    }

    pub fn from_event(dt: DataType, ev: &Event) -> Result<Op, DataTypeError> {
        Op::compile(dt, &ev.method, &ev.args)
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            Op::Add(_)
            | Op::Remove(_)
            | Op::Put(..)
            | Op::Delete(_)
            | Op::Insert(..)
            | Op::Inc(..) => Update,
            _ => Query,
        }
    }

    pub fn is_update(&self) -> bool {
        self.kind() == Update
    }

    /// The single data element this operation names, if any.
    pub fn element(&self) -> Option<i64> {
        match *self {
            Op::Add(e)
            | Op::Remove(e)
            | Op::Contains(e)
            | Op::Put(e, _)
            | Op::Delete(e)
            | Op::Get(e)
            | Op::Insert(e, _)
            | Op::Inc(e, _)
            | Op::GetPri(e) => Some(e),
            Op::SetSize | Op::MapSize | Op::GetMax => None,
        }
    }
}

/// Folds `context` (updates in arbitration order) and answers `query`.
///
/// Panics if `query` is an update; use [`eval_query`] for a checked entry
/// point.
pub fn eval_ops<'a, I>(context: I, query: &Op) -> Value
where
    I: IntoIterator<Item = &'a Op>,
{
    match *query {
        Op::Contains(e) => {
            let mut present = false;
            for op in context {
                match *op {
                    Op::Add(x) if x == e => present = true,
                    Op::Remove(x) if x == e => present = false,
                    _ => {}
                }
            }
            Value::Bool(present)
        }
        Op::SetSize => {
            let mut live: Vec<(i64, bool)> = Vec::new();
            for op in context {
                let (x, on) = match *op {
                    Op::Add(x) => (x, true),
                    Op::Remove(x) => (x, false),
                    _ => continue,
                };
                match live.iter_mut().find(|(k, _)| *k == x) {
                    Some(slot) => slot.1 = on,
                    None => live.push((x, on)),
                }
            }
            Value::Int(live.iter().filter(|(_, on)| *on).count() as i64)
        }
        Op::Get(k) => {
            let mut val = Value::Nil;
            for op in context {
                match op {
                    Op::Put(x, v) if *x == k => val = v.clone().into(),
                    Op::Delete(x) if *x == k => val = Value::Nil,
                    _ => {}
                }
            }
            val
        }
        Op::MapSize => {
            let mut live: Vec<(i64, bool)> = Vec::new();
            for op in context {
                let (x, on) = match *op {
                    Op::Put(x, _) => (x, true),
                    Op::Delete(x) => (x, false),
                    _ => continue,
                };
                match live.iter_mut().find(|(k, _)| *k == x) {
                    Some(slot) => slot.1 = on,
                    None => live.push((x, on)),
                }
            }
            Value::Int(live.iter().filter(|(_, on)| *on).count() as i64)
        }
        Op::GetPri(e) => {
            let mut pri: Option<i64> = None;
            for op in context {
                match *op {
                    Op::Insert(x, p) if x == e && pri.is_none() => pri = Some(p),
                    Op::Inc(x, d) if x == e => {
                        if let Some(p) = pri.as_mut() {
                            *p = p.wrapping_add(d);
                        }
                    }
                    _ => {}
                }
            }
            pri.map_or(Value::Nil, Value::Int)
        }
        Op::GetMax => {
            let queue = pqueue_state(context);
            queue
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map_or(Value::Nil, |&(e, p)| Value::Pair(e, p))
        }
        _ => panic!("eval_ops called with update {query:?}"),
    }
}

/// Element → priority map after folding `context`.
pub fn pqueue_state<'a, I>(context: I) -> Vec<(i64, i64)>
where
    I: IntoIterator<Item = &'a Op>,
{
    let mut queue: Vec<(i64, i64)> = Vec::new();
    for op in context {
        match *op {
            Op::Insert(x, p) => {
                if !queue.iter().any(|(k, _)| *k == x) {
                    queue.push((x, p));
                }
            }
            Op::Inc(x, d) => {
                if let Some(slot) = queue.iter_mut().find(|(k, _)| *k == x) {
                    slot.1 = slot.1.wrapping_add(d);
                }
            }
            _ => {}
        }
    }
    queue
}

/// Return value of `q` after the updates in `context`, in order.
pub fn eval_query(dt: DataType, context: &[&Event], q: &Event) -> Result<Value, DataTypeError> {
    let query = Op::from_event(dt, q)?;
    if query.is_update() {
        return Err(DataTypeError::NotAQuery(q.method.clone()));
    }
    let ops = context
        .iter()
        .map(|e| Op::from_event(dt, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(eval_ops(&ops, &query))
}

/// Whether `q`'s recorded return value is what `context` produces.
pub fn matches_return(dt: DataType, context: &[&Event], q: &Event) -> Result<bool, DataTypeError> {
    Ok(eval_query(dt, context, q)? == q.ret)
}
