//! Consistency measurement for histories of replicated data types.
//!
//! A history is checked against six visibility levels (weak through
//! complete) by searching for an abstract execution, an arbitration order
//! plus a visibility relation, that explains every query's return value.

pub mod datatype;
pub mod eventset;
pub mod history;
pub mod instance;
pub mod measure;
pub mod parallel;
pub mod pruning;
pub mod search;
pub mod sim;
pub mod visibility;

pub use datatype::DataType;
pub use eventset::EventSet;
pub use history::{parse_history, EventId, History, Value};
pub use instance::{CheckError, Instance};
pub use pruning::{Pruner, PruningPredicate};
pub use search::{check, CheckResult, Outcome, SearchOptions, SearchStats, VisMode};
pub use visibility::{Level, PartialExecution};
