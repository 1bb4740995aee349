//! Forward-chaining rule engine over typed facts.
//!
//! Facts are quintuples `(fact type, id, attribute, value, value type)`
//! stored in an index with one inverted list per triple component. Rules
//! are evaluated island by island and iterated to a fixpoint over a rule
//! dependency graph.

pub mod bucket;
pub mod derivation;
pub mod dictionary;
pub mod engine;
pub mod error;
pub mod fact;
pub mod fork_join;
pub mod index;
pub mod island;
pub mod join;
pub mod syntax;
pub mod synth;

pub use bucket::BucketMap;
pub use derivation::{run_inference, DerivationGraph, InferenceConfig, InferenceStats, TreeMode, UniqueMode, WriteMode};
pub use dictionary::{StringDictionary, Sym};
pub use engine::{Engine, EngineConfig, MetricsFormat, Preset, RunMetrics};
pub use error::{Error, ParseError, Result};
pub use fact::{Condition, Fact, JoinPosition, Rule, Scalar, Term, Value, ValueType, Var};
pub use fork_join::{ForkJoin, ForkJoinConfig};
pub use index::{Backend, Rank1Index};
pub use island::{evaluate_rule, EvalConfig, RnlMode};
pub use join::{JoinAlgo, JoinResult, Layout, Table};

pub type BucketMapF64 = bucket::BucketMap<f64>;
pub type BucketMapF32 = bucket::BucketMap<f32>;
