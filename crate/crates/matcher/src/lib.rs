//! Learning-free parent matching and the evaluation protocols built on it.
//!
//! A [`Method`] turns a candidate/descendant pair into a score (plain
//! similarity, its one-pass linearized form, or the explicit oracle);
//! [`match_parents`] turns a descendant's scores into a distribution over
//! candidates. [`evaluate_zoo`] runs the validation/test protocol over a zoo,
//! and [`gap_matrix`], [`sweep`] and [`scatter`] slice it further.

pub mod distribution;
pub mod error;
pub mod eval;
pub mod gap;
pub mod method;
pub mod report;
pub mod scatter;
pub mod stats;
pub mod sweep;

pub use distribution::{match_parents, MatchDistribution};
pub use error::{MatchError, Result};
pub use eval::{
    candidate_indices, descendant_indices, detect_child, evaluate_methods, evaluate_table,
    evaluate_with_split, evaluate_zoo, score_table, EvalConfig, EvalReport, PairOutcome,
    ScoreTable, Split, SplitSpec,
};
pub use gap::{gap_matrix, GapCell};
pub use method::{probe_inputs, Method, Mode};
pub use report::{summarize, summary_json, write_pairs_csv, MethodSummary, PAIRS_CSV_HEADER};
pub use scatter::{scatter, ScatterRow};
pub use stats::{mean_std, pearson, spearman};
pub use sweep::{axis_values, sweep, Axis, SweepPoint};
