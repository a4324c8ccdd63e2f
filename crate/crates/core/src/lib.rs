//! Compile a stochastic context-free grammar into an n-gram language model.
//!
//! The n-gram statistics are exact: expected substring counts under the
//! grammar are obtained from one linear system per substring, all sharing a
//! single LU factorization of `I - A`, where `A` is the expected-child matrix
//! of the grammar in Chomsky normal form.

pub mod cnf;
pub mod consistency;
pub mod expectation;
pub mod grammar;
pub mod linalg;
pub mod ngram;
pub mod pipeline;
pub mod sampling;
pub mod substring;

pub use cnf::{to_cnf, CnfError, CnfGrammar};
pub use consistency::{check_consistency, ConsistencyReport, Verdict};
pub use expectation::{ExpectationEngine, ExpectationVector};
pub use grammar::{parse_grammar, validate, Grammar, ParseError};
pub use linalg::{lu_factor, lu_solve, spectral_radius_estimate, DenseMatrix, NumericError};
pub use ngram::{build_table, export_arpa, merge_counts, NGramTable};
pub use sampling::{sample_batch, SampleBatch};
