//! Grammar consistency via the first-order expectancy matrix.
//!
//! A grammar is consistent (its derivations terminate with probability 1)
//! when the powers of its expectancy matrix vanish, i.e. when the matrix's
//! spectral radius is below one. The same matrix is the coefficient matrix
//! `A` of every substring-expectation system, so consistency is exactly the
//! condition under which `(I - A)^-1` exists as a non-negative series.

use serde::Serialize;

use crate::cnf::CnfGrammar;
use crate::linalg::{spectral_radius_estimate, DenseMatrix, NumericError};

pub const DEFAULT_MARGIN: f64 = 1e-6;
const POWER_TOLERANCE: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

/// `e[X][Y]`: expected occurrences of `Y` in a one-step expansion of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectancyMatrix(pub DenseMatrix);

pub fn expectancy_matrix(g: &CnfGrammar) -> ExpectancyMatrix {
    let mut m = DenseMatrix::zeros(g.num_nonterminals());
    for r in g.binary_rules() {
        m[(r.lhs.0, r.left.0)] += r.prob;
        m[(r.lhs.0, r.right.0)] += r.prob;
    }
    ExpectancyMatrix(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    /// The radius estimate did not converge and sits within the margin of 1.
    Borderline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub spectral_radius: f64,
    pub verdict: Verdict,
    pub iterations: usize,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.verdict == Verdict::Consistent
    }
}

pub fn check_consistency(g: &CnfGrammar, margin: f64) -> Result<ConsistencyReport, NumericError> {
    let e = expectancy_matrix(g);
    let est = spectral_radius_estimate(&e.0, POWER_TOLERANCE, POWER_MAX_ITER)?;
    let rho = est.value;
    let verdict = if !est.converged && (rho - 1.0).abs() < margin {
        Verdict::Borderline
    } else if rho < 1.0 - margin {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    };
    Ok(ConsistencyReport {
        spectral_radius: rho,
        verdict,
        iterations: est.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::to_cnf;
    use crate::grammar::parse_grammar;

    fn branching(p: f64) -> CnfGrammar {
        let text = format!("S -> x [{p}]\nS -> S S [{}]\n", 1.0 - p);
        to_cnf(&parse_grammar(&text).unwrap()).unwrap()
    }

    #[test]
    fn branching_expectancy_is_two_q() {
        let e = expectancy_matrix(&branching(0.5));
        assert_eq!(e.0, DenseMatrix::from_rows(&[vec![1.0]]).unwrap());
        let e = expectancy_matrix(&branching(0.75));
        assert_eq!(e.0[(0, 0)], 0.5);
    }

    #[test]
    fn terminal_only_grammar_has_zero_matrix() {
        let g = to_cnf(&parse_grammar("S -> a [0.5]\nS -> b [0.5]\n").unwrap()).unwrap();
        assert_eq!(expectancy_matrix(&g).0, DenseMatrix::zeros(1));
        let report = check_consistency(&g, DEFAULT_MARGIN).unwrap();
        assert_eq!(report.verdict, Verdict::Consistent);
        assert_eq!(report.spectral_radius, 0.0);
    }

    #[test]
    fn branching_verdicts() {
        let cases = [
            (0.4, Verdict::Inconsistent, 1.2),
            (0.5, Verdict::Inconsistent, 1.0),
            (0.51, Verdict::Consistent, 0.98),
            (0.75, Verdict::Consistent, 0.5),
        ];
        for (p, verdict, rho) in cases {
            let r = check_consistency(&branching(p), DEFAULT_MARGIN).unwrap();
            assert_eq!(r.verdict, verdict, "p = {p}");
            assert!((r.spectral_radius - rho).abs() < 1e-9, "p = {p}: {r:?}");
        }
    }

    #[test]
    fn verdict_flips_at_one_half() {
        for margin in [1e-3, 1e-6, 1e-9] {
            // rho = 2(1 - p) = 1 - 2 eps
            let eps = margin;
            let above = check_consistency(&branching(0.5 + eps), margin).unwrap();
            assert_eq!(above.verdict, Verdict::Consistent, "margin {margin}");
            let below = check_consistency(&branching(0.5 - eps), margin).unwrap();
            assert_eq!(below.verdict, Verdict::Inconsistent, "margin {margin}");
        }
    }

    #[test]
    fn report_serializes_with_expected_fields() {
        let r = check_consistency(&branching(0.75), DEFAULT_MARGIN).unwrap();
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(v["verdict"], "consistent");
        assert_eq!(v["spectral_radius"], 0.5);
        assert!(v["iterations"].is_u64());
    }
}
