//! Substring expectations `c(w | X)`.
//!
//! For every word string `w` the expectations over all nonterminals solve
//! `(I - A) c = b` where
//!
//! ```text
//! a[X][U] = sum_{X -> Y Z} P(X -> Y Z) (delta(Y, U) + delta(Z, U))
//! b[X]    = P(X -> w)
//!         + sum_{X -> Y Z} P(X -> Y Z) sum_{j=1}^{n-1} P(Y =>*_R w[..j]) P(Z =>*_L w[j..])
//! ```
//!
//! `I - A` depends only on the grammar and is factored once; each string
//! then costs one right-hand side and one pair of triangular solves.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use crate::cnf::CnfGrammar;
use crate::consistency::expectancy_matrix;
use crate::grammar::Terminal;
use crate::linalg::{lu_factor, DenseMatrix, Factorization, NumericError};
use crate::substring::SubstringProbs;

/// Right-hand side `b` for one word string.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsVector {
    pub substring: Vec<Terminal>,
    pub values: Vec<f64>,
}

/// `c(w | X)` for every nonterminal `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationVector {
    pub substring: Vec<Terminal>,
    pub values: Vec<f64>,
}

impl ExpectationVector {
    pub fn at(&self, x: crate::grammar::NonTerminal) -> f64 {
        self.values[x.0]
    }
}

/// The coefficient matrix `A`; identical to the expectancy matrix.
pub fn coefficient_matrix(g: &CnfGrammar) -> DenseMatrix {
    expectancy_matrix(g).0
}

/// Builds `b` for `w`. Empty strings and unknown words give zeros.
pub fn rhs_vector(g: &CnfGrammar, w: &[Terminal], sp: &SubstringProbs) -> RhsVector {
    let mut values = vec![0.0; g.num_nonterminals()];
    match w.len() {
        0 => {}
        1 => {
            for &(x, p) in g.lexical_for(w[0]) {
                values[x.0] += p;
            }
        }
        n => {
            let suffixes: Vec<_> = (1..n).map(|j| sp.suffix(&w[..j])).collect();
            let prefixes: Vec<_> = (1..n).map(|j| sp.prefix(&w[j..])).collect();
            for r in g.binary_rules() {
                let mut acc = 0.0;
                for j in 0..n - 1 {
                    let s = suffixes[j][r.left.0];
                    if s != 0.0 {
                        acc += s * prefixes[j][r.right.0];
                    }
                }
                values[r.lhs.0] += r.prob * acc;
            }
        }
    }
    RhsVector {
        substring: w.to_vec(),
        values,
    }
}

/// Solves `(I - A) c = b` against a factorization of `I - A`.
pub fn expectations(f: &Factorization, b: &RhsVector) -> Result<ExpectationVector, NumericError> {
    Ok(ExpectationVector {
        substring: b.substring.clone(),
        values: f.solve(&b.values)?,
    })
}

/// Counters exposing the once-per-grammar / once-per-string cost split.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct EngineStats {
    pub factorizations: usize,
    pub factorization_seconds: f64,
    pub solves: usize,
    pub solve_seconds: f64,
    pub corner_solves: usize,
}

/// Everything needed to answer expectation queries for one grammar.
#[derive(Debug)]
pub struct ExpectationEngine {
    grammar: CnfGrammar,
    coefficients: DenseMatrix,
    factorization: Factorization,
    substrings: SubstringProbs,
    factorization_time: Duration,
    solves: AtomicUsize,
    solve_nanos: AtomicU64,
}

impl ExpectationEngine {
    /// Factors `I - A` once. Fails if the matrix is singular, which happens
    /// for inconsistent grammars.
    pub fn new(g: &CnfGrammar) -> Result<Self, NumericError> {
        let substrings = SubstringProbs::new(g)?;
        let coefficients = coefficient_matrix(g);
        let started = Instant::now();
        let factorization = lu_factor(&coefficients.identity_minus())?;
        let factorization_time = started.elapsed();
        Ok(ExpectationEngine {
            grammar: g.clone(),
            coefficients,
            factorization,
            substrings,
            factorization_time,
            solves: AtomicUsize::new(0),
            solve_nanos: AtomicU64::new(0),
        })
    }

    pub fn grammar(&self) -> &CnfGrammar {
        &self.grammar
    }

    pub fn coefficients(&self) -> &DenseMatrix {
        &self.coefficients
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    pub fn substrings(&self) -> &SubstringProbs {
        &self.substrings
    }

    pub fn rhs(&self, w: &[Terminal]) -> RhsVector {
        rhs_vector(&self.grammar, w, &self.substrings)
    }

    pub fn solve(&self, b: &RhsVector) -> ExpectationVector {
        let started = Instant::now();
        let out = expectations(&self.factorization, b).expect("rhs sized by grammar");
        self.solve_nanos
            .fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.solves.fetch_add(1, Ordering::Relaxed);
        out
    }

    /// `c(w | X)` for all `X`.
    pub fn expectation(&self, w: &[Terminal]) -> ExpectationVector {
        self.solve(&self.rhs(w))
    }

    /// `c(w | S)` for word strings; unknown words give 0.
    pub fn expectation_of_words<S: AsRef<str>>(&self, w: &[S]) -> f64 {
        match self.grammar.symbols().lookup_words(w) {
            Some(ids) if !ids.is_empty() => self.expectation(&ids).at(self.grammar.start()),
            _ => 0.0,
        }
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            factorizations: 1,
            factorization_seconds: self.factorization_time.as_secs_f64(),
            solves: self.solves.load(Ordering::Relaxed),
            solve_seconds: self.solve_nanos.load(Ordering::Relaxed) as f64 * 1e-9,
            corner_solves: self.substrings.solves(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::to_cnf;
    use crate::grammar::parse_grammar;

    const TOY: &str = "\
S   -> NP VP  [1.0]
NP  -> N      [0.4]
NP  -> Det N  [0.6]
VP  -> V      [0.8]
VP  -> V NP   [0.2]
Det -> the    [0.4]
Det -> a      [0.6]
N   -> book   [1.0]
V   -> close  [0.3]
V   -> open   [0.7]
";

    fn branching(p: f64) -> CnfGrammar {
        let text = format!("S -> x [{p}]\nS -> S S [{}]\n", 1.0 - p);
        to_cnf(&parse_grammar(&text).unwrap()).unwrap()
    }

    #[test]
    fn coefficient_matrix_examples() {
        assert_eq!(coefficient_matrix(&branching(0.75)).row(0), &[0.5]);
        let g = to_cnf(&parse_grammar("S -> a [1]").unwrap()).unwrap();
        assert_eq!(
            coefficient_matrix(&g).identity_minus(),
            DenseMatrix::identity(1)
        );
        let toy = to_cnf(&parse_grammar(TOY).unwrap()).unwrap();
        let a = coefficient_matrix(&toy);
        let s = toy.nonterminal("S").unwrap().0;
        let np = toy.nonterminal("NP").unwrap().0;
        let vp = toy.nonterminal("VP").unwrap().0;
        assert_eq!(a[(s, np)], 1.0);
        assert_eq!(a[(s, vp)], 1.0);
        assert_eq!(a.row(s).iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn rhs_examples() {
        let g = to_cnf(&parse_grammar(TOY).unwrap()).unwrap();
        let engine = ExpectationEngine::new(&g).unwrap();
        let id = |w: &str| g.terminal(w).unwrap();
        let nt = |x: &str| g.nonterminal(x).unwrap().0;

        let b = engine.rhs(&[id("book")]);
        assert_eq!(b.values[nt("N")], 1.0);
        assert_eq!(b.values[nt("NP")], 0.4);
        assert_eq!(b.values[nt("S")], 0.0);

        let b = engine.rhs(&[id("the"), id("book")]);
        assert!((b.values[nt("NP")] - 0.24).abs() < 1e-15);
        assert_eq!(b.values[nt("S")], 0.0);
    }

    #[test]
    fn closed_form_unigram() {
        let g = branching(0.75);
        let engine = ExpectationEngine::new(&g).unwrap();
        assert!((engine.expectation_of_words(&["x"]) - 1.5).abs() < 1e-12);
        assert_eq!(engine.expectation_of_words(&["y"]), 0.0);
    }

    #[test]
    fn toy_expectations() {
        let g = to_cnf(&parse_grammar(TOY).unwrap()).unwrap();
        let engine = ExpectationEngine::new(&g).unwrap();
        assert!((engine.expectation_of_words(&["book"]) - 1.2).abs() < 1e-12);
        assert!((engine.expectation_of_words(&["the", "book"]) - 0.288).abs() < 1e-12);
        assert_eq!(engine.expectation_of_words(&["book", "the"]), 0.0);
        let stats = engine.stats();
        assert_eq!(stats.factorizations, 1);
        assert_eq!(stats.solves, 3);
    }

    #[test]
    fn inconsistent_grammar_is_singular_at_critical_point() {
        assert!(matches!(
            ExpectationEngine::new(&branching(0.5)),
            Err(NumericError::Singular { .. })
        ));
    }
}
