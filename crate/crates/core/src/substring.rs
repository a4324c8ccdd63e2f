//! Prefix and suffix generation probabilities.
//!
//! `P(X =>*_L w)` is the probability that the yield of `X` begins with `w`
//! (an exact match counts). For a single word it satisfies the left-corner
//! system `(I - A_L) p = t` with `A_L[X][Y] = sum_Z P(X -> Y Z)` and
//! `t[X] = P(X -> w)`. For longer strings the same matrix appears, with the
//! right-hand side collecting the split where the left child derives a proper
//! prefix of `w` exactly and the right child continues it:
//!
//! ```text
//! b[X] = sum_{X -> Y Z} P(X -> Y Z) sum_{j=1}^{k-1} P(Y =>* w[..j]) P(Z =>*_L w[j..])
//! ```
//!
//! Suffix probabilities are prefix probabilities of the mirrored grammar on
//! the reversed string.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use crate::cnf::CnfGrammar;
use crate::grammar::Terminal;
use crate::linalg::{lu_factor, DenseMatrix, Factorization, NumericError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Corner matrix of one side together with the factorization of `I - A`.
///
/// The stored grammar is oriented so that the corner of interest is always
/// the left child: the grammar itself for [`Side::Left`], its mirror for
/// [`Side::Right`].
#[derive(Debug, Clone)]
pub struct CornerSystem {
    side: Side,
    grammar: CnfGrammar,
    matrix: DenseMatrix,
    factorization: Factorization,
}

impl CornerSystem {
    pub fn build(g: &CnfGrammar, side: Side) -> Result<Self, NumericError> {
        let grammar = match side {
            Side::Left => g.clone(),
            Side::Right => g.mirror(),
        };
        let mut matrix = DenseMatrix::zeros(grammar.num_nonterminals());
        for r in grammar.binary_rules() {
            matrix[(r.lhs.0, r.left.0)] += r.prob;
        }
        let factorization = lu_factor(&matrix.identity_minus())?;
        Ok(CornerSystem {
            side,
            grammar,
            matrix,
            factorization,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// The grammar in this system's orientation.
    pub fn oriented_grammar(&self) -> &CnfGrammar {
        &self.grammar
    }

    /// `P(X =>*_L word)` (or `=>*_R` for the right side) for every `X`.
    pub fn corner_probs(&self, word: Terminal) -> Vec<f64> {
        let t = self.grammar.lexical_vector(word);
        self.factorization
            .solve(&t)
            .expect("dimension matches grammar")
    }
}

/// Free-function form of [`CornerSystem::corner_probs`]; unknown words give
/// the zero vector.
pub fn corner_probs(cs: &CornerSystem, word: &str) -> Vec<f64> {
    match cs.grammar.terminal(word) {
        Some(t) => cs.corner_probs(t),
        None => vec![0.0; cs.grammar.num_nonterminals()],
    }
}

/// Memoized prefix probabilities for one side, keyed by oriented word string.
///
/// Concurrent lookups may compute the same entry twice; both computations
/// are deterministic, so whichever insert wins stores the same vector.
#[derive(Debug)]
pub struct PrefixTable {
    system: CornerSystem,
    memo: RwLock<HashMap<Vec<Terminal>, Arc<[f64]>>>,
    solves: AtomicUsize,
}

impl PrefixTable {
    pub fn new(system: CornerSystem) -> Self {
        PrefixTable {
            system,
            memo: RwLock::new(HashMap::new()),
            solves: AtomicUsize::new(0),
        }
    }

    pub fn system(&self) -> &CornerSystem {
        &self.system
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.memo.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.memo.write().unwrap().clear();
    }

    /// Prefix probabilities of the oriented grammar for `w` (non-empty).
    pub fn get(&self, w: &[Terminal]) -> Arc<[f64]> {
        assert!(!w.is_empty(), "prefix of the empty string is not defined");
        if let Some(v) = self.memo.read().unwrap().get(w) {
            return v.clone();
        }
        let v: Arc<[f64]> = self.compute(w).into();
        self.memo
            .write()
            .unwrap()
            .entry(w.to_vec())
            .or_insert(v)
            .clone()
    }

    fn compute(&self, w: &[Terminal]) -> Vec<f64> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let g = &self.system.grammar;
        if w.len() == 1 {
            return self.system.corner_probs(w[0]);
        }
        let k = w.len();
        let chart = g.inside_chart(&w[..k - 1]);
        let tails: Vec<Arc<[f64]>> = (1..k).map(|j| self.get(&w[j..])).collect();
        let mut b = vec![0.0; g.num_nonterminals()];
        for r in g.binary_rules() {
            let mut acc = 0.0;
            for j in 1..k {
                let exact = chart.get(0, j)[r.left.0];
                if exact != 0.0 {
                    acc += exact * tails[j - 1][r.right.0];
                }
            }
            b[r.lhs.0] += r.prob * acc;
        }
        self.system
            .factorization
            .solve(&b)
            .expect("dimension matches grammar")
    }
}

/// Prefix and suffix probabilities of one grammar, both sides memoized.
#[derive(Debug)]
pub struct SubstringProbs {
    left: PrefixTable,
    right: PrefixTable,
}

impl SubstringProbs {
    pub fn new(g: &CnfGrammar) -> Result<Self, NumericError> {
        Ok(SubstringProbs {
            left: PrefixTable::new(CornerSystem::build(g, Side::Left)?),
            right: PrefixTable::new(CornerSystem::build(g, Side::Right)?),
        })
    }

    /// `P(X =>*_L w)` for every `X`.
    pub fn prefix(&self, w: &[Terminal]) -> Arc<[f64]> {
        self.left.get(w)
    }

    /// `P(X =>*_R w)` for every `X`.
    pub fn suffix(&self, w: &[Terminal]) -> Arc<[f64]> {
        let reversed: Vec<Terminal> = w.iter().rev().copied().collect();
        self.right.get(&reversed)
    }

    pub fn table(&self, side: Side) -> &PrefixTable {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn solves(&self) -> usize {
        self.left.solves() + self.right.solves()
    }
}

/// Prefix probabilities for `w` through a shared table. `g` must be the
/// grammar the table was built from.
pub fn prefix_probs(pt: &PrefixTable, g: &CnfGrammar, w: &[&str]) -> Vec<f64> {
    debug_assert_eq!(pt.system.grammar.num_nonterminals(), g.num_nonterminals());
    match g.symbols().lookup_words(w) {
        Some(ids) if !ids.is_empty() => pt.get(&ids).to_vec(),
        _ => vec![0.0; g.num_nonterminals()],
    }
}

/// Suffix probabilities for `w`, computed on the mirrored grammar.
pub fn suffix_probs(g: &CnfGrammar, w: &[&str]) -> Result<Vec<f64>, NumericError> {
    let Some(ids) = g.symbols().lookup_words(w).filter(|ids| !ids.is_empty()) else {
        return Ok(vec![0.0; g.num_nonterminals()]);
    };
    let table = PrefixTable::new(CornerSystem::build(g, Side::Right)?);
    let reversed: Vec<Terminal> = ids.into_iter().rev().collect();
    Ok(table.get(&reversed).to_vec())
}
