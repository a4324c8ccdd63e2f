//! Chomsky normal form grammars and the probability-preserving transform.
//!
//! The transform runs in three passes over the source rules:
//!
//! 1. terminals inside right-hand sides of length >= 2 are wrapped in fresh
//!    preterminals (`X -> a` with probability 1);
//! 2. right-hand sides longer than two are binarized into chains of fresh
//!    nonterminals carrying probability-1 continuations;
//! 3. unit productions are eliminated with the unit-closure matrix
//!    `(I - U)^-1`, so `X -> alpha` receives `closure[X][Y] * P(Y -> alpha)`
//!    for every non-unit rule of `Y`.
//!
//! Fresh nonterminals are named `LHS@rule@position` (preterminals) and
//! `LHS@rule@position..` (binarization continuations), where `rule` is the
//! index of the source rule and `position` the right-hand-side offset.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::grammar::{Grammar, NonTerminal, Rule, Symbol, SymbolTable, Terminal};
use crate::linalg::{lu_factor, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CnfError {
    #[error("epsilon rule for {0} is not supported")]
    Epsilon(String),
    #[error("unit productions through {0} form a cycle whose closure diverges")]
    UnitCycle(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryRule {
    pub lhs: NonTerminal,
    pub left: NonTerminal,
    pub right: NonTerminal,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalRule {
    pub lhs: NonTerminal,
    pub word: Terminal,
    pub prob: f64,
}

/// Why a fresh nonterminal exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OriginKind {
    /// Wraps a terminal that appeared in a longer right-hand side.
    Preterminal { terminal: String },
    /// Covers the tail of a long right-hand side starting at `position`.
    Continuation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub source_rule: usize,
    pub position: usize,
    pub kind: OriginKind,
}

/// A grammar whose rules are all `X -> Y Z` or `X -> word`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnfGrammar {
    symbols: SymbolTable,
    start: NonTerminal,
    binary: Vec<BinaryRule>,
    lexical: Vec<LexicalRule>,
    origins: BTreeMap<String, Origin>,
    lexical_by_word: Vec<Vec<(NonTerminal, f64)>>,
}

impl CnfGrammar {
    /// Builds a CNF grammar; duplicate rules are merged by summing their
    /// probabilities.
    pub fn new(
        symbols: SymbolTable,
        start: NonTerminal,
        binary: Vec<BinaryRule>,
        lexical: Vec<LexicalRule>,
        origins: BTreeMap<String, Origin>,
    ) -> Self {
        let mut merged_bin: BTreeMap<(NonTerminal, NonTerminal, NonTerminal), f64> =
            BTreeMap::new();
        for r in binary {
            *merged_bin.entry((r.lhs, r.left, r.right)).or_default() += r.prob;
        }
        let mut merged_lex: BTreeMap<(NonTerminal, Terminal), f64> = BTreeMap::new();
        for r in lexical {
            *merged_lex.entry((r.lhs, r.word)).or_default() += r.prob;
        }
        let binary: Vec<BinaryRule> = merged_bin
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|((lhs, left, right), prob)| BinaryRule {
                lhs,
                left,
                right,
                prob,
            })
            .collect();
        let lexical: Vec<LexicalRule> = merged_lex
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|((lhs, word), prob)| LexicalRule { lhs, word, prob })
            .collect();

        let mut lexical_by_word = vec![Vec::new(); symbols.terminals().len()];
        for r in &lexical {
            lexical_by_word[r.word.0].push((r.lhs, r.prob));
        }
        CnfGrammar {
            symbols,
            start,
            binary,
            lexical,
            origins,
            lexical_by_word,
        }
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn start(&self) -> NonTerminal {
        self.start
    }

    pub fn binary_rules(&self) -> &[BinaryRule] {
        &self.binary
    }

    pub fn lexical_rules(&self) -> &[LexicalRule] {
        &self.lexical
    }

    pub fn origins(&self) -> &BTreeMap<String, Origin> {
        &self.origins
    }

    pub fn num_nonterminals(&self) -> usize {
        self.symbols.nonterminals().len()
    }

    pub fn num_terminals(&self) -> usize {
        self.symbols.terminals().len()
    }

    pub fn nonterminal(&self, name: &str) -> Option<NonTerminal> {
        self.symbols.nonterminal(name)
    }

    pub fn terminal(&self, name: &str) -> Option<Terminal> {
        self.symbols.terminal(name)
    }

    /// Nonterminals with a lexical rule for `word`, with that rule's probability.
    pub fn lexical_for(&self, word: Terminal) -> &[(NonTerminal, f64)] {
        &self.lexical_by_word[word.0]
    }

    /// `P(X -> word)` for every nonterminal `X`.
    pub fn lexical_vector(&self, word: Terminal) -> Vec<f64> {
        let mut v = vec![0.0; self.num_nonterminals()];
        for &(x, p) in self.lexical_for(word) {
            v[x.0] += p;
        }
        v
    }

    pub fn lhs_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_nonterminals()];
        for r in &self.binary {
            sums[r.lhs.0] += r.prob;
        }
        for r in &self.lexical {
            sums[r.lhs.0] += r.prob;
        }
        sums
    }

    /// Reverses the children of every binary rule.
    pub fn mirror(&self) -> CnfGrammar {
        let binary = self
            .binary
            .iter()
            .map(|r| BinaryRule {
                left: r.right,
                right: r.left,
                ..*r
            })
            .collect();
        CnfGrammar::new(
            self.symbols.clone(),
            self.start,
            binary,
            self.lexical.clone(),
            self.origins.clone(),
        )
    }

    /// Inside probabilities of every span of `words`.
    pub fn inside_chart(&self, words: &[Terminal]) -> InsideChart {
        let n = words.len();
        let nts = self.num_nonterminals();
        let mut chart = InsideChart {
            len: n,
            nts,
            cells: vec![0.0; (n + 1) * (n + 1) * nts],
        };
        for (i, &w) in words.iter().enumerate() {
            let cell = chart.cell_mut(i, i + 1);
            for &(x, p) in self.lexical_for(w) {
                cell[x.0] += p;
            }
        }
        for span in 2..=n {
            for i in 0..=(n - span) {
                let j = i + span;
                let mut acc = vec![0.0; nts];
                for k in (i + 1)..j {
                    let left = chart.get(i, k);
                    let right = chart.get(k, j);
                    for r in &self.binary {
                        let l = left[r.left.0];
                        if l == 0.0 {
                            continue;
                        }
                        acc[r.lhs.0] += r.prob * l * right[r.right.0];
                    }
                }
                chart.cell_mut(i, j).copy_from_slice(&acc);
            }
        }
        chart
    }

    /// Probability that the start symbol derives exactly `words`. Out of
    /// vocabulary words give probability 0.
    pub fn sentence_inside<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        match self.symbols.lookup_words(words) {
            Some(ids) if !ids.is_empty() => self.inside_chart(&ids).get(0, ids.len())[self.start.0],
            _ => 0.0,
        }
    }

    /// Converts back to a plain [`Grammar`] (for serialization).
    pub fn to_grammar(&self) -> Grammar {
        let rules = self
            .binary
            .iter()
            .map(|r| Rule {
                lhs: r.lhs,
                rhs: vec![Symbol::N(r.left), Symbol::N(r.right)],
                prob: r.prob,
            })
            .chain(self.lexical.iter().map(|r| Rule {
                lhs: r.lhs,
                rhs: vec![Symbol::T(r.word)],
                prob: r.prob,
            }))
            .collect();
        Grammar::from_parts(self.symbols.clone(), rules, self.start)
    }
}

/// Inside probabilities `P(X =>* words[i..j])` indexed by span.
#[derive(Debug, Clone)]
pub struct InsideChart {
    len: usize,
    nts: usize,
    cells: Vec<f64>,
}

impl InsideChart {
    fn offset(&self, i: usize, j: usize) -> usize {
        assert!(i < j && j <= self.len, "span ({i}, {j}) out of range");
        (i * (self.len + 1) + j) * self.nts
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.cells[o..o + self.nts]
    }

    fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        &mut self.cells[o..o + self.nts]
    }
}

fn fresh_name(symbols: &SymbolTable, base: String) -> String {
    let mut name = base;
    while symbols.nonterminal(&name).is_some() || symbols.terminal(&name).is_some() {
        name.push('\'');
    }
    name
}

/// Converts a grammar to CNF while preserving every sentence's probability.
pub fn to_cnf(g: &Grammar) -> Result<CnfGrammar, CnfError> {
    let mut symbols = g.symbols().clone();
    let mut origins = BTreeMap::new();
    // (lhs, rhs) after preterminal wrapping and binarization; rhs is either a
    // single symbol or a pair of nonterminals.
    let mut rules: Vec<(NonTerminal, Vec<Symbol>, f64)> = Vec::new();
    let mut preterminal_rules: Vec<LexicalRule> = Vec::new();

    for (idx, rule) in g.rules().iter().enumerate() {
        let lhs_name = g.symbols().nonterminal_name(rule.lhs).to_string();
        if rule.rhs.is_empty() {
            return Err(CnfError::Epsilon(lhs_name));
        }
        if rule.rhs.len() == 1 {
            rules.push((rule.lhs, rule.rhs.clone(), rule.prob));
            continue;
        }

        let mut rhs: Vec<NonTerminal> = Vec::with_capacity(rule.rhs.len());
        for (pos, sym) in rule.rhs.iter().enumerate() {
            match *sym {
                Symbol::N(n) => rhs.push(n),
                Symbol::T(t) => {
                    let name = fresh_name(&symbols, format!("{lhs_name}@{idx}@{pos}"));
                    let pre = symbols.add_nonterminal(&name);
                    origins.insert(
                        name,
                        Origin {
                            source_rule: idx,
                            position: pos,
                            kind: OriginKind::Preterminal {
                                terminal: g.symbols().terminal_name(t).to_string(),
                            },
                        },
                    );
                    preterminal_rules.push(LexicalRule {
                        lhs: pre,
                        word: t,
                        prob: 1.0,
                    });
                    rhs.push(pre);
                }
            }
        }

        // X -> A B C D  becomes  X -> A X@1..,  X@1.. -> B X@2..,  X@2.. -> C D
        let mut lhs = rule.lhs;
        let mut prob = rule.prob;
        for (pos, &head) in rhs[..rhs.len() - 2].iter().enumerate() {
            let name = fresh_name(&symbols, format!("{lhs_name}@{idx}@{}..", pos + 1));
            let cont = symbols.add_nonterminal(&name);
            origins.insert(
                name,
                Origin {
                    source_rule: idx,
                    position: pos + 1,
                    kind: OriginKind::Continuation,
                },
            );
            rules.push((lhs, vec![Symbol::N(head), Symbol::N(cont)], prob));
            lhs = cont;
            prob = 1.0;
        }
        let k = rhs.len();
        rules.push((
            lhs,
            vec![Symbol::N(rhs[k - 2]), Symbol::N(rhs[k - 1])],
            prob,
        ));
    }

    let n = symbols.nonterminals().len();
    let mut unit = DenseMatrix::zeros(n);
    let mut has_units = false;
    for (lhs, rhs, p) in &rules {
        if let [Symbol::N(y)] = rhs.as_slice() {
            unit[(lhs.0, y.0)] += p;
            has_units = true;
        }
    }

    let closure = if has_units {
        unit_closure(&unit, &symbols)?
    } else {
        DenseMatrix::identity(n)
    };

    // Group non-unit rules by lhs, then push them up through the closure.
    let mut by_lhs: HashMap<NonTerminal, Vec<(&[Symbol], f64)>> = HashMap::new();
    for (lhs, rhs, p) in &rules {
        if !matches!(rhs.as_slice(), [Symbol::N(_)]) {
            by_lhs.entry(*lhs).or_default().push((rhs.as_slice(), *p));
        }
    }
    let mut binary = Vec::new();
    let mut lexical = preterminal_rules;
    for x in 0..n {
        for y in 0..n {
            let weight = closure[(x, y)];
            if weight == 0.0 {
                continue;
            }
            for (rhs, p) in by_lhs.get(&NonTerminal(y)).into_iter().flatten() {
                let prob = weight * p;
                match *rhs {
                    [Symbol::T(t)] => lexical.push(LexicalRule {
                        lhs: NonTerminal(x),
                        word: *t,
                        prob,
                    }),
                    [Symbol::N(l), Symbol::N(r)] => binary.push(BinaryRule {
                        lhs: NonTerminal(x),
                        left: *l,
                        right: *r,
                        prob,
                    }),
                    _ => unreachable!("rules are unary or binary after binarization"),
                }
            }
        }
    }

    Ok(CnfGrammar::new(
        symbols,
        g.start(),
        binary,
        lexical,
        origins,
    ))
}

/// `(I - U)^-1` for the unit-production matrix `U`.
///
/// `I - U` is a Z-matrix, so the closure exists and is entrywise non-negative
/// exactly when the spectral radius of `U` is below one.
fn unit_closure(unit: &DenseMatrix, symbols: &SymbolTable) -> Result<DenseMatrix, CnfError> {
    let n = unit.dim();
    let cycle_error = || {
        // Report a nonterminal on a unit cycle: any row with all mass in units.
        let culprit = (0..n)
            .max_by(|&a, &b| {
                let sa: f64 = unit.row(a).iter().sum();
                let sb: f64 = unit.row(b).iter().sum();
                sa.total_cmp(&sb)
            })
            .unwrap_or(0);
        CnfError::UnitCycle(symbols.nonterminal_name(NonTerminal(culprit)).to_string())
    };
    let f = lu_factor(&unit.identity_minus()).map_err(|_| cycle_error())?;
    let mut closure = DenseMatrix::zeros(n);
    let mut e = vec![0.0; n];
    for col in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[col] = 1.0;
        let x = f.solve(&e).expect("dimension matches");
        for (row, v) in x.into_iter().enumerate() {
            if !v.is_finite() || v < -1e-9 {
                return Err(cycle_error());
            }
            closure[(row, col)] = v.max(0.0);
        }
    }
    Ok(closure)
}
