//! Stochastic context-free grammars: data model, text format and validation.
//!
//! The text format has one rule per line:
//!
//! ```text
//! # comment
//! S  -> NP VP   [1.0]
//! NP -> Det N   [0.6]
//! ```
//!
//! A symbol is a nonterminal iff it appears as the left-hand side of some
//! rule; every other symbol is a terminal. The start symbol is the left-hand
//! side of the first rule unless overridden.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Tolerance on per-nonterminal probability sums accepted by [`validate`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Tokens reserved for sentence boundaries in n-gram output.
pub const RESERVED_TOKENS: [&str; 2] = ["<s>", "</s>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NonTerminal(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Terminal(pub usize);

impl NonTerminal {
    pub fn index(self) -> usize {
        self.0
    }
}

impl Terminal {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    N(NonTerminal),
    T(Terminal),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub lhs: NonTerminal,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("grammar contains no rules")]
    Empty,
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: probability {value} outside (0, 1]")]
    Probability {
        line: usize,
        column: usize,
        value: String,
    },
    #[error("line {line}, column {column}: `{token}` is reserved for sentence boundaries")]
    Reserved {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("unknown start symbol `{0}`")]
    UnknownStart(String),
}

/// Interned symbol names, split into nonterminal and terminal index spaces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolTable {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    nt_index: HashMap<String, NonTerminal>,
    t_index: HashMap<String, Terminal>,
}

impl SymbolTable {
    pub fn add_nonterminal(&mut self, name: &str) -> NonTerminal {
        if let Some(&id) = self.nt_index.get(name) {
            return id;
        }
        let id = NonTerminal(self.nonterminals.len());
        self.nonterminals.push(name.to_string());
        self.nt_index.insert(name.to_string(), id);
        id
    }

    pub fn add_terminal(&mut self, name: &str) -> Terminal {
        if let Some(&id) = self.t_index.get(name) {
            return id;
        }
        let id = Terminal(self.terminals.len());
        self.terminals.push(name.to_string());
        self.t_index.insert(name.to_string(), id);
        id
    }

    pub fn nonterminal(&self, name: &str) -> Option<NonTerminal> {
        self.nt_index.get(name).copied()
    }

    pub fn terminal(&self, name: &str) -> Option<Terminal> {
        self.t_index.get(name).copied()
    }

    pub fn nonterminal_name(&self, id: NonTerminal) -> &str {
        &self.nonterminals[id.0]
    }

    pub fn terminal_name(&self, id: Terminal) -> &str {
        &self.terminals[id.0]
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn symbol_name(&self, sym: Symbol) -> &str {
        match sym {
            Symbol::N(n) => self.nonterminal_name(n),
            Symbol::T(t) => self.terminal_name(t),
        }
    }

    /// Maps words to terminal ids; `None` if any word is out of vocabulary.
    pub fn lookup_words<S: AsRef<str>>(&self, words: &[S]) -> Option<Vec<Terminal>> {
        words.iter().map(|w| self.terminal(w.as_ref())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    symbols: SymbolTable,
    rules: Vec<Rule>,
    start: NonTerminal,
}

impl Grammar {
    /// Assembles a grammar from already-interned parts.
    pub fn from_parts(symbols: SymbolTable, rules: Vec<Rule>, start: NonTerminal) -> Self {
        Grammar {
            symbols,
            rules,
            start,
        }
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn start(&self) -> NonTerminal {
        self.start
    }

    pub fn num_nonterminals(&self) -> usize {
        self.symbols.nonterminals.len()
    }

    pub fn num_terminals(&self) -> usize {
        self.symbols.terminals.len()
    }

    pub fn with_start(mut self, name: &str) -> Result<Self, ParseError> {
        self.start = self
            .symbols
            .nonterminal(name)
            .ok_or_else(|| ParseError::UnknownStart(name.to_string()))?;
        Ok(self)
    }

    /// Per-nonterminal probability mass.
    pub fn lhs_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_nonterminals()];
        for r in &self.rules {
            sums[r.lhs.0] += r.prob;
        }
        sums
    }

    /// Rescales every nonterminal's rule probabilities to sum to exactly 1.
    pub fn renormalize(&mut self) {
        let sums = self.lhs_sums();
        for r in &mut self.rules {
            r.prob /= sums[r.lhs.0];
        }
    }

    pub fn rule_string(&self, rule: &Rule) -> String {
        let rhs: Vec<&str> = rule
            .rhs
            .iter()
            .map(|s| self.symbols.symbol_name(*s))
            .collect();
        format!(
            "{} -> {} [{}]",
            self.symbols.nonterminal_name(rule.lhs),
            rhs.join(" "),
            rule.prob
        )
    }
}

impl fmt::Display for Grammar {
    /// Writes the grammar in the text format, start symbol's rules first so a
    /// re-parse recovers the same start symbol.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (start_rules, rest): (Vec<&Rule>, Vec<&Rule>) =
            self.rules.iter().partition(|r| r.lhs == self.start);
        for rule in start_rules.into_iter().chain(rest) {
            writeln!(f, "{}", self.rule_string(rule))?;
        }
        Ok(())
    }
}

struct RawRule<'a> {
    lhs: &'a str,
    rhs: Vec<(&'a str, usize)>,
    prob: f64,
}

fn column_of(line: &str, token: &str) -> usize {
    let offset = token.as_ptr() as usize - line.as_ptr() as usize;
    line[..offset].chars().count() + 1
}

fn parse_line(line_no: usize, raw_line: &str) -> Result<Option<RawRule<'_>>, ParseError> {
    let line = match raw_line.find('#') {
        Some(i) => &raw_line[..i],
        None => raw_line,
    };
    if line.trim().is_empty() {
        return Ok(None);
    }
    let syntax = |column: usize, message: &str| ParseError::Syntax {
        line: line_no,
        column,
        message: message.to_string(),
    };

    let arrow = line
        .find("->")
        .ok_or_else(|| syntax(1, "expected `->` after left-hand side"))?;
    let lhs_tokens: Vec<&str> = line[..arrow].split_whitespace().collect();
    let lhs = match lhs_tokens.as_slice() {
        [lhs] => *lhs,
        [] => return Err(syntax(arrow + 1, "missing left-hand side")),
        [_, extra, ..] => {
            return Err(syntax(
                column_of(raw_line, extra),
                "left-hand side must be a single symbol",
            ))
        }
    };

    let body = &line[arrow + 2..];
    let open = body.rfind('[').ok_or_else(|| {
        syntax(
            line.trim_end().chars().count() + 1,
            "expected `[probability]`",
        )
    })?;
    let close = body[open..]
        .find(']')
        .map(|i| open + i)
        .ok_or_else(|| syntax(column_of(raw_line, &body[open..]), "unterminated `[`"))?;
    if let Some(trailing) = body[close + 1..].split_whitespace().next() {
        return Err(syntax(
            column_of(raw_line, trailing),
            "unexpected text after probability",
        ));
    }
    let prob_text = body[open + 1..close].trim();
    let prob_col = column_of(raw_line, &body[open + 1..close]);
    let prob: f64 = prob_text
        .parse()
        .map_err(|_| syntax(prob_col, &format!("invalid probability `{prob_text}`")))?;
    if !(0.0..=1.0).contains(&prob) || prob.is_nan() {
        return Err(ParseError::Probability {
            line: line_no,
            column: prob_col,
            value: prob_text.to_string(),
        });
    }

    let rhs: Vec<(&str, usize)> = body[..open]
        .split_whitespace()
        .map(|tok| (tok, column_of(raw_line, tok)))
        .collect();
    if let Some((tok, column)) = std::iter::once((lhs, column_of(raw_line, lhs)))
        .chain(rhs.iter().copied())
        .find(|(tok, _)| RESERVED_TOKENS.contains(tok))
    {
        return Err(ParseError::Reserved {
            line: line_no,
            column,
            token: tok.to_string(),
        });
    }

    Ok(Some(RawRule { lhs, rhs, prob }))
}

/// Parses grammar text. Zero-probability rules are dropped; their symbols
/// still count toward nonterminal/terminal classification.
pub fn parse_grammar(text: &str) -> Result<Grammar, ParseError> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rule) = parse_line(i + 1, line)? {
            raw.push(rule);
        }
    }
    if raw.is_empty() {
        return Err(ParseError::Empty);
    }

    let mut symbols = SymbolTable::default();
    for r in &raw {
        symbols.add_nonterminal(r.lhs);
    }
    for r in &raw {
        for (tok, _) in &r.rhs {
            if symbols.nonterminal(tok).is_none() {
                symbols.add_terminal(tok);
            }
        }
    }

    let start = symbols.nonterminal(raw[0].lhs).expect("first lhs interned");
    let rules = raw
        .iter()
        .filter(|r| r.prob > 0.0)
        .map(|r| Rule {
            lhs: symbols.nonterminal(r.lhs).unwrap(),
            rhs: r
                .rhs
                .iter()
                .map(|(tok, _)| match symbols.nonterminal(tok) {
                    Some(n) => Symbol::N(n),
                    None => Symbol::T(symbols.terminal(tok).unwrap()),
                })
                .collect(),
            prob: r.prob,
        })
        .collect();

    Ok(Grammar {
        symbols,
        rules,
        start,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// Rule probabilities of a nonterminal do not sum to 1.
    ProbabilitySum { nonterminal: String, sum: f64 },
    /// A rule with an empty right-hand side.
    Epsilon { nonterminal: String, rule: String },
    /// A nonterminal reachable from the start symbol has no rules left.
    NoRules { nonterminal: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ProbabilitySum { nonterminal, sum } => {
                write!(f, "rules for {nonterminal} sum to {sum}, expected 1")
            }
            Diagnostic::Epsilon { nonterminal, rule } => {
                write!(f, "epsilon rule for {nonterminal}: {rule}")
            }
            Diagnostic::NoRules { nonterminal } => {
                write!(f, "nonterminal {nonterminal} is reachable but has no rules")
            }
        }
    }
}

/// Checks probability sums, epsilon rules and rule-less reachable
/// nonterminals. An empty result means the grammar is well-formed.
pub fn validate(g: &Grammar) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let names = g.symbols();
    let sums = g.lhs_sums();
    let mut has_rules = vec![false; g.num_nonterminals()];
    for r in g.rules() {
        has_rules[r.lhs.0] = true;
    }

    for r in g.rules() {
        if r.rhs.is_empty() {
            out.push(Diagnostic::Epsilon {
                nonterminal: names.nonterminal_name(r.lhs).to_string(),
                rule: g.rule_string(r),
            });
        }
    }
    for (i, &sum) in sums.iter().enumerate() {
        if has_rules[i] && (sum - 1.0).abs() > SUM_TOLERANCE {
            out.push(Diagnostic::ProbabilitySum {
                nonterminal: names.nonterminal_name(NonTerminal(i)).to_string(),
                sum,
            });
        }
    }

    let mut reachable = vec![false; g.num_nonterminals()];
    let mut stack = vec![g.start()];
    reachable[g.start().0] = true;
    while let Some(x) = stack.pop() {
        for r in g.rules().iter().filter(|r| r.lhs == x) {
            for s in &r.rhs {
                if let Symbol::N(y) = *s {
                    if !reachable[y.0] {
                        reachable[y.0] = true;
                        stack.push(y);
                    }
                }
            }
        }
    }
    for i in 0..g.num_nonterminals() {
        if reachable[i] && !has_rules[i] {
            out.push(Diagnostic::NoRules {
                nonterminal: names.nonterminal_name(NonTerminal(i)).to_string(),
            });
        }
    }
    out
}
