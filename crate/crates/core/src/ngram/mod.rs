//! Conditional n-gram tables built from substring expectations.
//!
//! `P(w_n | w_1 .. w_{n-1}) = c(w_1 .. w_n | S) / c(w_1 .. w_{n-1} | S)`.
//!
//! Sentence boundaries are handled without touching the grammar: the
//! expected count of `<s> u` is the prefix probability `P(S =>*_L u)`, of
//! `u </s>` the suffix probability `P(S =>*_R u)`, and of `<s> u </s>` the
//! inside probability of `u`.

mod arpa;
mod counts;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::expectation::ExpectationEngine;
use crate::grammar::Terminal;

pub use arpa::{export_arpa, read_arpa, ArpaEntry, ArpaModel};
pub use counts::{merge_counts, parse_counts, CorpusCounts, CountMergeSpec, MergeOutcome};

/// Expected counts at or below this are treated as zero.
pub const DEFAULT_PRUNE: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("n-gram order must be at least 1, got {0}")]
    Order(usize),
    #[error("pseudo mass must be finite and non-negative, got {0}")]
    PseudoMass(f64),
    #[error("count file line {line}: {message}")]
    Counts { line: usize, message: String },
    #[error("ARPA line {line}: {message}")]
    Arpa { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Bos,
    Eos,
    Word(String),
}

impl Token {
    pub fn as_str(&self) -> &str {
        match self {
            Token::Bos => "<s>",
            Token::Eos => "</s>",
            Token::Word(w) => w,
        }
    }

    pub fn parse(text: &str) -> Token {
        match text {
            "<s>" => Token::Bos,
            "</s>" => Token::Eos,
            w => Token::Word(w.to_string()),
        }
    }

    pub fn word(w: &str) -> Token {
        Token::Word(w.to_string())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses whitespace-separated tokens, recognizing the boundary markers.
pub fn tokens(text: &str) -> Vec<Token> {
    text.split_whitespace().map(Token::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Expected (or merged) count of context followed by this event.
    pub count: f64,
    pub prob: f64,
}

/// Next-event distribution of one context.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    /// Count of the context itself; the denominator of every `prob`.
    pub total: f64,
    pub events: BTreeMap<Token, Event>,
}

impl Distribution {
    fn from_counts(total: f64, counts: impl IntoIterator<Item = (Token, f64)>) -> Self {
        let events = counts
            .into_iter()
            .map(|(tok, count)| {
                (
                    tok,
                    Event {
                        count,
                        prob: count / total,
                    },
                )
            })
            .collect();
        Distribution { total, events }
    }

    pub fn prob_sum(&self) -> f64 {
        self.events.values().map(|e| e.prob).sum()
    }
}

pub type Level = BTreeMap<Vec<Token>, Distribution>;

/// Conditional probabilities for every order `1..=order`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramTable {
    order: usize,
    vocab: BTreeSet<String>,
    levels: Vec<Level>,
}

impl NGramTable {
    pub fn new(order: usize, vocab: BTreeSet<String>, levels: Vec<Level>) -> Self {
        assert_eq!(levels.len(), order);
        NGramTable {
            order,
            vocab,
            levels,
        }
    }

    /// Maximum-likelihood table from raw event counts; contexts whose events
    /// all have zero count are dropped and returned separately.
    pub fn from_event_counts(
        order: usize,
        vocab: BTreeSet<String>,
        counts: Vec<BTreeMap<Vec<Token>, BTreeMap<Token, f64>>>,
    ) -> (Self, Vec<Vec<Token>>) {
        let mut dropped = Vec::new();
        let levels = counts
            .into_iter()
            .map(|level| {
                let mut out = Level::new();
                for (ctx, events) in level {
                    let events: Vec<(Token, f64)> =
                        events.into_iter().filter(|(_, c)| *c > 0.0).collect();
                    let total: f64 = events.iter().map(|(_, c)| c).sum();
                    if total > 0.0 {
                        out.insert(ctx, Distribution::from_counts(total, events));
                    } else {
                        dropped.push(ctx);
                    }
                }
                out
            })
            .collect();
        (NGramTable::new(order, vocab, levels), dropped)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    /// Distributions for `k`-grams (contexts of length `k - 1`).
    pub fn level(&self, k: usize) -> &Level {
        &self.levels[k - 1]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn distribution(&self, context: &[Token]) -> Option<&Distribution> {
        self.levels.get(context.len())?.get(context)
    }

    /// `P(event | context)`; 0 for known contexts without the event, `None`
    /// for unknown contexts.
    pub fn prob(&self, context: &[Token], event: &Token) -> Option<f64> {
        self.distribution(context)
            .map(|d| d.events.get(event).map_or(0.0, |e| e.prob))
    }

    /// Number of stored entries per order.
    pub fn entry_counts(&self) -> Vec<usize> {
        self.levels
            .iter()
            .map(|l| l.values().map(|d| d.events.len()).sum())
            .collect()
    }
}

/// A context being extended at one level of the table build.
#[derive(Debug, Clone)]
enum Context {
    /// A word string `u` with `c(u | S)`.
    Words(Vec<Terminal>, f64),
    /// `<s> u` with `P(S =>*_L u)` (1 for the empty `u`).
    Start(Vec<Terminal>, f64),
}

struct Extended {
    key: Vec<Token>,
    dist: Distribution,
    next: Vec<Context>,
}

/// Builds the conditional table of every order up to `order`.
///
/// Candidate n-grams extend each surviving (n-1)-gram by the full
/// vocabulary; contexts at one level are independent and solved in parallel.
pub fn build_table(
    engine: &ExpectationEngine,
    order: usize,
    prune: f64,
) -> Result<NGramTable, NGramError> {
    if order < 1 {
        return Err(NGramError::Order(order));
    }
    let g = engine.grammar();
    let start = g.start().0;
    let names = g.symbols();
    let word_token = |t: Terminal| Token::Word(names.terminal_name(t).to_string());
    let vocab: BTreeSet<String> = names.terminals().iter().cloned().collect();
    let words: Vec<Terminal> = (0..g.num_terminals()).map(Terminal).collect();

    // Unigrams: one end marker per sentence.
    let unigram: Vec<(Terminal, f64)> = words
        .par_iter()
        .map(|&w| (w, engine.expectation(&[w]).values[start]))
        .collect();
    let mut events: Vec<(Token, f64)> = unigram
        .iter()
        .filter(|(_, c)| *c > prune)
        .map(|&(w, c)| (word_token(w), c))
        .collect();
    events.push((Token::Eos, 1.0));
    let total: f64 = events.iter().map(|(_, c)| c).sum();
    let mut levels = vec![Level::from([(
        Vec::new(),
        Distribution::from_counts(total, events),
    )])];

    let mut frontier: Vec<Context> = unigram
        .into_iter()
        .filter(|(_, c)| *c > prune)
        .map(|(w, c)| Context::Words(vec![w], c))
        .collect();
    frontier.push(Context::Start(Vec::new(), 1.0));

    for _k in 2..=order {
        let extended: Vec<Extended> = frontier
            .par_iter()
            .map(|ctx| extend(engine, ctx, &words, prune, &word_token))
            .collect();
        let mut level = Level::new();
        let mut next = Vec::new();
        for e in extended {
            if !e.dist.events.is_empty() {
                level.insert(e.key, e.dist);
            }
            next.extend(e.next);
        }
        levels.push(level);
        frontier = next;
    }

    Ok(NGramTable::new(order, vocab, levels))
}

fn extend(
    engine: &ExpectationEngine,
    ctx: &Context,
    words: &[Terminal],
    prune: f64,
    word_token: &(dyn Fn(Terminal) -> Token + Sync),
) -> Extended {
    let g = engine.grammar();
    let start = g.start().0;
    let sp = engine.substrings();
    let mut events = Vec::new();
    let mut next = Vec::new();
    let (key, total) = match ctx {
        Context::Words(u, total) => {
            let mut uv = u.clone();
            uv.push(Terminal(0));
            for &v in words {
                *uv.last_mut().unwrap() = v;
                let c = engine.expectation(&uv).values[start];
                if c > prune {
                    events.push((word_token(v), c));
                    next.push(Context::Words(uv.clone(), c));
                }
            }
            let end = sp.suffix(u)[start];
            if end > prune {
                events.push((Token::Eos, end));
            }
            (u.iter().map(|&t| word_token(t)).collect::<Vec<_>>(), *total)
        }
        Context::Start(u, total) => {
            let mut uv = u.clone();
            uv.push(Terminal(0));
            for &v in words {
                *uv.last_mut().unwrap() = v;
                let c = sp.prefix(&uv)[start];
                if c > prune {
                    events.push((word_token(v), c));
                    next.push(Context::Start(uv.clone(), c));
                }
            }
            if !u.is_empty() {
                let end = g.inside_chart(u).get(0, u.len())[start];
                if end > prune {
                    events.push((Token::Eos, end));
                }
            }
            let key = std::iter::once(Token::Bos)
                .chain(u.iter().map(|&t| word_token(t)))
                .collect();
            (key, *total)
        }
    };
    events.sort_by(|a, b| a.0.cmp(&b.0));
    Extended {
        key,
        dist: Distribution::from_counts(total, events),
        next,
    }
}
