//! Corpus n-gram counts and count merging.
//!
//! Merging treats the grammar as a pseudo-corpus: every expected count is
//! scaled by a pseudo mass `M` and added to the observed count before the
//! conditionals are renormalized.

use std::collections::{BTreeMap, BTreeSet};

use super::{Distribution, Event, Level, NGramError, NGramTable, Token};

/// Observed n-gram counts of any order, boundary markers included.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusCounts {
    counts: BTreeMap<Vec<Token>, f64>,
}

fn check_ngram(ngram: &[Token]) -> Result<(), String> {
    let Some((event, context)) = ngram.split_last() else {
        return Err("empty n-gram".into());
    };
    if *event == Token::Bos {
        return Err("<s> cannot be predicted".into());
    }
    for (i, tok) in context.iter().enumerate() {
        match tok {
            Token::Eos => return Err("</s> can only end an n-gram".into()),
            Token::Bos if i > 0 => return Err("<s> can only start an n-gram".into()),
            _ => {}
        }
    }
    Ok(())
}

impl CorpusCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, ngram: Vec<Token>, count: f64) {
        *self.counts.entry(ngram).or_default() += count;
    }

    /// Counts every n-gram of order `1..=order` in the padded sentences.
    /// `<s>` is never counted as a unigram event.
    pub fn from_sentences<S: AsRef<str>>(sentences: &[Vec<S>], order: usize) -> Self {
        let mut out = CorpusCounts::new();
        for sentence in sentences {
            let padded: Vec<Token> = std::iter::once(Token::Bos)
                .chain(sentence.iter().map(|w| Token::word(w.as_ref())))
                .chain(std::iter::once(Token::Eos))
                .collect();
            for k in 1..=order {
                for window in padded.windows(k) {
                    if window.last() == Some(&Token::Bos) {
                        continue;
                    }
                    out.add(window.to_vec(), 1.0);
                }
            }
        }
        out
    }

    pub fn get(&self, ngram: &[Token]) -> f64 {
        self.counts.get(ngram).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Token>, &f64)> {
        self.counts.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_order(&self) -> usize {
        self.counts.keys().map(Vec::len).max().unwrap_or(0)
    }

    fn words(&self) -> BTreeSet<String> {
        self.counts
            .keys()
            .flatten()
            .filter_map(|t| match t {
                Token::Word(w) => Some(w.clone()),
                _ => None,
            })
            .collect()
    }

    /// Event counts grouped by context for orders `1..=order`.
    fn grouped(&self, order: usize) -> Vec<BTreeMap<Vec<Token>, BTreeMap<Token, f64>>> {
        let mut levels = vec![BTreeMap::new(); order];
        for (ngram, &count) in &self.counts {
            if ngram.len() > order {
                continue;
            }
            let (event, ctx) = ngram.split_last().unwrap();
            let level: &mut BTreeMap<Vec<Token>, BTreeMap<Token, f64>> =
                &mut levels[ngram.len() - 1];
            *level
                .entry(ctx.to_vec())
                .or_default()
                .entry(event.clone())
                .or_default() += count;
        }
        levels
    }

    /// Maximum-likelihood conditional table of the corpus.
    pub fn mle_table(&self, order: usize) -> NGramTable {
        NGramTable::from_event_counts(order, self.words(), self.grouped(order)).0
    }
}

/// Parses `count<TAB>w1 w2 ... wn` lines. Blank lines and `#` comments are
/// skipped.
pub fn parse_counts(text: &str) -> Result<CorpusCounts, NGramError> {
    let mut out = CorpusCounts::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| NGramError::Counts {
            line: i + 1,
            message,
        };
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (count, ngram) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `count<TAB>words`".into()))?;
        let count: f64 = count
            .trim()
            .parse()
            .map_err(|_| err(format!("invalid count `{}`", count.trim())))?;
        if !count.is_finite() || count < 0.0 {
            return Err(err(format!(
                "count {count} must be finite and non-negative"
            )));
        }
        let ngram = super::tokens(ngram);
        check_ngram(&ngram).map_err(err)?;
        out.add(ngram, count);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CountMergeSpec {
    /// Scale applied to grammar-derived expected counts.
    pub pseudo_mass: f64,
    pub corpus: CorpusCounts,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub table: NGramTable,
    /// Contexts left with no mass after merging.
    pub dropped: Vec<Vec<Token>>,
}

/// Merges grammar expectations with corpus counts:
/// `count = M * c(ngram | S) + corpus(ngram)`, renormalized per context.
///
/// A context without corpus events keeps the grammar's conditionals, since
/// scaling every count by `M` leaves the ratios unchanged.
pub fn merge_counts(table: &NGramTable, spec: &CountMergeSpec) -> Result<MergeOutcome, NGramError> {
    let m = spec.pseudo_mass;
    if !m.is_finite() || m < 0.0 {
        return Err(NGramError::PseudoMass(m));
    }
    let order = table.order();
    let corpus = spec.corpus.grouped(order);
    let mut vocab = table.vocab().clone();
    vocab.extend(spec.corpus.words());

    let mut dropped = Vec::new();
    let mut levels = Vec::with_capacity(order);
    for (k, corpus_level) in corpus.iter().enumerate() {
        let scfg_level = table.level(k + 1);
        let contexts: BTreeSet<&Vec<Token>> =
            scfg_level.keys().chain(corpus_level.keys()).collect();
        let mut level = Level::new();
        for ctx in contexts {
            let scfg = scfg_level.get(ctx);
            let merged = match corpus_level.get(ctx) {
                None => scfg.filter(|_| m > 0.0).map(|d| Distribution {
                    total: m * d.total,
                    events: d
                        .events
                        .iter()
                        .map(|(tok, e)| {
                            (
                                tok.clone(),
                                Event {
                                    count: m * e.count,
                                    prob: e.prob,
                                },
                            )
                        })
                        .collect(),
                }),
                Some(observed) => {
                    let mut counts: BTreeMap<Token, f64> = BTreeMap::new();
                    if let Some(d) = scfg {
                        for (tok, e) in &d.events {
                            counts.insert(tok.clone(), m * e.count);
                        }
                    }
                    for (tok, c) in observed {
                        *counts.entry(tok.clone()).or_default() += c;
                    }
                    let events: Vec<(Token, f64)> =
                        counts.into_iter().filter(|(_, c)| *c > 0.0).collect();
                    let total: f64 = events.iter().map(|(_, c)| c).sum();
                    (total > 0.0).then(|| Distribution::from_counts(total, events))
                }
            };
            match merged {
                Some(d) => {
                    level.insert(ctx.clone(), d);
                }
                None => {
                    log::warn!(
                        "dropping context `{}`: no mass after merging",
                        ctx.iter().map(Token::as_str).collect::<Vec<_>>().join(" ")
                    );
                    dropped.push(ctx.clone());
                }
            }
        }
        levels.push(level);
    }

    Ok(MergeOutcome {
        table: NGramTable::new(order, vocab, levels),
        dropped,
    })
}
