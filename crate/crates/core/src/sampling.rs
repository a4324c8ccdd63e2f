//! Monte Carlo sentence sampling and empirical n-gram estimates.
//!
//! Used as an independent check on the exact computation: sample sentences
//! by leftmost stochastic derivation, count n-grams with the same
//! conventions (boundary markers, overlapping occurrences), and compare.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cnf::CnfGrammar;
use crate::grammar::{NonTerminal, Terminal};
use crate::ngram::{CorpusCounts, Token};

pub const DEFAULT_MAX_EXPANSIONS: usize = 10_000;

/// Sentences drawn per RNG stream. Fixed so that the seed alone determines
/// the batch, independent of thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy)]
enum Expansion {
    Binary(NonTerminal, NonTerminal),
    Word(Terminal),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleOutcome {
    Sentence(Vec<Terminal>),
    /// The derivation exceeded the expansion budget (or hit a nonterminal
    /// without rules) and was abandoned.
    Truncated,
}

/// Per-nonterminal cumulative rule tables for drawing expansions.
#[derive(Debug, Clone)]
pub struct Sampler {
    start: NonTerminal,
    choices: Vec<Vec<(f64, Expansion)>>,
}

impl Sampler {
    pub fn new(g: &CnfGrammar) -> Self {
        let mut choices = vec![Vec::new(); g.num_nonterminals()];
        let mut push = |lhs: NonTerminal, p: f64, e: Expansion| {
            let list: &mut Vec<(f64, Expansion)> = &mut choices[lhs.0];
            let acc = list.last().map_or(0.0, |(c, _)| *c) + p;
            list.push((acc, e));
        };
        for r in g.binary_rules() {
            push(r.lhs, r.prob, Expansion::Binary(r.left, r.right));
        }
        for r in g.lexical_rules() {
            push(r.lhs, r.prob, Expansion::Word(r.word));
        }
        Sampler {
            start: g.start(),
            choices,
        }
    }

    fn choose<R: Rng>(&self, x: NonTerminal, rng: &mut R) -> Option<Expansion> {
        let list = &self.choices[x.0];
        let total = list.last()?.0;
        let u = rng.gen::<f64>() * total;
        let idx = list.partition_point(|(c, _)| *c <= u).min(list.len() - 1);
        Some(list[idx].1)
    }

    /// One leftmost derivation from the start symbol.
    pub fn sample<R: Rng>(&self, rng: &mut R, max_expansions: usize) -> SampleOutcome {
        let mut stack = vec![self.start];
        let mut words = Vec::new();
        let mut expansions = 0;
        while let Some(x) = stack.pop() {
            expansions += 1;
            if expansions > max_expansions {
                return SampleOutcome::Truncated;
            }
            match self.choose(x, rng) {
                Some(Expansion::Word(w)) => words.push(w),
                Some(Expansion::Binary(l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => return SampleOutcome::Truncated,
            }
        }
        SampleOutcome::Sentence(words)
    }
}

pub fn sample_sentence<R: Rng>(
    g: &CnfGrammar,
    rng: &mut R,
    max_expansions: usize,
) -> SampleOutcome {
    Sampler::new(g).sample(rng, max_expansions)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    pub sentences: Vec<Vec<String>>,
    pub truncated_count: usize,
    pub seed: u64,
    pub requested: usize,
}

impl SampleBatch {
    pub fn truncation_rate(&self) -> f64 {
        self.truncated_count as f64 / self.requested as f64
    }

    pub fn mean_length(&self) -> f64 {
        let total: usize = self.sentences.iter().map(Vec::len).sum();
        total as f64 / self.sentences.len() as f64
    }

    /// Standard error of [`mean_length`](Self::mean_length).
    pub fn mean_length_std_error(&self) -> f64 {
        let n = self.sentences.len() as f64;
        let mean = self.mean_length();
        let var = self
            .sentences
            .iter()
            .map(|s| (s.len() as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }

    /// One sentence per line, words separated by spaces.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Draws `count` sentences. Stream `i` of the seeded generator produces the
/// `i`-th chunk, so the result depends only on `seed`.
pub fn sample_batch(g: &CnfGrammar, count: usize, seed: u64, max_expansions: usize) -> SampleBatch {
    let sampler = Sampler::new(g);
    let names = g.symbols();
    let chunks: Vec<(Vec<Vec<String>>, usize)> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let n = CHUNK.min(count - chunk * CHUNK);
            let mut sentences = Vec::with_capacity(n);
            let mut truncated = 0;
            for _ in 0..n {
                match sampler.sample(&mut rng, max_expansions) {
                    SampleOutcome::Sentence(ws) => sentences.push(
                        ws.into_iter()
                            .map(|w| names.terminal_name(w).to_string())
                            .collect(),
                    ),
                    SampleOutcome::Truncated => truncated += 1,
                }
            }
            (sentences, truncated)
        })
        .collect();

    let mut batch = SampleBatch {
        sentences: Vec::with_capacity(count),
        truncated_count: 0,
        seed,
        requested: count,
    };
    for (sentences, truncated) in chunks {
        batch.sentences.extend(sentences);
        batch.truncated_count += truncated;
    }
    batch
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalNGram {
    pub count: f64,
    /// Occurrences of the context followed by any event.
    pub context_count: f64,
    pub rel_freq: f64,
    /// Binomial standard error of `rel_freq`.
    pub std_error: f64,
}

/// Empirical conditional frequencies of every `order`-gram in the batch.
pub fn empirical_ngrams(batch: &SampleBatch, order: usize) -> BTreeMap<Vec<Token>, EmpiricalNGram> {
    let counts = CorpusCounts::from_sentences(&batch.sentences, order);
    let mut context_totals: BTreeMap<&[Token], f64> = BTreeMap::new();
    for (ngram, &c) in counts.iter().filter(|(ng, _)| ng.len() == order) {
        *context_totals.entry(&ngram[..order - 1]).or_default() += c;
    }
    counts
        .iter()
        .filter(|(ng, _)| ng.len() == order)
        .map(|(ngram, &count)| {
            let context_count = context_totals[&ngram[..order - 1]];
            let p = count / context_count;
            (
                ngram.clone(),
                EmpiricalNGram {
                    count,
                    context_count,
                    rel_freq: p,
                    std_error: (p * (1.0 - p) / context_count).sqrt(),
                },
            )
        })
        .collect()
}
