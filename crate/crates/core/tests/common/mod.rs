//! Shared fixtures and independent oracles for the integration tests.
//!
//! The oracles work on the original grammar (before any normal-form
//! transform) and never call into the library's numeric code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scfg_ngram::grammar::{parse_grammar, Grammar, Symbol};

pub const TOY: &str = include_str!("../fixtures/toy.scfg");

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Grammars used by the sweeps: two finite languages and two recursive ones.
pub fn fixture_set() -> Vec<(&'static str, Grammar)> {
    ["toy.scfg", "branching.scfg", "flights.scfg", "nested.scfg"]
        .into_iter()
        .map(|name| (name, parse_grammar(&fixture_text(name)).unwrap()))
        .collect()
}

pub fn branching_text(p: f64) -> String {
    format!("S -> x [{p}]\nS -> S S [{}]\n", 1.0 - p)
}

pub fn branching(p: f64) -> Grammar {
    parse_grammar(&branching_text(p)).unwrap()
}

/// Sentence distribution by exhaustive leftmost expansion. Partial
/// derivations below `min_prob` are abandoned; returns the distribution and
/// the abandoned mass.
pub fn enumerate_sentences(g: &Grammar, min_prob: f64) -> (BTreeMap<Vec<String>, f64>, f64) {
    let mut by_lhs: Vec<Vec<(&[Symbol], f64)>> = vec![Vec::new(); g.num_nonterminals()];
    for r in g.rules() {
        by_lhs[r.lhs.0].push((&r.rhs, r.prob));
    }
    let names = g.symbols();
    let mut out: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    let mut lost = 0.0;
    // (words so far, pending symbols as a stack, probability)
    let mut work = vec![(Vec::<String>::new(), vec![Symbol::N(g.start())], 1.0)];
    while let Some((mut words, mut pending, p)) = work.pop() {
        assert!(pending.len() < 10_000, "runaway derivation");
        loop {
            match pending.pop() {
                None => {
                    *out.entry(words).or_default() += p;
                    break;
                }
                Some(Symbol::T(t)) => words.push(names.terminal_name(t).to_string()),
                Some(Symbol::N(x)) => {
                    for &(rhs, rp) in &by_lhs[x.0] {
                        let q = p * rp;
                        if q < min_prob {
                            lost += q;
                            continue;
                        }
                        let mut next = pending.clone();
                        next.extend(rhs.iter().rev().copied());
                        work.push((words.clone(), next, q));
                    }
                    break;
                }
            }
        }
    }
    (out, lost)
}

pub fn padded(sentence: &[String]) -> Vec<String> {
    let mut out = vec!["<s>".to_string()];
    out.extend(sentence.iter().cloned());
    out.push("</s>".to_string());
    out
}

/// Expected count of every padded n-gram of order `1..=order`, excluding
/// windows that end in `<s>`.
pub fn expected_ngram_counts(
    sentences: &BTreeMap<Vec<String>, f64>,
    order: usize,
) -> BTreeMap<Vec<String>, f64> {
    let mut out: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for (s, &p) in sentences {
        let tokens = padded(s);
        for k in 1..=order {
            for w in tokens.windows(k) {
                if w[k - 1] != "<s>" {
                    *out.entry(w.to_vec()).or_default() += p;
                }
            }
        }
    }
    out
}

/// Conditional probabilities keyed by (context, event), for every level.
pub fn oracle_conditionals(
    sentences: &BTreeMap<Vec<String>, f64>,
    order: usize,
) -> BTreeMap<(Vec<String>, String), f64> {
    let counts = expected_ngram_counts(sentences, order);
    let mut totals: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for (ng, c) in &counts {
        *totals.entry(ng[..ng.len() - 1].to_vec()).or_default() += c;
    }
    counts
        .iter()
        .map(|(ng, c)| {
            let (event, ctx) = ng.split_last().unwrap();
            ((ctx.to_vec(), event.clone()), c / totals[ctx])
        })
        .collect()
}

/// Expected occurrences of `w` as a substring of a sentence.
pub fn substring_expectation(sentences: &BTreeMap<Vec<String>, f64>, w: &[&str]) -> f64 {
    sentences
        .iter()
        .map(|(s, p)| {
            let hits = s
                .windows(w.len())
                .filter(|win| win.iter().zip(w).all(|(a, b)| a == b))
                .count();
            p * hits as f64
        })
        .sum()
}

/// All word sequences of length `1..=max_len` over `vocab`.
pub fn all_strings(vocab: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for v in vocab {
                let mut t = s.clone();
                t.push(v.clone());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn terminals(g: &Grammar) -> Vec<String> {
    g.symbols().terminals().to_vec()
}

/// Random sparse grammar already in CNF: every nonterminal has 1 to 5
/// binary rules carrying at most 0.4 of its mass (so each nonterminal
/// expects at most 0.8 children and the grammar is consistent) and 1 to 5
/// lexical rules carrying the rest. Every terminal is reachable.
pub fn random_sparse_grammar(nonterminals: usize, terminals: usize, seed: u64) -> Grammar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    let mut lexical: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nonterminals];
    for t in 0..terminals {
        lexical[t % nonterminals].insert(t);
    }
    for (x, words) in lexical.iter_mut().enumerate() {
        let binary_mass: f64 = rng.gen_range(0.05..0.4);
        let k = rng.gen_range(1..=5);
        let mut pairs = BTreeSet::new();
        while pairs.len() < k {
            pairs.insert((
                rng.gen_range(0..nonterminals),
                rng.gen_range(0..nonterminals),
            ));
        }
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        for ((l, r), w) in pairs.iter().zip(&weights) {
            text.push_str(&format!("N{x} -> N{l} N{r} [{}]\n", binary_mass * w / sum));
        }

        let extra = rng.gen_range(1..=5usize).saturating_sub(words.len());
        words.extend(sample(&mut rng, terminals, extra.min(terminals)).iter());
        let weights: Vec<f64> = (0..words.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        for (t, w) in words.iter().zip(&weights) {
            text.push_str(&format!(
                "N{x} -> t{t} [{}]\n",
                (1.0 - binary_mass) * w / sum
            ));
        }
    }
    parse_grammar(&text).unwrap()
}

/// Path to the compiled command-line binary.
pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_scfg-ngram")
}
