//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use scfg_ngram::consistency::{check_consistency, Verdict, DEFAULT_MARGIN};
use scfg_ngram::expectation::ExpectationEngine;
use scfg_ngram::grammar::Terminal;
use scfg_ngram::ngram::{
    build_table, merge_counts, parse_counts, CorpusCounts, CountMergeSpec, NGramTable, Token,
    DEFAULT_PRUNE,
};
use scfg_ngram::sampling::{empirical_ngrams, sample_batch, DEFAULT_MAX_EXPANSIONS};
use scfg_ngram::{parse_grammar, to_cnf, Grammar};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // Bound first so a NaN comparison reads as a plain failure.
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn table(g: &Grammar, order: usize) -> NGramTable {
    let cnf = to_cnf(g).unwrap();
    let engine = ExpectationEngine::new(&cnf).unwrap();
    build_table(&engine, order, DEFAULT_PRUNE).unwrap()
}

fn closed_form() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for p in [0.55, 0.6, 0.75, 0.9] {
        let cnf = to_cnf(&branching(p)).map_err(|e| e.to_string())?;
        let engine = ExpectationEngine::new(&cnf).map_err(|e| e.to_string())?;
        let err = (engine.expectation_of_words(&["x"]) - p / (2.0 * p - 1.0)).abs();
        ensure!(err < 1e-9, "p={p}: error {err:e}");
        worst = worst.max(err);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("max error {worst:.1e}, {elapsed:.1?}"))
}

fn consistency_verdicts() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    for (p, want, exit) in [
        (0.4, Verdict::Inconsistent, 3),
        (0.5, Verdict::Inconsistent, 3),
        (0.51, Verdict::Consistent, 0),
        (0.75, Verdict::Consistent, 0),
    ] {
        let cnf = to_cnf(&branching(p)).unwrap();
        let report = check_consistency(&cnf, DEFAULT_MARGIN).map_err(|e| e.to_string())?;
        ensure!(report.verdict == want, "p={p}: {:?}", report.verdict);
        let path = dir.path().join(format!("{p}.scfg"));
        std::fs::write(&path, branching_text(p)).unwrap();
        let code = check_exit(path.to_str().unwrap());
        ensure!(code == exit, "p={p}: exit {code}");
    }
    let toy = check_exit(fixture("toy.scfg").to_str().unwrap());
    ensure!(toy == 0, "toy grammar: exit {toy}");
    let bad = check_exit(fixture("malformed.scfg").to_str().unwrap());
    ensure!(bad == 2, "malformed grammar: exit {bad}");
    Ok("0.4, 0.5 inconsistent; 0.51, 0.75 consistent; exits 3/3/0/0, toy 0, malformed 2".into())
}

fn check_exit(path: &str) -> i32 {
    Command::new(binary())
        .args(["check", "--grammar", path])
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn enumeration(order: usize) -> Outcome {
    let g = parse_grammar(TOY).unwrap();
    let (sentences, _) = enumerate_sentences(&g, 0.0);
    ensure!(sentences.len() == 24, "{} sentences", sentences.len());
    let oracle = oracle_conditionals(&sentences, order);
    let t = table(&g, order);
    let mut worst: f64 = 0.0;
    for ((ctx, event), want) in &oracle {
        let ctx_tokens: Vec<Token> = ctx.iter().map(|w| Token::parse(w)).collect();
        let got = t
            .prob(&ctx_tokens, &Token::parse(event))
            .ok_or_else(|| format!("missing context {ctx:?}"))?;
        worst = worst.max((got - want).abs());
    }
    let mut extra = 0;
    for level in t.levels() {
        for (ctx, d) in level {
            let ctx: Vec<String> = ctx.iter().map(|t| t.as_str().to_string()).collect();
            for (tok, e) in &d.events {
                if !oracle.contains_key(&(ctx.clone(), tok.as_str().to_string())) && e.prob >= 1e-9
                {
                    extra += 1;
                }
            }
        }
    }
    ensure!(worst < 1e-9, "max deviation {worst:e}");
    ensure!(extra == 0, "{extra} entries absent from the oracle");
    Ok(format!(
        "{} conditionals, max deviation {worst:.1e}",
        oracle.len()
    ))
}

fn normalization() -> Outcome {
    let mut contexts = 0;
    let mut worst: f64 = 0.0;
    for (name, g) in fixture_set() {
        for order in 1..=3 {
            for level in table(&g, order).levels() {
                for (ctx, d) in level {
                    let err = (d.prob_sum() - 1.0).abs();
                    ensure!(
                        err < 1e-9,
                        "{name} order {order} context {ctx:?}: off by {err:e}"
                    );
                    worst = worst.max(err);
                    contexts += 1;
                }
            }
        }
    }
    Ok(format!(
        "{contexts} contexts over {} fixtures, max error {worst:.1e}",
        fixture_set().len()
    ))
}

fn cnf_fidelity() -> Outcome {
    let g = parse_grammar(TOY).unwrap();
    let cnf = to_cnf(&g).map_err(|e| e.to_string())?;
    let (sentences, _) = enumerate_sentences(&g, 0.0);
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    for (s, p) in &sentences {
        let inside = cnf.sentence_inside(s);
        worst = worst.max((inside - p).abs());
        total += inside;
    }
    ensure!(worst < 1e-12, "max inside deviation {worst:e}");
    ensure!(
        (total - 1.0).abs() < 1e-12,
        "sentence probabilities sum to {total}"
    );
    Ok(format!(
        "{} sentences, max deviation {worst:.1e}, sum {total}",
        sentences.len()
    ))
}

fn monte_carlo() -> Outcome {
    const SAMPLES: usize = 200_000;
    let mut summary = Vec::new();
    for (name, g) in [
        ("toy", parse_grammar(TOY).unwrap()),
        ("branching p=0.75", branching(0.75)),
    ] {
        let cnf = to_cnf(&g).unwrap();
        let exact = table(&g, 2);
        let batch = sample_batch(&cnf, SAMPLES, 20_231, DEFAULT_MAX_EXPANSIONS);
        let rate = batch.truncation_rate();
        ensure!(rate < 1e-3, "{name}: truncation rate {rate}");
        let n = batch.sentences.len() as f64;
        let mut compared = 0;
        let mut worst = (0.0, String::new());
        for k in 1..=2 {
            let emp = empirical_ngrams(&batch, k);
            for (ctx, d) in exact.level(k) {
                for (tok, e) in &d.events {
                    if e.count * n < 100.0 {
                        continue;
                    }
                    compared += 1;
                    let mut key = ctx.clone();
                    key.push(tok.clone());
                    let label = key.iter().map(Token::as_str).collect::<Vec<_>>().join(" ");
                    let (p_hat, se) = emp
                        .get(&key)
                        .map_or((0.0, 0.0), |m| (m.rel_freq, m.std_error));
                    let diff = (e.prob - p_hat).abs();
                    ensure!(
                        diff <= 3.0 * se + 1e-9,
                        "{name}: P({label}) exact {} vs empirical {p_hat} (se {se:e})",
                        e.prob
                    );
                    let z = if se > 0.0 { diff / se } else { 0.0 };
                    if z > worst.0 {
                        worst = (z, label);
                    }
                }
            }
        }
        summary.push(format!(
            "{name}: {compared} conditionals, max {:.2} se ({}), truncation {rate}",
            worst.0, worst.1
        ));
    }
    Ok(summary.join("; "))
}

fn fit_exponent(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let cov: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    cov / var
}

fn shared_lu() -> Outcome {
    let g = random_sparse_grammar(200, 100, 8);
    let cnf = to_cnf(&g).unwrap();
    ensure!(
        cnf.num_nonterminals() == 200,
        "{} nonterminals",
        cnf.num_nonterminals()
    );
    let report = check_consistency(&cnf, DEFAULT_MARGIN).unwrap();
    ensure!(
        report.verdict == Verdict::Consistent,
        "random grammar {:?}",
        report.verdict
    );

    let started = Instant::now();
    let engine = ExpectationEngine::new(&cnf).map_err(|e| e.to_string())?;
    let mut solved = 0;
    for a in 0..cnf.num_terminals() {
        for b in 0..cnf.num_terminals() {
            let c = engine.expectation(&[Terminal(a), Terminal(b)]);
            ensure!(
                c.values.iter().all(|v| v.is_finite()),
                "non-finite expectation"
            );
            solved += 1;
        }
    }
    let elapsed = started.elapsed();
    let stats = engine.stats();
    ensure!(solved == 10_000, "{solved} bigrams");
    ensure!(
        stats.factorizations == 1,
        "{} factorizations",
        stats.factorizations
    );
    ensure!(
        elapsed < Duration::from_secs(60),
        "10,000 bigrams took {elapsed:?}"
    );

    // Per-solve time on precomputed right-hand sides, best of three rounds.
    let mut points = Vec::new();
    for n in [50, 100, 200] {
        let cnf = to_cnf(&random_sparse_grammar(n, 100, 8)).unwrap();
        let engine = ExpectationEngine::new(&cnf).unwrap();
        let rhs: Vec<_> = (0..2000)
            .map(|i| engine.rhs(&[Terminal(i % 100), Terminal((i * 7 + 3) % 100)]))
            .collect();
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            for b in &rhs {
                std::hint::black_box(engine.solve(b));
            }
            best = best.min(t.elapsed().as_secs_f64() / rhs.len() as f64);
        }
        points.push((n as f64, best));
    }
    let exponent = fit_exponent(&points);
    let timings = points
        .iter()
        .map(|(n, t)| format!("N={n}: {:.1} us", t * 1e6))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(
        exponent <= 2.0,
        "per-solve time exponent {exponent:.2} ({timings})"
    );
    Ok(format!(
        "1 factorization, 10,000 bigrams in {elapsed:.2?}; per-solve exponent {exponent:.2} ({timings})"
    ))
}

fn count_merging() -> Outcome {
    let t = table(&parse_grammar(TOY).unwrap(), 2);

    let corpus = CorpusCounts::from_sentences(
        &[
            vec!["book", "open"],
            vec!["the", "book", "close", "a", "book"],
        ],
        2,
    );
    let zero = merge_counts(
        &t,
        &CountMergeSpec {
            pseudo_mass: 0.0,
            corpus: corpus.clone(),
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        same_probs(&zero.table, &corpus.mle_table(2)),
        "M = 0 differs from corpus MLE"
    );

    let empty = merge_counts(
        &t,
        &CountMergeSpec {
            pseudo_mass: 10.0,
            corpus: CorpusCounts::new(),
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        same_probs(&empty.table, &t),
        "empty corpus differs from grammar table"
    );

    let spec = CountMergeSpec {
        pseudo_mass: 10.0,
        corpus: parse_counts(&fixture_text("toy_counts.txt")).unwrap(),
    };
    let merged = merge_counts(&t, &spec).map_err(|e| e.to_string())?.table;
    let p = merged
        .prob(&[Token::word("the")], &Token::word("book"))
        .unwrap();
    let err = (p - 5.88 / 6.88).abs();
    ensure!(err < 1e-12, "P(book|the) = {p}");
    Ok(format!(
        "M=0 exact MLE, empty corpus exact, P(book|the) = {p:.12} (error {err:.1e})"
    ))
}

/// Same contexts, same events and bit-identical probabilities.
fn same_probs(a: &NGramTable, b: &NGramTable) -> bool {
    let flat = |t: &NGramTable| -> BTreeMap<Vec<Token>, u64> {
        t.levels()
            .iter()
            .flat_map(|l| {
                l.iter().flat_map(|(ctx, d)| {
                    d.events.iter().map(move |(tok, e)| {
                        let mut k = ctx.clone();
                        k.push(tok.clone());
                        (k, e.prob.to_bits())
                    })
                })
            })
            .collect()
    };
    flat(a) == flat(b)
}

fn non_negativity() -> Outcome {
    let mut fixtures = fixture_set();
    fixtures.push(("random", random_sparse_grammar(40, 12, 5)));
    let mut vectors = 0;
    let mut lowest = f64::INFINITY;
    for (name, g) in fixtures {
        let cnf = to_cnf(&g).unwrap();
        let engine = ExpectationEngine::new(&cnf).unwrap();
        let vocab = terminals(&g);
        let max_len = if vocab.len() > 8 { 2 } else { 3 };
        for w in all_strings(&vocab, max_len) {
            let ids = cnf.symbols().lookup_words(&w).unwrap();
            let min = engine
                .expectation(&ids)
                .values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            ensure!(min >= -1e-12, "{name} {w:?}: component {min:e}");
            lowest = lowest.min(min);
            vectors += 1;
        }
    }
    Ok(format!(
        "{vectors} expectation vectors, smallest component {lowest:e}"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("closed-form expected length", closed_form),
        ("consistency verdicts and exit codes", consistency_verdicts),
        ("bigrams match enumeration", || enumeration(2)),
        ("trigrams match enumeration", || enumeration(3)),
        ("conditionals normalize", normalization),
        ("normal form preserves sentence probabilities", cnf_fidelity),
        ("Monte Carlo agreement", monte_carlo),
        ("shared factorization cost", shared_lu),
        ("count merging", count_merging),
        ("non-negative expectations", non_negativity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
