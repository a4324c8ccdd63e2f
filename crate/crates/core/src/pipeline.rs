//! End-to-end orchestration of the grammar-to-n-gram computation.
//!
//! Stages run in a fixed order: parse, validate, CNF, consistency, corner
//! systems plus the single factorization of `I - A`, n-gram expectations and
//! conditionals, optional count merging. Each stage is timed and recorded in
//! [`Diagnostics`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::cnf::{to_cnf, CnfError, CnfGrammar};
use crate::consistency::{check_consistency, ConsistencyReport, Verdict, DEFAULT_MARGIN};
use crate::expectation::{EngineStats, ExpectationEngine};
use crate::grammar::{parse_grammar, validate, Diagnostic, Grammar, ParseError};
use crate::linalg::NumericError;
use crate::ngram::{
    build_table, merge_counts, parse_counts, CountMergeSpec, NGramError, NGramTable, Token,
    DEFAULT_PRUNE,
};
use crate::sampling::{
    empirical_ngrams, sample_batch, EmpiricalNGram, SampleBatch, DEFAULT_MAX_EXPANSIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Read,
    Parse,
    Validate,
    Cnf,
    Consistency,
    Factorize,
    Expectations,
    Merge,
    Sample,
    Compare,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Io {
        stage: Stage,
        #[source]
        source: std::io::Error,
    },
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
    #[error("validate: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("cnf: {0}")]
    Cnf(#[from] CnfError),
    #[error("consistency: grammar is {verdict} (spectral radius {rho}); use --force to continue", verdict = verdict_name(.0.verdict), rho = .0.spectral_radius)]
    Inconsistent(ConsistencyReport),
    #[error("{stage}: {source}")]
    Numeric {
        stage: Stage,
        #[source]
        source: NumericError,
    },
    #[error("{stage}: {source}")]
    NGram {
        stage: Stage,
        #[source]
        source: NGramError,
    },
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Consistent => "consistent",
        Verdict::Inconsistent => "inconsistent",
        Verdict::Borderline => "borderline",
    }
}

impl PipelineError {
    /// 1 usage, 2 parse/validate, 3 inconsistent, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Io { .. } => 1,
            PipelineError::Parse(_) | PipelineError::Invalid(_) | PipelineError::Cnf(_) => 2,
            PipelineError::NGram {
                source: NGramError::Counts { .. },
                ..
            } => 2,
            PipelineError::Inconsistent(_) => 3,
            PipelineError::Numeric { .. } | PipelineError::NGram { .. } => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeConfig {
    pub counts_path: PathBuf,
    pub pseudo_mass: f64,
}

#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub count: usize,
    pub seed: u64,
    pub max_expansions: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            count: 200_000,
            seed: 0,
            max_expansions: DEFAULT_MAX_EXPANSIONS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub grammar_path: PathBuf,
    pub order: usize,
    pub output_path: Option<PathBuf>,
    pub start_override: Option<String>,
    pub renormalize: bool,
    pub force: bool,
    pub merge: Option<MergeConfig>,
    pub sample: SampleConfig,
    pub prune: f64,
    pub margin: f64,
    pub diagnostics_path: Option<PathBuf>,
    pub compare: bool,
}

impl PipelineConfig {
    pub fn new(grammar_path: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            grammar_path: grammar_path.into(),
            order: 2,
            output_path: None,
            start_override: None,
            renormalize: false,
            force: false,
            merge: None,
            sample: SampleConfig::default(),
            prune: DEFAULT_PRUNE,
            margin: DEFAULT_MARGIN,
            diagnostics_path: None,
            compare: false,
        }
    }

    fn check(&self) -> Result<(), PipelineError> {
        if self.order < 1 {
            return Err(PipelineError::Usage("--order must be at least 1".into()));
        }
        if let Some(m) = &self.merge {
            if !(m.pseudo_mass.is_finite() && m.pseudo_mass > 0.0) {
                return Err(PipelineError::Usage(
                    "--pseudo-mass must be positive".into(),
                ));
            }
        }
        if self.prune.is_nan() || self.prune < 0.0 {
            return Err(PipelineError::Usage("--prune must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    /// Conditionals with expected event count above the threshold.
    pub compared: usize,
    pub max_deviation_se: f64,
    pub worst_ngram: Option<String>,
}

/// Machine-readable record of one run, written with `--diagnostics`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub grammar: String,
    pub nonterminals: Option<usize>,
    pub terminals: Option<usize>,
    pub cnf_nonterminals: Option<usize>,
    pub validation: Vec<Diagnostic>,
    pub consistency: Option<ConsistencyReport>,
    pub stages: Vec<StageTiming>,
    pub engine: Option<EngineStats>,
    pub ngram_entries: Vec<usize>,
    pub dropped_contexts: Vec<String>,
    pub truncated_samples: Option<usize>,
    pub comparison: Option<ComparisonSummary>,
    pub error: Option<String>,
}

impl Diagnostics {
    fn timed<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> T) -> T {
        let started = Instant::now();
        let out = f(self);
        self.stages.push(StageTiming {
            stage,
            seconds: started.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

/// Grammar after the front-end stages.
#[derive(Debug, Clone)]
pub struct LoadedGrammar {
    pub grammar: Grammar,
    pub cnf: CnfGrammar,
}

/// Reads, parses, validates and normalizes the grammar.
pub fn load_grammar(
    config: &PipelineConfig,
    diags: &mut Diagnostics,
) -> Result<LoadedGrammar, PipelineError> {
    config.check()?;
    diags.grammar = config.grammar_path.display().to_string();
    let text = diags
        .timed(Stage::Read, |_| {
            std::fs::read_to_string(&config.grammar_path)
        })
        .map_err(|source| PipelineError::Io {
            stage: Stage::Read,
            source,
        })?;
    let mut grammar = diags.timed(Stage::Parse, |_| parse_grammar(&text))?;
    if let Some(start) = &config.start_override {
        grammar = grammar.with_start(start)?;
    }
    diags.nonterminals = Some(grammar.num_nonterminals());
    diags.terminals = Some(grammar.num_terminals());

    diags.timed(Stage::Validate, |d| {
        if config.renormalize {
            grammar.renormalize();
        }
        d.validation = validate(&grammar);
    });
    if !diags.validation.is_empty() {
        return Err(PipelineError::Invalid(diags.validation.clone()));
    }
    let cnf = diags.timed(Stage::Cnf, |_| to_cnf(&grammar))?;
    diags.cnf_nonterminals = Some(cnf.num_nonterminals());
    Ok(LoadedGrammar { grammar, cnf })
}

/// Runs the consistency check; never aborts on the verdict itself.
pub fn run_check(
    config: &PipelineConfig,
    diags: &mut Diagnostics,
) -> Result<ConsistencyReport, PipelineError> {
    let loaded = load_grammar(config, diags)?;
    consistency(config, &loaded.cnf, diags)
}

fn consistency(
    config: &PipelineConfig,
    cnf: &CnfGrammar,
    diags: &mut Diagnostics,
) -> Result<ConsistencyReport, PipelineError> {
    let report = diags
        .timed(Stage::Consistency, |_| {
            check_consistency(cnf, config.margin)
        })
        .map_err(|source| PipelineError::Numeric {
            stage: Stage::Consistency,
            source,
        })?;
    diags.consistency = Some(report);
    Ok(report)
}

fn require_consistent(
    config: &PipelineConfig,
    cnf: &CnfGrammar,
    diags: &mut Diagnostics,
) -> Result<(), PipelineError> {
    let report = consistency(config, cnf, diags)?;
    if !report.is_consistent() {
        if config.force {
            log::warn!(
                "grammar is {}; continuing because of --force",
                verdict_name(report.verdict)
            );
        } else {
            return Err(PipelineError::Inconsistent(report));
        }
    }
    Ok(())
}

fn engine_for(
    cnf: &CnfGrammar,
    diags: &mut Diagnostics,
) -> Result<ExpectationEngine, PipelineError> {
    diags
        .timed(Stage::Factorize, |_| ExpectationEngine::new(cnf))
        .map_err(|source| PipelineError::Numeric {
            stage: Stage::Factorize,
            source,
        })
}

/// Computes the conditional n-gram table, merged with corpus counts when
/// configured.
pub fn run_ngrams(
    config: &PipelineConfig,
    diags: &mut Diagnostics,
) -> Result<NGramTable, PipelineError> {
    let loaded = load_grammar(config, diags)?;
    require_consistent(config, &loaded.cnf, diags)?;
    let engine = engine_for(&loaded.cnf, diags)?;
    let table = diags
        .timed(Stage::Expectations, |_| {
            build_table(&engine, config.order, config.prune)
        })
        .map_err(|source| PipelineError::NGram {
            stage: Stage::Expectations,
            source,
        })?;
    diags.engine = Some(engine.stats());

    let table = match &config.merge {
        None => table,
        Some(m) => {
            let outcome = diags.timed(Stage::Merge, |_| -> Result<_, PipelineError> {
                let text = std::fs::read_to_string(&m.counts_path).map_err(|source| {
                    PipelineError::Io {
                        stage: Stage::Merge,
                        source,
                    }
                })?;
                let corpus = parse_counts(&text).map_err(|source| PipelineError::NGram {
                    stage: Stage::Merge,
                    source,
                })?;
                let spec = CountMergeSpec {
                    pseudo_mass: m.pseudo_mass,
                    corpus,
                };
                merge_counts(&table, &spec).map_err(|source| PipelineError::NGram {
                    stage: Stage::Merge,
                    source,
                })
            })?;
            diags.dropped_contexts = outcome.dropped.iter().map(|ctx| join_tokens(ctx)).collect();
            outcome.table
        }
    };
    diags.ngram_entries = table.entry_counts();
    Ok(table)
}

fn join_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone)]
pub struct SampleReport {
    pub batch: SampleBatch,
    pub order: usize,
    pub empirical: BTreeMap<Vec<Token>, EmpiricalNGram>,
    pub comparison: Option<ComparisonSummary>,
}

impl SampleReport {
    /// Tab-separated report: n-gram, count, relative frequency, standard
    /// error, mean occurrences per sentence.
    pub fn render(&self) -> String {
        let n = self.batch.sentences.len() as f64;
        let mut out = format!(
            "# samples={} completed={} truncated={} seed={} mean_length={:.6}\n",
            self.batch.requested,
            self.batch.sentences.len(),
            self.batch.truncated_count,
            self.batch.seed,
            self.batch.mean_length()
        );
        for (ngram, e) in &self.empirical {
            out.push_str(&format!(
                "{}\t{}\t{:.9}\t{:.9}\t{:.9}\n",
                join_tokens(ngram),
                e.count,
                e.rel_freq,
                e.std_error,
                e.count / n
            ));
        }
        if let Some(c) = &self.comparison {
            out.push_str(&format!(
                "# compared={} max_deviation_se={:.4} worst={}\n",
                c.compared,
                c.max_deviation_se,
                c.worst_ngram.as_deref().unwrap_or("-")
            ));
        }
        out
    }
}

/// Smallest expected event count for a conditional to enter the comparison.
pub const MIN_EXPECTED_EVENTS: f64 = 100.0;

/// Deviation of every exact top-order conditional from its empirical
/// estimate, in standard errors. Only conditionals whose expected event
/// count in the batch is at least `min_expected` are compared.
pub fn compare_to_exact(
    table: &NGramTable,
    empirical: &BTreeMap<Vec<Token>, EmpiricalNGram>,
    sentences: usize,
    min_expected: f64,
) -> ComparisonSummary {
    let mut compared = 0;
    let mut worst: Option<(f64, String)> = None;
    for (ctx, dist) in table.level(table.order()) {
        for (tok, event) in &dist.events {
            // `event.count` is the expected occurrences per sentence.
            if event.count * (sentences as f64) < min_expected {
                continue;
            }
            compared += 1;
            let mut key = ctx.clone();
            key.push(tok.clone());
            let (p_hat, se) = match empirical.get(&key) {
                Some(e) => (e.rel_freq, e.std_error),
                None => (0.0, 0.0),
            };
            let diff = (event.prob - p_hat).abs();
            let dev = if diff <= 1e-9 {
                0.0
            } else if se > 0.0 {
                diff / se
            } else {
                f64::INFINITY
            };
            if worst.as_ref().is_none_or(|(w, _)| dev > *w) {
                worst = Some((dev, join_tokens(&key)));
            }
        }
    }
    ComparisonSummary {
        compared,
        max_deviation_se: worst.as_ref().map_or(0.0, |w| w.0),
        worst_ngram: worst.map(|w| w.1),
    }
}

/// Samples sentences and estimates n-grams empirically; with `compare`,
/// also runs the exact computation and reports the largest deviation.
pub fn run_sample(
    config: &PipelineConfig,
    diags: &mut Diagnostics,
) -> Result<SampleReport, PipelineError> {
    let loaded = load_grammar(config, diags)?;
    require_consistent(config, &loaded.cnf, diags)?;
    let s = &config.sample;
    let batch = diags.timed(Stage::Sample, |_| {
        sample_batch(&loaded.cnf, s.count, s.seed, s.max_expansions)
    });
    diags.truncated_samples = Some(batch.truncated_count);
    if batch.sentences.is_empty() {
        return Err(PipelineError::Usage("no completed samples".into()));
    }
    let empirical = empirical_ngrams(&batch, config.order);

    let comparison = if config.compare {
        let engine = engine_for(&loaded.cnf, diags)?;
        let table = diags
            .timed(Stage::Expectations, |_| {
                build_table(&engine, config.order, config.prune)
            })
            .map_err(|source| PipelineError::NGram {
                stage: Stage::Expectations,
                source,
            })?;
        diags.engine = Some(engine.stats());
        let summary = diags.timed(Stage::Compare, |_| {
            compare_to_exact(
                &table,
                &empirical,
                batch.sentences.len(),
                MIN_EXPECTED_EVENTS,
            )
        });
        diags.comparison = Some(summary.clone());
        Some(summary)
    } else {
        None
    };

    Ok(SampleReport {
        batch,
        order: config.order,
        empirical,
        comparison,
    })
}
