use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scfg_ngram::ngram::{export_arpa, DEFAULT_PRUNE};
use scfg_ngram::pipeline::{
    run_check, run_ngrams, run_sample, Diagnostics, MergeConfig, PipelineConfig, PipelineError,
    SampleConfig, Stage,
};
use scfg_ngram::sampling::DEFAULT_MAX_EXPANSIONS;
use scfg_ngram::Verdict;

#[derive(Parser)]
#[command(
    name = "scfg-ngram",
    version,
    about = "Exact n-gram models from stochastic CFGs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the grammar and report its consistency.
    Check(GrammarArgs),
    /// Write the n-gram model in ARPA format.
    Ngrams(NgramArgs),
    /// Like `ngrams`, but merging with corpus counts is required.
    Mix(NgramArgs),
    /// Sample sentences and estimate n-grams empirically.
    Sample(SampleArgs),
}

#[derive(Args)]
struct GrammarArgs {
    /// Grammar file with one `LHS -> RHS [prob]` rule per line.
    #[arg(long)]
    grammar: PathBuf,
    /// Override the start symbol (defaults to the first left-hand side).
    #[arg(long)]
    start: Option<String>,
    /// Rescale each nonterminal's rules to sum to one.
    #[arg(long)]
    renormalize: bool,
    /// Write run diagnostics as JSON.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct NgramArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    /// Highest n-gram order; every lower order is written too.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// ARPA output path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Continue even if the grammar is not consistent.
    #[arg(long)]
    force: bool,
    /// Corpus n-gram counts, one `count<TAB>words` per line.
    #[arg(long, requires = "pseudo_mass")]
    merge_counts: Option<PathBuf>,
    /// Weight of the grammar's expected counts relative to the corpus.
    #[arg(long, requires = "merge_counts")]
    pseudo_mass: Option<f64>,
    /// Drop conditionals below this probability.
    #[arg(long, default_value_t = DEFAULT_PRUNE)]
    prune: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Write the sampled sentences here, one per line.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_EXPANSIONS)]
    max_expansions: usize,
    /// Also compute the exact model and report the largest deviation.
    #[arg(long)]
    compare: bool,
}

fn base_config(args: &GrammarArgs) -> PipelineConfig {
    let mut config = PipelineConfig::new(&args.grammar);
    config.start_override = args.start.clone();
    config.renormalize = args.renormalize;
    config.diagnostics_path = args.diagnostics.clone();
    config
}

fn ngram_config(args: &NgramArgs) -> PipelineConfig {
    let mut config = base_config(&args.grammar);
    config.order = args.order;
    config.output_path = args.output.clone();
    config.force = args.force;
    config.prune = args.prune;
    if let (Some(path), Some(m)) = (&args.merge_counts, args.pseudo_mass) {
        config.merge = Some(MergeConfig {
            counts_path: path.clone(),
            pseudo_mass: m,
        });
    }
    config
}

fn sample_config(args: &SampleArgs) -> PipelineConfig {
    let mut config = base_config(&args.grammar);
    config.order = args.order;
    config.output_path = args.output.clone();
    config.force = args.force;
    config.compare = args.compare;
    config.sample = SampleConfig {
        count: args.samples,
        seed: args.seed,
        max_expansions: args.max_expansions,
    };
    config
}

fn open_output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_err(source: io::Error) -> PipelineError {
    PipelineError::Io {
        stage: Stage::Write,
        source,
    }
}

fn diagnostics_path(command: &Command) -> Option<&PathBuf> {
    match command {
        Command::Check(a) => a.diagnostics.as_ref(),
        Command::Ngrams(a) | Command::Mix(a) => a.grammar.diagnostics.as_ref(),
        Command::Sample(a) => a.grammar.diagnostics.as_ref(),
    }
}

fn run(command: &Command, diags: &mut Diagnostics) -> Result<(), PipelineError> {
    match command {
        Command::Check(args) => {
            let report = run_check(&base_config(args), diags)?;
            let verdict = match report.verdict {
                Verdict::Consistent => "consistent",
                Verdict::Inconsistent => "inconsistent",
                Verdict::Borderline => "borderline",
            };
            println!("spectral_radius\t{:.12}", report.spectral_radius);
            println!("verdict\t{verdict}");
            if report.is_consistent() {
                Ok(())
            } else {
                Err(PipelineError::Inconsistent(report))
            }
        }
        Command::Ngrams(args) | Command::Mix(args) => {
            let config = ngram_config(args);
            if matches!(command, Command::Mix(_)) && config.merge.is_none() {
                return Err(PipelineError::Usage(
                    "mix requires --merge-counts and --pseudo-mass".into(),
                ));
            }
            let table = run_ngrams(&config, diags)?;
            let mut out = open_output(&config.output_path).map_err(write_err)?;
            export_arpa(&table, &mut out).map_err(|source| PipelineError::NGram {
                stage: Stage::Write,
                source,
            })?;
            out.flush().map_err(write_err)
        }
        Command::Sample(args) => {
            let config = sample_config(args);
            let report = run_sample(&config, diags)?;
            if let Some(path) = &config.output_path {
                std::fs::write(path, report.batch.dump()).map_err(write_err)?;
            }
            io::stdout()
                .lock()
                .write_all(report.render().as_bytes())
                .map_err(write_err)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            return ExitCode::from(code);
        }
    };

    let mut diags = Diagnostics::default();
    let outcome = run(&cli.command, &mut diags);
    if let Err(e) = &outcome {
        diags.error = Some(e.to_string());
    }
    if let Some(path) = diagnostics_path(&cli.command) {
        if let Err(e) = std::fs::write(path, diags.to_json()) {
            eprintln!("error: writing diagnostics to {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
