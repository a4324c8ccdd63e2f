//! ARPA n-gram file writer and reader.

use std::collections::BTreeMap;
use std::io::Write;

use super::{NGramError, NGramTable, Token};

/// log10 value written for zero probabilities (`<s>` as a unigram).
const LOG_ZERO: f64 = -99.0;

fn format_log10(p: f64) -> String {
    if p <= 0.0 {
        return format!("{LOG_ZERO}");
    }
    let s = format!("{:.12}", p.log10());
    // log10 of a probability that rounds to 1 may come out as -0.
    if s.trim_start_matches('-')
        .bytes()
        .all(|b| b == b'0' || b == b'.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Writes the table in ARPA format. Entries are sorted lexicographically by
/// their word sequence; lower orders carry a backoff weight of 0.
pub fn export_arpa<W: Write>(t: &NGramTable, mut out: W) -> Result<(), NGramError> {
    let mut sections: Vec<Vec<(Vec<&str>, f64)>> = Vec::with_capacity(t.order());
    for (k, level) in t.levels().iter().enumerate() {
        let mut entries: Vec<(Vec<&str>, f64)> = level
            .iter()
            .flat_map(|(ctx, d)| {
                d.events.iter().map(move |(tok, e)| {
                    let words = ctx
                        .iter()
                        .chain(std::iter::once(tok))
                        .map(Token::as_str)
                        .collect();
                    (words, e.prob)
                })
            })
            .collect();
        if k == 0 {
            entries.push((vec![Token::Bos.as_str()], 0.0));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        sections.push(entries);
    }

    writeln!(out, "\\data\\")?;
    for (k, entries) in sections.iter().enumerate() {
        writeln!(out, "ngram {}={}", k + 1, entries.len())?;
    }
    for (k, entries) in sections.iter().enumerate() {
        let highest = k + 1 == t.order();
        writeln!(out)?;
        writeln!(out, "\\{}-grams:", k + 1)?;
        for (words, p) in entries {
            if highest {
                writeln!(out, "{}\t{}", format_log10(*p), words.join(" "))?;
            } else {
                writeln!(out, "{}\t{}\t0", format_log10(*p), words.join(" "))?;
            }
        }
    }
    writeln!(out)?;
    writeln!(out, "\\end\\")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArpaEntry {
    pub log10_prob: f64,
    pub backoff: Option<f64>,
}

impl ArpaEntry {
    pub fn prob(&self) -> f64 {
        if self.log10_prob <= LOG_ZERO {
            0.0
        } else {
            10f64.powf(self.log10_prob)
        }
    }
}

/// Parsed ARPA file: `ngrams[k - 1]` holds the `k`-grams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArpaModel {
    pub ngrams: Vec<BTreeMap<Vec<String>, ArpaEntry>>,
}

impl ArpaModel {
    pub fn order(&self) -> usize {
        self.ngrams.len()
    }

    pub fn get(&self, words: &[&str]) -> Option<&ArpaEntry> {
        let key: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        self.ngrams.get(words.len().checked_sub(1)?)?.get(&key)
    }
}

pub fn read_arpa(text: &str) -> Result<ArpaModel, NGramError> {
    let err = |line: usize, message: String| NGramError::Arpa { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let mut declared: Vec<usize> = Vec::new();
    loop {
        match lines.next() {
            Some((_, "\\data\\")) => break,
            Some((_, "")) => continue,
            Some((n, other)) => return Err(err(n, format!("expected \\data\\, found `{other}`"))),
            None => return Err(err(0, "missing \\data\\ header".into())),
        }
    }

    let mut model = ArpaModel::default();
    let mut current: Option<usize> = None;
    let mut finished = false;
    for (n, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        if let Some(spec) = line.strip_prefix("ngram ") {
            let (k, count) = spec
                .split_once('=')
                .ok_or_else(|| err(n, format!("malformed count line `{line}`")))?;
            let k: usize = k.trim().parse().map_err(|_| err(n, "bad order".into()))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| err(n, "bad count".into()))?;
            if k != declared.len() + 1 {
                return Err(err(n, format!("order {k} declared out of sequence")));
            }
            declared.push(count);
            continue;
        }
        if line == "\\end\\" {
            finished = true;
            break;
        }
        if let Some(k) = line
            .strip_prefix('\\')
            .and_then(|s| s.strip_suffix("-grams:"))
        {
            let k: usize = k
                .parse()
                .map_err(|_| err(n, format!("bad section `{line}`")))?;
            if k != model.ngrams.len() + 1 || k > declared.len() {
                return Err(err(n, format!("unexpected section for order {k}")));
            }
            model.ngrams.push(BTreeMap::new());
            current = Some(k);
            continue;
        }
        let k = current.ok_or_else(|| err(n, "entry outside an n-gram section".into()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        let (log_prob, words, backoff) = match fields.as_slice() {
            [p, w] => (*p, *w, None),
            [p, w, b] => (*p, *w, Some(*b)),
            _ => return Err(err(n, format!("malformed entry `{line}`"))),
        };
        let log10_prob: f64 = log_prob
            .parse()
            .map_err(|_| err(n, format!("bad log probability `{log_prob}`")))?;
        let backoff = backoff
            .map(|b| b.parse::<f64>())
            .transpose()
            .map_err(|_| err(n, "bad backoff weight".into()))?;
        let words: Vec<String> = words.split_whitespace().map(str::to_string).collect();
        if words.len() != k {
            return Err(err(n, format!("expected {k} words, found {}", words.len())));
        }
        model.ngrams[k - 1].insert(
            words,
            ArpaEntry {
                log10_prob,
                backoff,
            },
        );
    }
    if !finished {
        return Err(err(0, "missing \\end\\".into()));
    }
    for (k, (&want, got)) in declared.iter().zip(&model.ngrams).enumerate() {
        if want != got.len() {
            return Err(err(
                0,
                format!(
                    "{}-grams: header declares {want}, found {}",
                    k + 1,
                    got.len()
                ),
            ));
        }
    }
    if declared.len() != model.ngrams.len() {
        return Err(err(0, "missing n-gram section".into()));
    }
    Ok(model)
}
