//! Evaluation layer: space and dataset files, per-example certification and
//! dataset-level metrics.
//!
//! Space files are JSON documents listing transformations with their budgets;
//! dataset files are TSV with one `label<TAB>payload` example per line, the
//! payload being space-separated tokens or a binary s-expression. All token
//! text is resolved against the model vocabulary at load time.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cert::{attack_search, certify, exhaustive_check};
use crate::error::{Error, Result};
use crate::model::{Arch, ModelBundle};
use crate::perturbation::{PerturbationSpace, Transformation, DEFAULT_ENUM_CAP};
use crate::treecert::{attack_tree, certify_tree, exhaustive_check_tree, predict_tree, Tree};
use crate::vocab::{Symbol, TokenString, Vocab};

/// Environment variable overriding [`DEFAULT_ENUM_CAP`].
pub const ENUM_CAP_VAR: &str = "ARC_MAX_ENUM";

/// Evaluation budget for the attack when none is given.
pub const DEFAULT_ATTACK_BUDGET: usize = 1000;

/// Enumeration cap from [`ENUM_CAP_VAR`], or the default when unset.
pub fn enum_cap() -> Result<usize> {
    match std::env::var(ENUM_CAP_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(ENUM_CAP_VAR, format!("expected a non-negative integer, got {v:?}"))),
        Err(_) => Ok(DEFAULT_ENUM_CAP),
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Space files

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    transformations: Vec<ItemFile>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ItemFile {
    Delete {
        budget: usize,
        #[serde(rename = "match")]
        words: Vec<String>,
    },
    Substitute {
        budget: usize,
        table: BTreeMap<String, Vec<String>>,
    },
    Duplicate {
        budget: usize,
    },
    Swap {
        budget: usize,
    },
    Table {
        budget: usize,
        s: usize,
        t: usize,
        rules: Vec<RuleFile>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(rename = "match")]
    window: Vec<String>,
    replace: Vec<Vec<String>>,
}

fn symbols(vocab: &Vocab, words: &[String]) -> Result<TokenString> {
    words.iter().map(|w| vocab.symbol(w)).collect()
}

impl ItemFile {
    fn resolve(self, vocab: &Vocab) -> Result<(Transformation, usize)> {
        Ok(match self {
            ItemFile::Delete { budget, words } => (Transformation::delete(symbols(vocab, &words)?), budget),
            ItemFile::Substitute { budget, table } => {
                let mut pairs = Vec::with_capacity(table.len());
                for (k, vs) in &table {
                    pairs.push((vocab.symbol(k)?, symbols(vocab, vs)?));
                }
                (Transformation::substitute(pairs), budget)
            }
            ItemFile::Duplicate { budget } => (Transformation::Duplicate, budget),
            ItemFile::Swap { budget } => (Transformation::Swap, budget),
            ItemFile::Table { budget, s, t, rules } => {
                let mut resolved = Vec::with_capacity(rules.len());
                for rule in &rules {
                    let outs = rule
                        .replace
                        .iter()
                        .map(|o| symbols(vocab, o))
                        .collect::<Result<Vec<_>>>()?;
                    resolved.push((symbols(vocab, &rule.window)?, outs));
                }
                let t = Transformation::table(s, t, resolved)
                    .map_err(|e| Error::invalid("rules", e.to_string()))?;
                (t, budget)
            }
        })
    }
}

/// Parses a space document, resolving tokens against `vocab`.
pub fn parse_space(text: &str, vocab: &Vocab) -> Result<PerturbationSpace> {
    let file: SpaceFile = serde_json::from_str(text).map_err(|e| Error::Json {
        path: "<space>".into(),
        source: e,
    })?;
    let mut items = Vec::with_capacity(file.transformations.len());
    for (k, item) in file.transformations.into_iter().enumerate() {
        items.push(item.resolve(vocab).map_err(|e| e.within(&format!("transformations[{k}]")))?);
    }
    Ok(PerturbationSpace::new(items))
}

pub fn load_space(path: impl AsRef<Path>, vocab: &Vocab) -> Result<PerturbationSpace> {
    let path = path.as_ref();
    let text = read_file(path)?;
    parse_space(&text, vocab).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Sequence,
    Tree,
}

impl DatasetKind {
    /// The dataset kind a model of architecture `arch` consumes.
    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Lstm | Arch::Bilstm => DatasetKind::Sequence,
            Arch::Treelstm => DatasetKind::Tree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Sequence(TokenString),
    Tree(Tree),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Input,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub examples: Vec<Example>,
    pub source: PathBuf,
}

impl Dataset {
    /// Parses TSV lines `label<TAB>payload`. Blank lines are skipped; errors
    /// name the 1-based line.
    pub fn parse(text: &str, vocab: &Vocab, kind: DatasetKind) -> Result<Dataset> {
        let mut examples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Invalid { field, message } => Error::invalid(format!("line {}", n + 1), format!("{field}: {message}")),
                Error::UnknownToken(w) => Error::invalid(format!("line {}", n + 1), format!("unknown token {w:?}")),
                other => other,
            };
            let (label, payload) = line
                .split_once('\t')
                .ok_or_else(|| Error::invalid(format!("line {}", n + 1), "expected <label><TAB><input>"))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("line {}", n + 1), format!("bad label {label:?}")))?;
            let input = match kind {
                DatasetKind::Sequence => Input::Sequence(vocab.encode(payload).map_err(at)?),
                DatasetKind::Tree => Input::Tree(Tree::parse(payload, vocab).map_err(at)?),
            };
            examples.push(Example { input, label });
        }
        Ok(Dataset {
            kind,
            examples,
            source: PathBuf::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab, kind: DatasetKind) -> Result<Dataset> {
        let path = path.as_ref();
        let mut ds = Dataset::parse(&read_file(path)?, vocab, kind)?;
        ds.source = path.to_path_buf();
        Ok(ds)
    }

    /// Serializes back to the TSV format.
    pub fn to_tsv(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let payload = match &ex.input {
                Input::Sequence(z) => vocab.decode(z),
                Input::Tree(t) => t.display(vocab).to_string(),
            };
            out.push_str(&format!("{}\t{}\n", ex.label, payload));
        }
        out
    }

    /// Random sequence dataset: `n` examples with lengths drawn from `len`
    /// and labels uniform below `classes`, deterministic per seed.
    pub fn synthetic(seed: u64, vocab_size: usize, n: usize, len: RangeInclusive<usize>, classes: usize) -> Dataset {
        assert!(vocab_size > 0 && classes > 0, "need symbols and classes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..n)
            .map(|_| {
                let l = rng.gen_range(len.clone());
                let z = (0..l).map(|_| Symbol(rng.gen_range(0..vocab_size) as u32)).collect();
                Example {
                    input: Input::Sequence(z),
                    label: rng.gen_range(0..classes),
                }
            })
            .collect();
        Dataset {
            kind: DatasetKind::Sequence,
            examples,
            source: PathBuf::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Run the exhaustive check on every example.
    pub exhaustive: bool,
    /// Run the attack with this evaluation budget.
    pub attack_budget: Option<usize>,
    /// Enumeration cap for the exhaustive check.
    pub enum_cap: usize,
    /// Record per-example wall time (makes reports non-reproducible).
    pub timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exhaustive: true,
            attack_budget: Some(DEFAULT_ATTACK_BUDGET),
            enum_cap: DEFAULT_ENUM_CAP,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustiveStatus {
    Robust,
    NotRobust,
    /// The space exceeded the enumeration cap.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub certified: bool,
    pub margin_upper: f64,
    pub cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustive: Option<ExhaustiveStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space_size: Option<usize>,
    /// Whether the attack found a counterexample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacked: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub examples: usize,
    pub accuracy: f64,
    pub cf_acc: f64,
    /// Robust fraction among examples whose space fit under the cap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex_acc: Option<f64>,
    /// Fraction of examples the exhaustive check could evaluate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub aggregates: Aggregates,
    pub records: Vec<Record>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn check_kind(model: &ModelBundle, kind: DatasetKind) -> Result<()> {
    if DatasetKind::for_arch(model.arch) != kind {
        return Err(Error::Architecture(format!(
            "a {} model cannot evaluate a {:?} dataset",
            model.arch, kind
        )));
    }
    Ok(())
}

fn eval_example(
    model: &ModelBundle,
    index: usize,
    ex: &Example,
    space: &PerturbationSpace,
    opts: &EvalOptions,
) -> Result<Record> {
    let start = Instant::now();
    let y = ex.label;
    let (predicted, cert, exhaustive, attacked) = match &ex.input {
        Input::Sequence(x) => {
            let predicted = model.predict_sequence(x)?;
            let cert = certify(model, x, y, space)?;
            let ex_res = opts
                .exhaustive
                .then(|| match exhaustive_check(model, x, y, space, opts.enum_cap) {
                    Ok(r) => Ok(Some((r.robust, r.space_size))),
                    Err(Error::SpaceTooLarge { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
                .transpose()?;
            let attacked = opts
                .attack_budget
                .map(|b| attack_search(model, x, y, space, b).map(|c| c.is_some()))
                .transpose()?;
            (predicted, cert, ex_res, attacked)
        }
        Input::Tree(t) => {
            let predicted = predict_tree(model, t)?;
            let cert = certify_tree(model, t, y, space)?;
            let ex_res = opts
                .exhaustive
                .then(|| match exhaustive_check_tree(model, t, y, space, opts.enum_cap) {
                    Ok(r) => Ok(Some((r.robust, r.space_size))),
                    Err(Error::SpaceTooLarge { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
                .transpose()?;
            let attacked = opts
                .attack_budget
                .map(|b| attack_tree(model, t, y, space, b).map(|c| c.is_some()))
                .transpose()?;
            (predicted, cert, ex_res, attacked)
        }
    };
    let (exhaustive, space_size) = match exhaustive {
        None => (None, None),
        Some(None) => (Some(ExhaustiveStatus::Skipped), None),
        Some(Some((true, n))) => (Some(ExhaustiveStatus::Robust), Some(n)),
        Some(Some((false, n))) => (Some(ExhaustiveStatus::NotRobust), Some(n)),
    };
    Ok(Record {
        index,
        label: y,
        predicted,
        certified: cert.certified,
        margin_upper: cert.margin_upper,
        cells: cert.cells_evaluated,
        exhaustive,
        space_size,
        attacked,
        wall_time: opts.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Certifies (and optionally exhaustively checks and attacks) every example.
/// Examples run in parallel; records are ordered by example index.
pub fn eval_metrics(
    model: &ModelBundle,
    dataset: &Dataset,
    space: &PerturbationSpace,
    opts: &EvalOptions,
) -> Result<Report> {
    check_kind(model, dataset.kind)?;
    for (i, ex) in dataset.examples.iter().enumerate() {
        model
            .check_label(ex.label)
            .map_err(|e| Error::invalid(format!("example {i}"), e.to_string()))?;
    }
    let records = dataset
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| eval_example(model, i, ex, space, opts).map_err(|e| e.within(&format!("example {i}"))))
        .collect::<Result<Vec<_>>>()?;

    let n = records.len();
    let count = |f: &dyn Fn(&Record) -> bool| records.iter().filter(|r| f(r)).count();
    let (ex_acc, ex_coverage) = if opts.exhaustive {
        let evaluated = count(&|r| r.exhaustive != Some(ExhaustiveStatus::Skipped));
        let robust = count(&|r| r.exhaustive == Some(ExhaustiveStatus::Robust));
        (Some(fraction(robust, evaluated)), Some(fraction(evaluated, n)))
    } else {
        (None, None)
    };
    let aggregates = Aggregates {
        examples: n,
        accuracy: fraction(count(&|r| r.predicted == r.label), n),
        cf_acc: fraction(count(&|r| r.certified), n),
        ex_acc,
        ex_coverage,
        attack_acc: opts
            .attack_budget
            .map(|_| fraction(count(&|r| r.attacked == Some(false)), n)),
    };
    Ok(Report { aggregates, records })
}
