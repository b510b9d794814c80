//! `arc` command-line interface: certify, enumerate, evaluate, attack, and
//! generate models.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when an input file
//! or value fails validation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use arc_core::harness::{self, Dataset, DatasetKind, EvalOptions};
use arc_core::model::ModelDims;
use arc_core::treecert::{self, Tree};
use arc_core::{cert, Arch, ModelBundle, PerturbationSpace, Vocab};
use clap::{ArgGroup, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "arc", version, about = "Certify recurrent text classifiers against programmable perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify one input against a perturbation space
    Certify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        space: PathBuf,
        /// Space-separated tokens, or an s-expression for tree models
        #[arg(long)]
        input: String,
        #[arg(long)]
        label: usize,
    },
    /// Print every member of a perturbation space, one per line
    Enumerate {
        #[arg(long)]
        space: PathBuf,
        /// Model file whose vocabulary resolves the tokens
        #[arg(long)]
        vocab_from: PathBuf,
        #[arg(long)]
        input: String,
        /// Only members using every budget exactly
        #[arg(long)]
        tight: bool,
        /// Parse the input as a tree and apply tree transformations
        #[arg(long)]
        tree: bool,
    },
    /// Evaluate a dataset and write a JSON report
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        space: PathBuf,
        /// TSV dataset: `label<TAB>input` per line
        #[arg(long)]
        data: PathBuf,
        /// Report path; standard output when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the exhaustive check
        #[arg(long)]
        no_exhaustive: bool,
        /// Strings the attack may evaluate per phase
        #[arg(long, default_value_t = harness::DEFAULT_ATTACK_BUDGET)]
        attack_budget: usize,
        /// Skip the attack
        #[arg(long)]
        no_attack: bool,
        /// Record per-example wall time (the report is then not reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Generate a random model, deterministic per seed
    #[command(group(ArgGroup::new("vocabulary").required(true).args(["words", "vocab_size"])))]
    GenModel {
        #[arg(long)]
        seed: u64,
        /// Space-separated vocabulary
        #[arg(long)]
        words: Option<String>,
        /// Vocabulary `w0 .. w{N-1}`
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long, default_value_t = 4)]
        embed: usize,
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value = "lstm")]
        arch: Arch,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search a perturbation space for a misclassified member
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long)]
        label: usize,
        #[arg(long, default_value_t = harness::DEFAULT_ATTACK_BUDGET)]
        budget: usize,
    },
}

#[derive(Serialize)]
struct CertifyOutput {
    certified: bool,
    margin_upper: f64,
    cells_evaluated: usize,
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    ModelBundle::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_space(path: &Path, vocab: &Vocab) -> Result<PerturbationSpace> {
    harness::load_space(path, vocab).with_context(|| format!("loading space {}", path.display()))
}

fn print_lines<I: IntoIterator<Item = String>>(lines: I) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Certify {
            model,
            space,
            input,
            label,
        } => {
            let model = load_model(&model)?;
            let space = load_space(&space, &model.vocab)?;
            let res = if model.arch == Arch::Treelstm {
                let tree = Tree::parse(&input, &model.vocab).context("parsing --input")?;
                treecert::certify_tree(&model, &tree, label, &space)?
            } else {
                let x = model.vocab.encode(&input).context("parsing --input")?;
                cert::certify(&model, &x, label, &space)?
            };
            let out = CertifyOutput {
                certified: res.certified,
                margin_upper: res.margin_upper,
                cells_evaluated: res.cells_evaluated,
            };
            print_lines([serde_json::to_string(&out)?])
        }
        Command::Enumerate {
            space,
            vocab_from,
            input,
            tight,
            tree,
        } => {
            let model = load_model(&vocab_from)?;
            let vocab = &model.vocab;
            let space = load_space(&space, vocab)?;
            let cap = harness::enum_cap()?;
            if tree {
                let t = Tree::parse(&input, vocab).context("parsing --input")?;
                let trees = treecert::enumerate_trees(&space, &t, tight, cap)?;
                print_lines(trees.iter().map(|t| t.display(vocab).to_string()))
            } else {
                let x = vocab.encode(&input).context("parsing --input")?;
                let members = space.enumerate_capped(&x, tight, cap)?;
                print_lines(members.iter().map(|z| vocab.decode(z)))
            }
        }
        Command::Eval {
            model,
            space,
            data,
            out,
            no_exhaustive,
            attack_budget,
            no_attack,
            timing,
        } => {
            let model = load_model(&model)?;
            let space = load_space(&space, &model.vocab)?;
            let dataset = Dataset::load(&data, &model.vocab, DatasetKind::for_arch(model.arch))
                .with_context(|| format!("loading dataset {}", data.display()))?;
            let opts = EvalOptions {
                exhaustive: !no_exhaustive,
                attack_budget: (!no_attack).then_some(attack_budget),
                enum_cap: harness::enum_cap()?,
                timing,
            };
            let report = harness::eval_metrics(&model, &dataset, &space, &opts)?;
            let json = report.to_json();
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display())),
                None => {
                    std::io::stdout().write_all(json.as_bytes())?;
                    Ok(())
                }
            }
        }
        Command::GenModel {
            seed,
            words,
            vocab_size,
            embed,
            hidden,
            classes,
            arch,
            out,
        } => {
            let vocab = match (words, vocab_size) {
                (Some(w), _) => Vocab::new(w.split_whitespace())?,
                (None, Some(n)) => Vocab::new((0..n).map(|i| format!("w{i}")))?,
                (None, None) => unreachable!("clap enforces the vocabulary group"),
            };
            let dims = ModelDims {
                embed,
                hidden,
                classes,
            };
            let model = ModelBundle::gen_random(seed, vocab, dims, arch)?;
            model.save(&out).with_context(|| format!("writing {}", out.display()))
        }
        Command::Attack {
            model,
            space,
            input,
            label,
            budget,
        } => {
            let model = load_model(&model)?;
            let space = load_space(&space, &model.vocab)?;
            let found = if model.arch == Arch::Treelstm {
                let tree = Tree::parse(&input, &model.vocab).context("parsing --input")?;
                treecert::attack_tree(&model, &tree, label, &space, budget)?
                    .map(|t| t.display(&model.vocab).to_string())
            } else {
                let x = model.vocab.encode(&input).context("parsing --input")?;
                cert::attack_search(&model, &x, label, &space, budget)?.map(|z| model.vocab.decode(&z))
            };
            print_lines([found.unwrap_or_else(|| "none".to_string())])
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
