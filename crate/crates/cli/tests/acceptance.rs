//! Acceptance suite: eleven end-to-end criteria, each printed as one
//! PASS/FAIL line. Runs without the libtest harness so the lines always
//! appear in `cargo test` output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use arc_core::cert::{abstract_final, abstract_run, certify, concrete_final, exhaustive_check, prefix_hulls, DpOptions};
use arc_core::harness::{eval_metrics, Dataset, EvalOptions};
use arc_core::interval::{matvec, Monotone};
use arc_core::model::{LstmParams, ModelDims, TreeLstmParams};
use arc_core::treecert::{certify_tree, tree_abstract_final, Tree};
use arc_core::vocab::TokenString;
use arc_core::{Arch, Interval, IntervalBox, Matrix, ModelBundle, PerturbationSpace, State, Symbol, Transformation, Vocab};
use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn equivalence_instances() -> Vec<Instance> {
    let mut r = rng(1);
    (0..200).map(|_| small_instance(&mut r, Arch::Lstm, 6)).collect()
}

/// Memoized concrete states equal the brute-force states of every member.
fn c1_equivalence() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut members = 0;
    for inst in equivalence_instances() {
        let dp = concrete_final(&inst.model, &inst.x, &inst.space).map_err(|e| e.to_string())?;
        let brute: BTreeMap<TokenString, State> = inst
            .space
            .enumerate(&inst.x, false)
            .into_iter()
            .map(|z| {
                let s = inst.model.final_state(&z).unwrap();
                (z, s)
            })
            .collect();
        members += brute.len();
        let same_keys = dp.keys().eq(brute.keys());
        let same_states = dp
            .iter()
            .zip(&brute)
            .all(|((_, a), (_, b))| states_close(a, b, 1e-12));
        if !(same_keys && same_states) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && secs < 10.0,
        format!("200 instances, {members} members, {mismatches} mismatches, {secs:.2}s"),
    )
}

/// Every concrete final state lies in the abstract hull.
fn c2_soundness() -> Outcome {
    let mut r = rng(2);
    let mut instances = equivalence_instances();
    instances.extend((0..100).map(|_| large_instance(&mut r)));
    let mut violations = 0;
    let mut checked = 0;
    for inst in &instances {
        let run = abstract_final(&inst.model, &inst.x, &inst.space).map_err(|e| e.to_string())?;
        inst.space
            .visit_members(&inst.x, false, |z| {
                checked += 1;
                let s = inst.model.final_state(z).unwrap();
                if !run.final_hull.contains(&s.to_vec(), 1e-9).unwrap() {
                    violations += 1;
                }
                std::ops::ControlFlow::Continue(())
            });
    }
    check(
        violations == 0,
        format!("{} instances, {checked} members, {violations} violations", instances.len()),
    )
}

/// Certification never claims robustness the exhaustive check refutes.
fn c3_end_to_end() -> Outcome {
    let mut r = rng(3);
    let (mut certified, mut robust, mut violations) = (0, 0, 0);
    for trial in 0..500 {
        let arch = if trial % 2 == 0 { Arch::Lstm } else { Arch::Bilstm };
        let mut inst = small_instance(&mut r, arch, 6);
        let y = inst.model.predict_sequence(&inst.x).unwrap();
        // Push some trials towards certifiable margins.
        inst.model.classifier.b[y] += r.gen_range(0.0..0.3);
        let cert = certify(&inst.model, &inst.x, y, &inst.space).map_err(|e| e.to_string())?;
        let ex = exhaustive_check(&inst.model, &inst.x, y, &inst.space, 1_000_000).map_err(|e| e.to_string())?;
        certified += cert.certified as usize;
        robust += ex.robust as usize;
        if cert.certified && !ex.robust {
            violations += 1;
        }
    }
    check(
        violations == 0 && certified > 0,
        format!("500 trials, {certified} certified, {robust} exhaustively robust, {violations} violations"),
    )
}

fn review_vocab() -> (Vocab, PerturbationSpace, Vec<Symbol>) {
    let stop = ["to", "the", "a", "of", "and", "is"];
    let syn: [(&str, &[&str]); 5] = [
        ("movie", &["film", "movies", "picture"]),
        ("good", &["great", "fine"]),
        ("bad", &["poor", "awful"]),
        ("funny", &["hilarious", "comic"]),
        ("story", &["plot", "tale"]),
    ];
    let plain = ["it", "was", "very", "this", "actor", "scene", "not"];
    let mut words: Vec<&str> = stop.to_vec();
    for (k, vs) in &syn {
        words.push(k);
        words.extend(vs.iter());
    }
    words.extend(plain);
    let vocab = Vocab::new(words).unwrap();
    let del = Transformation::delete(stop.iter().map(|w| vocab.symbol(w).unwrap()));
    let sub = Transformation::substitute(syn.iter().map(|(k, vs)| {
        (vocab.symbol(k).unwrap(), vs.iter().map(|w| vocab.symbol(w).unwrap()).collect::<Vec<_>>())
    }));
    let space = PerturbationSpace::new(vec![(del, 2), (sub, 2)]);
    // Sentence pool: stop words, synonym keys and plain words in rotation.
    let mut r = rng(4);
    let pools: [Vec<&str>; 3] = [stop.to_vec(), syn.iter().map(|(k, _)| *k).collect(), plain.to_vec()];
    let sentence = (0..50)
        .map(|_| {
            let pool = &pools[r.gen_range(0..3)];
            vocab.symbol(pool[r.gen_range(0..pool.len())]).unwrap()
        })
        .collect();
    (vocab, space, sentence)
}

/// Cell evaluations grow linearly in the input length.
fn c4_complexity() -> Outcome {
    let (vocab, space, sentence) = review_vocab();
    let dims = ModelDims { embed: 4, hidden: 4, classes: 2 };
    let model = ModelBundle::gen_random(4, vocab, dims, Arch::Lstm).unwrap();
    let n = space.len();
    let prod: usize = space.budgets().iter().map(|d| d + 1).product();
    let mut ratios = Vec::new();
    let mut bound_ok = true;
    let mut detail = String::new();
    for len in [10, 20, 30, 40, 50] {
        let run = abstract_final(&model, &sentence[..len], &space).map_err(|e| e.to_string())?;
        bound_ok &= run.cells <= 4 * len * n * prod;
        ratios.push(run.cells as f64 / len as f64);
        detail.push_str(&format!(" L={len}:{}", run.cells));
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (max - min) / max;
    check(
        spread < 0.10 && bound_ok,
        format!("cells{detail}; ratio spread {:.1}%, bound 4·L·n·Π(δ+1) held: {bound_ok}", spread * 100.0),
    )
}

/// Restricting the table to feasible lengths leaves the final hull unchanged.
fn c5_feasible_filter() -> Outcome {
    let mut r = rng(5);
    let mut differ = 0;
    for _ in 0..100 {
        let inst = small_instance(&mut r, Arch::Lstm, 8);
        let a = abstract_run(&inst.model, &inst.x, &inst.space, DpOptions::default()).map_err(|e| e.to_string())?;
        let all = DpOptions { materialize_all: true, ..DpOptions::default() };
        let b = abstract_run(&inst.model, &inst.x, &inst.space, all).map_err(|e| e.to_string())?;
        let bits = |h: &IntervalBox| -> Vec<(u64, u64)> { h.dims().iter().map(|i| (i.lo.to_bits(), i.hi.to_bits())).collect() };
        if bits(&a.final_hull) != bits(&b.final_hull) {
            differ += 1;
        }
    }
    check(differ == 0, format!("100 instances, {differ} hulls differ"))
}

fn random_interval(r: &mut ChaCha8Rng, scale: f64) -> Interval {
    let a = r.gen_range(-scale..scale);
    let b = r.gen_range(-scale..scale);
    Interval::new(a.min(b), a.max(b)).unwrap()
}

fn sample(r: &mut ChaCha8Rng, i: Interval) -> f64 {
    match r.gen_range(0..6) {
        0 => i.lo,
        1 => i.hi,
        _ => r.gen_range(i.lo..=i.hi),
    }
}

fn random_box(r: &mut ChaCha8Rng, dim: usize, scale: f64) -> IntervalBox {
    IntervalBox::new((0..dim).map(|_| random_interval(r, scale)).collect())
}

fn sample_box(r: &mut ChaCha8Rng, b: &IntervalBox) -> Vec<f64> {
    b.dims().iter().map(|i| sample(r, *i)).collect()
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

/// Concrete images of sampled points lie inside each abstract transformer.
fn c6_transformers() -> Outcome {
    const N: usize = 10_000;
    let mut r = rng(6);
    let mut failures: Vec<&str> = Vec::new();
    let prim = 1e-12;
    let cell_tol = 1e-9;

    let mut bad = 0;
    for _ in 0..N {
        let (a, b) = (random_interval(&mut r, 10.0), random_interval(&mut r, 10.0));
        let (x, y) = (sample(&mut r, a), sample(&mut r, b));
        bad += !a.add(b).contains(x + y, prim) as usize;
    }
    if bad > 0 {
        failures.push("add");
    }

    bad = 0;
    for _ in 0..N {
        let (a, b) = (random_interval(&mut r, 10.0), random_interval(&mut r, 10.0));
        let (x, y) = (sample(&mut r, a), sample(&mut r, b));
        bad += !a.mul(b).contains(x * y, prim) as usize;
    }
    if bad > 0 {
        failures.push("mul");
    }

    bad = 0;
    for _ in 0..N / 10 {
        let (rows, cols) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let w = random_matrix(&mut r, rows, cols);
        let bias: Vec<f64> = (0..rows).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v = random_box(&mut r, cols, 3.0);
        let out = matvec(&w, &bias, &v).unwrap();
        for _ in 0..10 {
            let p = sample_box(&mut r, &v);
            let img = w.affine(&p, &bias).unwrap();
            bad += !out.contains(&img, prim).unwrap() as usize;
        }
    }
    if bad > 0 {
        failures.push("matvec");
    }

    bad = 0;
    for f in [Monotone::Sigmoid, Monotone::Tanh, Monotone::Relu] {
        for _ in 0..N {
            let a = random_interval(&mut r, 20.0);
            bad += !a.map_monotone(f).contains(f.eval(sample(&mut r, a)), prim) as usize;
        }
    }
    if bad > 0 {
        failures.push("monotone");
    }

    bad = 0;
    for _ in 0..N / 10 {
        let (e, h) = (r.gen_range(1..=5), r.gen_range(1..=5));
        let p = LstmParams {
            w_x: random_matrix(&mut r, 4 * h, e),
            w_h: random_matrix(&mut r, 4 * h, h),
            b: (0..4 * h).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };
        let xb = random_box(&mut r, e, 1.0);
        let sb = random_box(&mut r, 2 * h, 1.0);
        let out = p.cell_abs(&xb, &sb).unwrap();
        for _ in 0..10 {
            let x = sample_box(&mut r, &xb);
            let s = sample_box(&mut r, &sb);
            let st = State { h: s[..h].to_vec(), c: s[h..].to_vec() };
            let img = p.cell(&x, &st).unwrap();
            bad += !out.contains(&img.to_vec(), cell_tol).unwrap() as usize;
        }
    }
    if bad > 0 {
        failures.push("lstm_cell_abs");
    }

    bad = 0;
    for _ in 0..N / 10 {
        let h = r.gen_range(1..=5);
        let p = TreeLstmParams {
            u_l: random_matrix(&mut r, 5 * h, h),
            u_r: random_matrix(&mut r, 5 * h, h),
            b: (0..5 * h).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };
        let lb = random_box(&mut r, 2 * h, 1.0);
        let rb = random_box(&mut r, 2 * h, 1.0);
        let out = p.cell_abs(&lb, &rb).unwrap();
        for _ in 0..10 {
            let l = sample_box(&mut r, &lb);
            let rr = sample_box(&mut r, &rb);
            let ls = State { h: l[..h].to_vec(), c: l[h..].to_vec() };
            let rs = State { h: rr[..h].to_vec(), c: rr[h..].to_vec() };
            let img = p.cell(&ls, &rs).unwrap();
            bad += !out.contains(&img.to_vec(), cell_tol).unwrap() as usize;
        }
    }
    if bad > 0 {
        failures.push("trlstm_cell_abs");
    }

    check(
        failures.is_empty(),
        format!("10^4 samples per op; failing ops: {failures:?}"),
    )
}

fn tree_space(r: &mut ChaCha8Rng, v: usize, tree: &Tree) -> PerturbationSpace {
    let stop: Vec<Symbol> = (0..v as u32).filter(|_| r.gen_bool(0.4)).map(Symbol).collect();
    PerturbationSpace::new(vec![
        (random_substitute(r, v, &tree.leaves()), 1),
        (Transformation::Duplicate, 1),
        (Transformation::delete(stop), 1),
    ])
}

/// Tree hulls contain every perturbed tree's state; certification agrees
/// with the tree oracle.
fn c7_trees() -> Outcome {
    let mut r = rng(7);
    let (mut violations, mut trees) = (0, 0);
    for _ in 0..100 {
        let v = r.gen_range(2..=8);
        let hidden = r.gen_range(1..=6);
        let model = random_model(&mut r, v, hidden, Arch::Treelstm);
        let leaves = r.gen_range(1..=7);
        let tree = random_tree(&mut r, v, leaves);
        let space = tree_space(&mut r, v, &tree);
        let run = tree_abstract_final(&model, &tree, &space).map_err(|e| e.to_string())?;
        for t in oracle_trees(&space, &tree, false) {
            trees += 1;
            let s = oracle_tree_state(&model, &t);
            violations += !run.hull.contains(&s.to_vec(), 1e-9).unwrap() as usize;
        }
    }
    let (mut contradictions, mut certified) = (0, 0);
    for _ in 0..200 {
        let v = r.gen_range(2..=8);
        let hidden = r.gen_range(1..=6);
        let mut model = random_model(&mut r, v, hidden, Arch::Treelstm);
        let leaves = r.gen_range(1..=7);
        let tree = random_tree(&mut r, v, leaves);
        let space = tree_space(&mut r, v, &tree);
        let feats = |t| oracle_tree_state(&model, t).h;
        let y = model.classifier.predict(&feats(&tree)).unwrap();
        model.classifier.b[y] += r.gen_range(0.0..0.3);
        let res = certify_tree(&model, &tree, y, &space).map_err(|e| e.to_string())?;
        let robust = oracle_trees(&space, &tree, false)
            .iter()
            .all(|t| model.classifier.predict(&oracle_tree_state(&model, t).h).unwrap() == y);
        certified += res.certified as usize;
        contradictions += (res.certified && !robust) as usize;
    }
    check(
        violations == 0 && contradictions == 0,
        format!(
            "100 trees, {trees} perturbed trees, {violations} violations; 200 trials, {certified} certified, {contradictions} contradictions"
        ),
    )
}

/// Prefix hulls contain every prefix state, including mid-transformation ones.
fn c8_prefix_states() -> Outcome {
    // Two-word swap: the state after reading only "the" is mid-swap.
    let vocab = Vocab::new(["to", "the"]).unwrap();
    let dims = ModelDims { embed: 3, hidden: 3, classes: 2 };
    let model = ModelBundle::gen_random(8, vocab.clone(), dims, Arch::Lstm).unwrap();
    let x = vocab.encode("to the").unwrap();
    let space = PerturbationSpace::new(vec![(Transformation::Swap, 1)]);
    let hulls = prefix_hulls(&model, &x, &space).map_err(|e| e.to_string())?;
    let mid = model.final_state(&vocab.encode("the").unwrap()).unwrap();
    let swap_ok = hulls
        .get(&1)
        .is_some_and(|h| h.contains(&mid.to_vec(), 1e-9).unwrap());

    let mut r = rng(8);
    let (mut violations, mut states) = (0, 0);
    for _ in 0..100 {
        let inst = small_instance(&mut r, Arch::Lstm, 6);
        let hulls = prefix_hulls(&inst.model, &inst.x, &inst.space).map_err(|e| e.to_string())?;
        for z in oracle_members(&inst.space, &inst.x, false) {
            for i in 1..=z.len() {
                states += 1;
                let s = oracle_lstm(&inst.model, &z[..i]);
                let ok = hulls.get(&i).is_some_and(|h| h.contains(&s.to_vec(), 1e-9).unwrap());
                violations += !ok as usize;
            }
        }
    }
    check(
        swap_ok && violations == 0,
        format!("swap mid-state covered: {swap_ok}; 100 instances, {states} prefix states, {violations} violations"),
    )
}

fn running_vocab() -> Vocab {
    let mut words = vec!["to", "the", "movie", "film", "movies"];
    words.extend(["a", "good", "bad", "plot", "it", "was", "very", "and"]);
    Vocab::new(words).unwrap()
}

fn running_space(vocab: &Vocab) -> PerturbationSpace {
    let s = |w| vocab.symbol(w).unwrap();
    PerturbationSpace::new(vec![
        (Transformation::delete([s("to"), s("the")]), 1),
        (Transformation::substitute([(s("movie"), [s("film"), s("movies")])]), 1),
    ])
}

/// Certified accuracy ≤ exhaustive accuracy ≤ attack accuracy.
fn c9_metric_ordering() -> Outcome {
    let vocab = running_vocab();
    let dims = ModelDims { embed: 8, hidden: 8, classes: 2 };
    let model = ModelBundle::gen_random(11, vocab.clone(), dims, Arch::Lstm).unwrap();
    let space = running_space(&vocab);
    let data = Dataset::synthetic(11, vocab.len(), 50, 3..=12, 2);
    let start = Instant::now();
    let report = eval_metrics(&model, &data, &space, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let a = &report.aggregates;
    let (ex, at) = (a.ex_acc.unwrap_or(f64::NAN), a.attack_acc.unwrap_or(f64::NAN));
    check(
        a.cf_acc <= ex && ex <= at && a.ex_coverage == Some(1.0) && secs < 60.0,
        format!(
            "accuracy {:.2}, cf_acc {:.2}, ex_acc {ex:.2}, attack_acc {at:.2}, {secs:.2}s",
            a.accuracy, a.cf_acc
        ),
    )
}

/// A 20-token input with hidden size 100 certifies within a second.
fn c10_performance() -> Outcome {
    let (vocab, space, sentence) = review_vocab();
    let dims = ModelDims { embed: 100, hidden: 100, classes: 2 };
    let model = ModelBundle::gen_random(10, vocab, dims, Arch::Lstm).unwrap();
    let x = &sentence[..20];
    let start = Instant::now();
    let res = certify(&model, x, 0, &space).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 1.0, format!("{} cells in {secs:.3}s", res.cells_evaluated))
}

fn run_cli(args: &[&str], dir: &Path, threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_arc"))
        .args(args)
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Every CLI command is byte-reproducible.
fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let words = running_vocab().words().join(" ");
    let space = r#"{"transformations":[{"kind":"delete","budget":1,"match":["to","the"]},{"kind":"substitute","budget":1,"table":{"movie":["film","movies"]}},{"kind":"duplicate","budget":1}]}"#;
    std::fs::write(d.join("s.json"), space).map_err(|e| e.to_string())?;
    let data = Dataset::synthetic(3, running_vocab().len(), 12, 2..=8, 2).to_tsv(&running_vocab());
    std::fs::write(d.join("d.tsv"), data).map_err(|e| e.to_string())?;

    let mut same = Vec::new();
    for out in ["a.json", "b.json"] {
        run_cli(&["gen-model", "--seed", "7", "--words", &words, "--embed", "6", "--hidden", "6", "--out", out], d, "1")?;
    }
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    same.push(("gen-model", read("a.json") == read("b.json")));

    let input = "to the movie was very good";
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("certify", vec!["certify", "--model", "a.json", "--space", "s.json", "--input", input, "--label", "1"]),
        ("enumerate", vec!["enumerate", "--space", "s.json", "--vocab-from", "a.json", "--input", input]),
        ("attack", vec!["attack", "--model", "a.json", "--space", "s.json", "--input", input, "--label", "1"]),
        ("eval", vec!["eval", "--model", "a.json", "--space", "s.json", "--data", "d.tsv"]),
    ];
    for (name, args) in &commands {
        let first = run_cli(args, d, "1")?;
        let second = run_cli(args, d, "4")?;
        same.push((name, !first.is_empty() && first == second));
    }
    run_cli(&["eval", "--model", "a.json", "--space", "s.json", "--data", "d.tsv", "--out", "r1.json"], d, "2")?;
    run_cli(&["eval", "--model", "a.json", "--space", "s.json", "--data", "d.tsv", "--out", "r2.json"], d, "3")?;
    same.push(("eval --out", read("r1.json") == read("r2.json")));

    let differing: BTreeSet<&str> = same.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    check(
        differing.is_empty(),
        format!("{} command runs compared; differing: {differing:?}", same.len()),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("concrete DP equals brute force", c1_equivalence),
        ("abstract hull contains every final state", c2_soundness),
        ("certification never contradicts exhaustive check", c3_end_to_end),
        ("cell count linear in input length", c4_complexity),
        ("feasible-length filter preserves hulls", c5_feasible_filter),
        ("interval transformers sound", c6_transformers),
        ("tree certification sound", c7_trees),
        ("prefix hulls contain prefix states", c8_prefix_states),
        ("cf_acc <= ex_acc <= attack_acc", c9_metric_ordering),
        ("single-input performance", c10_performance),
        ("CLI byte determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] criterion {:>2}: {name} — {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
