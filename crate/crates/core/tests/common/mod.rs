//! Random instance generators and brute-force oracles shared by the
//! integration tests. The oracles deliberately avoid the library's own
//! enumeration and DP code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use arc_core::model::{ModelDims, State};
use arc_core::perturbation::PerturbationSpace;
use arc_core::treecert::Tree;
use arc_core::vocab::{Symbol, TokenString, Vocab};
use arc_core::{Arch, Matrix, ModelBundle, Transformation};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vocab(size: usize) -> Vocab {
    Vocab::new((0..size).map(|i| format!("w{i}"))).unwrap()
}

/// Random model with weights scaled up so that predictions react to
/// individual words (uniform ±0.5 weights give nearly constant outputs).
pub fn random_model(r: &mut ChaCha8Rng, vocab_size: usize, hidden: usize, arch: Arch) -> ModelBundle {
    let dims = ModelDims {
        embed: r.gen_range(1..=4),
        hidden,
        classes: r.gen_range(2..=3),
    };
    let mut m = ModelBundle::gen_random(r.gen(), vocab(vocab_size), dims, arch).unwrap();
    let scale = r.gen_range(1.0..6.0);
    let e = &m.embeddings;
    m.embeddings = Matrix::from_fn(e.rows(), e.cols(), |i, j| scale * e.get(i, j));
    let w = &m.classifier.w;
    m.classifier.w = Matrix::from_fn(w.rows(), w.cols(), |i, j| scale * w.get(i, j));
    m
}

/// Words for a match set: mostly drawn from `x` so transformations fire.
fn random_word_set(r: &mut ChaCha8Rng, v: usize, x: &[Symbol]) -> BTreeSet<Symbol> {
    let n = r.gen_range(1..=v.min(3));
    (0..n)
        .map(|_| match x.choose(r) {
            Some(w) if r.gen_bool(0.7) => *w,
            _ => Symbol(r.gen_range(0..v) as u32),
        })
        .collect()
}

fn random_string(r: &mut ChaCha8Rng, v: usize, len: usize) -> TokenString {
    (0..len).map(|_| Symbol(r.gen_range(0..v) as u32)).collect()
}

fn random_window(r: &mut ChaCha8Rng, v: usize, x: &[Symbol], s: usize) -> TokenString {
    if x.len() >= s && r.gen_bool(0.7) {
        let start = r.gen_range(0..=x.len() - s);
        x[start..start + s].to_vec()
    } else {
        random_string(r, v, s)
    }
}

/// Random substitution table whose keys are mostly words of `x`.
pub fn random_substitute(r: &mut ChaCha8Rng, v: usize, x: &[Symbol]) -> Transformation {
    let keys = random_word_set(r, v, x);
    Transformation::substitute(keys.into_iter().map(|k| {
        let subs: Vec<Symbol> = random_word_set(r, v, &[]).into_iter().filter(|s| *s != k).collect();
        (k, subs)
    }))
}

/// A random transformation of any kind, biased to match words of `x`.
pub fn random_transformation(r: &mut ChaCha8Rng, v: usize, x: &[Symbol]) -> Transformation {
    match r.gen_range(0..5) {
        0 => Transformation::delete(random_word_set(r, v, x)),
        1 => random_substitute(r, v, x),
        2 => Transformation::Duplicate,
        3 => Transformation::Swap,
        _ => {
            let s = r.gen_range(1..=2);
            let t = r.gen_range(0..=2);
            let rules: Vec<(TokenString, Vec<TokenString>)> = (0..r.gen_range(1..=3))
                .map(|_| {
                    let key = random_window(r, v, x, s);
                    let outs = (0..r.gen_range(1..=2)).map(|_| random_string(r, v, t)).collect();
                    (key, outs)
                })
                .collect();
            Transformation::table(s, t, rules).unwrap()
        }
    }
}

pub fn random_space(r: &mut ChaCha8Rng, v: usize, x: &[Symbol], max_items: usize, max_budget: usize) -> PerturbationSpace {
    // Mostly non-trivial spaces, with the occasional empty item list or
    // zero budget as an edge case.
    let n = if r.gen_bool(0.05) { 0 } else { r.gen_range(1..=max_items) };
    PerturbationSpace::new(
        (0..n)
            .map(|_| {
                let budget = if r.gen_bool(0.1) { 0 } else { r.gen_range(1..=max_budget) };
                (random_transformation(r, v, x), budget)
            })
            .collect(),
    )
}

/// A random sequence instance in the small regime used for exact checks.
pub struct Instance {
    pub model: ModelBundle,
    pub x: TokenString,
    pub space: PerturbationSpace,
}

pub fn small_instance(r: &mut ChaCha8Rng, arch: Arch, max_len: usize) -> Instance {
    let v = r.gen_range(2..=8);
    let hidden = r.gen_range(1..=8);
    let model = random_model(r, v, hidden, arch);
    let len = if r.gen_bool(0.05) { 0 } else { r.gen_range(1..=max_len) };
    let x = random_string(r, v, len);
    let space = random_space(r, v, &x, 2, 2);
    Instance { model, x, space }
}

/// Larger inputs biased towards words the transformations match.
pub fn large_instance(r: &mut ChaCha8Rng) -> Instance {
    let v = r.gen_range(3..=8);
    let hidden = r.gen_range(1..=4);
    let model = random_model(r, v, hidden, Arch::Lstm);
    let len = r.gen_range(7..=20);
    let x = random_string(r, v, len);
    let space = random_space(r, v, &x, 2, 2);
    Instance { model, x, space }
}

/// Segmentation oracle: choose a set of non-overlapping windows with a
/// transformation each, respecting budgets, then take the product of their
/// replacement choices. Returns members sorted and deduplicated.
pub fn oracle_members(space: &PerturbationSpace, x: &[Symbol], tight: bool) -> BTreeSet<TokenString> {
    let items = space.items();
    // Every (start, k) site where transformation k matches the original.
    let mut sites = Vec::new();
    for (k, (t, budget)) in items.iter().enumerate() {
        if *budget == 0 {
            continue;
        }
        let s = t.domain_size();
        for start in 0..x.len() {
            if start + s <= x.len() && t.matches(&x[start..start + s]) {
                sites.push((start, k));
            }
        }
    }
    let mut out = BTreeSet::new();
    let mut chosen = Vec::new();
    choose(space, x, &sites, 0, &mut chosen, tight, &mut out);
    out
}

fn choose(
    space: &PerturbationSpace,
    x: &[Symbol],
    sites: &[(usize, usize)],
    from: usize,
    chosen: &mut Vec<(usize, usize)>,
    tight: bool,
    out: &mut BTreeSet<TokenString>,
) {
    let items = space.items();
    let mut used = vec![0usize; items.len()];
    for &(_, k) in chosen.iter() {
        used[k] += 1;
    }
    let ok = !tight || used.iter().zip(items).all(|(u, (_, b))| u == b);
    if ok {
        realize(space, x, chosen, out);
    }
    for idx in from..sites.len() {
        let (start, k) = sites[idx];
        if used[k] >= items[k].1 {
            continue;
        }
        let s = items[k].0.domain_size();
        let overlaps = chosen.iter().any(|&(st, kk)| {
            let ss = items[kk].0.domain_size();
            start < st + ss && st < start + s
        });
        if overlaps {
            continue;
        }
        chosen.push((start, k));
        choose(space, x, sites, idx + 1, chosen, tight, out);
        chosen.pop();
    }
}

fn realize(space: &PerturbationSpace, x: &[Symbol], chosen: &[(usize, usize)], out: &mut BTreeSet<TokenString>) {
    let mut sorted = chosen.to_vec();
    sorted.sort();
    let mut partials: Vec<TokenString> = vec![Vec::new()];
    let mut pos = 0;
    for (start, k) in sorted {
        let t = space.transformation(k);
        for p in partials.iter_mut() {
            p.extend_from_slice(&x[pos..start]);
        }
        let s = t.domain_size();
        let reps = t.apply(&x[start..start + s]).unwrap();
        partials = partials
            .iter()
            .flat_map(|p| {
                reps.iter().map(move |rep| {
                    let mut q = p.clone();
                    q.extend_from_slice(rep);
                    q
                })
            })
            .collect();
        pos = start + s;
    }
    for mut p in partials {
        p.extend_from_slice(&x[pos..]);
        out.insert(p);
    }
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// LSTM recurrence written out from the parameter matrices, gates ordered
/// input, forget, candidate, output.
pub fn oracle_lstm(model: &ModelBundle, z: &[Symbol]) -> State {
    let p = &model.lstm;
    let hd = model.dim_hidden();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for &w in z {
        let x = model.embedding(w);
        let pre: Vec<f64> = (0..4 * hd)
            .map(|r| {
                let a: f64 = (0..x.len()).map(|k| p.w_x.get(r, k) * x[k]).sum();
                let b: f64 = (0..hd).map(|k| p.w_h.get(r, k) * h[k]).sum();
                a + b + p.b[r]
            })
            .collect();
        for u in 0..hd {
            c[u] = sig(pre[hd + u]) * c[u] + sig(pre[u]) * pre[2 * hd + u].tanh();
            h[u] = sig(pre[3 * hd + u]) * c[u].tanh();
        }
    }
    State { h, c }
}

/// TreeLSTM over a tree, leaves read by one LSTM step from the zero state.
pub fn oracle_tree_state(model: &ModelBundle, tree: &Tree) -> State {
    match tree {
        Tree::Leaf(w) => oracle_lstm(model, &[*w]),
        Tree::Node(l, r) => {
            let (a, b) = (oracle_tree_state(model, l), oracle_tree_state(model, r));
            let p = model.treelstm.as_ref().unwrap();
            let hd = model.dim_hidden();
            let pre: Vec<f64> = (0..5 * hd)
                .map(|row| {
                    let x: f64 = (0..hd).map(|k| p.u_l.get(row, k) * a.h[k]).sum();
                    let y: f64 = (0..hd).map(|k| p.u_r.get(row, k) * b.h[k]).sum();
                    x + y + p.b[row]
                })
                .collect();
            let mut h = vec![0.0; hd];
            let mut c = vec![0.0; hd];
            for u in 0..hd {
                c[u] = sig(pre[hd + u]) * a.c[u] + sig(pre[2 * hd + u]) * b.c[u] + sig(pre[u]) * pre[3 * hd + u].tanh();
                h[u] = sig(pre[4 * hd + u]) * c[u].tanh();
            }
            State { h, c }
        }
    }
}

pub fn states_close(a: &State, b: &State, tol: f64) -> bool {
    a.h.len() == b.h.len()
        && a.to_vec().iter().zip(b.to_vec()).all(|(x, y)| rel_close(*x, y, tol))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Random binary tree over `leaves` leaves.
pub fn random_tree(r: &mut ChaCha8Rng, v: usize, leaves: usize) -> Tree {
    if leaves == 1 {
        return Tree::Leaf(Symbol(r.gen_range(0..v) as u32));
    }
    let left = r.gen_range(1..leaves);
    Tree::node(random_tree(r, v, left), random_tree(r, v, leaves - left))
}

/// Brute-force tree enumeration: every leaf independently keeps its word,
/// takes a substitute, duplicates, or (if a stop word) disappears; then
/// budgets are checked globally. A node that loses one child collapses to
/// the other; whole-subtree deletion emerges from deleting each leaf.
pub fn oracle_trees(space: &PerturbationSpace, tree: &Tree, tight: bool) -> BTreeSet<Tree> {
    let items = space.items();
    let leaves = tree.leaves();
    let options: Vec<Vec<(Option<usize>, Option<Tree>)>> = leaves
        .iter()
        .map(|&w| {
            let mut opts = vec![(None, Some(Tree::Leaf(w)))];
            for (k, (t, budget)) in items.iter().enumerate() {
                if *budget == 0 {
                    continue;
                }
                match t {
                    Transformation::Substitute { table } => {
                        for s in table.get(&w).into_iter().flatten() {
                            opts.push((Some(k), Some(Tree::Leaf(*s))));
                        }
                    }
                    Transformation::Duplicate => {
                        opts.push((Some(k), Some(Tree::node(Tree::Leaf(w), Tree::Leaf(w)))));
                    }
                    Transformation::Delete { words } if words.contains(&w) => opts.push((Some(k), None)),
                    _ => {}
                }
            }
            opts
        })
        .collect();
    let mut out = BTreeSet::new();
    let mut pick = vec![0usize; leaves.len()];
    loop {
        let mut used = vec![0usize; items.len()];
        for (leaf, &p) in pick.iter().enumerate() {
            if let Some(k) = options[leaf][p].0 {
                used[k] += 1;
            }
        }
        let within = used.iter().zip(items).all(|(u, (_, b))| if tight { u == b } else { u <= b });
        if within {
            let mut next = 0;
            if let Some(t) = rebuild(tree, &options, &pick, &mut next) {
                out.insert(t);
            }
        }
        // advance the mixed-radix counter
        let mut i = 0;
        loop {
            if i == pick.len() {
                return out;
            }
            pick[i] += 1;
            if pick[i] < options[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

fn rebuild(
    tree: &Tree,
    options: &[Vec<(Option<usize>, Option<Tree>)>],
    pick: &[usize],
    next: &mut usize,
) -> Option<Tree> {
    match tree {
        Tree::Leaf(_) => {
            let leaf = *next;
            *next += 1;
            options[leaf][pick[leaf]].1.clone()
        }
        Tree::Node(l, r) => {
            let a = rebuild(l, options, pick, next);
            let b = rebuild(r, options, pick, next);
            match (a, b) {
                (Some(a), Some(b)) => Some(Tree::node(a, b)),
                (a, b) => a.or(b),
            }
        }
    }
}

/// Every concrete state of every member, for spot checks.
pub fn member_states(model: &ModelBundle, members: &BTreeSet<TokenString>) -> BTreeMap<TokenString, State> {
    members.iter().map(|z| (z.clone(), oracle_lstm(model, z))).collect()
}

pub fn shuffle<T>(r: &mut ChaCha8Rng, v: &mut [T]) {
    v.shuffle(r);
}
