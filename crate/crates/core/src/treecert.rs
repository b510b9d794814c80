//! Certification of binary TreeLSTM models under tree transformations.
//!
//! Tree spaces reuse [`PerturbationSpace`] with three leaf-level kinds:
//! `Substitute` (replace a leaf word by a synonym), `Duplicate` (expand a
//! leaf `a` into `(a a)`) and `Delete` (remove a stop-word leaf; its sibling
//! takes the parent's place). Budgets are global to the tree. Each original
//! leaf receives at most one transformation.
//!
//! Per node `v` and tight sub-space `S`, `H[v, S]` holds the states of the
//! perturbed subtree at `v` (when `v` survives). Internal nodes merge
//! children over every split `(S', S - S')`, and add the cases where one
//! child is a deletable subtree removed wholesale.

use std::collections::BTreeSet;
use std::fmt;

use crate::cert::CertResult;
use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::model::{Arch, ModelBundle, State};
use crate::perturbation::{BudgetLattice, PerturbationSpace, TransformKind, Transformation, DEFAULT_ENUM_CAP};
use crate::vocab::{Symbol, Vocab};

/// Strictly binary tree with one symbol per leaf.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tree {
    Leaf(Symbol),
    Node(Box<Tree>, Box<Tree>),
}

impl Tree {
    pub fn node(left: Tree, right: Tree) -> Tree {
        Tree::Node(Box::new(left), Box::new(right))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    /// Leaf symbols from left to right.
    pub fn leaves(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<Symbol>) {
        match self {
            Tree::Leaf(s) => out.push(*s),
            Tree::Node(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    /// All subtrees in post-order; the root is last.
    pub fn postorder(&self) -> Vec<&Tree> {
        let mut out = Vec::new();
        self.collect_postorder(&mut out);
        out
    }

    fn collect_postorder<'a>(&'a self, out: &mut Vec<&'a Tree>) {
        if let Tree::Node(l, r) = self {
            l.collect_postorder(out);
            r.collect_postorder(out);
        }
        out.push(self);
    }

    /// Parses an s-expression such as `((to the) movie)`. A bare token is a
    /// single-leaf tree. Every parenthesized group must hold exactly two
    /// subtrees.
    pub fn parse(text: &str, vocab: &Vocab) -> Result<Tree> {
        let tokens = lex(text);
        let mut pos = 0;
        let tree = parse_at(&tokens, &mut pos, vocab)?;
        if pos != tokens.len() {
            return Err(Error::invalid("tree", format!("trailing input after position {pos}")));
        }
        Ok(tree)
    }

    pub fn display<'a>(&'a self, vocab: &'a Vocab) -> TreeDisplay<'a> {
        TreeDisplay { tree: self, vocab }
    }

    fn is_all_stop(&self, words: &BTreeSet<Symbol>) -> bool {
        match self {
            Tree::Leaf(s) => words.contains(s),
            Tree::Node(l, r) => l.is_all_stop(words) && r.is_all_stop(words),
        }
    }
}

pub struct TreeDisplay<'a> {
    tree: &'a Tree,
    vocab: &'a Vocab,
}

impl fmt::Display for TreeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tree {
            Tree::Leaf(s) => match self.vocab.word(*s) {
                Some(w) => f.write_str(w),
                None => write!(f, "<{}>", s.0),
            },
            Tree::Node(l, r) => write!(
                f,
                "({} {})",
                l.display(self.vocab),
                r.display(self.vocab)
            ),
        }
    }
}

fn lex(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_at(tokens: &[String], pos: &mut usize, vocab: &Vocab) -> Result<Tree> {
    let Some(tok) = tokens.get(*pos) else {
        return Err(Error::invalid("tree", "unexpected end of input"));
    };
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    None => return Err(Error::invalid("tree", "unclosed parenthesis")),
                    Some(")") => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_at(tokens, pos, vocab)?),
                }
            }
            match <[Tree; 2]>::try_from(children) {
                Ok([l, r]) => Ok(Tree::node(l, r)),
                Err(children) => Err(Error::invalid(
                    "tree",
                    format!("node with {} children; trees must be binary", children.len()),
                )),
            }
        }
        ")" => Err(Error::invalid("tree", "unbalanced ')'")),
        word => Ok(Tree::Leaf(vocab.symbol(word)?)),
    }
}

/// Validated view of a tree space: which item (if any) deletes stop words.
struct TreeSpace<'a> {
    space: &'a PerturbationSpace,
    lattice: BudgetLattice,
    delete: Option<(usize, &'a BTreeSet<Symbol>)>,
}

impl<'a> TreeSpace<'a> {
    fn new(space: &'a PerturbationSpace) -> Result<Self> {
        let mut delete = None;
        for (k, t) in space.transformations().enumerate() {
            match t {
                Transformation::Delete { words } => {
                    if delete.is_some() {
                        return Err(Error::argument("tree spaces allow at most one delete transformation"));
                    }
                    delete = Some((k, words));
                }
                Transformation::Substitute { .. } | Transformation::Duplicate => {}
                other => {
                    return Err(Error::argument(format!(
                        "{} is not a tree transformation",
                        other.kind()
                    )))
                }
            }
        }
        Ok(TreeSpace {
            space,
            lattice: BudgetLattice::new(&space.budgets()),
            delete,
        })
    }
}

/// True iff every leaf of `tree` is in `stopwords` and it has at most
/// `budget` leaves.
pub fn deletable(tree: &Tree, budget: usize, stopwords: &BTreeSet<Symbol>) -> bool {
    tree.leaf_count() <= budget && tree.is_all_stop(stopwords)
}

/// Every perturbed tree reachable from `tree` within the budgets of `space`
/// (exactly the budgets when `tight`), sorted and deduplicated.
pub fn enumerate_trees(space: &PerturbationSpace, tree: &Tree, tight: bool, cap: usize) -> Result<Vec<Tree>> {
    let ts = TreeSpace::new(space)?;
    let per_usage = enumerate_node(&ts, tree, cap)?;
    let mut out = BTreeSet::new();
    for (usage, set) in per_usage.iter().enumerate() {
        if tight && usage != ts.lattice.full() {
            continue;
        }
        out.extend(set.iter().flatten().cloned());
        if out.len() > cap {
            return Err(Error::SpaceTooLarge { cap });
        }
    }
    Ok(out.into_iter().collect())
}

/// Per budget-usage index: the possible outcomes for this subtree, `None`
/// meaning it was deleted entirely.
fn enumerate_node(ts: &TreeSpace, tree: &Tree, cap: usize) -> Result<Vec<BTreeSet<Option<Tree>>>> {
    let lat = &ts.lattice;
    let mut out: Vec<BTreeSet<Option<Tree>>> = vec![BTreeSet::new(); lat.len()];
    match tree {
        Tree::Leaf(sym) => {
            out[0].insert(Some(tree.clone()));
            for (k, t) in ts.space.transformations().enumerate() {
                let Some(idx) = lat.unit(k, 1).filter(|_| lat.bounds()[k] >= 1) else {
                    continue;
                };
                match t.kind() {
                    TransformKind::Substitute => {
                        for c in t.replacements(&[*sym]) {
                            out[idx].insert(Some(Tree::Leaf(c[0])));
                        }
                    }
                    TransformKind::Duplicate => {
                        out[idx].insert(Some(Tree::node(tree.clone(), tree.clone())));
                    }
                    TransformKind::Delete => {
                        if t.matches(&[*sym]) {
                            out[idx].insert(None);
                        }
                    }
                    _ => unreachable!("validated tree space"),
                }
            }
        }
        Tree::Node(l, r) => {
            let left = enumerate_node(ts, l, cap)?;
            let right = enumerate_node(ts, r, cap)?;
            let mut total = 0usize;
            for (ua, sa) in left.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
                for (ub, sb) in right.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
                    let Some(u) = lat.add(ua, ub) else { continue };
                    for a in sa {
                        for b in sb {
                            let merged = match (a, b) {
                                (None, None) => None,
                                (None, Some(t)) | (Some(t), None) => Some(t.clone()),
                                (Some(a), Some(b)) => Some(Tree::node(a.clone(), b.clone())),
                            };
                            if out[u].insert(merged) {
                                total += 1;
                                if total > cap {
                                    return Err(Error::SpaceTooLarge { cap });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concrete TreeLSTM evaluation; leaves read `lstm(x_u, h0)`.
pub fn tree_state(model: &ModelBundle, tree: &Tree) -> Result<State> {
    let tp = model
        .treelstm
        .as_ref()
        .ok_or_else(|| Error::Architecture("tree evaluation needs a treelstm model".into()))?;
    model.check_symbols(&tree.leaves())?;
    fn go(model: &ModelBundle, tp: &crate::model::TreeLstmParams, t: &Tree) -> State {
        match t {
            Tree::Leaf(s) => model.run(&model.lstm, &[*s], &State::zeros(model.dim_hidden())),
            Tree::Node(l, r) => tp.cell_unchecked(&go(model, tp, l), &go(model, tp, r)),
        }
    }
    Ok(go(model, tp, tree))
}

pub fn predict_tree(model: &ModelBundle, tree: &Tree) -> Result<usize> {
    model.classifier.predict(&tree_state(model, tree)?.h)
}

/// Per node (post-order id) and tight sub-space index: the abstract state
/// of the surviving perturbed subtree, if any.
#[derive(Debug, Clone)]
pub struct NodeStateMap {
    pub lattice: BudgetLattice,
    maps: Vec<Vec<Option<IntervalBox>>>,
}

impl NodeStateMap {
    pub fn get(&self, node: usize, sub: usize) -> Option<&IntervalBox> {
        self.maps.get(node)?.get(sub)?.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.maps.len()
    }

    pub fn root(&self) -> &[Option<IntervalBox>] {
        self.maps.last().expect("at least one node")
    }
}

#[derive(Debug, Clone)]
pub struct TreeRun {
    pub hull: IntervalBox,
    pub node_map: NodeStateMap,
    /// Abstract LSTM plus TreeLSTM cell applications.
    pub cells: usize,
}

pub fn tree_abstract_final(model: &ModelBundle, tree: &Tree, space: &PerturbationSpace) -> Result<TreeRun> {
    let tp = model
        .treelstm
        .as_ref()
        .ok_or_else(|| Error::Architecture("tree certification needs a treelstm model".into()))?;
    model.check_symbols(&tree.leaves())?;
    let ts = TreeSpace::new(space)?;
    let lat = &ts.lattice;
    let h0 = State::zeros(model.dim_hidden()).to_box();
    let mut cells = 0usize;
    let nodes = tree.postorder();
    let mut maps: Vec<Vec<Option<IntervalBox>>> = Vec::with_capacity(nodes.len());
    let mut stack: Vec<usize> = Vec::new();

    for (id, node) in nodes.iter().enumerate() {
        let mut map: Vec<Option<IntervalBox>> = vec![None; lat.len()];
        match node {
            Tree::Leaf(sym) => {
                let base = model
                    .lstm
                    .cell_abs_unchecked(IntervalBox::point(model.embedding(*sym)).dims(), &h0);
                cells += 1;
                for (k, t) in space.transformations().enumerate() {
                    if lat.bounds()[k] == 0 {
                        continue;
                    }
                    let idx = lat.unit(k, 1).expect("budget >= 1");
                    match t.kind() {
                        TransformKind::Substitute => {
                            let subs = t.replacements(&[*sym]);
                            if subs.is_empty() {
                                continue;
                            }
                            let emb = model.embed_abs_unchecked(&subs, 1);
                            let b = model.lstm.cell_abs_unchecked(emb[0].dims(), &h0);
                            cells += 1;
                            join_slot(&mut map[idx], b);
                        }
                        TransformKind::Duplicate => {
                            let b = tp.cell_abs_unchecked(&base, &base);
                            cells += 1;
                            join_slot(&mut map[idx], b);
                        }
                        _ => {}
                    }
                }
                map[0] = Some(base);
            }
            Tree::Node(l, r) => {
                let right_id = stack.pop().expect("right child");
                let left_id = stack.pop().expect("left child");
                let (ml, mr) = (&maps[left_id], &maps[right_id]);
                for (s, slot) in map.iter_mut().enumerate() {
                    let mut acc: Option<IntervalBox> = None;
                    for sp in lat.below(s) {
                        let rest = lat.subtract(s, sp).expect("sp below s");
                        if let (Some(a), Some(b)) = (&ml[sp], &mr[rest]) {
                            join_slot(&mut acc, tp.cell_abs_unchecked(a, b));
                            cells += 1;
                        }
                    }
                    if let Some((kd, words)) = ts.delete {
                        let budget = lat.budgets(s)[kd];
                        for (gone, kept) in [(l, mr), (r, ml)] {
                            if !deletable(gone, budget, words) {
                                continue;
                            }
                            let del = lat.unit(kd, gone.leaf_count()).expect("within budget");
                            let rest = lat.subtract(s, del).expect("within budget");
                            if let Some(b) = &kept[rest] {
                                join_slot(&mut acc, b.clone());
                            }
                        }
                    }
                    *slot = acc;
                }
            }
        }
        maps.push(map);
        stack.push(id);
    }

    let root = maps.last().expect("non-empty tree");
    let mut hull: Option<IntervalBox> = None;
    for b in root.iter().flatten() {
        join_slot(&mut hull, b.clone());
    }
    Ok(TreeRun {
        hull: hull.expect("unperturbed tree always survives"),
        node_map: NodeStateMap {
            lattice: ts.lattice.clone(),
            maps,
        },
        cells,
    })
}

fn join_slot(slot: &mut Option<IntervalBox>, b: IntervalBox) {
    match slot {
        Some(a) => a.join_assign(&b),
        None => *slot = Some(b),
    }
}

fn require_tree(model: &ModelBundle) -> Result<()> {
    if model.arch != Arch::Treelstm {
        return Err(Error::Architecture(format!(
            "tree certification needs a treelstm model, got {}",
            model.arch
        )));
    }
    Ok(())
}

pub fn certify_tree(model: &ModelBundle, tree: &Tree, y: usize, space: &PerturbationSpace) -> Result<CertResult> {
    require_tree(model)?;
    model.check_label(y)?;
    let run = tree_abstract_final(model, tree, space)?;
    let margin_upper = model
        .classifier
        .margin_upper(&run.hull.slice(0..model.dim_hidden()), y)?;
    Ok(CertResult {
        certified: margin_upper < 0.0,
        margin_upper,
        cells_evaluated: run.cells,
        final_hull: run.hull,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeExhaustiveResult {
    pub robust: bool,
    pub counterexample: Option<Tree>,
    pub space_size: usize,
}

/// Classifies every perturbed tree; fails when there are more than `cap`.
pub fn exhaustive_check_tree(
    model: &ModelBundle,
    tree: &Tree,
    y: usize,
    space: &PerturbationSpace,
    cap: usize,
) -> Result<TreeExhaustiveResult> {
    require_tree(model)?;
    model.check_label(y)?;
    let trees = enumerate_trees(space, tree, false, cap)?;
    // The original first, then the sorted remainder.
    let ordered = std::iter::once(tree).chain(trees.iter().filter(|t| *t != tree));
    for t in ordered {
        if predict_tree(model, t)? != y {
            return Ok(TreeExhaustiveResult {
                robust: false,
                counterexample: Some(t.clone()),
                space_size: trees.len(),
            });
        }
    }
    Ok(TreeExhaustiveResult {
        robust: true,
        counterexample: None,
        space_size: trees.len(),
    })
}

/// Scans up to `budget` perturbed trees (original first) for a misclassification.
pub fn attack_tree(
    model: &ModelBundle,
    tree: &Tree,
    y: usize,
    space: &PerturbationSpace,
    budget: usize,
) -> Result<Option<Tree>> {
    require_tree(model)?;
    model.check_label(y)?;
    if budget == 0 {
        return Err(Error::argument("attack budget must be at least 1"));
    }
    if predict_tree(model, tree)? != y {
        return Ok(Some(tree.clone()));
    }
    let trees = match enumerate_trees(space, tree, false, DEFAULT_ENUM_CAP) {
        Ok(t) => t,
        Err(Error::SpaceTooLarge { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    for t in trees.iter().filter(|t| *t != tree).take(budget - 1) {
        if predict_tree(model, t)? != y {
            return Ok(Some(t.clone()));
        }
    }
    Ok(None)
}
