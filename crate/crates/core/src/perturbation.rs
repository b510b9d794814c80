//! Programmable perturbation spaces over token strings.
//!
//! A [`Transformation`] is a match/replace pair over fixed-length windows of
//! the *original* string. A [`PerturbationSpace`] pairs each transformation
//! with a budget and describes every string reachable by applying each
//! transformation at most that many times to non-overlapping windows.
//! Replacement outputs are never matched again.
//!
//! Enumeration here is the brute-force ground truth that the memoized
//! certifier in [`crate::cert`] is checked against.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::vocab::{Symbol, TokenString};

/// Default cap on the number of distinct members an exhaustive enumeration
/// may produce.
pub const DEFAULT_ENUM_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Delete,
    Substitute,
    Duplicate,
    Swap,
    Table,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Delete => "delete",
            TransformKind::Substitute => "substitute",
            TransformKind::Duplicate => "duplicate",
            TransformKind::Swap => "swap",
            TransformKind::Table => "table",
        })
    }
}

/// A string transformation: a match predicate over length-`s` windows and a
/// replace function producing a set of length-`t` strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transformation {
    /// Deletes any single symbol from `words` (`s = 1`, `t = 0`).
    Delete { words: BTreeSet<Symbol> },
    /// Replaces a symbol by one of its listed substitutes (`s = 1`, `t = 1`).
    Substitute {
        table: BTreeMap<Symbol, BTreeSet<Symbol>>,
    },
    /// Duplicates any symbol: `a -> a a` (`s = 1`, `t = 2`).
    Duplicate,
    /// Swaps any two adjacent symbols: `a b -> b a` (`s = 2`, `t = 2`).
    Swap,
    /// Arbitrary rule table over length-`s` windows with length-`t` outputs.
    Table {
        s: usize,
        t: usize,
        rules: BTreeMap<TokenString, BTreeSet<TokenString>>,
    },
}

impl Transformation {
    pub fn delete(words: impl IntoIterator<Item = Symbol>) -> Self {
        Transformation::Delete {
            words: words.into_iter().collect(),
        }
    }

    /// Builds a substitution table. Keys with an empty substitute list are dropped.
    pub fn substitute<I, J>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Symbol, J)>,
        J: IntoIterator<Item = Symbol>,
    {
        let mut table: BTreeMap<Symbol, BTreeSet<Symbol>> = BTreeMap::new();
        for (k, vs) in pairs {
            table.entry(k).or_default().extend(vs);
        }
        table.retain(|_, v| !v.is_empty());
        Transformation::Substitute { table }
    }

    /// Builds a generic rule table, checking every key has length `s` and
    /// every output has length `t`.
    pub fn table<I, J>(s: usize, t: usize, rules: I) -> Result<Self>
    where
        I: IntoIterator<Item = (TokenString, J)>,
        J: IntoIterator<Item = TokenString>,
    {
        if s == 0 {
            return Err(Error::argument("table transformation needs s >= 1"));
        }
        let mut table: BTreeMap<TokenString, BTreeSet<TokenString>> = BTreeMap::new();
        for (key, outs) in rules {
            if key.len() != s {
                return Err(Error::argument(format!(
                    "rule match has length {}, expected s = {s}",
                    key.len()
                )));
            }
            let entry = table.entry(key).or_default();
            for out in outs {
                if out.len() != t {
                    return Err(Error::argument(format!(
                        "rule replacement has length {}, expected t = {t}",
                        out.len()
                    )));
                }
                entry.insert(out);
            }
        }
        table.retain(|_, v| !v.is_empty());
        Ok(Transformation::Table { s, t, rules: table })
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            Transformation::Delete { .. } => TransformKind::Delete,
            Transformation::Substitute { .. } => TransformKind::Substitute,
            Transformation::Duplicate => TransformKind::Duplicate,
            Transformation::Swap => TransformKind::Swap,
            Transformation::Table { .. } => TransformKind::Table,
        }
    }

    /// Length of the matched window.
    pub fn domain_size(&self) -> usize {
        match self {
            Transformation::Delete { .. }
            | Transformation::Substitute { .. }
            | Transformation::Duplicate => 1,
            Transformation::Swap => 2,
            Transformation::Table { s, .. } => *s,
        }
    }

    /// Length of every replacement.
    pub fn range_size(&self) -> usize {
        match self {
            Transformation::Delete { .. } => 0,
            Transformation::Substitute { .. } => 1,
            Transformation::Duplicate | Transformation::Swap => 2,
            Transformation::Table { t, .. } => *t,
        }
    }

    /// `t - s`: the length change of one application.
    pub fn length_delta(&self) -> i64 {
        self.range_size() as i64 - self.domain_size() as i64
    }

    /// Match predicate. `window` must already have length `s`.
    pub fn matches(&self, window: &[Symbol]) -> bool {
        debug_assert_eq!(window.len(), self.domain_size());
        match self {
            Transformation::Delete { words } => words.contains(&window[0]),
            Transformation::Substitute { table } => table.contains_key(&window[0]),
            Transformation::Duplicate | Transformation::Swap => true,
            Transformation::Table { rules, .. } => rules.contains_key(window),
        }
    }

    /// Replacement set for a window of the right length, in sorted order;
    /// empty when the window does not match.
    pub(crate) fn replacements(&self, window: &[Symbol]) -> Vec<TokenString> {
        debug_assert_eq!(window.len(), self.domain_size());
        match self {
            Transformation::Delete { words } => {
                if words.contains(&window[0]) {
                    vec![Vec::new()]
                } else {
                    Vec::new()
                }
            }
            Transformation::Substitute { table } => table
                .get(&window[0])
                .map(|subs| subs.iter().map(|&s| vec![s]).collect())
                .unwrap_or_default(),
            Transformation::Duplicate => vec![vec![window[0], window[0]]],
            Transformation::Swap => vec![vec![window[1], window[0]]],
            Transformation::Table { rules, .. } => rules
                .get(window)
                .map(|outs| outs.iter().cloned().collect())
                .unwrap_or_default(),
        }
    }

    /// Applies the transformation to a window: `f(window)` if it matches,
    /// otherwise the empty set.
    pub fn apply(&self, window: &[Symbol]) -> Result<Vec<TokenString>> {
        if window.len() != self.domain_size() {
            return Err(Error::argument(format!(
                "{} transformation expects a window of length {}, got {}",
                self.kind(),
                self.domain_size(),
                window.len()
            )));
        }
        Ok(self.replacements(window))
    }

    /// The transformation acting on reversed strings: matches `w` iff the
    /// original matches `reverse(w)`, and yields reversed outputs.
    pub fn reversed(&self) -> Self {
        match self {
            Transformation::Table { s, t, rules } => Transformation::Table {
                s: *s,
                t: *t,
                rules: rules
                    .iter()
                    .map(|(k, outs)| {
                        let k: TokenString = k.iter().rev().copied().collect();
                        let outs = outs
                            .iter()
                            .map(|o| o.iter().rev().copied().collect())
                            .collect();
                        (k, outs)
                    })
                    .collect(),
            },
            // Single-symbol windows, palindromic duplicate output, and swap
            // being its own mirror image.
            other => other.clone(),
        }
    }

    /// Every symbol the transformation mentions (for vocabulary validation).
    pub fn symbols(&self) -> BTreeSet<Symbol> {
        match self {
            Transformation::Delete { words } => words.clone(),
            Transformation::Substitute { table } => table
                .iter()
                .flat_map(|(k, vs)| std::iter::once(*k).chain(vs.iter().copied()))
                .collect(),
            Transformation::Duplicate | Transformation::Swap => BTreeSet::new(),
            Transformation::Table { rules, .. } => rules
                .iter()
                .flat_map(|(k, outs)| k.iter().chain(outs.iter().flatten()).copied())
                .collect(),
        }
    }
}

/// Derived size quantities of a space for a given input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceMetrics {
    /// `Σ (t_k - s_k) δ_k`, the length change forced by the tight space.
    pub offset: i64,
    /// `L + Σ max(t_k - s_k, 0) δ_k`, an upper bound on member length.
    pub max_len: usize,
    /// `Π (δ_k + 1)`.
    pub decomposition_size: usize,
}

/// Ordered list of `(transformation, budget)` pairs. A space whose budgets
/// are all zero (or that has no items) is the empty space `∅` with
/// `S(x) = {x}`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PerturbationSpace {
    items: Vec<(Transformation, usize)>,
}

impl PerturbationSpace {
    pub fn new(items: Vec<(Transformation, usize)>) -> Self {
        PerturbationSpace { items }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[(Transformation, usize)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// True for `∅`: no transformation may be applied.
    pub fn is_empty(&self) -> bool {
        self.items.iter().all(|(_, d)| *d == 0)
    }

    pub fn transformation(&self, k: usize) -> &Transformation {
        &self.items[k].0
    }

    pub fn transformations(&self) -> impl Iterator<Item = &Transformation> {
        self.items.iter().map(|(t, _)| t)
    }

    pub fn budgets(&self) -> Vec<usize> {
        self.items.iter().map(|(_, d)| *d).collect()
    }

    /// Same transformations with new budgets.
    pub fn with_budgets(&self, budgets: &[usize]) -> Result<Self> {
        if budgets.len() != self.items.len() {
            return Err(Error::argument(format!(
                "expected {} budgets, got {}",
                self.items.len(),
                budgets.len()
            )));
        }
        Ok(PerturbationSpace {
            items: self
                .items
                .iter()
                .zip(budgets)
                .map(|((t, _), &d)| (t.clone(), d))
                .collect(),
        })
    }

    /// All `Π (δ_k + 1)` sub-spaces with budgets in `[0, δ_k]`, in
    /// lexicographic budget order (first item most significant).
    pub fn decompose(&self) -> Vec<PerturbationSpace> {
        let lattice = BudgetLattice::new(&self.budgets());
        (0..lattice.len())
            .map(|idx| {
                self.with_budgets(lattice.budgets(idx))
                    .expect("lattice vectors have one entry per item")
            })
            .collect()
    }

    /// `S_{k↓}`: the space with the budget of item `k` (0-based) decremented.
    pub fn reduce(&self, k: usize) -> Result<Self> {
        match self.items.get(k) {
            None => Err(Error::argument(format!(
                "transformation index {k} out of range for {} items",
                self.items.len()
            ))),
            Some((_, 0)) => Err(Error::Precondition(format!(
                "budget of transformation {k} is already 0"
            ))),
            Some(_) => {
                let mut out = self.clone();
                out.items[k].1 -= 1;
                Ok(out)
            }
        }
    }

    fn check_same_transformations(&self, other: &Self) -> Result<()> {
        if self.items.len() != other.items.len()
            || self
                .items
                .iter()
                .zip(&other.items)
                .any(|((a, _), (b, _))| a != b)
        {
            return Err(Error::argument(
                "perturbation spaces have different transformation lists",
            ));
        }
        Ok(())
    }

    /// `S - S'`: componentwise budget difference. `S'` must be a member of
    /// `decompose(S)`.
    pub fn subtract(&self, other: &Self) -> Result<Self> {
        self.check_same_transformations(other)?;
        let mut out = self.clone();
        for (k, ((_, d), (_, d2))) in self.items.iter().zip(&other.items).enumerate() {
            if d2 > d {
                return Err(Error::argument(format!(
                    "cannot subtract budget {d2} from {d} for transformation {k}"
                )));
            }
            out.items[k].1 = d - d2;
        }
        Ok(out)
    }

    /// Componentwise budget sum; the inverse of [`subtract`](Self::subtract).
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_transformations(other)?;
        let mut out = self.clone();
        for (k, (_, d2)) in other.items.iter().enumerate() {
            out.items[k].1 += d2;
        }
        Ok(out)
    }

    pub fn offset(&self) -> i64 {
        self.items
            .iter()
            .map(|(t, d)| t.length_delta() * *d as i64)
            .sum()
    }

    pub fn max_len(&self, input_len: usize) -> usize {
        input_len
            + self
                .items
                .iter()
                .map(|(t, d)| t.length_delta().max(0) as usize * d)
                .sum::<usize>()
    }

    pub fn decomposition_size(&self) -> usize {
        self.items.iter().map(|(_, d)| d + 1).product()
    }

    pub fn metrics(&self, input_len: usize) -> SpaceMetrics {
        SpaceMetrics {
            offset: self.offset(),
            max_len: self.max_len(input_len),
            decomposition_size: self.decomposition_size(),
        }
    }

    /// The space acting on reversed strings (backward pass of a BiLSTM).
    pub fn reversed(&self) -> Self {
        PerturbationSpace {
            items: self
                .items
                .iter()
                .map(|(t, d)| (t.reversed(), *d))
                .collect(),
        }
    }

    /// Visits every distinct member of `S(x)` (or of `S^=(x)` when `tight`)
    /// in deterministic depth-first order: at each original position the
    /// copy branch comes first, then transformations by index, then
    /// replacements in sorted order. `x` itself is the first member
    /// whenever it belongs to the set.
    pub fn visit_members<F>(&self, x: &[Symbol], tight: bool, mut visit: F)
    where
        F: FnMut(&[Symbol]) -> ControlFlow<()>,
    {
        let budgets = self.budgets();
        let mut walker = Walker {
            space: self,
            x,
            budgets: &budgets,
            tight,
            used: vec![0; budgets.len()],
            prefix: Vec::with_capacity(self.max_len(x.len())),
            seen: HashSet::new(),
        };
        let _ = walker.walk(0, &mut visit);
    }

    /// All distinct members of `S(x)` (`tight = false`) or `S^=(x)`.
    pub fn enumerate(&self, x: &[Symbol], tight: bool) -> Vec<TokenString> {
        let mut out = Vec::new();
        self.visit_members(x, tight, |z| {
            out.push(z.to_vec());
            ControlFlow::Continue(())
        });
        out
    }

    /// Like [`enumerate`](Self::enumerate) but fails once more than `cap`
    /// distinct members have been produced.
    pub fn enumerate_capped(&self, x: &[Symbol], tight: bool, cap: usize) -> Result<Vec<TokenString>> {
        let mut out = Vec::new();
        let mut overflow = false;
        self.visit_members(x, tight, |z| {
            if out.len() == cap {
                overflow = true;
                return ControlFlow::Break(());
            }
            out.push(z.to_vec());
            ControlFlow::Continue(())
        });
        if overflow {
            Err(Error::SpaceTooLarge { cap })
        } else {
            Ok(out)
        }
    }
}

struct Walker<'a> {
    space: &'a PerturbationSpace,
    x: &'a [Symbol],
    budgets: &'a [usize],
    tight: bool,
    used: Vec<usize>,
    prefix: TokenString,
    seen: HashSet<TokenString>,
}

impl Walker<'_> {
    fn walk<F>(&mut self, pos: usize, visit: &mut F) -> ControlFlow<()>
    where
        F: FnMut(&[Symbol]) -> ControlFlow<()>,
    {
        if self.tight {
            // Each outstanding application consumes at least s_k positions.
            let needed: usize = self
                .budgets
                .iter()
                .zip(&self.used)
                .enumerate()
                .map(|(k, (d, u))| (d - u) * self.space.items[k].0.domain_size())
                .sum();
            if needed > self.x.len() - pos {
                return ControlFlow::Continue(());
            }
        }
        if pos == self.x.len() {
            if self.seen.insert(self.prefix.clone()) {
                return visit(&self.prefix);
            }
            return ControlFlow::Continue(());
        }

        self.prefix.push(self.x[pos]);
        let flow = self.walk(pos + 1, visit);
        self.prefix.pop();
        flow?;

        for k in 0..self.budgets.len() {
            if self.used[k] >= self.budgets[k] {
                continue;
            }
            let t = &self.space.items[k].0;
            let s = t.domain_size();
            if pos + s > self.x.len() {
                continue;
            }
            let outs = t.replacements(&self.x[pos..pos + s]);
            if outs.is_empty() {
                continue;
            }
            self.used[k] += 1;
            for out in outs {
                let mark = self.prefix.len();
                self.prefix.extend_from_slice(&out);
                let flow = self.walk(pos + s, visit);
                self.prefix.truncate(mark);
                if flow.is_break() {
                    self.used[k] -= 1;
                    return flow;
                }
            }
            self.used[k] -= 1;
        }
        ControlFlow::Continue(())
    }
}

/// Mixed-radix indexing of the decomposition of a budget vector. Index order
/// is lexicographic in the budget vectors, so index 0 is `∅` and the last
/// index is the full space.
#[derive(Debug, Clone)]
pub struct BudgetLattice {
    bounds: Vec<usize>,
    strides: Vec<usize>,
    vectors: Vec<Vec<usize>>,
}

impl BudgetLattice {
    pub fn new(bounds: &[usize]) -> Self {
        let n = bounds.len();
        let mut strides = vec![1; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * (bounds[k + 1] + 1);
        }
        let size: usize = bounds.iter().map(|d| d + 1).product();
        let vectors = (0..size)
            .map(|idx| {
                (0..n)
                    .map(|k| (idx / strides[k]) % (bounds[k] + 1))
                    .collect()
            })
            .collect();
        BudgetLattice {
            bounds: bounds.to_vec(),
            strides,
            vectors,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn budgets(&self, idx: usize) -> &[usize] {
        &self.vectors[idx]
    }

    pub fn index(&self, budgets: &[usize]) -> Option<usize> {
        if budgets.len() != self.bounds.len() || budgets.iter().zip(&self.bounds).any(|(b, d)| b > d) {
            return None;
        }
        Some(budgets.iter().zip(&self.strides).map(|(b, s)| b * s).sum())
    }

    pub fn full(&self) -> usize {
        self.len() - 1
    }

    /// Index of `S'_{k↓}`, or `None` if budget `k` is zero.
    pub fn reduce(&self, idx: usize, k: usize) -> Option<usize> {
        (self.vectors[idx][k] > 0).then(|| idx - self.strides[k])
    }

    /// Index of `S - S'` where both are lattice members; `None` unless
    /// `S'` is componentwise below `S`.
    pub fn subtract(&self, idx: usize, sub: usize) -> Option<usize> {
        let a = &self.vectors[idx];
        let b = &self.vectors[sub];
        a.iter().zip(b).all(|(x, y)| y <= x).then(|| idx - sub)
    }

    /// Index of the componentwise sum, if it stays within the bounds.
    pub fn add(&self, a: usize, b: usize) -> Option<usize> {
        let (va, vb) = (&self.vectors[a], &self.vectors[b]);
        va.iter()
            .zip(vb)
            .zip(&self.bounds)
            .all(|((x, y), d)| x + y <= *d)
            .then(|| a + b)
    }

    /// Index of the unit vector for item `k` scaled by `times`.
    pub fn unit(&self, k: usize, times: usize) -> Option<usize> {
        (times <= self.bounds[k]).then(|| times * self.strides[k])
    }

    /// Every lattice member componentwise below `idx` (its decomposition).
    pub fn below(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let top = &self.vectors[idx];
        (0..=idx).filter(move |&j| self.vectors[j].iter().zip(top).all(|(b, t)| b <= t))
    }

    /// `Σ (t_k - s_k) δ'_k` for lattice member `idx`.
    pub fn offset(&self, idx: usize, deltas: &[i64]) -> i64 {
        self.vectors[idx]
            .iter()
            .zip(deltas)
            .map(|(&b, &d)| b as i64 * d)
            .sum()
    }
}
