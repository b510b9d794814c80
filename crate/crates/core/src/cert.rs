//! Memoized certification of sequence models.
//!
//! `H[i, j, S']` holds the LSTM states of every perturbed string of length
//! `i` obtained from the original prefix `x[..j]` by applying *exactly* the
//! budgets of the tight sub-space `S'`. Each entry is filled from
//!
//! * `H[i-1, j-1, S']` by reading `x[j-1]` unchanged, and
//! * `H[i-t_k, j-s_k, S'_{k↓}]` by reading a replacement of the window
//!   `x[j-s_k..j]` whenever transformation `k` matches it.
//!
//! The concrete table keeps exact states keyed by perturbed string; the
//! abstract table keeps one interval box per key. Only the unique feasible
//! `i = j + offset(S')` is materialized per `(j, S')` unless asked otherwise.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::model::{Arch, LstmParams, ModelBundle, State};
use crate::perturbation::{BudgetLattice, PerturbationSpace, DEFAULT_ENUM_CAP};
use crate::vocab::{Symbol, TokenString};

/// Key of a memo table entry: perturbed length `i`, original prefix length
/// `j`, and the tight sub-space as an index into the space's
/// [`BudgetLattice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub i: usize,
    pub j: usize,
    pub sub: usize,
}

impl StateKey {
    pub fn new(i: usize, j: usize, sub: usize) -> Self {
        StateKey { i, j, sub }
    }
}

/// Sparse memo table. A missing key means the entry is empty.
#[derive(Debug, Clone)]
pub struct StateTable<T> {
    entries: BTreeMap<StateKey, T>,
}

impl<T> Default for StateTable<T> {
    fn default() -> Self {
        StateTable {
            entries: BTreeMap::new(),
        }
    }
}

impl<T> StateTable<T> {
    pub fn get(&self, i: usize, j: usize, sub: usize) -> Option<&T> {
        self.entries.get(&StateKey::new(i, j, sub))
    }

    pub fn entries(&self) -> &BTreeMap<StateKey, T> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert(&mut self, key: StateKey, value: T) {
        self.entries.insert(key, value);
    }
}

/// Concrete entries: perturbed string -> exact state.
pub type ConcreteTable = StateTable<BTreeMap<TokenString, State>>;
pub type AbstractTable = StateTable<IntervalBox>;

/// The only perturbed length at which `H[·, j, S']` can be non-empty:
/// `j + Σ (t_k - s_k) δ'_k`, or `None` when that is negative.
pub fn feasible_length(sub: &PerturbationSpace, j: usize) -> Option<usize> {
    usize::try_from(j as i64 + sub.offset()).ok()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DpOptions {
    /// Evaluate the recurrence at every `i <= max_len` instead of only at
    /// [`feasible_length`].
    pub materialize_all: bool,
    /// Also collect per-length hulls that include states in the middle of a
    /// multi-symbol replacement.
    pub track_prefixes: bool,
}

/// Result of one abstract pass over an input.
#[derive(Debug, Clone)]
pub struct AbstractRun {
    pub lattice: BudgetLattice,
    pub table: AbstractTable,
    /// Per tight sub-space: join over `i` of `H[i, |x|, S']`.
    pub finals: Vec<Option<IntervalBox>>,
    /// Join of `finals`; never empty because `∅` always reaches `|x|`.
    pub final_hull: IntervalBox,
    /// Number of abstract LSTM cell applications.
    pub cells: usize,
    /// Per perturbed length `i`, the hull of every prefix state (only with
    /// [`DpOptions::track_prefixes`]).
    pub prefix_hulls: BTreeMap<usize, IntervalBox>,
}

/// Outcome of certifying one input.
#[derive(Debug, Clone)]
pub struct CertResult {
    /// `margin_upper < 0`.
    pub certified: bool,
    /// Upper bound of `max_{y' != y} logit_{y'} - logit_y` over the space.
    pub margin_upper: f64,
    pub cells_evaluated: usize,
    /// State hull the classifier read (`[h, c]`, or `[h_f, c_f, h_b, c_b]`
    /// for a BiLSTM).
    pub final_hull: IntervalBox,
}

/// Replacement outputs of transformation `k` at the window ending at `j`.
struct Window {
    strings: Vec<TokenString>,
    boxes: Vec<IntervalBox>,
}

struct Pass<'a> {
    model: &'a ModelBundle,
    params: &'a LstmParams,
    x: &'a [Symbol],
    space: &'a PerturbationSpace,
    lattice: BudgetLattice,
    deltas: Vec<i64>,
    // windows[j][k] for j in 1..=|x|
    windows: Vec<Vec<Option<Window>>>,
}

impl<'a> Pass<'a> {
    fn new(
        model: &'a ModelBundle,
        params: &'a LstmParams,
        x: &'a [Symbol],
        space: &'a PerturbationSpace,
        with_boxes: bool,
    ) -> Result<Self> {
        model.check_symbols(x)?;
        for t in space.transformations() {
            model.check_symbols(&t.symbols().into_iter().collect::<Vec<_>>())?;
        }
        let lattice = BudgetLattice::new(&space.budgets());
        let deltas = space.transformations().map(|t| t.length_delta()).collect();
        let windows = (0..=x.len())
            .map(|j| {
                space
                    .transformations()
                    .map(|t| {
                        let s = t.domain_size();
                        if j == 0 || s > j {
                            return None;
                        }
                        let strings = t.replacements(&x[j - s..j]);
                        if strings.is_empty() {
                            return None;
                        }
                        let t_len = t.range_size();
                        let boxes = if with_boxes && t_len > 0 {
                            model.embed_abs_unchecked(&strings, t_len)
                        } else {
                            Vec::new()
                        };
                        Some(Window { strings, boxes })
                    })
                    .collect()
            })
            .collect();
        Ok(Pass {
            model,
            params,
            x,
            space,
            lattice,
            deltas,
            windows,
        })
    }

    fn feasible(&self, sub: usize, j: usize) -> Option<usize> {
        usize::try_from(j as i64 + self.lattice.offset(sub, &self.deltas)).ok()
    }

    fn lengths(&self, sub: usize, j: usize, opts: DpOptions, max_len: usize) -> Vec<usize> {
        if opts.materialize_all {
            (0..=max_len).collect()
        } else {
            self.feasible(sub, j).filter(|&i| i <= max_len).into_iter().collect()
        }
    }

    fn abstract_run(&self, opts: DpOptions) -> AbstractRun {
        let hidden = self.params.hidden();
        let n = self.space.len();
        let len = self.x.len();
        let max_len = self.space.max_len(len);
        let x_boxes: Vec<IntervalBox> = self
            .x
            .iter()
            .map(|&s| IntervalBox::point(self.model.embedding(s)))
            .collect();

        let mut table = AbstractTable::default();
        let mut cells = 0usize;
        let mut mid: BTreeMap<usize, IntervalBox> = BTreeMap::new();
        table.insert(StateKey::new(0, 0, 0), State::zeros(hidden).to_box());

        for j in 1..=len {
            for sub in 0..self.lattice.len() {
                for i in self.lengths(sub, j, opts, max_len) {
                    let mut acc: Option<IntervalBox> = None;
                    if i >= 1 {
                        if let Some(prev) = table.get(i - 1, j - 1, sub) {
                            let out = self.params.cell_abs_unchecked(x_boxes[j - 1].dims(), prev);
                            cells += 1;
                            join_into(&mut acc, out);
                        }
                    }
                    for k in 0..n {
                        let Some(red) = self.lattice.reduce(sub, k) else {
                            continue;
                        };
                        let Some(win) = &self.windows[j][k] else {
                            continue;
                        };
                        let t = self.space.transformation(k);
                        let (s_len, t_len) = (t.domain_size(), t.range_size());
                        if t_len > i {
                            continue;
                        }
                        let Some(prev) = table.get(i - t_len, j - s_len, red) else {
                            continue;
                        };
                        let mut st = prev.clone();
                        for (p, b) in win.boxes.iter().enumerate() {
                            st = self.params.cell_abs_unchecked(b.dims(), &st);
                            cells += 1;
                            if opts.track_prefixes && p + 1 < t_len {
                                let at = i - t_len + p + 1;
                                match mid.get_mut(&at) {
                                    Some(h) => h.join_assign(&st),
                                    None => {
                                        mid.insert(at, st.clone());
                                    }
                                }
                            }
                        }
                        join_into(&mut acc, st);
                    }
                    if let Some(b) = acc {
                        table.insert(StateKey::new(i, j, sub), b);
                    }
                }
            }
        }

        let finals: Vec<Option<IntervalBox>> = (0..self.lattice.len())
            .map(|sub| {
                let mut acc = None;
                let lengths = if opts.materialize_all {
                    (0..=max_len).collect()
                } else {
                    self.feasible(sub, len).into_iter().collect::<Vec<_>>()
                };
                for i in lengths {
                    if let Some(b) = table.get(i, len, sub) {
                        join_into(&mut acc, b.clone());
                    }
                }
                acc
            })
            .collect();
        let final_hull = join_all(finals.iter().flatten()).expect("the empty sub-space reaches |x|");

        let mut prefix_hulls = BTreeMap::new();
        if opts.track_prefixes {
            for (key, b) in table.entries() {
                prefix_hulls
                    .entry(key.i)
                    .and_modify(|h: &mut IntervalBox| h.join_assign(b))
                    .or_insert_with(|| b.clone());
            }
            for (i, b) in mid {
                prefix_hulls
                    .entry(i)
                    .and_modify(|h: &mut IntervalBox| h.join_assign(&b))
                    .or_insert(b);
            }
        }

        AbstractRun {
            lattice: self.lattice.clone(),
            table,
            finals,
            final_hull,
            cells,
            prefix_hulls,
        }
    }

    fn concrete_run(&self) -> ConcreteTable {
        let hidden = self.params.hidden();
        let n = self.space.len();
        let len = self.x.len();
        let max_len = self.space.max_len(len);
        let mut table = ConcreteTable::default();
        table.insert(
            StateKey::new(0, 0, 0),
            BTreeMap::from([(Vec::new(), State::zeros(hidden))]),
        );

        for j in 1..=len {
            for sub in 0..self.lattice.len() {
                let Some(i) = self.feasible(sub, j).filter(|&i| i <= max_len) else {
                    continue;
                };
                let mut acc: BTreeMap<TokenString, State> = BTreeMap::new();
                if i >= 1 {
                    if let Some(prev) = table.get(i - 1, j - 1, sub) {
                        let sym = self.x[j - 1];
                        for (z, h) in prev {
                            let mut z2 = z.clone();
                            z2.push(sym);
                            acc.entry(z2)
                                .or_insert_with(|| self.params.cell_unchecked(self.model.embedding(sym), h));
                        }
                    }
                }
                for k in 0..n {
                    let (Some(red), Some(win)) = (self.lattice.reduce(sub, k), &self.windows[j][k]) else {
                        continue;
                    };
                    let t = self.space.transformation(k);
                    let (s_len, t_len) = (t.domain_size(), t.range_size());
                    if t_len > i {
                        continue;
                    }
                    let Some(prev) = table.get(i - t_len, j - s_len, red) else {
                        continue;
                    };
                    for out in &win.strings {
                        for (z, h) in prev {
                            let mut z2 = z.clone();
                            z2.extend_from_slice(out);
                            acc.entry(z2).or_insert_with(|| self.model.run(self.params, out, h));
                        }
                    }
                }
                if !acc.is_empty() {
                    table.insert(StateKey::new(i, j, sub), acc);
                }
            }
        }
        table
    }
}

fn join_into(acc: &mut Option<IntervalBox>, b: IntervalBox) {
    match acc {
        Some(a) => a.join_assign(&b),
        None => *acc = Some(b),
    }
}

fn join_all<'b>(boxes: impl IntoIterator<Item = &'b IntervalBox>) -> Option<IntervalBox> {
    let mut acc = None;
    for b in boxes {
        join_into(&mut acc, b.clone());
    }
    acc
}

fn require_sequence(model: &ModelBundle) -> Result<()> {
    if model.arch == Arch::Treelstm {
        return Err(Error::Architecture(
            "sequence certification needs an lstm or bilstm model".into(),
        ));
    }
    Ok(())
}

/// Fills the concrete memo table for the forward LSTM.
pub fn concrete_states(model: &ModelBundle, x: &[Symbol], space: &PerturbationSpace) -> Result<ConcreteTable> {
    Ok(Pass::new(model, &model.lstm, x, space, false)?.concrete_run())
}

/// Exact final states of every member of `S(x)`, keyed by perturbed string.
pub fn concrete_final(
    model: &ModelBundle,
    x: &[Symbol],
    space: &PerturbationSpace,
) -> Result<BTreeMap<TokenString, State>> {
    let table = concrete_states(model, x, space)?;
    let mut out = BTreeMap::new();
    for (key, states) in table.entries() {
        if key.j == x.len() {
            for (z, s) in states {
                out.entry(z.clone()).or_insert_with(|| s.clone());
            }
        }
    }
    Ok(out)
}

/// Abstract pass of the forward LSTM with explicit options.
pub fn abstract_run(
    model: &ModelBundle,
    x: &[Symbol],
    space: &PerturbationSpace,
    opts: DpOptions,
) -> Result<AbstractRun> {
    Ok(Pass::new(model, &model.lstm, x, space, true)?.abstract_run(opts))
}

/// Over-approximation of the forward final states over `S(x)`.
pub fn abstract_final(model: &ModelBundle, x: &[Symbol], space: &PerturbationSpace) -> Result<AbstractRun> {
    abstract_run(model, x, space, DpOptions::default())
}

/// Per-length hulls of every prefix state (including states in the middle
/// of a multi-symbol replacement) over `S(x)`.
pub fn prefix_hulls(
    model: &ModelBundle,
    x: &[Symbol],
    space: &PerturbationSpace,
) -> Result<BTreeMap<usize, IntervalBox>> {
    let opts = DpOptions {
        track_prefixes: true,
        ..DpOptions::default()
    };
    Ok(abstract_run(model, x, space, opts)?.prefix_hulls)
}

/// Certifies that every member of `S(x)` is classified as `y`.
pub fn certify(model: &ModelBundle, x: &[Symbol], y: usize, space: &PerturbationSpace) -> Result<CertResult> {
    require_sequence(model)?;
    model.check_label(y)?;
    let hidden = model.dim_hidden();
    let fwd = Pass::new(model, &model.lstm, x, space, true)?.abstract_run(DpOptions::default());
    let (hull, features, cells) = match model.arch {
        Arch::Bilstm => {
            let back = model.lstm_backward.as_ref().expect("validated bilstm");
            let rev_x: TokenString = x.iter().rev().copied().collect();
            let rev_space = space.reversed();
            let bwd = Pass::new(model, back, &rev_x, &rev_space, true)?.abstract_run(DpOptions::default());
            // Each member lies in exactly one tight sub-space on both sides,
            // so pair per sub-space before joining.
            let mut acc = None;
            for (f, b) in fwd.finals.iter().zip(&bwd.finals) {
                if let (Some(f), Some(b)) = (f, b) {
                    join_into(&mut acc, f.concat(b));
                }
            }
            let hull = acc.expect("the empty sub-space reaches |x| in both directions");
            let features = hull
                .slice(0..hidden)
                .concat(&hull.slice(2 * hidden..3 * hidden));
            (hull, features, fwd.cells + bwd.cells)
        }
        _ => {
            let features = fwd.final_hull.slice(0..hidden);
            (fwd.final_hull, features, fwd.cells)
        }
    };
    let margin_upper = model.classifier.margin_upper(&features, y)?;
    Ok(CertResult {
        certified: margin_upper < 0.0,
        margin_upper,
        cells_evaluated: cells,
        final_hull: hull,
    })
}

/// Result of classifying every member of a perturbation space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExhaustiveResult {
    pub robust: bool,
    /// First misclassified member in enumeration order.
    pub counterexample: Option<TokenString>,
    /// Number of distinct members in the space.
    pub space_size: usize,
}

/// Brute-force robustness check. Fails with [`Error::SpaceTooLarge`]
/// rather than sampling when `S(x)` has more than `cap` members.
pub fn exhaustive_check(
    model: &ModelBundle,
    x: &[Symbol],
    y: usize,
    space: &PerturbationSpace,
    cap: usize,
) -> Result<ExhaustiveResult> {
    require_sequence(model)?;
    model.check_label(y)?;
    model.check_symbols(x)?;
    let members = space.enumerate_capped(x, false, cap)?;
    for z in &members {
        if model.predict_sequence(z)? != y {
            return Ok(ExhaustiveResult {
                robust: false,
                counterexample: Some(z.clone()),
                space_size: members.len(),
            });
        }
    }
    Ok(ExhaustiveResult {
        robust: true,
        counterexample: None,
        space_size: members.len(),
    })
}

/// [`exhaustive_check`] with [`DEFAULT_ENUM_CAP`].
pub fn exhaustive_check_default(
    model: &ModelBundle,
    x: &[Symbol],
    y: usize,
    space: &PerturbationSpace,
) -> Result<ExhaustiveResult> {
    exhaustive_check(model, x, y, space, DEFAULT_ENUM_CAP)
}

#[derive(Debug, Clone, Copy)]
struct Application {
    start: usize,
    k: usize,
    choice: usize,
}

/// Gradient-free attack. First a greedy descent that repeatedly adds the
/// single transformation application maximizing the wrong-class margin,
/// then a scan of the space in enumeration order. Each phase evaluates at
/// most `budget` strings. Returns the first misclassified string found.
pub fn attack_search(
    model: &ModelBundle,
    x: &[Symbol],
    y: usize,
    space: &PerturbationSpace,
    budget: usize,
) -> Result<Option<TokenString>> {
    require_sequence(model)?;
    model.check_label(y)?;
    model.check_symbols(x)?;
    if budget == 0 {
        return Err(Error::argument("attack budget must be at least 1"));
    }
    let score = |z: &[Symbol]| -> Result<(f64, bool)> {
        let f = model.sequence_features(z)?;
        let m = model.classifier.margin(&f, y)?;
        Ok((m, model.classifier.predict(&f)? != y))
    };

    let budgets = space.budgets();
    let mut applied: Vec<Application> = Vec::new();
    let mut used = vec![0usize; budgets.len()];
    let mut evals = 1;
    let (mut current, miss) = score(x)?;
    if miss {
        return Ok(Some(x.to_vec()));
    }
    'descent: while evals < budget {
        let mut best: Option<(f64, Application)> = None;
        for start in 0..x.len() {
            for k in 0..budgets.len() {
                if used[k] >= budgets[k] {
                    continue;
                }
                let t = space.transformation(k);
                let end = start + t.domain_size();
                if end > x.len() || applied.iter().any(|a| overlaps(space, a, start, end)) {
                    continue;
                }
                let outs = t.replacements(&x[start..end]);
                for choice in 0..outs.len() {
                    if evals >= budget {
                        break 'descent;
                    }
                    let app = Application { start, k, choice };
                    applied.push(app);
                    let z = build(space, x, &applied);
                    applied.pop();
                    evals += 1;
                    let (m, miss) = score(&z)?;
                    if miss {
                        return Ok(Some(z));
                    }
                    if best.is_none_or(|(bm, _)| m > bm) {
                        best = Some((m, app));
                    }
                }
            }
        }
        match best {
            Some((m, app)) if m > current => {
                current = m;
                used[app.k] += 1;
                applied.push(app);
            }
            _ => break,
        }
    }

    let mut found = None;
    let mut scanned = 0;
    let mut failure = None;
    space.visit_members(x, false, |z| {
        if scanned == budget {
            return ControlFlow::Break(());
        }
        scanned += 1;
        match score(z) {
            Ok((_, true)) => {
                found = Some(z.to_vec());
                ControlFlow::Break(())
            }
            Ok(_) => ControlFlow::Continue(()),
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(found),
    }
}

fn overlaps(space: &PerturbationSpace, a: &Application, start: usize, end: usize) -> bool {
    let a_end = a.start + space.transformation(a.k).domain_size();
    start < a_end && a.start < end
}

fn build(space: &PerturbationSpace, x: &[Symbol], applied: &[Application]) -> TokenString {
    let mut sorted: Vec<&Application> = applied.iter().collect();
    sorted.sort_by_key(|a| a.start);
    let mut out = Vec::with_capacity(x.len() + 4);
    let mut pos = 0;
    for a in sorted {
        out.extend_from_slice(&x[pos..a.start]);
        let t = space.transformation(a.k);
        let end = a.start + t.domain_size();
        out.extend_from_slice(&t.replacements(&x[a.start..end])[a.choice]);
        pos = end;
    }
    out.extend_from_slice(&x[pos..]);
    out
}
