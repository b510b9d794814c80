//! Concrete and interval evaluation of the network components: embedding
//! lookup, the LSTM cell, the binary TreeLSTM cell and the linear
//! classifier. Also owns the JSON model format and seeded random models.
//!
//! A state is the pair `(h, c)`; as a box it is laid out as `[h.., c..]`
//! with dimension `2H`. Gate rows are ordered `[i, f, g, o]` for the LSTM
//! and `[i, f_l, f_r, g, o]` for the TreeLSTM.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{dot_abs, sigmoid, Interval, IntervalBox, Matrix, Monotone};
use crate::vocab::{Symbol, TokenString, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lstm,
    Bilstm,
    Treelstm,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Lstm => "lstm",
            Arch::Bilstm => "bilstm",
            Arch::Treelstm => "treelstm",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Arch::Lstm),
            "bilstm" => Ok(Arch::Bilstm),
            "treelstm" => Ok(Arch::Treelstm),
            other => Err(Error::invalid("arch", format!("unknown architecture {other:?}"))),
        }
    }
}

/// Hidden and cell vectors of a recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl State {
    /// The initial state `h0 = 0`.
    pub fn zeros(hidden: usize) -> Self {
        State {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.h.len()
    }

    /// `[h.., c..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.h.len());
        v.extend_from_slice(&self.h);
        v.extend_from_slice(&self.c);
        v
    }

    pub fn to_box(&self) -> IntervalBox {
        IntervalBox::point(&self.to_vec())
    }
}

fn check_state_box(b: &IntervalBox, hidden: usize, what: &str) -> Result<()> {
    if b.dim() != 2 * hidden {
        return Err(Error::argument(format!(
            "{what} box has dimension {}, expected {}",
            b.dim(),
            2 * hidden
        )));
    }
    Ok(())
}

fn check_state(s: &State, hidden: usize, what: &str) -> Result<()> {
    if s.h.len() != hidden || s.c.len() != hidden {
        return Err(Error::argument(format!(
            "{what} state has dimensions ({}, {}), expected {hidden}",
            s.h.len(),
            s.c.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(embed: usize, hidden: usize) -> Self {
        LstmParams {
            w_x: Matrix::zeros(4 * hidden, embed),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn embed_dim(&self) -> usize {
        self.w_x.cols()
    }

    fn validate(&self, embed: usize, hidden: usize) -> Result<()> {
        let rows = 4 * hidden;
        check_shape("w_x", &self.w_x, rows, embed)?;
        check_shape("w_h", &self.w_h, rows, hidden)?;
        check_len("b", &self.b, rows)
    }

    /// One LSTM step on an embedding vector.
    pub fn cell(&self, x: &[f64], s: &State) -> Result<State> {
        let hd = self.hidden();
        if x.len() != self.embed_dim() {
            return Err(Error::argument(format!(
                "embedding has dimension {}, expected {}",
                x.len(),
                self.embed_dim()
            )));
        }
        check_state(s, hd, "lstm input")?;
        Ok(self.cell_unchecked(x, s))
    }

    pub(crate) fn cell_unchecked(&self, x: &[f64], s: &State) -> State {
        let hd = self.hidden();
        let pre = |r: usize| {
            let mut acc = 0.0;
            for (w, v) in self.w_x.row(r).iter().zip(x) {
                acc += w * v;
            }
            let mut acc_h = 0.0;
            for (w, v) in self.w_h.row(r).iter().zip(&s.h) {
                acc_h += w * v;
            }
            acc + acc_h + self.b[r]
        };
        let mut h = Vec::with_capacity(hd);
        let mut c = Vec::with_capacity(hd);
        for u in 0..hd {
            let i = sigmoid(pre(u));
            let f = sigmoid(pre(hd + u));
            let g = pre(2 * hd + u).tanh();
            let o = sigmoid(pre(3 * hd + u));
            let cu = f * s.c[u] + i * g;
            c.push(cu);
            h.push(o * cu.tanh());
        }
        State { h, c }
    }

    /// Interval transformer of [`cell`](Self::cell) built from the
    /// primitive interval operations.
    pub fn cell_abs(&self, x: &IntervalBox, s: &IntervalBox) -> Result<IntervalBox> {
        if x.dim() != self.embed_dim() {
            return Err(Error::argument(format!(
                "embedding box has dimension {}, expected {}",
                x.dim(),
                self.embed_dim()
            )));
        }
        check_state_box(s, self.hidden(), "lstm input")?;
        Ok(self.cell_abs_unchecked(x.dims(), s))
    }

    pub(crate) fn cell_abs_unchecked(&self, x: &[Interval], s: &IntervalBox) -> IntervalBox {
        let hd = self.hidden();
        let (h_prev, c_prev) = s.dims().split_at(hd);
        let pre = |r: usize| {
            let a = dot_abs(self.w_x.row(r), x);
            let b = dot_abs(self.w_h.row(r), h_prev);
            a.add(b).add(Interval::point(self.b[r]))
        };
        let mut h = Vec::with_capacity(hd);
        let mut c = Vec::with_capacity(hd);
        for (u, &c_u) in c_prev.iter().enumerate() {
            let i = pre(u).map_monotone(Monotone::Sigmoid);
            let f = pre(hd + u).map_monotone(Monotone::Sigmoid);
            let g = pre(2 * hd + u).map_monotone(Monotone::Tanh);
            let o = pre(3 * hd + u).map_monotone(Monotone::Sigmoid);
            let cu = f.mul(c_u).add(i.mul(g));
            c.push(cu);
            h.push(o.mul(cu.map_monotone(Monotone::Tanh)));
        }
        h.extend(c);
        IntervalBox::new(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeLstmParams {
    pub u_l: Matrix,
    pub u_r: Matrix,
    pub b: Vec<f64>,
}

impl TreeLstmParams {
    pub fn zeros(hidden: usize) -> Self {
        TreeLstmParams {
            u_l: Matrix::zeros(5 * hidden, hidden),
            u_r: Matrix::zeros(5 * hidden, hidden),
            b: vec![0.0; 5 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 5
    }

    fn validate(&self, hidden: usize) -> Result<()> {
        let rows = 5 * hidden;
        check_shape("u_l", &self.u_l, rows, hidden)?;
        check_shape("u_r", &self.u_r, rows, hidden)?;
        check_len("b", &self.b, rows)
    }

    /// Binary TreeLSTM cell merging two child states.
    pub fn cell(&self, left: &State, right: &State) -> Result<State> {
        let hd = self.hidden();
        check_state(left, hd, "left child")?;
        check_state(right, hd, "right child")?;
        Ok(self.cell_unchecked(left, right))
    }

    pub(crate) fn cell_unchecked(&self, left: &State, right: &State) -> State {
        let hd = self.hidden();
        let pre = |r: usize| {
            let mut a = 0.0;
            for (w, v) in self.u_l.row(r).iter().zip(&left.h) {
                a += w * v;
            }
            let mut b = 0.0;
            for (w, v) in self.u_r.row(r).iter().zip(&right.h) {
                b += w * v;
            }
            a + b + self.b[r]
        };
        let mut h = Vec::with_capacity(hd);
        let mut c = Vec::with_capacity(hd);
        for u in 0..hd {
            let i = sigmoid(pre(u));
            let fl = sigmoid(pre(hd + u));
            let fr = sigmoid(pre(2 * hd + u));
            let g = pre(3 * hd + u).tanh();
            let o = sigmoid(pre(4 * hd + u));
            let cu = fl * left.c[u] + fr * right.c[u] + i * g;
            c.push(cu);
            h.push(o * cu.tanh());
        }
        State { h, c }
    }

    pub fn cell_abs(&self, left: &IntervalBox, right: &IntervalBox) -> Result<IntervalBox> {
        let hd = self.hidden();
        check_state_box(left, hd, "left child")?;
        check_state_box(right, hd, "right child")?;
        Ok(self.cell_abs_unchecked(left, right))
    }

    pub(crate) fn cell_abs_unchecked(&self, left: &IntervalBox, right: &IntervalBox) -> IntervalBox {
        let hd = self.hidden();
        let (hl, cl) = left.dims().split_at(hd);
        let (hr, cr) = right.dims().split_at(hd);
        let pre = |r: usize| {
            let a = dot_abs(self.u_l.row(r), hl);
            let b = dot_abs(self.u_r.row(r), hr);
            a.add(b).add(Interval::point(self.b[r]))
        };
        let mut h = Vec::with_capacity(hd);
        let mut c = Vec::with_capacity(hd);
        for u in 0..hd {
            let i = pre(u).map_monotone(Monotone::Sigmoid);
            let fl = pre(hd + u).map_monotone(Monotone::Sigmoid);
            let fr = pre(2 * hd + u).map_monotone(Monotone::Sigmoid);
            let g = pre(3 * hd + u).map_monotone(Monotone::Tanh);
            let o = pre(4 * hd + u).map_monotone(Monotone::Sigmoid);
            let cu = fl.mul(cl[u]).add(fr.mul(cr[u])).add(i.mul(g));
            c.push(cu);
            h.push(o.mul(cu.map_monotone(Monotone::Tanh)));
        }
        h.extend(c);
        IntervalBox::new(h)
    }
}

/// Linear classifier over hidden features.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.w.affine(features, &self.b)
    }

    /// Index of the largest logit (first one on ties).
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let logits = self.logits(features)?;
        Ok(argmax(&logits))
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::argument(format!(
                "label {y} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// `max_{y' != y} (logit_{y'} - logit_y)`; negative iff `y` wins strictly.
    pub fn margin(&self, features: &[f64], y: usize) -> Result<f64> {
        self.check_label(y)?;
        let logits = self.logits(features)?;
        Ok(logits
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != y)
            .map(|(_, &l)| l - logits[y])
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Upper bound of the margin over a box of features:
    /// `max_{y' != y} (hi(logit_{y'}) - lo(logit_y))`.
    pub fn margin_upper(&self, features: &IntervalBox, y: usize) -> Result<f64> {
        self.check_label(y)?;
        let logits = crate::interval::matvec(&self.w, &self.b, features)?;
        let lo_y = logits.get(y).lo;
        Ok(logits
            .dims()
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != y)
            .map(|(_, iv)| iv.hi - lo_y)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Embedding table, recurrent parameters and classifier of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Arch,
    pub vocab: Vocab,
    pub embeddings: Matrix,
    pub lstm: LstmParams,
    pub lstm_backward: Option<LstmParams>,
    pub treelstm: Option<TreeLstmParams>,
    pub classifier: Classifier,
}

impl ModelBundle {
    pub fn dim_embed(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn dim_hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn embedding(&self, sym: Symbol) -> &[f64] {
        self.embeddings.row(sym.index())
    }

    pub fn check_symbols(&self, syms: &[Symbol]) -> Result<()> {
        match syms.iter().find(|s| s.index() >= self.embeddings.rows()) {
            Some(s) => Err(Error::argument(format!(
                "symbol {} out of range for vocabulary of {}",
                s.0,
                self.embeddings.rows()
            ))),
            None => Ok(()),
        }
    }

    pub fn check_label(&self, y: usize) -> Result<()> {
        self.classifier.check_label(y)
    }

    /// Position-wise abstraction of a set of equal-length symbol strings.
    pub fn embed_abs(&self, words: &[TokenString]) -> Result<Vec<IntervalBox>> {
        let t = match words.first() {
            None => return Err(Error::argument("embedding abstraction of an empty set")),
            Some(w) => w.len(),
        };
        if t == 0 {
            return Err(Error::argument("embedding abstraction of empty strings"));
        }
        if words.iter().any(|w| w.len() != t) {
            return Err(Error::argument("strings of different lengths"));
        }
        for w in words {
            self.check_symbols(w)?;
        }
        Ok(self.embed_abs_unchecked(words, t))
    }

    pub(crate) fn embed_abs_unchecked(&self, words: &[TokenString], t: usize) -> Vec<IntervalBox> {
        (0..t)
            .map(|p| {
                IntervalBox::alpha(words.iter().map(|w| self.embedding(w[p])))
                    .expect("non-empty set of equal-dimension rows")
            })
            .collect()
    }

    /// Runs `params` over `z` from `start`.
    pub(crate) fn run(&self, params: &LstmParams, z: &[Symbol], start: &State) -> State {
        z.iter().fold(start.clone(), |s, &sym| {
            params.cell_unchecked(self.embedding(sym), &s)
        })
    }

    /// Final forward state `lstm(z, h0)`.
    pub fn final_state(&self, z: &[Symbol]) -> Result<State> {
        self.check_symbols(z)?;
        Ok(self.run(&self.lstm, z, &State::zeros(self.dim_hidden())))
    }

    /// Classifier input for a sequence model: the forward hidden vector, or
    /// `[h_fwd, h_bwd]` for a BiLSTM.
    pub fn sequence_features(&self, z: &[Symbol]) -> Result<Vec<f64>> {
        let fwd = self.final_state(z)?;
        match self.arch {
            Arch::Lstm => Ok(fwd.h),
            Arch::Bilstm => {
                let back = self.lstm_backward.as_ref().expect("validated bilstm");
                let rev: TokenString = z.iter().rev().copied().collect();
                let bwd = self.run(back, &rev, &State::zeros(self.dim_hidden()));
                let mut f = fwd.h;
                f.extend(bwd.h);
                Ok(f)
            }
            Arch::Treelstm => Err(Error::Architecture(
                "tree model cannot classify a flat sequence".into(),
            )),
        }
    }

    pub fn predict_sequence(&self, z: &[Symbol]) -> Result<usize> {
        self.classifier.predict(&self.sequence_features(z)?)
    }

    /// Checks the bundle against its declared architecture.
    pub fn validate(&self) -> Result<()> {
        let e = self.dim_embed();
        let h = self.dim_hidden();
        if e == 0 || h == 0 {
            return Err(Error::invalid("dim_hidden", "dimensions must be positive"));
        }
        if self.embeddings.rows() != self.vocab.len() {
            return Err(Error::invalid(
                "embeddings",
                format!(
                    "{} rows for a vocabulary of {}",
                    self.embeddings.rows(),
                    self.vocab.len()
                ),
            ));
        }
        self.lstm.validate(e, h).map_err(|err| err.within("lstm"))?;
        match (self.arch, &self.lstm_backward) {
            (Arch::Bilstm, None) => return Err(Error::invalid("lstm_backward", "required for bilstm")),
            (Arch::Bilstm, Some(p)) => p.validate(e, h).map_err(|err| err.within("lstm_backward"))?,
            (_, Some(_)) => return Err(Error::invalid("lstm_backward", "only allowed for bilstm")),
            (_, None) => {}
        }
        match (self.arch, &self.treelstm) {
            (Arch::Treelstm, None) => return Err(Error::invalid("treelstm", "required for treelstm")),
            (Arch::Treelstm, Some(p)) => p.validate(h).map_err(|err| err.within("treelstm"))?,
            (_, Some(_)) => return Err(Error::invalid("treelstm", "only allowed for treelstm")),
            (_, None) => {}
        }
        let feat = if self.arch == Arch::Bilstm { 2 * h } else { h };
        let c = self.num_classes();
        if c < 2 {
            return Err(Error::invalid("classifier.b", "need at least 2 classes"));
        }
        check_shape("w", &self.classifier.w, c, feat).map_err(|err| err.within("classifier"))?;
        Ok(())
    }

    /// Seeded random model with weights uniform in `[-0.5, 0.5]`. Parameters
    /// are drawn in file order: embeddings, lstm, lstm_backward, treelstm,
    /// classifier; matrices row-major, each followed by its bias.
    pub fn gen_random(seed: u64, vocab: Vocab, dims: ModelDims, arch: Arch) -> Result<Self> {
        let ModelDims { embed, hidden, classes } = dims;
        if vocab.is_empty() || embed == 0 || hidden == 0 || classes < 2 {
            return Err(Error::argument(
                "random model needs a non-empty vocabulary, positive dimensions and >= 2 classes",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.gen_range(-0.5..=0.5));
        let embeddings = mat(vocab.len(), embed);
        let lstm_params = |mat: &mut dyn FnMut(usize, usize) -> Matrix| LstmParams {
            w_x: mat(4 * hidden, embed),
            w_h: mat(4 * hidden, hidden),
            b: mat(1, 4 * hidden).row(0).to_vec(),
        };
        let lstm = lstm_params(&mut mat);
        let lstm_backward = (arch == Arch::Bilstm).then(|| lstm_params(&mut mat));
        let treelstm = (arch == Arch::Treelstm).then(|| TreeLstmParams {
            u_l: mat(5 * hidden, hidden),
            u_r: mat(5 * hidden, hidden),
            b: mat(1, 5 * hidden).row(0).to_vec(),
        });
        let feat = if arch == Arch::Bilstm { 2 * hidden } else { hidden };
        let classifier = Classifier {
            w: mat(classes, feat),
            b: mat(1, classes).row(0).to_vec(),
        };
        let bundle = ModelBundle {
            arch,
            vocab,
            embeddings,
            lstm,
            lstm_backward,
            treelstm,
            classifier,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile::from(self);
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<model>".into(),
            source: e,
        })?;
        file.into_bundle()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        file.into_bundle()
    }
}

/// Dimensions for [`ModelBundle::gen_random`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub classes: usize,
}

fn check_shape(field: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::invalid(
            field,
            format!("shape {}x{}, expected {rows}x{cols}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

fn check_len(field: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::invalid(field, format!("length {}, expected {len}", v.len())));
    }
    Ok(())
}

// On-disk representation.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LstmFile {
    w_x: Vec<Vec<f64>>,
    w_h: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeLstmFile {
    u_l: Vec<Vec<f64>>,
    u_r: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    arch: String,
    vocab: Vocab,
    dim_embed: usize,
    dim_hidden: usize,
    num_classes: usize,
    embeddings: Vec<Vec<f64>>,
    lstm: LstmFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lstm_backward: Option<LstmFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    treelstm: Option<TreeLstmFile>,
    classifier: ClassifierFile,
}

fn matrix(field: &str, rows: &[Vec<f64>], expect_rows: usize, expect_cols: usize) -> Result<Matrix> {
    if rows.len() != expect_rows {
        return Err(Error::invalid(
            field,
            format!("{} rows, expected {expect_rows}", rows.len()),
        ));
    }
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != expect_cols) {
        return Err(Error::invalid(
            field,
            format!("row {r} has {} columns, expected {expect_cols}", row.len()),
        ));
    }
    if expect_cols == 0 {
        return Ok(Matrix::zeros(expect_rows, 0));
    }
    Matrix::from_rows(rows).map_err(|e| Error::invalid(field, e.to_string()))
}

impl LstmFile {
    fn into_params(self, scope: &str, e: usize, h: usize) -> Result<LstmParams> {
        let w_x = matrix(&format!("{scope}.w_x"), &self.w_x, 4 * h, e)?;
        let w_h = matrix(&format!("{scope}.w_h"), &self.w_h, 4 * h, h)?;
        check_len("b", &self.b, 4 * h).map_err(|err| err.within(scope))?;
        Ok(LstmParams { w_x, w_h, b: self.b })
    }

    fn from_params(p: &LstmParams) -> Self {
        LstmFile {
            w_x: p.w_x.to_rows(),
            w_h: p.w_h.to_rows(),
            b: p.b.clone(),
        }
    }
}

impl From<&ModelBundle> for ModelFile {
    fn from(m: &ModelBundle) -> Self {
        ModelFile {
            arch: m.arch.to_string(),
            vocab: m.vocab.clone(),
            dim_embed: m.dim_embed(),
            dim_hidden: m.dim_hidden(),
            num_classes: m.num_classes(),
            embeddings: m.embeddings.to_rows(),
            lstm: LstmFile::from_params(&m.lstm),
            lstm_backward: m.lstm_backward.as_ref().map(LstmFile::from_params),
            treelstm: m.treelstm.as_ref().map(|t| TreeLstmFile {
                u_l: t.u_l.to_rows(),
                u_r: t.u_r.to_rows(),
                b: t.b.clone(),
            }),
            classifier: ClassifierFile {
                w: m.classifier.w.to_rows(),
                b: m.classifier.b.clone(),
            },
        }
    }
}

impl ModelFile {
    fn into_bundle(self) -> Result<ModelBundle> {
        let arch: Arch = self.arch.parse()?;
        let (e, h, c) = (self.dim_embed, self.dim_hidden, self.num_classes);
        if e == 0 || h == 0 {
            return Err(Error::invalid("dim_hidden", "dimensions must be positive"));
        }
        if c < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        let embeddings = matrix("embeddings", &self.embeddings, self.vocab.len(), e)?;
        let lstm = self.lstm.into_params("lstm", e, h)?;
        let lstm_backward = self
            .lstm_backward
            .map(|f| f.into_params("lstm_backward", e, h))
            .transpose()?;
        let treelstm = self
            .treelstm
            .map(|f| -> Result<TreeLstmParams> {
                Ok(TreeLstmParams {
                    u_l: matrix("treelstm.u_l", &f.u_l, 5 * h, h)?,
                    u_r: matrix("treelstm.u_r", &f.u_r, 5 * h, h)?,
                    b: {
                        check_len("b", &f.b, 5 * h).map_err(|err| err.within("treelstm"))?;
                        f.b
                    },
                })
            })
            .transpose()?;
        let feat = if arch == Arch::Bilstm { 2 * h } else { h };
        let classifier = Classifier {
            w: matrix("classifier.w", &self.classifier.w, c, feat)?,
            b: {
                check_len("b", &self.classifier.b, c).map_err(|err| err.within("classifier"))?;
                self.classifier.b
            },
        };
        let bundle = ModelBundle {
            arch,
            vocab: self.vocab,
            embeddings,
            lstm,
            lstm_backward,
            treelstm,
            classifier,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}
