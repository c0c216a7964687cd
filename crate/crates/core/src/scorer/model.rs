use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Group, Tape, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureBundle, FeatureKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Base,
    /// No batch norm in front of the LSTMs.
    NoNorm,
    /// Attention without the self-exclusion mask.
    Unmasked,
    /// No attention: every feature is scored on its own.
    Siloed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub hidden: usize,
    pub ff_hidden: usize,
    pub dim: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub architecture: Architecture,
    pub features: Vec<FeatureKind>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            hidden: 20,
            ff_hidden: 64,
            dim: 120,
            heads: 2,
            head_hidden: 64,
            architecture: Architecture::Base,
            features: FeatureKind::ALL.to_vec(),
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ScorerConfig {
    /// The narrow model used for finite-difference checks.
    pub fn reduced() -> Self {
        Self {
            hidden: 4,
            ff_hidden: 8,
            dim: 8,
            heads: 2,
            head_hidden: 8,
            ..Self::default()
        }
    }

    pub fn uses_norm(&self) -> bool {
        self.architecture != Architecture::NoNorm
    }

    pub fn uses_attention(&self) -> bool {
        self.architecture != Architecture::Siloed
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.ff_hidden > 0
            && self.dim > 0
            && self.heads > 0
            && self.dim % self.heads == 0
            && self.head_hidden > 0
            && !self.features.is_empty()
            && self.bn_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("invalid scorer config".into()))
        }
    }
}

/// Named parameter tensors. Batch-norm running statistics are stored here too
/// but are not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub config: ScorerConfig,
    pub names: Vec<String>,
    pub values: Vec<Array2<f64>>,
    pub trainable: Vec<bool>,
}

impl ScorerParams {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index(name).map(move |i| &mut self.values[i])
    }

    fn slot(&self, name: &str) -> usize {
        self.index(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn trainable_count(&self) -> usize {
        self.values
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(v, _)| v.len())
            .sum()
    }

    /// Feature weight `w_i` of token `i`.
    pub fn feature_weights(&self) -> &Array2<f64> {
        self.get("w").unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    trainable: Vec<bool>,
}

impl Builder {
    fn uniform(&mut self, name: String, shape: (usize, usize), bound: f64) {
        let v = Array2::from_shape_fn(shape, |_| self.rng.random_range(-bound..bound));
        self.put(name, v, true);
    }

    fn put(&mut self, name: String, v: Array2<f64>, trainable: bool) {
        self.names.push(name);
        self.values.push(v);
        self.trainable.push(trainable);
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let k = 1.0 / (fan_in as f64).sqrt();
        self.uniform(format!("{prefix}.w"), (fan_in, fan_out), k);
        self.uniform(format!("{prefix}.b"), (1, fan_out), k);
    }
}

/// Deterministic initialization: uniform in `±1/sqrt(fan_in)`, unit batch-norm
/// scale, zero shift, unit feature weights.
pub fn init_params(config: &ScorerConfig, seed: u64) -> ScorerParams {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: Vec::new(),
        values: Vec::new(),
        trainable: Vec::new(),
    };
    let (h, d) = (config.hidden, config.dim);
    for kind in &config.features {
        let name = kind.name();
        let c = kind.shape().1;
        if config.uses_norm() {
            b.put(format!("{name}.bn.gamma"), Array2::ones((1, c)), true);
            b.put(format!("{name}.bn.beta"), Array2::zeros((1, c)), true);
            b.put(format!("{name}.bn.running_mean"), Array2::zeros((1, c)), false);
            b.put(format!("{name}.bn.running_var"), Array2::ones((1, c)), false);
        }
        let k = 1.0 / (h as f64).sqrt();
        b.uniform(format!("{name}.lstm.w_ih"), (c, 4 * h), k);
        b.uniform(format!("{name}.lstm.w_hh"), (h, 4 * h), k);
        b.uniform(format!("{name}.lstm.b"), (1, 4 * h), k);
        b.linear(&format!("{name}.ff1"), h, config.ff_hidden);
        b.linear(&format!("{name}.ff2"), config.ff_hidden, d);
        b.uniform(format!("{name}.pos"), (1, d), 1.0 / (d as f64).sqrt());
    }
    if config.uses_attention() {
        for p in ["attn.q", "attn.k", "attn.v", "attn.o"] {
            b.linear(p, d, d);
        }
    }
    b.linear("head1", d, config.head_hidden);
    b.linear("head2", config.head_hidden, 1);
    b.put("w".into(), Array2::ones((1, config.features.len())), true);
    ScorerParams {
        config: config.clone(),
        names: b.names,
        values: b.values,
        trainable: b.trainable,
    }
}

/// Features of a mini-batch, one matrix per active feature with time-major
/// rows (`t * batch + b`).
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub batch: usize,
    pub feats: Vec<Array2<f64>>,
}

impl BatchInput {
    pub fn from_bundles(bundles: &[&FeatureBundle], features: &[FeatureKind]) -> Result<Self> {
        let n = bundles.len();
        let mut feats = Vec::with_capacity(features.len());
        for &kind in features {
            let (l, c) = kind.shape();
            let mut m = Array2::<f64>::zeros((l * n, c));
            for (b, bundle) in bundles.iter().enumerate() {
                let t = bundle.get(kind);
                if t.dim() != (l, c) {
                    return Err(Error::ShapeMismatch(format!("{} is {:?}, expected {:?}", kind.name(), t.dim(), (l, c))));
                }
                for step in 0..l {
                    for ch in 0..c {
                        m[[step * n + b, ch]] = t[[step, ch]] as f64;
                    }
                }
            }
            feats.push(m);
        }
        Ok(Self { batch: n, feats })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// Reward column, one row per trajectory.
    pub reward: Var,
    /// Per-feature scores `y_i`, token-major column.
    pub scores: Var,
    /// Batch statistics per normalized feature: `(mean slot, var slot, mean, var, rows)`.
    pub bn_stats: Vec<(usize, usize, Array1<f64>, Array1<f64>, usize)>,
}

/// Records the scorer's forward pass on `tape`.
pub fn forward(tape: &mut Tape, params: &ScorerParams, input: &BatchInput, mode: Mode) -> Result<ForwardOutput> {
    let cfg = &params.config;
    if input.feats.len() != cfg.features.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature inputs for {} active features",
            input.feats.len(),
            cfg.features.len()
        )));
    }
    let n = input.batch;
    let mut leaf_cache: Vec<Option<Var>> = vec![None; params.values.len()];
    let mut p = |tape: &mut Tape, name: &str| -> Var {
        let i = params.slot(name);
        *leaf_cache[i].get_or_insert_with(|| tape.param(i, params.values[i].clone()))
    };
    let mut bn_stats = Vec::new();
    let mut tokens = Vec::with_capacity(cfg.features.len());
    for (fi, kind) in cfg.features.iter().enumerate() {
        let name = kind.name();
        let (l, c) = kind.shape();
        if input.feats[fi].dim() != (l * n, c) {
            return Err(Error::ShapeMismatch(format!("{name} input has shape {:?}", input.feats[fi].dim())));
        }
        let mut x = tape.input(input.feats[fi].clone());
        if cfg.uses_norm() {
            let gamma = p(tape, &format!("{name}.bn.gamma"));
            let beta = p(tape, &format!("{name}.bn.beta"));
            let mean_slot = params.slot(&format!("{name}.bn.running_mean"));
            let var_slot = params.slot(&format!("{name}.bn.running_var"));
            x = match mode {
                Mode::Train => {
                    let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, cfg.bn_eps);
                    bn_stats.push((mean_slot, var_slot, mean, var, l * n));
                    y
                }
                Mode::Eval => {
                    let mean = params.values[mean_slot].row(0).to_owned();
                    let var = params.values[var_slot].row(0).to_owned();
                    tape.batch_norm_eval(x, gamma, beta, &mean, &var, cfg.bn_eps)
                }
            };
        }
        let w_ih = p(tape, &format!("{name}.lstm.w_ih"));
        let w_hh = p(tape, &format!("{name}.lstm.w_hh"));
        let b = p(tape, &format!("{name}.lstm.b"));
        let mut hc = None;
        for t in 0..l {
            let xt = if l == 1 { x } else { tape.slice_rows(x, t * n, n) };
            hc = Some(tape.lstm_cell(xt, hc, w_ih, w_hh, b));
        }
        let h = tape.slice_cols(hc.unwrap(), 0, cfg.hidden);
        let (w1, b1) = (p(tape, &format!("{name}.ff1.w")), p(tape, &format!("{name}.ff1.b")));
        let z = tape.linear(h, w1, b1);
        let z = tape.relu(z);
        let (w2, b2) = (p(tape, &format!("{name}.ff2.w")), p(tape, &format!("{name}.ff2.b")));
        let tok = tape.linear(z, w2, b2);
        let pos = p(tape, &format!("{name}.pos"));
        tokens.push(tape.add_row(tok, pos));
    }
    let t_n = tokens.len();
    let x = if t_n == 1 { tokens[0] } else { tape.concat_rows(&tokens) };
    let z = if cfg.uses_attention() {
        let mut proj = |tape: &mut Tape, pfx: &str, a: Var| {
            let w = p(tape, &format!("{pfx}.w"));
            let b = p(tape, &format!("{pfx}.b"));
            tape.linear(a, w, b)
        };
        let q = proj(tape, "attn.q", x);
        let k = proj(tape, "attn.k", x);
        let v = proj(tape, "attn.v", x);
        let masked = cfg.architecture != Architecture::Unmasked;
        let a = tape.attention(q, k, v, t_n, cfg.heads, masked);
        let o = proj(tape, "attn.o", a);
        tape.add(x, o)
    } else {
        x
    };
    let (w1, b1) = (p(tape, "head1.w"), p(tape, "head1.b"));
    let hd = tape.linear(z, w1, b1);
    let hd = tape.relu(hd);
    let (w2, b2) = (p(tape, "head2.w"), p(tape, "head2.b"));
    let raw = tape.linear(hd, w2, b2);
    let scores = tape.tanh(raw);
    let w = p(tape, "w");
    let reward = tape.token_weighted_sum(scores, w, t_n);
    Ok(ForwardOutput { reward, scores, bn_stats })
}

/// Folds batch statistics into the running estimates (unbiased variance).
pub fn update_running_stats(params: &mut ScorerParams, out: &ForwardOutput) {
    let m = params.config.bn_momentum;
    for (mean_slot, var_slot, mean, var, rows) in &out.bn_stats {
        let unbias = if *rows > 1 { *rows as f64 / (*rows as f64 - 1.0) } else { 1.0 };
        let rm = &mut params.values[*mean_slot];
        for (r, &b) in rm.iter_mut().zip(mean.iter()) {
            *r = (1.0 - m) * *r + m * b;
        }
        let rv = &mut params.values[*var_slot];
        for (r, &b) in rv.iter_mut().zip(var.iter()) {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
    }
}

/// Eval-mode rewards for a list of bundles.
pub fn score_bundles(params: &ScorerParams, bundles: &[&FeatureBundle]) -> Result<Vec<f64>> {
    if bundles.is_empty() {
        return Ok(Vec::new());
    }
    let input = BatchInput::from_bundles(bundles, &params.config.features)?;
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, &input, Mode::Eval)?;
    Ok(tape.value(out.reward).column(0).to_vec())
}

/// Mean focal loss over `groups` and its gradient for every parameter slot
/// (zeros for non-trainable slots).
pub fn loss_and_grads(
    params: &ScorerParams,
    input: &BatchInput,
    groups: &[Group],
    gamma: f64,
    mode: Mode,
) -> Result<(f64, Vec<Array2<f64>>, ForwardOutput)> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, input, mode)?;
    let loss = tape.focal_nll(out.reward, groups, gamma);
    let grads = backward(&tape, Some(loss), params)?;
    Ok((tape.value(loss)[[0, 0]], grads, out))
}

/// Parameter gradients of the recorded scalar `loss`.
pub fn backward(tape: &Tape, loss: Option<Var>, params: &ScorerParams) -> Result<Vec<Array2<f64>>> {
    let loss = loss.ok_or(Error::TapeNotRecorded)?;
    if tape.is_empty() {
        return Err(Error::TapeNotRecorded);
    }
    let raw = tape.backward(loss, params.values.len());
    Ok(raw
        .into_iter()
        .zip(&params.values)
        .zip(&params.trainable)
        .map(|((g, v), &t)| match g {
            Some(g) if t => g.as_standard_layout().into_owned(),
            _ => Array2::zeros(v.raw_dim()),
        })
        .collect())
}
