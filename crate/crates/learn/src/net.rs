//! Transformer selection network: EMS and item–face embeddings, stacked
//! self/cross-attention encoder blocks, a preference-conditioned actor over
//! units and a two-component critic.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use stpack_core::env::EnvState;
use stpack_core::geometry::ems_encode;
use stpack_core::rng::{seeded, SimRng};

use crate::tape::{Tape, Var};
use crate::tensor::Matrix;
use crate::LearnError;

pub const EMS_FEATURES: usize = 6;
pub const UNIT_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    pub n_ems: usize,
    /// `5N` for a buffer of `N` items.
    pub n_units: usize,
    /// Seed of the weight initialisation.
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, d_ff: 128, n_blocks: 3, n_ems: 64, n_units: 25, seed: 0 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("d_model, n_heads and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if self.n_ems == 0 || self.n_units == 0 {
            return bad("n_ems and n_units must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    l1: Linear,
    l2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

/// Attention, residual and norm, then feedforward, residual and norm.
#[derive(Debug, Clone, Copy)]
struct SubLayer {
    attn: Attention,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ems_self: SubLayer,
    unit_self: SubLayer,
    ems_from_units: SubLayer,
    units_from_ems: SubLayer,
}

/// Feature-wise affine modulation from the preference embedding.
#[derive(Debug, Clone, Copy)]
struct Film {
    gamma: Linear,
    beta: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    ems_embed: Mlp,
    item_embed: Mlp,
    time_embed: Mlp,
    unit_proj: Linear,
    omega_embed: Mlp,
    blocks: Vec<Block>,
    actor_ems: Film,
    actor_units: Film,
    actor_q: Linear,
    actor_k: Linear,
    actor_bias: usize,
    critic_ems: Film,
    critic_units: Film,
    critic_hidden: Linear,
    critic_out: Linear,
}

/// Trainable tensors in a fixed order; [`Params::flat`] concatenates them
/// for checkpoints and the optimiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Matrix>,
    pub names: Vec<String>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), LearnError> {
        if flat.len() != self.len() {
            return Err(LearnError::Shape(format!("expected {} parameters, got {}", self.len(), flat.len())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

enum Init {
    Uniform,
    Zeros,
    Ones,
}

struct Builder {
    params: Params,
    rng: SimRng,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let m = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::filled(rows, cols, 1.0),
            Init::Uniform => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| self.rng.gen_range(-a..a)).collect();
                Matrix::from_vec(rows, cols, data)
            }
        };
        self.params.tensors.push(m);
        self.params.names.push(name);
        self.params.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.w"), fan_in, fan_out, Init::Uniform),
            b: self.tensor(format!("{name}.b"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.tensor(format!("{name}.g"), 1, d, Init::Ones),
            b: self.tensor(format!("{name}.b"), 1, d, Init::Zeros),
        }
    }

    fn mlp(&mut self, name: &str, fan_in: usize, d: usize) -> Mlp {
        Mlp { l1: self.linear(&format!("{name}.0"), fan_in, d), l2: self.linear(&format!("{name}.1"), d, d) }
    }

    fn sublayer(&mut self, name: &str, c: &NetConfig) -> SubLayer {
        let d = c.d_model;
        SubLayer {
            attn: Attention {
                q: self.linear(&format!("{name}.q"), d, d),
                k: self.linear(&format!("{name}.k"), d, d),
                v: self.linear(&format!("{name}.v"), d, d),
                o: self.linear(&format!("{name}.o"), d, d),
            },
            ln1: self.norm(&format!("{name}.ln1"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, c.d_ff),
            ff2: self.linear(&format!("{name}.ff2"), c.d_ff, d),
            ln2: self.norm(&format!("{name}.ln2"), d),
        }
    }

    /// Gain starts at one and shift at zero, so the modulation is the
    /// identity plus a random perturbation from the weights.
    fn film(&mut self, name: &str, d: usize) -> Film {
        let gamma = Linear {
            w: self.tensor(format!("{name}.gamma.w"), d, d, Init::Uniform),
            b: self.tensor(format!("{name}.gamma.b"), 1, d, Init::Ones),
        };
        Film { gamma, beta: self.linear(&format!("{name}.beta"), d, d) }
    }
}

fn build(c: &NetConfig) -> (Layout, Params) {
    let d = c.d_model;
    let mut b = Builder { params: Params { tensors: Vec::new(), names: Vec::new() }, rng: seeded(c.seed) };
    let ems_embed = b.mlp("embed.ems", EMS_FEATURES, d);
    let item_embed = b.mlp("embed.item", UNIT_FEATURES, d);
    let time_embed = b.mlp("embed.time", 1, d);
    let unit_proj = b.linear("embed.unit_proj", 2 * d, d);
    let omega_embed = b.mlp("embed.omega", 2, d);
    let blocks = (0..c.n_blocks)
        .map(|i| Block {
            ems_self: b.sublayer(&format!("block{i}.ems_self"), c),
            unit_self: b.sublayer(&format!("block{i}.unit_self"), c),
            ems_from_units: b.sublayer(&format!("block{i}.ems_from_units"), c),
            units_from_ems: b.sublayer(&format!("block{i}.units_from_ems"), c),
        })
        .collect();
    let actor_ems = b.film("actor.film_ems", d);
    let actor_units = b.film("actor.film_units", d);
    let actor_q = b.linear("actor.q", d, d);
    let actor_k = b.linear("actor.k", d, d);
    let actor_bias = b.tensor("actor.bias".into(), 1, 1, Init::Zeros);
    let critic_ems = b.film("critic.film_ems", d);
    let critic_units = b.film("critic.film_units", d);
    let critic_hidden = b.linear("critic.hidden", 3 * d, d);
    let critic_out = Linear {
        w: b.tensor("critic.out.w".into(), d, 2, Init::Zeros),
        b: b.tensor("critic.out.b".into(), 1, 2, Init::Zeros),
    };
    let layout = Layout {
        ems_embed,
        item_embed,
        time_embed,
        unit_proj,
        omega_embed,
        blocks,
        actor_ems,
        actor_units,
        actor_q,
        actor_k,
        actor_bias,
        critic_ems,
        critic_units,
        critic_hidden,
        critic_out,
    };
    (layout, b.params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub ems_seq: Matrix,
    pub unit_seq: Matrix,
    pub time_seq: Matrix,
    pub omega: [f64; 2],
    pub mask: Vec<bool>,
}

fn nonzero_rows(m: &Matrix) -> Rc<[bool]> {
    (0..m.rows).map(|i| m.row(i).iter().any(|&v| v != 0.0)).collect()
}

impl NetInput {
    pub fn from_state(state: &EnvState, n_ems: usize) -> Self {
        let dims = state.bin().dims();
        let ems = ems_encode(state.bin().ems(), n_ems, dims);
        let n = state.units().len();
        let mut unit_seq = Matrix::zeros(n, UNIT_FEATURES);
        let mut time_seq = Matrix::zeros(n, 1);
        for a in 0..n {
            unit_seq.row_mut(a).copy_from_slice(&state.unit_encoding(a));
            time_seq.data[a] = state.time_feature(a);
        }
        Self {
            ems_seq: Matrix::from_rows(&ems),
            unit_seq,
            time_seq,
            omega: state.omega().as_array(),
            mask: state.action_mask(),
        }
    }

    /// EMS rows that are not padding.
    pub fn ems_mask(&self) -> Rc<[bool]> {
        nonzero_rows(&self.ems_seq)
    }

    /// Unit rows that are not padding.
    pub fn unit_mask(&self) -> Rc<[bool]> {
        nonzero_rows(&self.unit_seq)
    }

    fn check(&self, c: &NetConfig) -> Result<(), LearnError> {
        let want = [
            ("ems_seq", self.ems_seq.shape(), (c.n_ems, EMS_FEATURES)),
            ("unit_seq", self.unit_seq.shape(), (c.n_units, UNIT_FEATURES)),
            ("time_seq", self.time_seq.shape(), (c.n_units, 1)),
        ];
        for (name, got, exp) in want {
            if got != exp {
                return Err(LearnError::Shape(format!("{name} is {got:?}, expected {exp:?}")));
            }
        }
        if self.mask.len() != c.n_units {
            return Err(LearnError::Shape(format!("mask has {} entries, expected {}", self.mask.len(), c.n_units)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    /// `-inf` at masked units.
    pub logits: Vec<f64>,
    pub value: [f64; 2],
}

impl NetOutput {
    /// Log-probabilities over units; `-inf` at masked entries.
    pub fn log_probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return self.logits.clone();
        }
        let lse = max + self.logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        self.logits.iter().map(|&l| l - lse).collect()
    }

    /// First unit with the largest logit; `None` when all are masked.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &l) in self.logits.iter().enumerate() {
            if l > f64::NEG_INFINITY && best.is_none_or(|b| l > self.logits[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub ems_emb: Var,
    pub unit_emb: Var,
    pub omega_emb: Var,
    /// `n_units × 1`, unmasked.
    pub logits: Var,
    /// `n_units × 1`; zero at masked units.
    pub log_probs: Var,
    /// `1 × 2`
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    layout: Layout,
    pub params: Params,
}

impl Network {
    pub fn new(config: NetConfig) -> Result<Self, LearnError> {
        config.validate()?;
        let (layout, params) = build(&config);
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn linear(&self, t: &mut Tape, l: Linear, x: Var) -> Var {
        let (w, b) = (t.param(l.w), t.param(l.b));
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    fn mlp(&self, t: &mut Tape, m: Mlp, x: Var) -> Var {
        let h = self.linear(t, m.l1, x);
        let h = t.gelu(h);
        self.linear(t, m.l2, h)
    }

    fn norm(&self, t: &mut Tape, n: Norm, x: Var) -> Var {
        let (g, b) = (t.param(n.g), t.param(n.b));
        t.layer_norm(x, g, b)
    }

    fn film(&self, t: &mut Tape, f: Film, x: Var, omega_emb: Var) -> Var {
        let g = self.linear(t, f.gamma, omega_emb);
        let b = self.linear(t, f.beta, omega_emb);
        let y = t.mul_row(x, g);
        t.add_row(y, b)
    }

    fn attention(&self, t: &mut Tape, a: Attention, q_in: Var, kv_in: Var, key_mask: &Rc<[bool]>) -> Var {
        let q = self.linear(t, a.q, q_in);
        let k = self.linear(t, a.k, kv_in);
        let v = self.linear(t, a.v, kv_in);
        let dh = self.config.d_model / self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.config.n_heads)
            .map(|h| {
                let qh = t.slice_cols(q, h * dh, dh);
                let kh = t.slice_cols(k, h * dh, dh);
                let vh = t.slice_cols(v, h * dh, dh);
                let s = t.matmul_nt(qh, kh);
                let s = t.scale(s, scale);
                let p = t.softmax_rows(s, key_mask.clone());
                t.matmul(p, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
        self.linear(t, a.o, cat)
    }

    fn sublayer(&self, t: &mut Tape, s: SubLayer, q_in: Var, kv_in: Var, key_mask: &Rc<[bool]>) -> Var {
        let a = self.attention(t, s.attn, q_in, kv_in, key_mask);
        let h = t.add(q_in, a);
        let h = self.norm(t, s.ln1, h);
        let f = self.linear(t, s.ff1, h);
        let f = t.gelu(f);
        let f = self.linear(t, s.ff2, f);
        let o = t.add(h, f);
        self.norm(t, s.ln2, o)
    }

    /// EMS rows through a two-layer perceptron; item and time features
    /// embedded separately, concatenated and projected.
    pub fn embed(&self, t: &mut Tape, input: &NetInput) -> Result<(Var, Var), LearnError> {
        input.check(&self.config)?;
        let l = &self.layout;
        let ems = t.input(input.ems_seq.clone());
        let units = t.input(input.unit_seq.clone());
        let time = t.input(input.time_seq.clone());
        let e = self.mlp(t, l.ems_embed, ems);
        let i = self.mlp(t, l.item_embed, units);
        let tm = self.mlp(t, l.time_embed, time);
        let cat = t.concat_cols(&[i, tm]);
        let u = self.linear(t, l.unit_proj, cat);
        Ok((e, u))
    }

    /// Self-attention within each sequence, then cross-attention in both
    /// directions; both cross layers read the post-self-attention values.
    pub fn encoder_block(
        &self,
        t: &mut Tape,
        block: usize,
        ems: Var,
        units: Var,
        ems_mask: &Rc<[bool]>,
        unit_mask: &Rc<[bool]>,
    ) -> (Var, Var) {
        let b = self.layout.blocks[block];
        let e = self.sublayer(t, b.ems_self, ems, ems, ems_mask);
        let u = self.sublayer(t, b.unit_self, units, units, unit_mask);
        let e2 = self.sublayer(t, b.ems_from_units, e, u, unit_mask);
        let u2 = self.sublayer(t, b.units_from_ems, u, e, ems_mask);
        (e2, u2)
    }

    pub fn omega_embedding(&self, t: &mut Tape, omega: [f64; 2]) -> Var {
        let w = t.input(Matrix::from_vec(1, 2, omega.to_vec()));
        self.mlp(t, self.layout.omega_embed, w)
    }

    /// Unit-vs-EMS scaled dot products averaged over valid EMS tokens plus
    /// a learned bias; `n_units × 1`, before masking.
    pub fn actor_head(&self, t: &mut Tape, ems: Var, units: Var, omega_emb: Var, ems_mask: &Rc<[bool]>) -> Var {
        let l = &self.layout;
        let e = self.film(t, l.actor_ems, ems, omega_emb);
        let u = self.film(t, l.actor_units, units, omega_emb);
        let q = self.linear(t, l.actor_q, u);
        let k = self.linear(t, l.actor_k, e);
        let s = t.matmul_nt(q, k);
        let s = t.scale(s, 1.0 / (self.config.d_model as f64).sqrt());
        let m = t.mean_cols(s, ems_mask.clone());
        let bias = t.param(l.actor_bias);
        t.add_row(m, bias)
    }

    /// Mean-pooled EMS and unit embeddings with the preference embedding,
    /// mapped to (space, time) value estimates; `1 × 2`.
    pub fn critic_head(
        &self,
        t: &mut Tape,
        ems: Var,
        units: Var,
        omega_emb: Var,
        ems_mask: &Rc<[bool]>,
        unit_mask: &Rc<[bool]>,
    ) -> Var {
        let l = &self.layout;
        let e = self.film(t, l.critic_ems, ems, omega_emb);
        let u = self.film(t, l.critic_units, units, omega_emb);
        let pe = t.mean_rows(e, ems_mask.clone());
        let pu = t.mean_rows(u, unit_mask.clone());
        let cat = t.concat_cols(&[pe, pu, omega_emb]);
        let h = self.linear(t, l.critic_hidden, cat);
        let h = t.gelu(h);
        self.linear(t, l.critic_out, h)
    }

    pub fn forward_on(&self, t: &mut Tape, input: &NetInput) -> Result<ForwardVars, LearnError> {
        let ems_mask = input.ems_mask();
        let unit_mask = input.unit_mask();
        let (mut e, mut u) = self.embed(t, input)?;
        for b in 0..self.config.n_blocks {
            (e, u) = self.encoder_block(t, b, e, u, &ems_mask, &unit_mask);
        }
        let w = self.omega_embedding(t, input.omega);
        let logits = self.actor_head(t, e, u, w, &ems_mask);
        let log_probs = t.log_softmax_col(logits, input.mask.iter().copied().collect());
        let value = self.critic_head(t, e, u, w, &ems_mask, &unit_mask);
        Ok(ForwardVars { ems_emb: e, unit_emb: u, omega_emb: w, logits, log_probs, value })
    }

    pub fn forward(&self, input: &NetInput) -> Result<NetOutput, LearnError> {
        let mut t = Tape::new(&self.params.tensors);
        let v = self.forward_on(&mut t, input)?;
        let logits = t
            .value(v.logits)
            .data
            .iter()
            .zip(&input.mask)
            .map(|(&l, &m)| if m { l } else { f64::NEG_INFINITY })
            .collect();
        let vm = t.value(v.value);
        let out = NetOutput { logits, value: [vm.data[0], vm.data[1]] };
        if !out.value.iter().all(|v| v.is_finite()) || out.logits.iter().any(|l| l.is_nan()) {
            return Err(LearnError::NonFinite("forward pass".into()));
        }
        Ok(out)
    }

    /// Gradient of a scalar on `tape`, flattened in parameter order. Fails
    /// if the forward pass produced a non-finite value.
    pub fn backward(&self, tape: &Tape, loss: Var) -> Result<Vec<f64>, LearnError> {
        Ok(self.backward_tensors(tape, loss)?.into_iter().flat_map(|m| m.data).collect())
    }

    pub fn backward_tensors(&self, tape: &Tape, loss: Var) -> Result<Vec<Matrix>, LearnError> {
        if !tape.value(loss).is_finite() {
            return Err(LearnError::NonFinite("loss".into()));
        }
        let grads = tape.backward(loss);
        if !grads.iter().all(Matrix::is_finite) {
            return Err(LearnError::NonFinite("gradient".into()));
        }
        Ok(grads)
    }
}
