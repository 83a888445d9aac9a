//! Child-sum Tree-LSTM over constituency trees, pair-conditioned sentence
//! attention and the bilinear constituency score head.

use rand::Rng;

use crate::corpus::ConstituencyNode;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct TreeLstmParams {
    /// `[d × 3k]`, blocks i, o, u.
    pub w_iou: ParamId,
    pub u_iou: ParamId,
    pub b_iou: ParamId,
    pub w_f: ParamId,
    pub u_f: ParamId,
    pub b_f: ParamId,
    pub dim: usize,
}

impl TreeLstmParams {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        input: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(TreeLstmParams {
            w_iou: store.add_uniform("tree.w_iou", [input, 3 * k], input, rng)?,
            u_iou: store.add_uniform("tree.u_iou", [k, 3 * k], k, rng)?,
            b_iou: store.add_uniform("tree.b_iou", [3 * k], k, rng)?,
            w_f: store.add_uniform("tree.w_f", [input, k], input, rng)?,
            u_f: store.add_uniform("tree.u_f", [k, k], k, rng)?,
            b_f: store.add_uniform("tree.b_f", [k], k, rng)?,
            dim: k,
        })
    }
}

/// Per-node states in pre-order; index 0 is the root.
#[derive(Clone, Debug, Default)]
pub struct TreeStates {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    pub input_gate: Vec<Var>,
    pub output_gate: Vec<Var>,
    /// `[children × k]` forget gates, `None` at leaves.
    pub forget_gates: Vec<Option<Var>>,
}

impl TreeStates {
    pub fn root(&self) -> Var {
        self.h[0]
    }
}

struct TreeCtx<'a, T: Real> {
    tape: &'a Tape<T>,
    p: &'a Bound,
    params: &'a TreeLstmParams,
    /// Leaf projections `x·W_iou + b_iou` and `x·W_f + b_f`, one row per token.
    x_iou: Var,
    x_f: Var,
    b_iou: Var,
    b_f: Var,
    base: usize,
    out: TreeStates,
}

impl<T: Real> TreeCtx<'_, T> {
    fn visit(&mut self, node: &ConstituencyNode) -> Result<(Var, Var), TensorError> {
        let slot = self.out.h.len();
        let placeholder = self.b_f;
        self.out.h.push(placeholder);
        self.out.c.push(placeholder);
        self.out.input_gate.push(placeholder);
        self.out.output_gate.push(placeholder);
        self.out.forget_gates.push(None);
        let t = self.tape;
        let k = self.params.dim;

        let mut hs = Vec::with_capacity(node.children.len());
        let mut cs = Vec::with_capacity(node.children.len());
        for ch in &node.children {
            let (h, c) = self.visit(ch)?;
            hs.push(h);
            cs.push(c);
        }
        let (pre_iou, pre_f) = match node.leaf_token {
            Some(tok) => (
                t.row(self.x_iou, tok - self.base)?,
                t.row(self.x_f, tok - self.base)?,
            ),
            None => (self.b_iou, self.b_f),
        };
        let (iou, cell_from_children) = if hs.is_empty() {
            (pre_iou, None)
        } else {
            let hc = t.stack(&hs)?;
            let cc = t.stack(&cs)?;
            let h_sum = t.sum_axis(hc, 0)?;
            let iou = t.add(pre_iou, t.matmul(h_sum, self.p[self.params.u_iou])?)?;
            let f = t.sigmoid(t.add(t.matmul(hc, self.p[self.params.u_f])?, pre_f)?);
            self.out.forget_gates[slot] = Some(f);
            (iou, Some(t.sum_axis(t.mul(f, cc)?, 0)?))
        };
        let i = t.sigmoid(t.slice(iou, 0, 0, k)?);
        let o = t.sigmoid(t.slice(iou, 0, k, 2 * k)?);
        let u = t.tanh(t.slice(iou, 0, 2 * k, 3 * k)?);
        let mut c = t.mul(i, u)?;
        if let Some(fc) = cell_from_children {
            c = t.add(c, fc)?;
        }
        let h = t.mul(o, t.tanh(c))?;
        self.out.h[slot] = h;
        self.out.c[slot] = c;
        self.out.input_gate[slot] = i;
        self.out.output_gate[slot] = o;
        Ok((h, c))
    }
}

/// Runs the Tree-LSTM bottom-up over `tree`.
///
/// `leaf_inputs` holds one row per token of the sentence; a leaf with global
/// token index `t` reads row `t - base`. Internal nodes take a zero input.
pub fn tree_lstm_forward<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &TreeLstmParams,
    tree: &ConstituencyNode,
    leaf_inputs: Var,
    base: usize,
) -> Result<TreeStates, TensorError> {
    let b_iou = p[params.b_iou];
    let b_f = p[params.b_f];
    let x_iou = tape.add(tape.matmul(leaf_inputs, p[params.w_iou])?, b_iou)?;
    let x_f = tape.add(tape.matmul(leaf_inputs, p[params.w_f])?, b_f)?;
    let mut ctx = TreeCtx {
        tape,
        p,
        params,
        x_iou,
        x_f,
        b_iou,
        b_f,
        base,
        out: TreeStates::default(),
    };
    ctx.visit(tree)?;
    Ok(ctx.out)
}

/// `V_doc`: the root hidden state of every sentence, `[I × k]`.
pub fn sentence_vectors<T: Real>(
    tape: &Tape<T>,
    states: &[TreeStates],
) -> Result<Var, TensorError> {
    let roots: Vec<Var> = states.iter().map(TreeStates::root).collect();
    tape.stack(&roots)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        entity_dim: usize,
        k: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(AttentionParams {
            w_q: store.add_uniform("attention.w_q", [entity_dim, k], entity_dim, rng)?,
            w_k: store.add_uniform("attention.w_k", [k, k], k, rng)?,
            w_v: store.add_uniform("attention.w_v", [k, k], k, rng)?,
            w_o: store.add_uniform("attention.w_o", [k, k], k, rng)?,
            heads,
            dim: k,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PairAttention {
    /// Attended sentence vector `[k]`.
    pub s: Var,
    /// Head-averaged weights over sentences `[I]`.
    pub a: Var,
}

/// Multi-head scaled dot-product attention over `bank` queried by `e_s - e_o`.
pub fn pair_attention<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &AttentionParams,
    e_s: Var,
    e_o: Var,
    bank: Var,
) -> Result<PairAttention, TensorError> {
    let t = tape;
    let q = t.matmul(t.sub(e_s, e_o)?, p[params.w_q])?;
    let keys = t.matmul(bank, p[params.w_k])?;
    let values = t.matmul(bank, p[params.w_v])?;
    let dh = params.dim / params.heads;
    let scale = T::one() / T::from_count(dh).sqrt();
    let mut outs = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let logits = t.scale(
            t.matmul(t.slice(keys, 1, lo, hi)?, t.slice(q, 0, lo, hi)?)?,
            scale,
        );
        let a = t.softmax(logits, 0)?;
        outs.push(t.matmul(a, t.slice(values, 1, lo, hi)?)?);
        weights.push(a);
    }
    let s = t.matmul(t.concat(&outs, 0)?, p[params.w_o])?;
    let a = t.mean_axis(t.stack(&weights)?, 0)?;
    Ok(PairAttention { s, a })
}

#[derive(Clone, Copy, Debug)]
pub struct ConstScoreParams {
    pub w_s1: ParamId,
    pub w_s2: ParamId,
    pub w_o1: ParamId,
    pub w_o2: ParamId,
    /// `[blocks·g² × (C+1)]`.
    pub bilinear: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub block: usize,
}

impl ConstScoreParams {
    /// `block == 0` means a single full-width bilinear block.
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        entity_dim: usize,
        k: usize,
        dim: usize,
        block: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let g = if block == 0 { dim } else { block };
        let width = (dim / g) * g * g;
        Ok(ConstScoreParams {
            w_s1: store.add_uniform("const.w_s1", [entity_dim, dim], entity_dim + k, rng)?,
            w_s2: store.add_uniform("const.w_s2", [k, dim], entity_dim + k, rng)?,
            w_o1: store.add_uniform("const.w_o1", [entity_dim, dim], entity_dim + k, rng)?,
            w_o2: store.add_uniform("const.w_o2", [k, dim], entity_dim + k, rng)?,
            bilinear: store.add_uniform("const.bilinear", [width, classes], width, rng)?,
            bias: store.add_uniform("const.bias", [classes], width, rng)?,
            dim,
            block: g,
        })
    }
}

/// `z_const[r] = z_sᵀ W_r z_o + b_r` with block-diagonal `W_r`.
pub fn const_score<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &ConstScoreParams,
    e_s: Var,
    e_o: Var,
    s: Var,
) -> Result<Var, TensorError> {
    let t = tape;
    let z_s = t.tanh(t.add(t.matmul(e_s, p[params.w_s1])?, t.matmul(s, p[params.w_s2])?)?);
    let z_o = t.tanh(t.add(t.matmul(e_o, p[params.w_o1])?, t.matmul(s, p[params.w_o2])?)?);
    let g = params.block;
    let mut blocks = Vec::with_capacity(params.dim / g);
    for b in 0..params.dim / g {
        let l = t.reshape(t.slice(z_s, 0, b * g, (b + 1) * g)?, [g, 1])?;
        let r = t.reshape(t.slice(z_o, 0, b * g, (b + 1) * g)?, [1, g])?;
        blocks.push(t.flatten(t.matmul(l, r)?)?);
    }
    let outer = if blocks.len() == 1 {
        blocks[0]
    } else {
        t.concat(&blocks, 0)?
    };
    t.add(t.matmul(outer, p[params.bilinear])?, p[params.bias])
}

/// Uniform attention weights over `sentences`.
pub fn uniform_weights<T: Real>(tape: &Tape<T>, sentences: usize) -> Var {
    tape.constant(Tensor::full(
        [sentences],
        T::one() / T::from_count(sentences),
    ))
}
