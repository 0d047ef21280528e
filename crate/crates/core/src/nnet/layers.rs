use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Registers freshly initialized parameters.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform Xavier initialization of a `fan_in × fan_out` matrix.
    pub fn xavier(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-a..a)).collect();
        self.store.add(name, Tensor::new(shape, data).expect("shape"))
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }

    pub fn gaussian(&mut self, name: &str, shape: Vec<usize>, sigma: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, sigma).expect("positive sigma");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::new(shape, data).expect("shape"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, input: usize, output: usize) -> Self {
        Self {
            w: init.xavier(&format!("{name}.weight"), vec![input, output], input, output),
            b: init.constant(&format!("{name}.bias"), vec![output], 0.0),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, s: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(g.param(s, self.w))?.add_bias(g.param(s, self.b))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Self {
        Self {
            gain: init.constant(&format!("{name}.gain"), vec![dim], 1.0),
            bias: init.constant(&format!("{name}.bias"), vec![dim], 0.0),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, s: &ParamStore, x: Var<'g>, eps: f64) -> Result<Var<'g>> {
        x.layer_norm(g.param(s, self.gain), g.param(s, self.bias), eps)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Multi-head scaled dot-product attention without positional terms.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(init, &format!("{name}.q"), dim, dim),
            k: Linear::new(init, &format!("{name}.k"), dim, dim),
            v: Linear::new(init, &format!("{name}.v"), dim, dim),
            o: Linear::new(init, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    /// Rows of `query` attend over rows of `memory`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        s: &ParamStore,
        query: Var<'g>,
        memory: Var<'g>,
    ) -> Result<Var<'g>> {
        let q = self.q.forward(g, s, query)?;
        let k = self.k.forward(g, s, memory)?;
        let v = self.v.forward(g, s, memory)?;
        let dim = q.cols();
        let dk = dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    q.narrow_cols(h * dk, dk)?,
                    k.narrow_cols(h * dk, dk)?,
                    v.narrow_cols(h * dk, dk)?,
                )
            };
            let weights = qh.matmul_t(kh)?.scale(scale).softmax(1)?;
            outs.push(weights.matmul(vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            Var::concat_cols(&outs)?
        };
        self.o.forward(g, s, merged)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o]
            .iter()
            .flat_map(|l| l.ids())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activation {
    Relu,
    Swish,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, hidden: usize, act: Activation) -> Self {
        Self {
            up: Linear::new(init, &format!("{name}.up"), dim, hidden),
            down: Linear::new(init, &format!("{name}.down"), hidden, dim),
            act,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, s: &ParamStore, x: Var<'g>, dropout: f64) -> Result<Var<'g>> {
        let h = self.up.forward(g, s, x)?;
        let h = match self.act {
            Activation::Relu => h.relu(),
            Activation::Swish => h.swish(),
        };
        self.down.forward(g, s, h.dropout(dropout))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.up.ids();
        v.extend(self.down.ids());
        v
    }
}

/// Post-norm transformer encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderLayer {
    pub attn: Attention,
    pub norm1: Norm,
    pub ff: FeedForward,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize, ff: usize) -> Self {
        Self {
            attn: Attention::new(init, &format!("{name}.self_attn"), dim, heads),
            norm1: Norm::new(init, &format!("{name}.norm1"), dim),
            ff: FeedForward::new(init, &format!("{name}.ff"), dim, ff, Activation::Relu),
            norm2: Norm::new(init, &format!("{name}.norm2"), dim),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, s: &ParamStore, x: Var<'g>, p: f64, eps: f64) -> Result<Var<'g>> {
        let a = self.attn.forward(g, s, x, x)?.dropout(p);
        let x = self.norm1.forward(g, s, x.add(a)?, eps)?;
        let f = self.ff.forward(g, s, x, p)?.dropout(p);
        self.norm2.forward(g, s, x.add(f)?, eps)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.attn.ids();
        v.extend(self.norm1.ids());
        v.extend(self.ff.ids());
        v.extend(self.norm2.ids());
        v
    }
}

/// Post-norm transformer decoder layer: self-attention over the query rows,
/// cross-attention into a memory sequence, then feed-forward.
///
/// The attractor decoder runs it with enrollments as queries and frame
/// embeddings as memory; the Enhancer swaps the two roles.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: Norm,
    pub cross_attn: Attention,
    pub norm2: Norm,
    pub ff: FeedForward,
    pub norm3: Norm,
}

impl DecoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize, ff: usize) -> Self {
        Self {
            self_attn: Attention::new(init, &format!("{name}.self_attn"), dim, heads),
            norm1: Norm::new(init, &format!("{name}.norm1"), dim),
            cross_attn: Attention::new(init, &format!("{name}.cross_attn"), dim, heads),
            norm2: Norm::new(init, &format!("{name}.norm2"), dim),
            ff: FeedForward::new(init, &format!("{name}.ff"), dim, ff, Activation::Relu),
            norm3: Norm::new(init, &format!("{name}.norm3"), dim),
        }
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        s: &ParamStore,
        query: Var<'g>,
        memory: Var<'g>,
        p: f64,
        eps: f64,
    ) -> Result<Var<'g>> {
        let a = self.self_attn.forward(g, s, query, query)?.dropout(p);
        let x = self.norm1.forward(g, s, query.add(a)?, eps)?;
        let c = self.cross_attn.forward(g, s, x, memory)?.dropout(p);
        let x = self.norm2.forward(g, s, x.add(c)?, eps)?;
        let f = self.ff.forward(g, s, x, p)?.dropout(p);
        self.norm3.forward(g, s, x.add(f)?, eps)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.self_attn.ids();
        v.extend(self.norm1.ids());
        v.extend(self.cross_attn.ids());
        v.extend(self.norm2.ids());
        v.extend(self.ff.ids());
        v.extend(self.norm3.ids());
        v
    }
}

/// Conformer block: half-step feed-forward, self-attention, depthwise
/// convolution module, half-step feed-forward, output norm. Layer norm
/// stands in for batch norm inside the convolution module.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConformerBlock {
    pub ff1_norm: Norm,
    pub ff1: FeedForward,
    pub attn_norm: Norm,
    pub attn: Attention,
    pub conv_norm: Norm,
    pub pointwise_in: Linear,
    pub depthwise: ParamId,
    pub depthwise_bias: ParamId,
    pub conv_mid_norm: Norm,
    pub pointwise_out: Linear,
    pub ff2_norm: Norm,
    pub ff2: FeedForward,
    pub out_norm: Norm,
}

impl ConformerBlock {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize, ff: usize, kernel: usize) -> Self {
        Self {
            ff1_norm: Norm::new(init, &format!("{name}.ff1_norm"), dim),
            ff1: FeedForward::new(init, &format!("{name}.ff1"), dim, ff, Activation::Swish),
            attn_norm: Norm::new(init, &format!("{name}.attn_norm"), dim),
            attn: Attention::new(init, &format!("{name}.self_attn"), dim, heads),
            conv_norm: Norm::new(init, &format!("{name}.conv_norm"), dim),
            pointwise_in: Linear::new(init, &format!("{name}.pointwise_in"), dim, 2 * dim),
            depthwise: init.xavier(&format!("{name}.depthwise.weight"), vec![dim, kernel], kernel, kernel),
            depthwise_bias: init.constant(&format!("{name}.depthwise.bias"), vec![dim], 0.0),
            conv_mid_norm: Norm::new(init, &format!("{name}.conv_mid_norm"), dim),
            pointwise_out: Linear::new(init, &format!("{name}.pointwise_out"), dim, dim),
            ff2_norm: Norm::new(init, &format!("{name}.ff2_norm"), dim),
            ff2: FeedForward::new(init, &format!("{name}.ff2"), dim, ff, Activation::Swish),
            out_norm: Norm::new(init, &format!("{name}.out_norm"), dim),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, s: &ParamStore, x: Var<'g>, p: f64, eps: f64) -> Result<Var<'g>> {
        let dim = x.cols();
        let h = self.ff1.forward(g, s, self.ff1_norm.forward(g, s, x, eps)?, p)?;
        let x = x.add(h.dropout(p).scale(0.5))?;

        let n = self.attn_norm.forward(g, s, x, eps)?;
        let x = x.add(self.attn.forward(g, s, n, n)?.dropout(p))?;

        let c = self.pointwise_in.forward(g, s, self.conv_norm.forward(g, s, x, eps)?)?;
        let gated = c.narrow_cols(0, dim)?.mul(c.narrow_cols(dim, dim)?.sigmoid())?;
        let c = gated
            .depthwise_conv1d(g.param(s, self.depthwise))?
            .add_bias(g.param(s, self.depthwise_bias))?;
        let c = self.conv_mid_norm.forward(g, s, c, eps)?.swish();
        let c = self.pointwise_out.forward(g, s, c)?.dropout(p);
        let x = x.add(c)?;

        let h = self.ff2.forward(g, s, self.ff2_norm.forward(g, s, x, eps)?, p)?;
        let x = x.add(h.dropout(p).scale(0.5))?;
        self.out_norm.forward(g, s, x, eps)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.ff1_norm.ids();
        v.extend(self.ff1.ids());
        v.extend(self.attn_norm.ids());
        v.extend(self.attn.ids());
        v.extend(self.conv_norm.ids());
        v.extend(self.pointwise_in.ids());
        v.push(self.depthwise);
        v.push(self.depthwise_bias);
        v.extend(self.conv_mid_norm.ids());
        v.extend(self.pointwise_out.ids());
        v.extend(self.ff2_norm.ids());
        v.extend(self.ff2.ids());
        v.extend(self.out_norm.ids());
        v
    }
}
