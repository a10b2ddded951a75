//! Parameter storage and the convolutional building blocks.

use ndarr_core::{Graph, RngStream, Tensor, Var};

use crate::error::Result;

/// FNV-1a, used to give every named parameter its own initialization stream.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// `N(0, 2 / fan_in)`.
    He { fan_in: usize },
    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Normal(f32),
    Constant(f32),
}

impl ParamStore {
    pub(crate) fn add(&mut self, name: String, shape: &[usize], init: Init, seed: u64) -> usize {
        let mut rng = RngStream::new(seed).split(name_hash(&name));
        let t = match init {
            Init::He { fan_in } => Tensor::randn(shape, (2.0 / fan_in as f32).sqrt(), &mut rng),
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
                Tensor::uniform(shape, -a, a, &mut rng)
            }
            Init::Normal(std) => Tensor::randn(shape, std, &mut rng),
            Init::Constant(v) => Tensor::full(shape, v),
        };
        self.entries.push((name, t));
        self.entries.len() - 1
    }

    /// Appends a parameter with an explicit value.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| g.param(t.clone())).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, seed: u64) -> Self {
        let fan_in = c_in * k * k;
        Conv {
            w: store.add(format!("{name}.w"), &[c_out, c_in, k, k], Init::He { fan_in }, seed),
            b: store.add(format!("{name}.b"), &[c_out], Init::Constant(0.0), seed),
            stride,
            pad: k / 2,
        }
    }

    /// 1×1 convolution initialized to a constant weight.
    pub fn constant_1x1(store: &mut ParamStore, name: &str, c_in: usize, weight: f32, seed: u64) -> Self {
        Conv {
            w: store.add(format!("{name}.w"), &[1, c_in, 1, 1], Init::Constant(weight), seed),
            b: store.add(format!("{name}.b"), &[1], Init::Constant(0.0), seed),
            stride: 1,
            pad: 0,
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.conv2d(x, p[self.w], p[self.b], self.stride, self.pad)?)
    }

    pub fn apply_relu(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = self.apply(g, p, x)?;
        Ok(g.relu(y)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    w: usize,
    b: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, seed: u64) -> Self {
        Dense {
            w: store.add(format!("{name}.w"), &[fan_in, fan_out], Init::Xavier { fan_in, fan_out }, seed),
            b: store.add(format!("{name}.b"), &[fan_out], Init::Constant(0.0), seed),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.linear(x, p[self.w], p[self.b])?)
    }
}

/// `relu(x + conv(relu(conv(x))))`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ResBlock {
    a: Conv,
    b: Conv,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, seed: u64) -> Self {
        ResBlock {
            a: Conv::new(store, &format!("{name}.a"), c, c, 3, 1, seed),
            b: Conv::new(store, &format!("{name}.b"), c, c, 3, 1, seed),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.a.apply_relu(g, p, x)?;
        let h = self.b.apply(g, p, h)?;
        let s = g.add(x, h)?;
        Ok(g.relu(s)?)
    }
}

/// Encoder-decoder with two stride-2 downsamplings, two nearest-neighbour
/// upsamplings and additive skips, ending in a 1×1 projection to one channel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ResUNet {
    enc0: ResBlock,
    down1: Conv,
    enc1: ResBlock,
    down2: Conv,
    enc2: ResBlock,
    up1: Conv,
    up2: Conv,
    out: Conv,
}

impl ResUNet {
    pub fn new(store: &mut ParamStore, name: &str, widths: [usize; 3], seed: u64) -> Self {
        let [c0, c1, c2] = widths;
        ResUNet {
            enc0: ResBlock::new(store, &format!("{name}.enc0"), c0, seed),
            down1: Conv::new(store, &format!("{name}.down1"), c0, c1, 3, 2, seed),
            enc1: ResBlock::new(store, &format!("{name}.enc1"), c1, seed),
            down2: Conv::new(store, &format!("{name}.down2"), c1, c2, 3, 2, seed),
            enc2: ResBlock::new(store, &format!("{name}.enc2"), c2, seed),
            up1: Conv::new(store, &format!("{name}.up1"), c2, c1, 3, 1, seed),
            up2: Conv::new(store, &format!("{name}.up2"), c1, c0, 3, 1, seed),
            out: Conv::new(store, &format!("{name}.out"), c0, 1, 1, 1, seed),
        }
    }

    fn up(g: &mut Graph, conv: &Conv, p: &[Var], x: Var, skip: Var) -> Result<Var> {
        // Convolve at the coarse scale, then upsample; cheaper than the reverse.
        let y = conv.apply_relu(g, p, x)?;
        let mut y = g.upsample_nearest(y, 2)?;
        let (h, w) = (g.shape(skip)[2], g.shape(skip)[3]);
        if g.shape(y)[2] != h || g.shape(y)[3] != w {
            y = g.crop(y, h, w)?;
        }
        Ok(g.add(y, skip)?)
    }

    /// Raw one-channel output (no activation).
    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let e0 = self.enc0.apply(g, p, x)?;
        let d1 = self.down1.apply_relu(g, p, e0)?;
        let e1 = self.enc1.apply(g, p, d1)?;
        let d2 = self.down2.apply_relu(g, p, e1)?;
        let e2 = self.enc2.apply(g, p, d2)?;
        let u1 = Self::up(g, &self.up1, p, e2, e1)?;
        let u2 = Self::up(g, &self.up2, p, u1, e0)?;
        self.out.apply(g, p, u2)
    }
}
