//! Parameter inventory: names, shapes, initializers, and the index layout the
//! forward pass uses to find each tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::model::config::{MemoryMode, UsesConfig};
use crate::numerics::{Scalar, Tensor};

/// Conv kernels of the encoder and decoder are `KERNEL x KERNEL`, stride 1,
/// padded to keep F and T.
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Const(f64),
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Affine {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Transformer {
    pub attn_norm: Affine,
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub out: Affine,
    pub ffn_norm: Affine,
    pub ffn_in: Affine,
    pub ffn_out: Affine,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tac {
    pub transform: Affine,
    pub transform_act: usize,
    pub project: Affine,
    pub project_act: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub tac: Option<Tac>,
    pub freq: Transformer,
    pub time: Transformer,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub enc_conv: Affine,
    pub enc_norm: Affine,
    pub bottleneck: Affine,
    pub blocks: Vec<Block>,
    pub dec_act: usize,
    pub dec_proj: Affine,
    pub dec_conv: Affine,
    /// Memory-token groups, `[1, N, 1, G]`; absent when G = 0.
    pub memory: Option<[usize; 2]>,
}

impl Layout {
    pub fn memory(&self, mode: MemoryMode) -> Option<usize> {
        self.memory.map(|m| match mode {
            MemoryMode::DenoiseDereverb => m[0],
            MemoryMode::Denoise => m[1],
        })
    }
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Affine {
        Affine {
            weight: self.push(format!("{prefix}.weight"), vec![fan_out, fan_in], Init::FanIn(fan_in)),
            bias: self.push(format!("{prefix}.bias"), vec![fan_out], Init::Const(0.0)),
        }
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> Affine {
        Affine {
            weight: self.push(format!("{prefix}.gain"), vec![dim], Init::Const(1.0)),
            bias: self.push(format!("{prefix}.bias"), vec![dim], Init::Const(0.0)),
        }
    }

    fn prelu(&mut self, name: &str, dim: usize) -> usize {
        self.push(format!("{name}.slope"), vec![dim], Init::Const(0.25))
    }

    fn transformer(&mut self, prefix: &str, dim: usize, hidden: usize) -> Transformer {
        Transformer {
            attn_norm: self.norm(&format!("{prefix}.attn_norm"), dim),
            query: self.linear(&format!("{prefix}.attn.query"), dim, dim),
            key: self.linear(&format!("{prefix}.attn.key"), dim, dim),
            value: self.linear(&format!("{prefix}.attn.value"), dim, dim),
            out: self.linear(&format!("{prefix}.attn.out"), dim, dim),
            ffn_norm: self.norm(&format!("{prefix}.ffn_norm"), dim),
            ffn_in: self.linear(&format!("{prefix}.ffn.in"), dim, hidden),
            ffn_out: self.linear(&format!("{prefix}.ffn.out"), hidden, dim),
        }
    }
}

pub(crate) fn build_layout(cfg: &UsesConfig) -> (Layout, Vec<ParamSpec>) {
    let (d, n, h) = (cfg.embed_dim, cfg.bottleneck_dim, cfg.tac_hidden);
    let taps = KERNEL * KERNEL;
    let mut b = Builder { specs: Vec::new() };
    let enc_conv = Affine {
        weight: b.push("encoder.conv.weight".into(), vec![d, 2, KERNEL, KERNEL], Init::FanIn(2 * taps)),
        bias: b.push("encoder.conv.bias".into(), vec![d], Init::Const(0.0)),
    };
    let enc_norm = b.norm("encoder.norm", d);
    let bottleneck = b.linear("encoder.bottleneck", d, n);
    let blocks = (0..cfg.num_blocks)
        .map(|k| {
            let tac = (k < cfg.num_spatial_blocks).then(|| Tac {
                transform: b.linear(&format!("blocks.{k}.tac.transform"), n, h),
                transform_act: b.prelu(&format!("blocks.{k}.tac.transform_act"), h),
                project: b.linear(&format!("blocks.{k}.tac.project"), 2 * h, n),
                project_act: b.prelu(&format!("blocks.{k}.tac.project_act"), n),
            });
            Block {
                tac,
                freq: b.transformer(&format!("blocks.{k}.freq"), n, cfg.ffn_mult * n),
                time: b.transformer(&format!("blocks.{k}.time"), n, cfg.ffn_mult * n),
            }
        })
        .collect();
    let dec_act = b.prelu("decoder.act", n);
    let dec_proj = b.linear("decoder.proj", n, d);
    let outputs = 2 * cfg.num_outputs;
    let dec_conv = Affine {
        weight: b.push("decoder.conv.weight".into(), vec![d, outputs, KERNEL, KERNEL], Init::FanIn(d * taps)),
        bias: b.push("decoder.conv.bias".into(), vec![outputs], Init::Const(0.0)),
    };
    let memory = (cfg.mem_tokens > 0).then(|| {
        let shape = vec![1, n, 1, cfg.mem_tokens];
        [
            b.push("memory.denoise_dereverb".into(), shape.clone(), Init::Normal(0.02)),
            b.push("memory.denoise".into(), shape, Init::Normal(0.02)),
        ]
    });
    let layout = Layout {
        enc_conv,
        enc_norm,
        bottleneck,
        blocks,
        dec_act,
        dec_proj,
        dec_conv,
        memory,
    };
    (layout, b.specs)
}

/// Draws every parameter from its initializer with one seeded stream, in
/// inventory order.
pub(crate) fn init_tensors<T: Scalar>(specs: &[ParamSpec], seed: u64) -> Result<Vec<Tensor<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|spec| {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Const(v) => vec![T::of(v); n],
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..n).map(|_| T::of(dist.sample(&mut rng))).collect()
                }
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| T::of(dist.sample(&mut rng))).collect()
                }
            };
            Tensor::new(spec.shape.clone(), data)
        })
        .collect()
}

pub fn param_count_for(cfg: &UsesConfig) -> usize {
    build_layout(cfg)
        .1
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}
