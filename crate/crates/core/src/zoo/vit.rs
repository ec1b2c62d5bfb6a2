//! Plain vision transformer with pre-norm blocks and mean-pooled tokens.

use curvprobe_tensor::Var;
use serde::{Deserialize, Serialize};

use super::{Builder, Ctx, LayerNorm, Linear};
use crate::error::{Error, Result};

const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            patch: 4,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 2,
        }
    }
}

impl VitConfig {
    pub(crate) fn validate(&self, input: [usize; 3]) -> Result<()> {
        let [_, h, w] = input;
        if self.patch == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Config(format!(
                "vit: image side {h}x{w} is not divisible by patch size {}",
                self.patch
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) || self.mlp_ratio == 0 {
            return Err(Error::Config(format!(
                "vit: embed dim {} must be a positive multiple of {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct VitLayout {
    cfg: VitConfig,
    tokens: usize,
    patch_embed: Linear,
    pos: usize,
    blocks: Vec<Block>,
    norm: LayerNorm,
    pub(super) head: Linear,
}

pub(super) fn build(bld: &mut Builder<'_>, cfg: &VitConfig, input: [usize; 3], classes: usize) -> VitLayout {
    let [c, h, w] = input;
    let e = cfg.embed_dim;
    let tokens = (h / cfg.patch) * (w / cfg.patch);
    let fan_in = c * cfg.patch * cfg.patch;
    let patch_embed = Linear::new(bld, "patch_embed", fan_in, e, 1.0 / (fan_in as f32).sqrt());
    let pos = bld.normal("pos_embed", &[tokens, e], INIT_STD);
    let blocks = (0..cfg.depth)
        .map(|i| {
            let n = format!("blocks.{i}");
            Block {
                ln1: LayerNorm::new(bld, &format!("{n}.norm1"), e),
                q: Linear::new(bld, &format!("{n}.attn.q"), e, e, INIT_STD),
                k: Linear::new(bld, &format!("{n}.attn.k"), e, e, INIT_STD),
                v: Linear::new(bld, &format!("{n}.attn.v"), e, e, INIT_STD),
                proj: Linear::new(bld, &format!("{n}.attn.proj"), e, e, INIT_STD),
                ln2: LayerNorm::new(bld, &format!("{n}.norm2"), e),
                fc1: Linear::new(bld, &format!("{n}.mlp.fc1"), e, e * cfg.mlp_ratio, INIT_STD),
                fc2: Linear::new(bld, &format!("{n}.mlp.fc2"), e * cfg.mlp_ratio, e, INIT_STD),
            }
        })
        .collect();
    let norm = LayerNorm::new(bld, "norm", e);
    let head = Linear::new(bld, "head", e, classes, INIT_STD);
    VitLayout {
        cfg: cfg.clone(),
        tokens,
        patch_embed,
        pos,
        blocks,
        norm,
        head,
    }
}

/// `[B, T, E]` to `[B * H, T, E / H]`.
fn split_heads<'g>(x: Var<'g>, b: usize, t: usize, heads: usize, dh: usize) -> Result<Var<'g>> {
    Ok(x.reshape(&[b, t, heads, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * heads, t, dh])?)
}

fn attention<'g>(blk: &Block, ctx: &Ctx<'g, '_>, x: Var<'g>, cfg: &VitConfig, b: usize, t: usize) -> Result<Var<'g>> {
    let (heads, e) = (cfg.heads, cfg.embed_dim);
    let dh = e / heads;
    let q = split_heads(ctx.linear(x, &blk.q)?, b, t, heads, dh)?;
    let k = split_heads(ctx.linear(x, &blk.k)?, b, t, heads, dh)?;
    let v = split_heads(ctx.linear(x, &blk.v)?, b, t, heads, dh)?;
    let scores = q.matmul(k.transpose()?)?.scale(1.0 / (dh as f32).sqrt())?.softmax()?;
    let out = scores
        .matmul(v)?
        .reshape(&[b, heads, t, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, t, e])?;
    ctx.linear(out, &blk.proj)
}

pub(super) fn features<'g>(l: &VitLayout, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let b = x.shape()[0];
    let (t, e) = (l.tokens, l.cfg.embed_dim);
    let patches = x.unfold(l.cfg.patch, l.cfg.patch, 0)?;
    let mut h = ctx
        .linear(patches, &l.patch_embed)?
        .reshape(&[b, t, e])?
        .add_bcast(ctx.p(l.pos))?;
    for blk in &l.blocks {
        let a = attention(blk, ctx, ctx.layer_norm(h, &blk.ln1)?, &l.cfg, b, t)?;
        h = h.add(a)?;
        let m = ctx.linear(ctx.layer_norm(h, &blk.ln2)?, &blk.fc1)?.gelu()?;
        h = h.add(ctx.linear(m, &blk.fc2)?)?;
    }
    let h = ctx.layer_norm(h, &l.norm)?;
    Ok(h.permute(&[0, 2, 1])?.mean_last()?)
}
