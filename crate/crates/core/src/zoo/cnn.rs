//! ResNet-style CNN: 3x3 stem, basic residual blocks, global average pool.

use curvprobe_tensor::Var;
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Builder, Conv, Ctx, Linear};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Channel width of each stage; stages after the first halve the resolution.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks: Vec<usize>,
}

impl Default for CnnConfig {
    /// ResNet-8: widths 16/32/64, one block per stage.
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64],
            blocks: vec![1, 1, 1],
        }
    }
}

impl CnnConfig {
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.blocks.len() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "cnn: widths {:?} and blocks {:?} must be nonempty, positive and of equal length",
                self.widths, self.blocks
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    shortcut: Option<(Conv, BatchNorm)>,
}

#[derive(Clone, Debug)]
pub(crate) struct CnnLayout {
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<Block>,
    pub(super) head: Linear,
}

pub(super) fn build(bld: &mut Builder<'_>, cfg: &CnnConfig, in_channels: usize, classes: usize) -> CnnLayout {
    let w0 = cfg.widths[0];
    let stem = Conv::new(bld, "stem.conv", in_channels, w0, 3, 1);
    let stem_bn = BatchNorm::new(bld, "stem.bn", w0);
    let mut blocks = Vec::new();
    let mut cin = w0;
    for (s, (&width, &count)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
        for b in 0..count {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let name = format!("stage{s}.block{b}");
            let conv1 = Conv::new(bld, &format!("{name}.conv1"), cin, width, 3, stride);
            let bn1 = BatchNorm::new(bld, &format!("{name}.bn1"), width);
            let conv2 = Conv::new(bld, &format!("{name}.conv2"), width, width, 3, 1);
            let bn2 = BatchNorm::new(bld, &format!("{name}.bn2"), width);
            let shortcut = (stride != 1 || cin != width).then(|| {
                (
                    Conv::new(bld, &format!("{name}.shortcut.conv"), cin, width, 1, stride),
                    BatchNorm::new(bld, &format!("{name}.shortcut.bn"), width),
                )
            });
            blocks.push(Block {
                conv1,
                bn1,
                conv2,
                bn2,
                shortcut,
            });
            cin = width;
        }
    }
    let head = Linear::new(bld, "head", cin, classes, (1.0 / cin as f32).sqrt());
    CnnLayout {
        stem,
        stem_bn,
        blocks,
        head,
    }
}

pub(super) fn features<'g>(l: &CnnLayout, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let mut h = ctx.batch_norm(ctx.conv(x, &l.stem)?, &l.stem_bn)?.relu()?;
    for b in &l.blocks {
        let y = ctx.batch_norm(ctx.conv(h, &b.conv1)?, &b.bn1)?.relu()?;
        let y = ctx.batch_norm(ctx.conv(y, &b.conv2)?, &b.bn2)?;
        let skip = match &b.shortcut {
            Some((conv, bn)) => ctx.batch_norm(ctx.conv(h, conv)?, bn)?,
            None => h,
        };
        h = y.add(skip)?.relu()?;
    }
    let s = h.shape();
    Ok(h.reshape(&[s[0], s[1], s[2] * s[3]])?.mean_last()?)
}
