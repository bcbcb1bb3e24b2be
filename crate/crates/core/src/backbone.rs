//! Toy 3D-convolutional backbone and feature-reduction unit blocks.
//!
//! A clip `[C × T × H × W]` passes through GELU-activated 3×3×3 convolution
//! stages and bottleneck unit blocks (1×1×1 reduce, 3×3×3, 1×1×1 expand).
//! The spatial axes are then averaged away and the result is transposed to
//! temporal features `[T_out × D_out]`.
//!
//! FRMB replaces the final unit block with a narrower one; FRAB keeps it and
//! appends an extra narrowing block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv3d;
use crate::ops::conv_out_dims;
use crate::params::ParamStore;
use crate::pool::{Head, HeadConfig};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub width: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

/// A bottleneck unit block; the 3×3×3 convolution carries the stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub mid: usize,
    pub out: usize,
    pub stride: [usize; 3],
}

impl BlockSpec {
    pub fn bottleneck(out: usize, stride: [usize; 3]) -> Self {
        Self {
            mid: (out / 4).max(1),
            out,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyBackboneConfig {
    /// Clip geometry `[C, T, H, W]`.
    pub input: [usize; 4],
    pub stages: Vec<StageSpec>,
    pub blocks: Vec<BlockSpec>,
}

/// One convolution of the backbone with its input and output extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvLayer {
    pub fn num_params(&self) -> u64 {
        (self.out_channels * self.in_channels * self.kernel.iter().product::<usize>() + self.out_channels) as u64
    }

    pub fn out_numel(&self) -> u64 {
        (self.out_channels * self.out_dims.iter().product::<usize>()) as u64
    }
}

fn same_padding(kernel: [usize; 3]) -> [usize; 3] {
    kernel.map(|k| k / 2)
}

impl ToyBackboneConfig {
    /// Stages of width 16 (stride 1,2,2) and 32 (stride 2,2,2), then one
    /// bottleneck block to `d_out` with stride 2 on every axis.
    pub fn new(input: [usize; 4], d_out: usize) -> Self {
        Self {
            input,
            stages: vec![
                StageSpec {
                    width: 16,
                    kernel: [3; 3],
                    stride: [1, 2, 2],
                },
                StageSpec {
                    width: 32,
                    kernel: [3; 3],
                    stride: [2; 3],
                },
            ],
            blocks: vec![BlockSpec::bottleneck(d_out, [2; 3])],
        }
    }

    /// Every convolution in evaluation order, with shapes propagated from `input`.
    pub fn layers(&self) -> Result<Vec<ConvLayer>> {
        let [c0, t, h, w] = self.input;
        if self.input.contains(&0) {
            return Err(Error::config(format!("backbone input geometry {:?} must be positive", self.input)));
        }
        if self.stages.is_empty() && self.blocks.is_empty() {
            return Err(Error::config("backbone needs at least one stage or block"));
        }
        let mut ch = c0;
        let mut dims = [t, h, w];
        let mut out = Vec::new();
        let mut push = |name: String, out_ch: usize, kernel: [usize; 3], stride: [usize; 3], ch: &mut usize, dims: &mut [usize; 3]| -> Result<()> {
            let padding = same_padding(kernel);
            Conv3d::validate(*ch, out_ch, kernel, stride, padding)?;
            let od = conv_out_dims(dims, &kernel, stride, padding).ok_or_else(|| {
                Error::config(format!("{name}: kernel {kernel:?} does not fit extents {dims:?}"))
            })?;
            out.push(ConvLayer {
                name,
                in_channels: *ch,
                out_channels: out_ch,
                kernel,
                stride,
                padding,
                in_dims: *dims,
                out_dims: od,
            });
            *ch = out_ch;
            *dims = od;
            Ok(())
        };
        for (i, s) in self.stages.iter().enumerate() {
            push(format!("stage{i}"), s.width, s.kernel, s.stride, &mut ch, &mut dims)?;
        }
        for (i, b) in self.blocks.iter().enumerate() {
            push(format!("block{i}.reduce"), b.mid, [1; 3], [1; 3], &mut ch, &mut dims)?;
            push(format!("block{i}.conv"), b.mid, [3; 3], b.stride, &mut ch, &mut dims)?;
            push(format!("block{i}.expand"), b.out, [1; 3], [1; 3], &mut ch, &mut dims)?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.layers().map(|_| ())
    }

    pub fn feature_dim(&self) -> usize {
        match (self.blocks.last(), self.stages.last()) {
            (Some(b), _) => b.out,
            (None, Some(s)) => s.width,
            (None, None) => self.input[0],
        }
    }

    /// Temporal length of the produced features.
    pub fn output_len(&self) -> Result<usize> {
        Ok(self.layers()?.last().expect("nonempty").out_dims[0])
    }

    pub fn num_params(&self) -> Result<u64> {
        Ok(self.layers()?.iter().map(ConvLayer::num_params).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMode {
    #[default]
    Original,
    /// Replace the final unit block with one of reduced width.
    Frmb,
    /// Append a reducing unit block after the final one.
    Frab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitBlockSpec {
    pub mode: ReductionMode,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// The backbone configuration after applying a feature-reduction block.
pub fn apply_reduction(cfg: &ToyBackboneConfig, spec: &UnitBlockSpec) -> Result<ToyBackboneConfig> {
    if spec.in_dim != cfg.feature_dim() {
        return Err(Error::dim("apply_reduction", &[cfg.feature_dim()], &[spec.in_dim]));
    }
    if spec.out_dim == 0 {
        return Err(Error::config("reduction out_dim must be positive"));
    }
    let mut out = cfg.clone();
    match spec.mode {
        ReductionMode::Original => {}
        ReductionMode::Frmb => {
            let last = out
                .blocks
                .last_mut()
                .ok_or_else(|| Error::config("FRMB needs a final unit block to replace"))?;
            *last = BlockSpec::bottleneck(spec.out_dim, last.stride);
        }
        ReductionMode::Frab => out.blocks.push(BlockSpec::bottleneck(spec.out_dim, [1; 3])),
    }
    out.validate()?;
    Ok(out)
}

/// A built backbone: one [`Conv3d`] per entry of [`ToyBackboneConfig::layers`].
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    pub cfg: ToyBackboneConfig,
    pub convs: Vec<Conv3d>,
}

impl ToyBackbone {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ToyBackboneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let convs = cfg
            .layers()?
            .iter()
            .map(|l| {
                Conv3d::new(
                    store,
                    &format!("{name}.{}", l.name),
                    l.in_channels,
                    l.out_channels,
                    l.kernel,
                    l.stride,
                    l.padding,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), convs })
    }

    pub fn num_params(&self) -> u64 {
        self.convs.iter().map(Conv3d::num_params).sum()
    }

    /// Temporal features `[T_out × D_out]` of `clip: [C × T × H × W]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, clip: Var) -> Result<Var> {
        backbone_forward(g, self, clip)
    }
}

pub fn backbone_forward<T: Scalar>(g: &mut Graph<T>, net: &ToyBackbone, clip: Var) -> Result<Var> {
    if g.shape(clip) != net.cfg.input {
        return Err(Error::dim("backbone_forward", g.shape(clip), &net.cfg.input));
    }
    let mut x = clip;
    for conv in &net.convs {
        let y = conv.forward(g, x)?;
        x = g.gelu(y);
    }
    let &[c, t, h, w] = g.shape(x) else {
        unreachable!("conv3d output is rank 4")
    };
    let flat = g.reshape(x, [c, t, h * w])?;
    let pooled = g.mean_axis(flat, 2)?;
    g.transpose(pooled)
}

/// Backbone followed by a pooling head, trained end to end on clips.
#[derive(Debug, Clone)]
pub struct ClipModel {
    pub backbone: ToyBackbone,
    pub head: Head,
}

impl ClipModel {
    /// The head's `seq_len` and `feature_dim` are taken from the backbone.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        backbone: &ToyBackboneConfig,
        head: &HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let bb = ToyBackbone::new(store, "backbone", backbone, rng)?;
        let hc = HeadConfig {
            seq_len: backbone.output_len()?,
            feature_dim: backbone.feature_dim(),
            ..head.clone()
        };
        let head = Head::new(store, "head", &hc, rng)?;
        Ok(Self { backbone: bb, head })
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, clip: Var) -> Result<Var> {
        let f = self.backbone.forward(g, clip)?;
        self.head.logits(g, f)
    }
}

/// A backbone geometry together with the reduction applied to its features.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionPreset {
    pub name: &'static str,
    pub base: ToyBackboneConfig,
    pub reduced_dim: usize,
}

impl ReductionPreset {
    pub fn spec(&self, mode: ReductionMode) -> UnitBlockSpec {
        UnitBlockSpec {
            mode,
            in_dim: self.base.feature_dim(),
            out_dim: self.reduced_dim,
        }
    }

    /// The original, FRMB and FRAB backbones, in that order.
    pub fn variants(&self) -> Result<[(ReductionMode, ToyBackboneConfig); 3]> {
        let build = |m| apply_reduction(&self.base, &self.spec(m)).map(|c| (m, c));
        Ok([
            build(ReductionMode::Original)?,
            build(ReductionMode::Frmb)?,
            build(ReductionMode::Frab)?,
        ])
    }
}

/// Slow-pathway-like (2048 to 512) and fast-pathway-like (256 to 128) presets
/// at 224 × 224 clips.
pub fn reduction_presets() -> Vec<ReductionPreset> {
    vec![
        ReductionPreset {
            name: "slow-224",
            base: ToyBackboneConfig::new([3, 16, 224, 224], 2048),
            reduced_dim: 512,
        },
        ReductionPreset {
            name: "slow-224-t32",
            base: ToyBackboneConfig::new([3, 32, 224, 224], 2048),
            reduced_dim: 512,
        },
        ReductionPreset {
            name: "fast-224",
            base: ToyBackboneConfig::new([3, 64, 224, 224], 256),
            reduced_dim: 128,
        },
    ]
}
