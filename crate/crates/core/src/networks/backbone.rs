//! Encoders shared by the fingerprint generator and the standalone classifiers.
//! ResNet and DenseNet follow the torchvision layer recipes and parameter names.

use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, VarBuilder};
use serde::{Deserialize, Serialize};

use super::layers::{avg_pool_2x2, conv2d, leaky_relu, max_pool_3x3_s2, BatchNorm, InstanceNorm};
use crate::error::{GfdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "unet")]
    Unet,
    #[serde(rename = "resnet50-encoder", alias = "resnet", alias = "resnet50")]
    Resnet,
    #[serde(rename = "densenet-encoder", alias = "densenet", alias = "densenet121")]
    Densenet,
}

/// Encoder hyper-parameters. For `Unet`, `base_channels` is the first stage
/// width; for `Resnet` it is the stem width (64 for ResNet-50); for `Densenet`
/// it is the stem width (64 for DenseNet-121).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub backbone: BackboneKind,
    pub base_channels: usize,
    pub depth: usize,
    /// Blocks per stage (ResNet bottlenecks or dense layers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_rate: Option<usize>,
}

impl BackboneSpec {
    pub fn unet(base_channels: usize, depth: usize) -> Self {
        Self {
            backbone: BackboneKind::Unet,
            base_channels,
            depth,
            blocks: None,
            growth_rate: None,
        }
    }

    /// The ResNet-50 recipe.
    pub fn resnet50() -> Self {
        Self::resnet(64, vec![3, 4, 6, 3])
    }

    pub fn resnet(width: usize, blocks: Vec<usize>) -> Self {
        Self {
            backbone: BackboneKind::Resnet,
            base_channels: width,
            depth: 5,
            blocks: Some(blocks),
            growth_rate: None,
        }
    }

    /// The DenseNet-121 recipe.
    pub fn densenet121() -> Self {
        Self::densenet(64, 32, vec![6, 12, 24, 16])
    }

    pub fn densenet(init: usize, growth: usize, blocks: Vec<usize>) -> Self {
        Self {
            backbone: BackboneKind::Densenet,
            base_channels: init,
            depth: 5,
            blocks: Some(blocks),
            growth_rate: Some(growth),
        }
    }

    fn blocks(&self) -> Vec<usize> {
        self.blocks.clone().unwrap_or_else(|| match self.backbone {
            BackboneKind::Densenet => vec![6, 12, 24, 16],
            _ => vec![3, 4, 6, 3],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(GfdError::Config("base_channels must be positive".into()));
        }
        match self.backbone {
            BackboneKind::Unet => {
                if self.depth < 2 {
                    return Err(GfdError::Config("depth must be >= 2".into()));
                }
            }
            _ => {
                if self.depth != 5 {
                    return Err(GfdError::Config(
                        "resnet/densenet encoders have depth 5".into(),
                    ));
                }
                let b = self.blocks();
                if b.len() != 4 || b.contains(&0) {
                    return Err(GfdError::Config(
                        "blocks must list four positive stage sizes".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Name of the classification layer in the matching standalone classifier.
    pub fn head_name(&self) -> &'static str {
        match self.backbone {
            BackboneKind::Densenet => "classifier",
            _ => "fc",
        }
    }
}

/// Feature maps produced by an encoder.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Skip features, shallowest first, each paired with its log2 downsampling factor.
    pub skips: Vec<(Tensor, usize)>,
    /// Bottleneck features at downsampling factor `2^depth`.
    pub latent: Tensor,
}

/// Channel layout of an encoder, used to size the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayout {
    pub skips: Vec<(usize, usize)>,
    pub latent_channels: usize,
    pub depth: usize,
}

pub enum Backbone {
    Unet(UnetEncoder),
    Resnet(ResNet),
    Densenet(DenseNet),
}

impl Backbone {
    pub fn new(spec: &BackboneSpec, vb: VarBuilder) -> Result<Self> {
        spec.validate()?;
        Ok(match spec.backbone {
            BackboneKind::Unet => {
                Backbone::Unet(UnetEncoder::new(spec.base_channels, spec.depth, vb)?)
            }
            BackboneKind::Resnet => {
                Backbone::Resnet(ResNet::new(spec.base_channels, &spec.blocks(), vb)?)
            }
            BackboneKind::Densenet => Backbone::Densenet(DenseNet::new(
                spec.base_channels,
                spec.growth_rate.unwrap_or(32),
                &spec.blocks(),
                vb,
            )?),
        })
    }

    pub fn layout(&self) -> EncoderLayout {
        match self {
            Backbone::Unet(e) => e.layout(),
            Backbone::Resnet(e) => e.layout(),
            Backbone::Densenet(e) => e.layout(),
        }
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<EncoderOutput> {
        match self {
            Backbone::Unet(e) => e.forward(x),
            Backbone::Resnet(e) => e.forward_t(x, train),
            Backbone::Densenet(e) => e.forward_t(x, train),
        }
    }
}

/// U-Net contracting path: a full-resolution stem followed by `depth` stride-2
/// 4x4 convolutions, instance norm (skipped on the bottleneck) and leaky ReLU.
pub struct UnetEncoder {
    stem: Conv2d,
    stages: Vec<(Conv2d, Option<InstanceNorm>)>,
    layout: EncoderLayout,
}

fn unet_width(base: usize, stage: usize) -> usize {
    base << stage.min(3)
}

impl UnetEncoder {
    pub fn new(base: usize, depth: usize, vb: VarBuilder) -> Result<Self> {
        let stem = conv2d(3, base, 3, 1, 1, true, vb.pp("stem"))?;
        let mut stages = Vec::with_capacity(depth);
        let mut skips = vec![(base, 0)];
        for i in 1..=depth {
            let (cin, cout) = (unet_width(base, i - 1), unet_width(base, i));
            let vbi = vb.pp(format!("down{i}"));
            let conv = conv2d(cin, cout, 4, 2, 1, true, vbi.pp("conv"))?;
            let norm = if i < depth {
                Some(InstanceNorm::new(cout, vbi.pp("norm"))?)
            } else {
                None
            };
            stages.push((conv, norm));
            if i < depth {
                skips.push((cout, i));
            }
        }
        let layout = EncoderLayout {
            skips,
            latent_channels: unet_width(base, depth),
            depth,
        };
        Ok(Self {
            stem,
            stages,
            layout,
        })
    }

    pub fn layout(&self) -> EncoderLayout {
        self.layout.clone()
    }

    pub fn forward(&self, x: &Tensor) -> Result<EncoderOutput> {
        let mut h = leaky_relu(&self.stem.forward(x)?, 0.2)?;
        let mut skips = vec![(h.clone(), 0)];
        let depth = self.stages.len();
        for (i, (conv, norm)) in self.stages.iter().enumerate() {
            h = conv.forward(&h)?;
            if let Some(n) = norm {
                h = n.forward(&h)?;
            }
            h = leaky_relu(&h, 0.2)?;
            if i + 1 < depth {
                skips.push((h.clone(), i + 1));
            }
        }
        Ok(EncoderOutput { skips, latent: h })
    }
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

impl Bottleneck {
    const EXPANSION: usize = 4;

    fn new(cin: usize, planes: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let cout = planes * Self::EXPANSION;
        let downsample = if stride != 1 || cin != cout {
            Some((
                conv2d(cin, cout, 1, stride, 0, false, vb.pp("downsample.0"))?,
                BatchNorm::new(cout, vb.pp("downsample.1"))?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: conv2d(cin, planes, 1, 1, 0, false, vb.pp("conv1"))?,
            bn1: BatchNorm::new(planes, vb.pp("bn1"))?,
            conv2: conv2d(planes, planes, 3, stride, 1, false, vb.pp("conv2"))?,
            bn2: BatchNorm::new(planes, vb.pp("bn2"))?,
            conv3: conv2d(planes, cout, 1, 1, 0, false, vb.pp("conv3"))?,
            bn3: BatchNorm::new(cout, vb.pp("bn3"))?,
            downsample,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self
            .bn2
            .forward_t(&self.conv2.forward(&h)?, train)?
            .relu()?;
        let h = self.bn3.forward_t(&self.conv3.forward(&h)?, train)?;
        let identity = match &self.downsample {
            Some((conv, bn)) => bn.forward_t(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + identity)?.relu()?)
    }
}

/// ResNet with bottleneck blocks (ResNet-50 for width 64, blocks [3, 4, 6, 3]).
pub struct ResNet {
    conv1: Conv2d,
    bn1: BatchNorm,
    layers: Vec<Vec<Bottleneck>>,
    layout: EncoderLayout,
}

impl ResNet {
    pub fn new(width: usize, blocks: &[usize], vb: VarBuilder) -> Result<Self> {
        let conv1 = conv2d(3, width, 7, 2, 3, false, vb.pp("conv1"))?;
        let bn1 = BatchNorm::new(width, vb.pp("bn1"))?;
        let mut cin = width;
        let mut layers = Vec::with_capacity(4);
        let mut skips = vec![(width, 1)];
        for (i, &n) in blocks.iter().enumerate() {
            let planes = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let vbl = vb.pp(format!("layer{}", i + 1));
            let mut layer = Vec::with_capacity(n);
            for j in 0..n {
                layer.push(Bottleneck::new(
                    cin,
                    planes,
                    if j == 0 { stride } else { 1 },
                    vbl.pp(j.to_string()),
                )?);
                cin = planes * Bottleneck::EXPANSION;
            }
            layers.push(layer);
            if i < 3 {
                skips.push((cin, i + 2));
            }
        }
        let layout = EncoderLayout {
            skips,
            latent_channels: cin,
            depth: 5,
        };
        Ok(Self {
            conv1,
            bn1,
            layers,
            layout,
        })
    }

    pub fn layout(&self) -> EncoderLayout {
        self.layout.clone()
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<EncoderOutput> {
        let stem = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let mut skips = vec![(stem.clone(), 1)];
        let mut h = max_pool_3x3_s2(&stem)?;
        for (i, layer) in self.layers.iter().enumerate() {
            for block in layer {
                h = block.forward_t(&h, train)?;
            }
            if i < 3 {
                skips.push((h.clone(), i + 2));
            }
        }
        Ok(EncoderOutput { skips, latent: h })
    }
}

struct DenseLayer {
    norm1: BatchNorm,
    conv1: Conv2d,
    norm2: BatchNorm,
    conv2: Conv2d,
}

impl DenseLayer {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self
            .conv1
            .forward(&self.norm1.forward_t(x, train)?.relu()?)?;
        Ok(self
            .conv2
            .forward(&self.norm2.forward_t(&h, train)?.relu()?)?)
    }
}

struct Transition {
    norm: BatchNorm,
    conv: Conv2d,
}

/// DenseNet-BC (DenseNet-121 for init 64, growth 32, blocks [6, 12, 24, 16]).
pub struct DenseNet {
    conv0: Conv2d,
    norm0: BatchNorm,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    norm5: BatchNorm,
    layout: EncoderLayout,
}

impl DenseNet {
    const BN_SIZE: usize = 4;

    pub fn new(init: usize, growth: usize, block_sizes: &[usize], vb: VarBuilder) -> Result<Self> {
        let vb = vb.pp("features");
        let conv0 = conv2d(3, init, 7, 2, 3, false, vb.pp("conv0"))?;
        let norm0 = BatchNorm::new(init, vb.pp("norm0"))?;
        let mut nf = init;
        let mut blocks = Vec::with_capacity(4);
        let mut transitions = Vec::with_capacity(3);
        let mut skips = vec![(init, 1)];
        for (i, &n) in block_sizes.iter().enumerate() {
            let vbb = vb.pp(format!("denseblock{}", i + 1));
            let mut block = Vec::with_capacity(n);
            for j in 0..n {
                let vbl = vbb.pp(format!("denselayer{}", j + 1));
                let cin = nf + j * growth;
                block.push(DenseLayer {
                    norm1: BatchNorm::new(cin, vbl.pp("norm1"))?,
                    conv1: conv2d(cin, Self::BN_SIZE * growth, 1, 1, 0, false, vbl.pp("conv1"))?,
                    norm2: BatchNorm::new(Self::BN_SIZE * growth, vbl.pp("norm2"))?,
                    conv2: conv2d(
                        Self::BN_SIZE * growth,
                        growth,
                        3,
                        1,
                        1,
                        false,
                        vbl.pp("conv2"),
                    )?,
                });
            }
            blocks.push(block);
            nf += n * growth;
            if i < 3 {
                skips.push((nf, i + 2));
                let vbt = vb.pp(format!("transition{}", i + 1));
                transitions.push(Transition {
                    norm: BatchNorm::new(nf, vbt.pp("norm"))?,
                    conv: conv2d(nf, nf / 2, 1, 1, 0, false, vbt.pp("conv"))?,
                });
                nf /= 2;
            }
        }
        let norm5 = BatchNorm::new(nf, vb.pp("norm5"))?;
        let layout = EncoderLayout {
            skips,
            latent_channels: nf,
            depth: 5,
        };
        Ok(Self {
            conv0,
            norm0,
            blocks,
            transitions,
            norm5,
            layout,
        })
    }

    pub fn layout(&self) -> EncoderLayout {
        self.layout.clone()
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<EncoderOutput> {
        let stem = self
            .norm0
            .forward_t(&self.conv0.forward(x)?, train)?
            .relu()?;
        let mut skips = vec![(stem.clone(), 1)];
        let mut h = max_pool_3x3_s2(&stem)?;
        for (i, block) in self.blocks.iter().enumerate() {
            for layer in block {
                let new = layer.forward_t(&h, train)?;
                h = Tensor::cat(&[&h, &new], 1)?;
            }
            if let Some(t) = self.transitions.get(i) {
                skips.push((h.clone(), i + 2));
                h = avg_pool_2x2(&t.conv.forward(&t.norm.forward_t(&h, train)?.relu()?)?)?;
            }
        }
        let latent = self.norm5.forward_t(&h, train)?.relu()?;
        Ok(EncoderOutput { skips, latent })
    }
}
