//! Convolutional modality encoders ending in a spatial soft-argmax readout.

use rand::Rng;
use serde::{Deserialize, Serialize};
use symfuse_autograd::functional::{conv_output_size, spatial_soft_argmax};
use symfuse_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, Module};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn layer(out_channels: usize, kernel: usize, stride: usize) -> ConvLayerSpec {
    ConvLayerSpec { out_channels, kernel, stride }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<ConvLayerSpec>,
    /// Soft-argmax temperature.
    pub temperature: f32,
}

/// Network size preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 64×64 vision, 32×32 tactile, 32/64/64 channels.
    #[default]
    Full,
    /// 32×32 vision, 16×16 tactile, 16 channels per layer.
    Desk,
}

impl Profile {
    pub fn vision(self) -> EncoderSpec {
        match self {
            Profile::Full => EncoderSpec {
                in_channels: 3,
                height: 64,
                width: 64,
                layers: vec![layer(32, 8, 2), layer(64, 4, 1), layer(64, 3, 1)],
                temperature: 1.0,
            },
            Profile::Desk => EncoderSpec {
                in_channels: 3,
                height: 32,
                width: 32,
                layers: vec![layer(16, 8, 2), layer(16, 4, 1), layer(16, 3, 1)],
                temperature: 1.0,
            },
        }
    }

    pub fn tactile(self) -> EncoderSpec {
        match self {
            Profile::Full => EncoderSpec {
                in_channels: 3,
                height: 32,
                width: 32,
                layers: vec![layer(32, 8, 2), layer(64, 4, 1), layer(64, 3, 1)],
                temperature: 1.0,
            },
            // An 8×8 stride-2 first layer leaves 5×5 on a 16×16 pad, too small
            // for the following 4×4 and 3×3 layers.
            Profile::Desk => EncoderSpec {
                in_channels: 3,
                height: 16,
                width: 16,
                layers: vec![layer(16, 4, 2), layer(16, 3, 1), layer(16, 3, 1)],
                temperature: 1.0,
            },
        }
    }
}

impl EncoderSpec {
    /// `[C,H,W]` after each conv layer, or an error when a layer does not fit.
    pub fn intermediate_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let (mut h, mut w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            match (conv_output_size(h, l.kernel, l.stride), conv_output_size(w, l.kernel, l.stride)) {
                (Some(nh), Some(nw)) => (h, w) = (nh, nw),
                _ => {
                    return Err(Error::config(
                        format!("encoder.layers[{i}]"),
                        format!("kernel {} does not fit a {h}x{w} map", l.kernel),
                    ))
                }
            }
            out.push([l.out_channels, h, w]);
        }
        Ok(out)
    }

    /// Two soft-argmax coordinates per final channel.
    pub fn embed_dim(&self) -> usize {
        2 * self.layers.last().map_or(self.in_channels, |l| l.out_channels)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("encoder.layers", "need at least one conv layer"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("encoder.temperature", "must be positive"));
        }
        self.intermediate_shapes().map(|_| ())
    }
}

/// Conv stack with ELU between layers and a soft-argmax head on the last map.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub spec: EncoderSpec,
    pub convs: Vec<Conv2d>,
}

impl ConvEncoder {
    pub fn new(rng: &mut impl Rng, spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut in_ch = spec.in_channels;
        let convs = spec
            .layers
            .iter()
            .map(|l| {
                let conv = Conv2d::new(rng, in_ch, l.out_channels, l.kernel, l.stride);
                in_ch = l.out_channels;
                conv
            })
            .collect();
        Ok(ConvEncoder { spec, convs })
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.spec.input_shape();
        if x.rank() != 4 || x.shape()[1..] != want {
            return Err(Error::Tensor(symfuse_autograd::TensorError::InvalidShape {
                op: "encoder",
                msg: format!("expected [B,{},{},{}]", want[0], want[1], want[2]),
                shape: x.shape().to_vec(),
            }));
        }
        Ok(())
    }

    /// Returns every conv activation followed by the embedding.
    pub fn forward_trace(&self, x: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        self.check_input(x)?;
        let mut maps = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i + 1 < self.convs.len() {
                h = h.elu();
            }
            maps.push(h.clone());
        }
        let z = spatial_soft_argmax(&h, self.spec.temperature)?;
        Ok((maps, z))
    }

    /// `[B,C,H,W]` → `[B, embed_dim]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.1)
    }
}

impl Module for ConvEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
        }
    }
}

/// Tactile encoder(s) for the two fingers.
///
/// In the shared form one parameter set encodes the left pad, the right pad,
/// and the flipped right pad, so embeddings of the two fingers are directly
/// comparable.
#[derive(Clone, Debug)]
pub enum TactileEncoders {
    Shared(ConvEncoder),
    Separate { left: ConvEncoder, right: ConvEncoder },
}

impl TactileEncoders {
    pub fn new(rng: &mut impl Rng, spec: EncoderSpec, shared: bool) -> Result<Self> {
        Ok(if shared {
            TactileEncoders::Shared(ConvEncoder::new(rng, spec)?)
        } else {
            let left = ConvEncoder::new(rng, spec.clone())?;
            let right = ConvEncoder::new(rng, spec)?;
            TactileEncoders::Separate { left, right }
        })
    }

    pub fn left(&self) -> &ConvEncoder {
        match self {
            TactileEncoders::Shared(e) => e,
            TactileEncoders::Separate { left, .. } => left,
        }
    }

    pub fn right(&self) -> &ConvEncoder {
        match self {
            TactileEncoders::Shared(e) => e,
            TactileEncoders::Separate { right, .. } => right,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.left().embed_dim()
    }
}

impl Module for TactileEncoders {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            TactileEncoders::Shared(e) => e.visit(prefix, f),
            TactileEncoders::Separate { left, right } => {
                left.visit(&join(prefix, "left"), f);
                right.visit(&join(prefix, "right"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            TactileEncoders::Shared(e) => e.visit_mut(prefix, f),
            TactileEncoders::Separate { left, right } => {
                left.visit_mut(&join(prefix, "left"), f);
                right.visit_mut(&join(prefix, "right"), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_shapes() {
        let v = Profile::Full.vision().intermediate_shapes().unwrap();
        assert_eq!(v, [[32, 29, 29], [64, 26, 26], [64, 24, 24]]);
        let t = Profile::Full.tactile().intermediate_shapes().unwrap();
        assert_eq!(t, [[32, 13, 13], [64, 10, 10], [64, 8, 8]]);
        assert_eq!(Profile::Full.vision().embed_dim(), 128);
    }

    #[test]
    fn desk_shapes_fit() {
        let v = Profile::Desk.vision().intermediate_shapes().unwrap();
        assert_eq!(v, [[16, 13, 13], [16, 10, 10], [16, 8, 8]]);
        let t = Profile::Desk.tactile().intermediate_shapes().unwrap();
        assert_eq!(t, [[16, 7, 7], [16, 5, 5], [16, 3, 3]]);
    }

    #[test]
    fn full_size_kernels_do_not_fit_small_pad() {
        let mut spec = Profile::Full.tactile();
        spec.height = 16;
        spec.width = 16;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("encoder.layers[2]"), "{err}");
    }
}
