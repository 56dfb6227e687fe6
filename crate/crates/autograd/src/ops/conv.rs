use crate::error::{Result, TensorError};
use crate::fault;
use crate::kernels::{gemm, Layout};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one image `[C,H,W]` into a `[C·kh·kw, out_h·out_w]` matrix.
    fn im2col(&self, img: &[f32], cols: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let src = (c * self.height + oy * self.stride + ki) * self.width + kj;
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] = img[src + ox * self.stride];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns into an image.
    fn col2im(&self, cols: &[f32], img: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let dst = (c * self.height + oy * self.stride + ki) * self.width + kj;
                        for ox in 0..self.out_w {
                            img[dst + ox * self.stride] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a valid (unpadded) convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (stride > 0 && input >= kernel).then(|| (input - kernel) / stride + 1)
}

impl Tensor {
    /// Valid 2-D cross-correlation: input `[B,C,H,W]`, kernel `[O,C,kh,kw]`,
    /// bias `[O]`, producing `[B,O,(H-kh)/s+1,(W-kw)/s+1]`.
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        let [batch, channels, height, width] = *self.shape() else {
            return Err(TensorError::shape("conv2d", "input must be [B,C,H,W]", self.shape()));
        };
        let [out_ch, k_ch, kh, kw] = *kernel.shape() else {
            return Err(TensorError::shape("conv2d", "kernel must be [O,C,kh,kw]", kernel.shape()));
        };
        if k_ch != channels {
            return Err(TensorError::mismatch("conv2d", self.shape(), kernel.shape()));
        }
        if bias.shape() != [out_ch] {
            return Err(TensorError::mismatch("conv2d", kernel.shape(), bias.shape()));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument { op: "conv2d", msg: "stride must be positive".into() });
        }
        let (Some(out_h), Some(out_w)) =
            (conv_output_size(height, kh, stride), conv_output_size(width, kw, stride))
        else {
            return Err(TensorError::shape(
                "conv2d",
                format!("input {height}x{width} smaller than kernel {kh}x{kw}"),
                self.shape(),
            ));
        };
        let geo = ConvGeometry { channels, height, width, kh, kw, stride, out_h, out_w };
        let (patch, p) = (geo.patch(), geo.positions());
        let img_len = channels * height * width;

        let mut out = vec![0.0f32; batch * out_ch * p];
        let mut cols = vec![0.0f32; patch * p];
        for b in 0..batch {
            geo.im2col(&self.data()[b * img_len..(b + 1) * img_len], &mut cols);
            let dst = &mut out[b * out_ch * p..(b + 1) * out_ch * p];
            for (o, row) in dst.chunks_exact_mut(p).enumerate() {
                row.fill(bias.data()[o]);
            }
            gemm(out_ch, patch, p, kernel.data(), Layout::row_major(patch), &cols, Layout::row_major(p), 1.0, dst);
        }

        let parents = vec![self.clone(), kernel.clone(), bias.clone()];
        let corrupt = fault::conv2d_adjoint_corrupted();
        Ok(Tensor::from_op(out, vec![batch, out_ch, out_h, out_w], "conv2d", parents, move |ctx| {
            let (x, k) = (ctx.parents[0].data(), ctx.parents[1].data());
            let want_x = ctx.parents[0].is_requires_grad();
            let want_k = ctx.parents[1].is_requires_grad();
            let mut gx = want_x.then(|| vec![0.0f32; x.len()]);
            let mut gk = want_k.then(|| vec![0.0f32; k.len()]);
            let mut gb = vec![0.0f32; out_ch];
            let mut cols = vec![0.0f32; patch * p];
            for b in 0..batch {
                let g = &ctx.grad[b * out_ch * p..(b + 1) * out_ch * p];
                for (o, row) in g.chunks_exact(p).enumerate() {
                    gb[o] += row.iter().sum::<f32>();
                }
                if let Some(gk) = gk.as_mut() {
                    geo.im2col(&x[b * img_len..(b + 1) * img_len], &mut cols);
                    gemm(out_ch, p, patch, g, Layout::row_major(p), &cols, Layout::transposed(p), 1.0, gk);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(patch, out_ch, p, k, Layout::transposed(patch), g, Layout::row_major(p), 0.0, &mut cols);
                    geo.col2im(&cols, &mut gx[b * img_len..(b + 1) * img_len]);
                }
            }
            if corrupt {
                if let Some(gk) = gk.as_mut() {
                    gk.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            let want_b = ctx.parents[2].is_requires_grad();
            vec![gx, gk, want_b.then_some(gb)]
        }))
    }
}
