//! Valid (unpadded), stride-1 2-D cross-correlation via im2col + GEMM.

use super::linalg::{gemm, MatRef};
use super::{Result, Tensor, TensorError};

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        self.height - self.kh + 1
    }
    fn out_w(&self) -> usize {
        self.width - self.kw + 1
    }
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
    fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn geometry(op: &'static str, input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>) -> Result<Geometry> {
    let (batch, channels, height, width) = match input.shape() {
        &[b, c, h, w] => (b, c, h, w),
        other => {
            return Err(TensorError::Dimension {
                op,
                shape: other.to_vec(),
                reason: "input must be B×C×H×W",
            })
        }
    };
    let (filters, kc, kh, kw) = match kernels.shape() {
        &[o, c, kh, kw] => (o, c, kh, kw),
        other => {
            return Err(TensorError::Dimension {
                op,
                shape: other.to_vec(),
                reason: "kernels must be C_out×C_in×KH×KW",
            })
        }
    };
    if kc != channels {
        return Err(TensorError::Shape {
            op,
            lhs: input.shape().to_vec(),
            rhs: kernels.shape().to_vec(),
        });
    }
    if kh > height || kw > width || kh == 0 || kw == 0 {
        return Err(TensorError::Dimension {
            op,
            shape: input.shape().to_vec(),
            reason: "kernel larger than input",
        });
    }
    if let Some(b) = bias {
        if b.shape() != [filters] {
            return Err(TensorError::Shape {
                op,
                lhs: kernels.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(Geometry {
        batch,
        channels,
        height,
        width,
        filters,
        kh,
        kw,
    })
}

fn im2col(g: &Geometry, x: &[f64], col: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src = &plane[(oy + ki) * g.width + kj..(oy + ki) * g.width + kj + ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add(g: &Geometry, col: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ki) * g.width + kj..(oy + ki) * g.width + kj + ow];
                    for (d, s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Batched convolution: `B×C×H×W` input, `O×C×KH×KW` kernels, `O` bias,
/// producing `B×O×(H−KH+1)×(W−KW+1)`.
pub fn conv2d_batch(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = geometry("conv2d", input, kernels, Some(bias))?;
    let (p, patch) = (g.positions(), g.patch());
    let out_len = g.filters * p;
    let mut out = vec![0.0; g.batch * out_len];
    let mut col = vec![0.0; patch * p];
    let kmat = MatRef::new(kernels.data(), g.filters, patch);
    for b in 0..g.batch {
        im2col(&g, &input.data()[b * g.sample_len()..(b + 1) * g.sample_len()], &mut col);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        for (o, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        gemm(1.0, kmat, MatRef::new(&col, patch, p), 1.0, dst);
    }
    Tensor::from_kernel("conv2d", vec![g.batch, g.filters, g.out_h(), g.out_w()], out)
}

/// Backward pass of [`conv2d_batch`]. The input gradient is only formed
/// when `need_input` is set.
pub fn conv2d_batch_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = geometry("conv2d_backward", input, kernels, None)?;
    let expected = [g.batch, g.filters, g.out_h(), g.out_w()];
    if grad_out.shape() != expected {
        return Err(TensorError::Shape {
            op: "conv2d_backward",
            lhs: expected.to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let (p, patch) = (g.positions(), g.patch());
    let out_len = g.filters * p;
    let mut dk = vec![0.0; g.filters * patch];
    let mut db = vec![0.0; g.filters];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut col = vec![0.0; patch * p];
    let mut dcol = vec![0.0; patch * p];
    let kmat = MatRef::new(kernels.data(), g.filters, patch);
    for b in 0..g.batch {
        let x = &input.data()[b * g.sample_len()..(b + 1) * g.sample_len()];
        let gb = &grad_out.data()[b * out_len..(b + 1) * out_len];
        im2col(&g, x, &mut col);
        let gmat = MatRef::new(gb, g.filters, p);
        gemm(1.0, gmat, MatRef::new(&col, patch, p).t(), 1.0, &mut dk);
        for (o, chunk) in gb.chunks(p).enumerate() {
            db[o] += chunk.iter().sum::<f64>();
        }
        if let Some(dx) = dx.as_mut() {
            gemm(1.0, kmat.t(), gmat, 0.0, &mut dcol);
            col2im_add(&g, &dcol, &mut dx[b * g.sample_len()..(b + 1) * g.sample_len()]);
        }
    }
    Ok(ConvGrads {
        input: match dx {
            Some(d) => Some(Tensor::from_kernel("conv2d_backward", input.shape().to_vec(), d)?),
            None => None,
        },
        kernels: Tensor::from_kernel("conv2d_backward", kernels.shape().to_vec(), dk)?,
        bias: Tensor::from_kernel("conv2d_backward", vec![g.filters], db)?,
    })
}

fn lift(op: &'static str, t: &Tensor) -> Result<Tensor> {
    match t.shape() {
        &[c, h, w] => t.clone().reshape(&[1, c, h, w]),
        other => Err(TensorError::Dimension {
            op,
            shape: other.to_vec(),
            reason: "expected C×H×W",
        }),
    }
}

/// Single-sample convolution of a `C×H×W` input.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let out = conv2d_batch(&lift("conv2d", input)?, kernels, bias)?;
    let s = out.shape()[1..].to_vec();
    out.reshape(&s)
}

/// Single-sample backward pass; always returns the input gradient.
pub fn conv2d_backward(input: &Tensor, kernels: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let mut grads = conv2d_batch_backward(
        &lift("conv2d_backward", input)?,
        kernels,
        &lift("conv2d_backward", grad_out)?,
        true,
    )?;
    grads.input = match grads.input {
        Some(dx) => Some(dx.reshape(input.shape())?),
        None => None,
    };
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn naive(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; o * oh * ow];
        for f in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b.data()[f];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                s += x.data()[(ch * h + y + i) * w + xx + j]
                                    * k.data()[((f * c + ch) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[(f * oh + y) * ow + xx] = s;
                }
            }
        }
        Tensor::new(vec![o, oh, ow], out).unwrap()
    }

    #[test]
    fn zero_input_yields_bias_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random(&[3, 2, 5, 5], &mut rng);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d(&Tensor::zeros(&[2, 9, 7]), &k, &b).unwrap();
        assert_eq!(out.shape(), &[3, 5, 3]);
        for (f, plane) in out.data().chunks(15).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[f]));
        }
    }

    #[test]
    fn full_overlap_is_sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 5, 5], &mut rng);
        let k = x.clone().reshape(&[1, 1, 5, 5]).unwrap();
        let out = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        let ss: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((out.data()[0] - ss).abs() < 1e-12);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 8, 8], &mut rng);
        let k = random(&[2, 3, 5, 5], &mut rng);
        let b = random(&[2], &mut rng);
        assert!(conv2d(&x, &k, &b).unwrap().max_abs_diff(&naive(&x, &k, &b)) < 1e-12);
        let x = random(&[4, 11, 9], &mut rng);
        let k = random(&[5, 4, 3, 2], &mut rng);
        let b = random(&[5], &mut rng);
        assert!(conv2d(&x, &k, &b).unwrap().max_abs_diff(&naive(&x, &k, &b)) < 1e-10);
    }

    #[test]
    fn batch_agrees_with_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 2, 7, 7], &mut rng);
        let k = random(&[4, 2, 5, 5], &mut rng);
        let b = random(&[4], &mut rng);
        let out = conv2d_batch(&x, &k, &b).unwrap();
        for i in 0..3 {
            let xi = Tensor::new(vec![2, 7, 7], x.row(i).to_vec()).unwrap();
            assert_eq!(out.row(i), conv2d(&xi, &k, &b).unwrap().data());
        }
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let err = conv2d(&Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[1, 1, 5, 5]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, TensorError::Dimension { reason: "kernel larger than input", .. }));
        let err = conv2d(&Tensor::zeros(&[2, 6, 6]), &Tensor::zeros(&[1, 3, 5, 5]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
    }
}
