use super::{Result, Tensor, TensorError};

/// Winner positions of a 2×2 max-pool: for every output element, the flat
/// index of the input element that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolMask {
    input_shape: Vec<usize>,
    winners: Vec<usize>,
}

impl PoolMask {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn winner(&self, output_index: usize) -> usize {
        self.winners[output_index]
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// Non-overlapping 2×2 max-pool over the last two axes. Ties resolve to the
/// first maximum in row-major window order.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, PoolMask)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(TensorError::Dimension {
            op: "maxpool2x2",
            shape: shape.to_vec(),
            reason: "needs at least two axes",
        });
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::Dimension {
            op: "maxpool2x2",
            shape: shape.to_vec(),
            reason: "spatial dimensions must be even",
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let planes = if h * w == 0 { 0 } else { input.len() / (h * w) };
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut winners = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let top = base + 2 * y * w + 2 * xx;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                winners.push(best);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;
    Ok((
        Tensor::from_kernel("maxpool2x2", out_shape, out)?,
        PoolMask {
            input_shape: shape.to_vec(),
            winners,
        },
    ))
}

/// Routes each output gradient to its winning input position.
pub fn maxpool2x2_backward(grad_out: &Tensor, mask: &PoolMask) -> Result<Tensor> {
    if grad_out.len() != mask.winners.len() {
        return Err(TensorError::Shape {
            op: "maxpool2x2_backward",
            lhs: mask.input_shape.clone(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let mut dx = vec![0.0; mask.input_shape.iter().product()];
    for (&g, &w) in grad_out.data().iter().zip(&mask.winners) {
        dx[w] += g;
    }
    Tensor::from_kernel("maxpool2x2_backward", mask.input_shape.clone(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_stays_constant() {
        let (out, _) = maxpool2x2(&Tensor::full(&[3, 4, 6], 0.7)).unwrap();
        assert_eq!(out.shape(), &[3, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn single_window() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, mask) = maxpool2x2(&x).unwrap();
        assert_eq!(out.data(), &[4.0]);
        // (row 1, col 1) of the 2×2 plane
        assert_eq!(mask.winner(0), 3);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(&[2, 6, 6], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let (out, _) = maxpool2x2(&x).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for xx in 0..3 {
                    let at = |i: usize, j: usize| x.data()[(c * 6 + 2 * y + i) * 6 + 2 * xx + j];
                    let m = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                    assert_eq!(out.data()[(c * 3 + y) * 3 + xx], m);
                }
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool2x2(&Tensor::zeros(&[1, 3, 4])).is_err());
        assert!(maxpool2x2(&Tensor::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn backward_routes_only_to_winners() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::from_fn(&[2, 3, 4, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let (out, mask) = maxpool2x2(&x).unwrap();
        let g = Tensor::from_fn(out.shape(), |_| rng.gen_range(-1.0..1.0)).unwrap();
        let dx = maxpool2x2_backward(&g, &mask).unwrap();
        assert!((dx.sum() - g.sum()).abs() < 1e-12);
        let nonzero = dx.data().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, out.len());
        for (i, &v) in dx.data().iter().enumerate() {
            if v != 0.0 {
                assert!(mask.winners().contains(&i));
            }
        }
    }
}
