use super::{Result, Tensor, TensorError};

/// Strided view of a row-major matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = alpha * a·b + beta * out` on row-major buffers.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the pointers cover `m×k`, `k×n` and `m×n` elements with the
    // given strides, as checked by the length assertions above, and `out`
    // does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn as_matrix<'a>(t: &'a Tensor, op: &'static str) -> Result<MatRef<'a>> {
    match t.shape() {
        &[r, c] => Ok(MatRef::new(t.data(), r, c)),
        other => Err(TensorError::Dimension {
            op,
            shape: other.to_vec(),
            reason: "expected a 2-D matrix",
        }),
    }
}

fn product(op: &'static str, a: &Tensor, b: &Tensor, ma: MatRef<'_>, mb: MatRef<'_>) -> Result<Tensor> {
    let (m, k) = ma.logical();
    let (k2, n) = mb.logical();
    if k != k2 {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(1.0, ma, mb, 0.0, &mut out);
    Tensor::from_kernel(op, vec![m, n], out)
}

/// Matrix product `a·b` of an `M×K` and a `K×N` matrix.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ma = as_matrix(a, "matmul")?;
    let mb = as_matrix(b, "matmul")?;
    product("matmul", a, b, ma, mb)
}

/// `aᵀ·b` for `a: K×M`, `b: K×N`.
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ma = as_matrix(a, "matmul_at_b")?.t();
    let mb = as_matrix(b, "matmul_at_b")?;
    product("matmul_at_b", a, b, ma, mb)
}

/// `a·bᵀ` for `a: M×K`, `b: N×K`.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ma = as_matrix(a, "matmul_a_bt")?;
    let mb = as_matrix(b, "matmul_a_bt")?.t();
    product("matmul_a_bt", a, b, ma, mb)
}
