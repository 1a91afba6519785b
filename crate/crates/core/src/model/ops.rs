//! Row-major dense kernels with hand-written backward passes.

use crate::scalar::Scalar;

/// `out (+)= a @ b`, `a: m x k`, `b: k x n`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, k, 1, b, n, 1, beta, out, n, 1);
}

/// `out (+)= a^T @ b`, `a: m x k`, `b: m x n`, `out: k x n`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { S::one() } else { S::zero() };
    S::gemm(k, m, n, S::one(), a, 1, k, b, n, 1, beta, out, n, 1);
}

/// `out (+)= a @ b^T`, `a: m x k`, `b: n x k`, `out: m x n`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, k, 1, b, 1, k, beta, out, n, 1);
}

/// `x @ w + bias` for `x: rows x din`, `w: din x dout`.
pub fn linear<S: Scalar>(x: &[S], w: &[S], bias: &[S], rows: usize, din: usize, dout: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    matmul(x, w, &mut out, rows, din, dout, true);
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    dw: &mut [S],
    db: &mut [S],
    rows: usize,
    din: usize,
    dout: usize,
    want_dx: bool,
) -> Option<Vec<S>> {
    matmul_tn(x, dy, dw, rows, din, dout, true);
    for r in 0..rows {
        for (g, d) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *g += *d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![S::zero(); rows * din];
        matmul_nt(dy, w, &mut dx, rows, dout, din, false);
        dx
    })
}

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache<S> {
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
}

pub fn layer_norm<S: Scalar>(x: &[S], gamma: &[S], beta: &[S], rows: usize, d: usize) -> (Vec<S>, LayerNormCache<S>) {
    let eps = S::of(LN_EPS);
    let inv_d = S::one() / S::of(d as f64);
    let mut out = vec![S::zero(); rows * d];
    let mut xhat = vec![S::zero(); rows * d];
    let mut rstd = vec![S::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<S>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
        let rs = S::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Accumulates into `dgamma`/`dbeta`, returns the input gradient.
pub fn layer_norm_backward<S: Scalar>(
    cache: &LayerNormCache<S>,
    gamma: &[S],
    dy: &[S],
    dgamma: &mut [S],
    dbeta: &mut [S],
    rows: usize,
    d: usize,
) -> Vec<S> {
    let inv_d = S::one() / S::of(d as f64);
    let mut dx = vec![S::zero(); rows * d];
    let mut dxhat = vec![S::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let mut mean_dxhat = S::zero();
        let mut mean_dxhat_xhat = S::zero();
        for j in 0..d {
            dgamma[j] += g[j] * xh[j];
            dbeta[j] += g[j];
            dxhat[j] = g[j] * gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let u = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    half * x * (S::one() + u.tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let u = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = S::of(GELU_C) * (S::one() + S::of(3.0 * GELU_A) * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

/// In-place numerically stable softmax over each row.
pub fn softmax_rows<S: Scalar>(x: &mut [S], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        let inv = S::one() / z;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Space-time token grid `(T, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn tokens(&self) -> usize {
        self.t * self.h * self.w
    }

    /// Rows including the leading CLS token.
    pub fn rows(&self) -> usize {
        1 + self.tokens()
    }

    pub fn spatially_poolable(&self) -> bool {
        self.h > 1 || self.w > 1
    }

    /// Grid after 2x2 spatial average pooling (ceil mode).
    pub fn pooled(&self) -> Grid {
        Grid {
            t: self.t,
            h: self.h.div_ceil(2),
            w: self.w.div_ceil(2),
        }
    }
}

/// 2x2 spatial average pooling over a token grid; row 0 (CLS) passes
/// through untouched and time is never pooled.
#[derive(Debug, Clone)]
pub struct TokenPool {
    pub input: Grid,
    pub output: Grid,
    /// Input rows feeding each output row.
    sources: Vec<Vec<usize>>,
}

impl TokenPool {
    pub fn new(input: Grid) -> Self {
        let output = input.pooled();
        let mut sources = Vec::with_capacity(output.rows());
        sources.push(vec![0]);
        for t in 0..output.t {
            for y in 0..output.h {
                for x in 0..output.w {
                    let mut src = Vec::with_capacity(4);
                    for yy in 2 * y..(2 * y + 2).min(input.h) {
                        for xx in 2 * x..(2 * x + 2).min(input.w) {
                            src.push(1 + (t * input.h + yy) * input.w + xx);
                        }
                    }
                    sources.push(src);
                }
            }
        }
        Self {
            input,
            output,
            sources,
        }
    }

    pub fn identity(grid: Grid) -> Self {
        Self {
            input: grid,
            output: grid,
            sources: (0..grid.rows()).map(|r| vec![r]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.input == self.output
    }

    /// Pools `cols` columns starting at `offset` of a matrix with `stride` columns.
    pub fn forward<S: Scalar>(&self, x: &[S], stride: usize, offset: usize, cols: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.sources.len() * cols];
        for (r, src) in self.sources.iter().enumerate() {
            let inv = S::one() / S::of(src.len() as f64);
            let o = &mut out[r * cols..(r + 1) * cols];
            for &s in src {
                let row = &x[s * stride + offset..s * stride + offset + cols];
                for (a, b) in o.iter_mut().zip(row) {
                    *a += *b;
                }
            }
            if src.len() > 1 {
                for a in o.iter_mut() {
                    *a *= inv;
                }
            }
        }
        out
    }

    /// Scatters `dy` (`out rows x cols`) back into `dx` columns `[offset, offset + cols)`.
    pub fn backward<S: Scalar>(&self, dy: &[S], dx: &mut [S], stride: usize, offset: usize, cols: usize) {
        for (r, src) in self.sources.iter().enumerate() {
            let inv = S::one() / S::of(src.len() as f64);
            let g = &dy[r * cols..(r + 1) * cols];
            for &s in src {
                let row = &mut dx[s * stride + offset..s * stride + offset + cols];
                for (a, b) in row.iter_mut().zip(g) {
                    *a += *b * inv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn softmax_is_shift_stable() {
        let mut a = vec![1000.0f64, 1001.0, 1002.0];
        let mut b = vec![0.0f64, 1.0, 2.0];
        softmax_rows(&mut a, 1, 3);
        softmax_rows(&mut b, 1, 3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_odd_grid_averages_valid_cells() {
        let g = Grid { t: 1, h: 3, w: 1 };
        let pool = TokenPool::new(g);
        assert_eq!(pool.output, Grid { t: 1, h: 2, w: 1 });
        let x = vec![9.0f64, 1.0, 3.0, 5.0];
        let y = pool.forward(&x, 1, 0, 1);
        assert_eq!(y, vec![9.0, 2.0, 5.0]);
        let mut dx = vec![0.0; 4];
        pool.backward(&[1.0, 1.0, 1.0], &mut dx, 1, 0, 1);
        assert_eq!(dx, vec![1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let d = 5;
        let x: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 0.77).sin()).collect();
        let gamma: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
        let beta = vec![0.05; d];
        let w: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 0.31).cos()).collect();
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, &gamma, &beta, 2, d);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, &gamma, &beta, 2, d);
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let dx = layer_norm_backward(&cache, &gamma, &w, &mut dg, &mut db, 2, d);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }
}
