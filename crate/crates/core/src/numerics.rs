//! Scalar, vector, and matrix primitives shared by every other module.
//!
//! Everything is computed in `f64`. Each kernel comes with an analytic
//! vector-Jacobian product (`*_vjp`) so the adapter's backward pass stays
//! closed-form, and [`grad_check`] compares any analytic gradient against
//! central finite differences.

use crate::error::{argument_err, numeric_err, shape_err, Result};

/// Dense real vector. Lengths are always checked explicitly by the kernels
/// that consume them; there is no implicit broadcasting anywhere.
pub type Vector = Vec<f64>;

/// Dense row-major matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` as an owned vector.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`, dimensions checked.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (j, &b) in b_row.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`, dimensions checked.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return shape_err(format!(
                "matmul_nt {}x{} by {}x{}^T",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += a_row[k] * b_row[k];
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// `self^T * other`, dimensions checked.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "matmul_tn {}x{}^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (j, &b) in b_row.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha * other`, dimensions checked.
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return shape_err(format!(
                "add_scaled {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    /// Frobenius inner product, dimensions checked.
    pub fn frob_dot(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return shape_err(format!(
                "frob_dot {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Mean over rows: a vector of length `cols`.
    pub fn col_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// Learnable affine parameters of a layer normalization over dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineNorm {
    pub gain: Vector,
    pub bias: Vector,
    pub eps: f64,
}

impl AffineNorm {
    /// gain = 1, bias = 0, with the given epsilon.
    pub fn identity(dim: usize, eps: f64) -> Self {
        AffineNorm {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }
}

/// Per-row cache for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalized input (x - mean) / sqrt(var + eps), before gain/bias.
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

/// Layer normalization with the biased variance estimator (divide by D).
pub fn layer_norm(x: &[f64], p: &AffineNorm) -> Result<Vector> {
    layer_norm_with_cache(x, p).map(|(y, _)| y)
}

pub fn layer_norm_with_cache(x: &[f64], p: &AffineNorm) -> Result<(Vector, LayerNormCache)> {
    let d = x.len();
    if d == 0 {
        return argument_err("layer_norm input must have length >= 1");
    }
    if p.gain.len() != d || p.bias.len() != d {
        return shape_err(format!(
            "layer_norm input length {} vs params length {}",
            d,
            p.gain.len()
        ));
    }
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv_std = 1.0 / (var + p.eps).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y: Vec<f64> = normalized
        .iter()
        .zip(p.gain.iter().zip(p.bias.iter()))
        .map(|(n, (g, b))| g * n + b)
        .collect();
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Backward pass of [`layer_norm`]: returns (dx, dgain, dbias).
pub fn layer_norm_vjp(
    dy: &[f64],
    cache: &LayerNormCache,
    p: &AffineNorm,
) -> (Vector, Vector, Vector) {
    let d = dy.len();
    debug_assert_eq!(d, cache.normalized.len());
    let dgain: Vec<f64> = dy
        .iter()
        .zip(cache.normalized.iter())
        .map(|(dy, n)| dy * n)
        .collect();
    let dbias: Vec<f64> = dy.to_vec();
    // t = gain .* dy; dx = inv_std * (t - mean(t) - normalized * mean(t .* normalized))
    let t: Vec<f64> = dy.iter().zip(p.gain.iter()).map(|(dy, g)| g * dy).collect();
    let mean_t = t.iter().sum::<f64>() / d as f64;
    let mean_tn = t
        .iter()
        .zip(cache.normalized.iter())
        .map(|(t, n)| t * n)
        .sum::<f64>()
        / d as f64;
    let dx: Vec<f64> = t
        .iter()
        .zip(cache.normalized.iter())
        .map(|(t, n)| cache.inv_std * (t - mean_t - n * mean_tn))
        .collect();
    (dx, dgain, dbias)
}

/// Numerically stable softmax (max subtraction). Output sums to 1.
pub fn softmax(v: &[f64]) -> Result<Vector> {
    if v.is_empty() {
        return argument_err("softmax input must have length >= 1");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return numeric_err("softmax input contains a non-finite value");
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Backward pass of [`softmax`] given its output `y`: ds = y .* (dy - <y, dy>).
pub fn softmax_vjp(y: &[f64], dy: &[f64]) -> Vector {
    debug_assert_eq!(y.len(), dy.len());
    let dot: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
    y.iter().zip(dy.iter()).map(|(y, dy)| y * (dy - dot)).collect()
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7; // 1 / sqrt(2*pi)

/// Standard normal CDF via the error function.
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu`]: Phi(x) + x * phi(x).
pub fn gelu_prime(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// v / max(||v||_2, eps). The epsilon guards the zero vector.
pub fn l2_normalize(v: &[f64], eps: f64) -> Vector {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm.max(eps);
    v.iter().map(|x| x / denom).collect()
}

/// Backward pass of [`l2_normalize`] given input `v` and output `y`.
pub fn l2_normalize_vjp(v: &[f64], y: &[f64], dy: &[f64], eps: f64) -> Vector {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm >= eps {
        // dv = (dy - y * <y, dy>) / ||v||
        let dot: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
        y.iter()
            .zip(dy.iter())
            .map(|(y, dy)| (dy - y * dot) / norm)
            .collect()
    } else {
        // Below the guard the map is v / eps, a constant scaling.
        dy.iter().map(|dy| dy / eps).collect()
    }
}

/// Compares an analytic gradient against central finite differences.
///
/// For each coordinate i the numeric gradient is
/// (f(p + h e_i) - f(p - h e_i)) / 2h and the reported figure is the maximum
/// over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if h <= 0.0 {
        return argument_err("grad_check step h must be positive");
    }
    if params.len() != analytic.len() {
        return shape_err(format!(
            "grad_check: {} params vs {} analytic gradient entries",
            params.len(),
            analytic.len()
        ));
    }
    let mut scratch = params.to_vec();
    let mut max_err = 0.0_f64;
    for i in 0..scratch.len() {
        let orig = scratch[i];
        scratch[i] = orig + h;
        let fp = f(&scratch)?;
        scratch[i] = orig - h;
        let fm = f(&scratch)?;
        scratch[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return numeric_err("grad_check: non-finite function evaluation");
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let err = (a - numeric).abs() / denom;
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }

    // Independent erf via its Taylor series; converges quickly for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..60 {
            let nf = n as f64;
            term *= -x * x / nf;
            sum += term / (2.0 * nf + 1.0);
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn layer_norm_known_values() {
        let p = AffineNorm::identity(2, 0.0);
        assert_close(&layer_norm(&[1.0, -1.0], &p).unwrap(), &[1.0, -1.0], 1e-15);
        assert_close(&layer_norm(&[2.0, 0.0], &p).unwrap(), &[1.0, -1.0], 1e-15);
        let p3 = AffineNorm::identity(3, 1e-5);
        assert_close(&layer_norm(&[5.0, 5.0, 5.0], &p3).unwrap(), &[0.0; 3], 1e-15);
    }

    #[test]
    fn layer_norm_dimension_mismatch() {
        let p = AffineNorm::identity(3, 1e-5);
        assert!(matches!(
            layer_norm(&[1.0, 2.0], &p),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn layer_norm_idempotent_without_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [2usize, 5, 16] {
            let p = AffineNorm::identity(d, 0.0);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y = layer_norm(&x, &p).unwrap();
            let z = layer_norm(&y, &p).unwrap();
            assert_close(&z, &y, 1e-10);
        }
    }

    #[test]
    fn layer_norm_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 6;
        let p = AffineNorm {
            gain: (0..d).map(|_| rng.gen_range(0.5..1.5)).collect(),
            bias: (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            eps: 1e-5,
        };
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // loss = <w, layer_norm(x)>
        let (y, cache) = layer_norm_with_cache(&x, &p).unwrap();
        let _ = y;
        let (dx, dgain, dbias) = layer_norm_vjp(&w, &cache, &p);

        let err_x = grad_check(
            |xs| Ok(layer_norm(xs, &p)?.iter().zip(&w).map(|(y, w)| y * w).sum()),
            &x,
            &dx,
            1e-6,
        )
        .unwrap();
        assert!(err_x < 1e-7, "dx error {err_x}");

        let err_g = grad_check(
            |gs| {
                let pg = AffineNorm {
                    gain: gs.to_vec(),
                    bias: p.bias.clone(),
                    eps: p.eps,
                };
                Ok(layer_norm(&x, &pg)?.iter().zip(&w).map(|(y, w)| y * w).sum())
            },
            &p.gain,
            &dgain,
            1e-6,
        )
        .unwrap();
        assert!(err_g < 1e-7, "dgain error {err_g}");

        let err_b = grad_check(
            |bs| {
                let pb = AffineNorm {
                    gain: p.gain.clone(),
                    bias: bs.to_vec(),
                    eps: p.eps,
                };
                Ok(layer_norm(&x, &pb)?.iter().zip(&w).map(|(y, w)| y * w).sum())
            },
            &p.bias,
            &dbias,
            1e-6,
        )
        .unwrap();
        assert!(err_b < 1e-7, "dbias error {err_b}");
    }

    #[test]
    fn softmax_known_values() {
        assert_close(&softmax(&[0.0, 0.0]).unwrap(), &[0.5, 0.5], 1e-15);
        let y = softmax(&[2.0_f64.ln(), 0.0]).unwrap();
        assert_close(&y, &[2.0 / 3.0, 1.0 / 3.0], 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[1.0, f64::NAN]),
            Err(crate::Error::Numeric(_))
        ));
        assert!(matches!(
            softmax(&[1.0, f64::INFINITY]),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn softmax_shift_invariance_bitwise_on_exact_shifts() {
        // Entries and shift on a 1/1024 grid, so v + c carries no rounding
        // error and max subtraction cancels the shift exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = rng.gen_range(1usize..8);
            let v: Vec<f64> = (0..k)
                .map(|_| rng.gen_range(-51200i64..51200) as f64 / 1024.0)
                .collect();
            let c = rng.gen_range(-10240i64..10240) as f64 / 1024.0;
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v).unwrap();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn softmax_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = softmax(&v).unwrap();
        let ds = softmax_vjp(&y, &w);
        let err = grad_check(
            |vs| Ok(softmax(vs)?.iter().zip(&w).map(|(y, w)| y * w).sum()),
            &v,
            &ds,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "softmax vjp error {err}");
    }

    proptest! {
        #[test]
        fn softmax_on_simplex(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let y = softmax(&v).unwrap();
            prop_assert!(y.iter().all(|&p| p > 0.0));
            let sum: f64 = y.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn l2_normalize_scale_free(
            v in proptest::collection::vec(-5.0f64..5.0, 1..10),
            alpha in 1e-3f64..1e3,
        ) {
            prop_assume!(v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * alpha).collect();
            let a = l2_normalize(&v, 1e-12);
            let b = l2_normalize(&scaled, 1e-12);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gelu_known_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        // Independent oracle: x * Phi(x) with a series erf.
        let oracle = 1.0 * 0.5 * (1.0 + erf_series(1.0 * FRAC_1_SQRT_2));
        assert!((gelu(1.0) - oracle).abs() < 1e-12, "gelu(1) = {}", gelu(1.0));
        assert!((gelu(1.0) - 0.8413447).abs() < 1e-6);
    }

    #[test]
    fn gelu_shape_on_grid() {
        // The exact GELU is not monotone: it falls to a single minimum near
        // x = -0.7518 and rises from there. Check both branches on a grid,
        // with an ulp-level slack for the erf evaluation.
        let slack = 1e-15;
        let mut prev = gelu(-10.0);
        let mut x: f64 = -10.0;
        while x < -0.76 {
            x += 0.01;
            let y = gelu(x);
            assert!(y <= prev + slack, "gelu not non-increasing at {x}");
            prev = y;
        }
        let mut prev = gelu(-0.74);
        let mut x: f64 = -0.74;
        while x < 10.0 {
            x += 0.01;
            let y = gelu(x);
            assert!(y >= prev - slack, "gelu not non-decreasing at {x}");
            prev = y;
        }
        // The minimum sits between the two branches.
        assert!(gelu(-0.7518) < gelu(-2.0));
        assert!(gelu(-0.7518) < gelu(0.0));
    }

    #[test]
    fn gelu_prime_matches_finite_differences() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.5, 2.0, 4.0] {
            let h = 1e-6;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_prime(x) - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn l2_normalize_known_values() {
        assert_close(&l2_normalize(&[3.0, 4.0], 1e-12), &[0.6, 0.8], 1e-15);
        assert_close(&l2_normalize(&[0.0, 0.0], 1e-12), &[0.0, 0.0], 1e-15);
        let u = [1.0 / 2.0_f64.sqrt(), -1.0 / 2.0_f64.sqrt()];
        assert_close(&l2_normalize(&u, 1e-12), &u, 1e-12);
    }

    #[test]
    fn l2_normalize_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = l2_normalize(&v, 1e-12);
        let dv = l2_normalize_vjp(&v, &y, &w, 1e-12);
        let err = grad_check(
            |vs| {
                Ok(l2_normalize(vs, 1e-12)
                    .iter()
                    .zip(&w)
                    .map(|(y, w)| y * w)
                    .sum())
            },
            &v,
            &dv,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "l2 vjp error {err}");
    }

    #[test]
    fn grad_check_quadratic() {
        let err = grad_check(|p| Ok(p[0] * p[0]), &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-8, "quadratic error {err}");
    }

    #[test]
    fn grad_check_constant() {
        let err = grad_check(|_| Ok(1.5), &[0.3, -0.7], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_rejects_bad_step_and_non_finite() {
        assert!(grad_check(|p| Ok(p[0]), &[1.0], &[1.0], 0.0).is_err());
        assert!(matches!(
            grad_check(|_| Ok(f64::NAN), &[1.0], &[1.0], 1e-5),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn matrix_ops_check_dimensions() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
        assert!(a.matmul_nt(&b).is_ok());
        assert!(a.matmul_tn(&b).is_ok());
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_variants_agree_with_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let b = Matrix::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
        let nt = a.matmul_nt(&b).unwrap();
        let explicit = a.matmul(&b.transpose()).unwrap();
        assert_close(nt.data(), explicit.data(), 1e-14);

        let c = Matrix::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0));
        let tn = a.matmul_tn(&c).unwrap();
        let explicit = a.transpose().matmul(&c).unwrap();
        assert_close(tn.data(), explicit.data(), 1e-14);
    }
}
