//! Minimal dense-matrix support for propagator products and oracle checks:
//! row-major storage, matrix-vector products, and a scaling-and-squaring
//! matrix exponential. Sizes stay in the hundreds, so no external linear
//! algebra is warranted.

#[derive(Clone, Debug)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(n: usize, mut f: F) -> Self {
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let row_k = &other.data[k * n..(k + 1) * n];
                let row_out = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in row_out.iter_mut().zip(row_k) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Maximum absolute column sum (the operator 1-norm).
    pub fn one_norm(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.data[i * n + j].abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential by scaling and squaring with a Taylor series on the
    /// scaled matrix. The scaled norm is at most 0.5, so the series converges
    /// to machine precision in a few dozen terms.
    pub fn expm(&self) -> DenseMatrix {
        let norm = self.one_norm();
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scale = 0.5f64.powi(squarings as i32);
        let n = self.n;
        let mut scaled = self.clone();
        for v in &mut scaled.data {
            *v *= scale;
        }
        let mut result = DenseMatrix::identity(n);
        let mut term = DenseMatrix::identity(n);
        for k in 1..=40 {
            term = term.matmul(&scaled);
            let inv_k = 1.0 / k as f64;
            let mut max_abs = 0.0f64;
            for v in &mut term.data {
                *v *= inv_k;
                max_abs = max_abs.max(v.abs());
            }
            for (r, t) in result.data.iter_mut().zip(&term.data) {
                *r += t;
            }
            if max_abs < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.matmul(&result);
        }
        result
    }

    /// exp(t * A) applied to a vector by sub-stepped Taylor series on
    /// matrix-vector products, avoiding any n^3 work.
    pub fn expm_apply(&self, t: f64, v: &[f64]) -> Vec<f64> {
        let norm = (self.one_norm() * t.abs()).max(1e-300);
        let substeps = (norm / 0.5).ceil().max(1.0) as usize;
        let dt = t / substeps as f64;
        let mut x = v.to_vec();
        for _ in 0..substeps {
            let mut acc = x.clone();
            let mut term = x.clone();
            for k in 1..=40 {
                term = self.matvec(&term);
                let c = dt / k as f64;
                let mut max_abs = 0.0f64;
                for tv in &mut term {
                    *tv *= c;
                    max_abs = max_abs.max(tv.abs());
                }
                for (a, tv) in acc.iter_mut().zip(&term) {
                    *a += tv;
                }
                if max_abs < 1e-18 {
                    break;
                }
            }
            x = acc;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_matches_scalar_exponentials_on_diagonal() {
        let mut a = DenseMatrix::zeros(3);
        a.set(0, 0, 1.0);
        a.set(1, 1, -2.0);
        a.set(2, 2, 0.3);
        let e = a.expm();
        assert!((e.get(0, 0) - 1.0f64.exp()).abs() < 1e-12);
        assert!((e.get(1, 1) - (-2.0f64).exp()).abs() < 1e-12);
        assert!((e.get(2, 2) - 0.3f64.exp()).abs() < 1e-12);
        assert!(e.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn expm_matches_closed_form_rotation() {
        // exp([[0, -t], [t, 0]]) is the rotation by angle t.
        let t = 1.3;
        let mut a = DenseMatrix::zeros(2);
        a.set(0, 1, -t);
        a.set(1, 0, t);
        let e = a.expm();
        assert!((e.get(0, 0) - t.cos()).abs() < 1e-12);
        assert!((e.get(0, 1) + t.sin()).abs() < 1e-12);
        assert!((e.get(1, 0) - t.sin()).abs() < 1e-12);
    }

    #[test]
    fn expm_apply_agrees_with_full_exponential() {
        let mut a = DenseMatrix::zeros(4);
        for i in 0..4 {
            for j in 0..4 {
                a.set(i, j, ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.5);
            }
        }
        let v = vec![1.0, -0.5, 0.25, 2.0];
        let full = {
            let mut scaled = DenseMatrix::zeros(4);
            for i in 0..4 {
                for j in 0..4 {
                    scaled.set(i, j, a.get(i, j) * 0.7);
                }
            }
            scaled.expm().matvec(&v)
        };
        let fast = a.expm_apply(0.7, &v);
        for (x, y) in full.iter().zip(&fast) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}
