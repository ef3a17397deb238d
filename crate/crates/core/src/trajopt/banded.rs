//! Symmetric positive definite band matrices and their Cholesky factor.

#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    /// Lower band, row-major: entry `(i, j)` with `i - bw <= j <= i` lives
    /// at `i * (bw + 1) + (bw + j - i)`.
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw + j - i
    }

    /// Adds `v` at `(i, j)`; the mirrored entry is implied.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.bw, "entry ({i}, {j}) outside the band");
        let at = self.idx(hi, lo);
        self.data[at] += v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[self.idx(i, i)]
    }

    pub fn add_diag(&mut self, i: usize, v: f64) {
        let at = self.idx(i, i);
        self.data[at] += v;
    }

    /// `y = A x`.
    #[cfg(test)]
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    /// In-place Cholesky `A = L Lᵀ`. Returns `None` if a pivot is not positive.
    pub fn factor(mut self) -> Option<BandedCholesky> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut s = self.data[self.idx(i, j)];
                for k in jlo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    let at = self.idx(i, i);
                    self.data[at] = s.sqrt();
                } else {
                    let at = self.idx(i, j);
                    self.data[at] = s / self.data[self.idx(j, j)];
                }
            }
        }
        Some(BandedCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    l: BandedSpd,
}

impl BandedCholesky {
    pub fn solve(&self, b: &mut [f64]) {
        let l = &self.l;
        let n = l.n;
        for i in 0..n {
            let lo = i.saturating_sub(l.bw);
            let mut s = b[i];
            for k in lo..i {
                s -= l.data[l.idx(i, k)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + l.bw).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=hi {
                s -= l.data[l.idx(k, i)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve() {
        let n = 23;
        let bw = 4;
        let mut band = BandedSpd::zeros(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v = ((i * 7 + j * 3) % 5) as f64 * 0.1 - 0.2;
                band.add(i, j, v);
                dense[(i, j)] += v;
                dense[(j, i)] += v;
            }
            band.add(i, i, 3.0);
            dense[(i, i)] += 3.0;
        }
        let rhs = DVector::from_fn(n, |i, _| (i as f64).sin());
        let want = dense.clone().cholesky().unwrap().solve(&rhs);
        let mut got = rhs.as_slice().to_vec();
        let prod = band.mul(&got);
        let dense_prod = &dense * &rhs;
        for i in 0..n {
            assert!((prod[i] - dense_prod[i]).abs() < 1e-12);
        }
        band.factor().unwrap().solve(&mut got);
        for i in 0..n {
            assert!((got[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut band = BandedSpd::zeros(2, 1);
        band.add(0, 0, 1.0);
        band.add(1, 0, 2.0);
        band.add(1, 1, 1.0);
        assert!(band.factor().is_none());
    }
}
