//! Compressed sparse row matrices with a triplet builder, plus the few
//! kernels the solvers need (matvec, transpose matvec, ILU(0)).

/// Triplet accumulator; duplicate entries are summed on `build`.
#[derive(Debug, Clone)]
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if val != 0.0 {
            self.entries.push((row as u32, col as u32, val));
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| ((r as u64) << 32) | c as u64);
        let mut row_counts = vec![0usize; self.nrows + 1];
        let mut cols: Vec<u32> = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_counts[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            row_counts[r + 1] += row_counts[r];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr: row_counts, cols, vals }
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c as usize];
            }
            y[r] = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// y += scale * A^T x
    pub fn add_transpose_matvec(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xv = scale * x[r];
            if xv == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                y[*c as usize] += v * xv;
            }
        }
    }

    /// y += scale * A x
    pub fn add_matvec(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c as usize];
            }
            y[r] += scale * s;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.ncols]; self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[r][*c as usize] += *v;
            }
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }
}

/// ILU(0) factorization on the sparsity pattern of `a`, used as a
/// preconditioner for the coupled flow solves.
pub struct Ilu0 {
    mat: CsrMatrix,
    diag_idx: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Option<Self> {
        assert_eq!(a.nrows, a.ncols);
        let n = a.nrows;
        let mut mat = a.clone();
        // every row needs a diagonal entry
        let mut diag_idx = vec![usize::MAX; n];
        for r in 0..n {
            for k in mat.row_ptr[r]..mat.row_ptr[r + 1] {
                if mat.cols[k] as usize == r {
                    diag_idx[r] = k;
                }
            }
            if diag_idx[r] == usize::MAX {
                return None;
            }
        }
        // IKJ variant restricted to the pattern
        for i in 0..n {
            let row_span = mat.row_ptr[i]..mat.row_ptr[i + 1];
            for kk in row_span.clone() {
                let k = mat.cols[kk] as usize;
                if k >= i {
                    break;
                }
                let piv = mat.vals[diag_idx[k]];
                if piv == 0.0 {
                    return None;
                }
                let factor = mat.vals[kk] / piv;
                mat.vals[kk] = factor;
                if factor == 0.0 {
                    continue;
                }
                // subtract factor * row k (upper part) from row i, pattern-limited
                let (kcols_all, _) = {
                    let span = mat.row_ptr[k]..mat.row_ptr[k + 1];
                    (span.clone(), ())
                };
                let mut ii = kk + 1;
                for kj in kcols_all {
                    let col_j = mat.cols[kj];
                    if (col_j as usize) <= k {
                        continue;
                    }
                    let kv = mat.vals[kj];
                    if kv == 0.0 {
                        continue;
                    }
                    while ii < row_span.end && mat.cols[ii] < col_j {
                        ii += 1;
                    }
                    if ii < row_span.end && mat.cols[ii] == col_j {
                        mat.vals[ii] -= factor * kv;
                    }
                }
            }
            if mat.vals[diag_idx[i]] == 0.0 {
                return None;
            }
        }
        Some(Self { mat, diag_idx })
    }

    /// Solve (LU) z = r on the ILU pattern.
    pub fn solve_into(&self, r: &[f64], z: &mut [f64]) {
        let n = self.mat.nrows;
        debug_assert_eq!(r.len(), n);
        z.copy_from_slice(r);
        for i in 0..n {
            let mut s = z[i];
            for k in self.mat.row_ptr[i]..self.diag_idx[i] {
                s -= self.mat.vals[k] * z[self.mat.cols[k] as usize];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_idx[i] + 1..self.mat.row_ptr[i + 1] {
                s -= self.mat.vals[k] * z[self.mat.cols[k] as usize];
            }
            z[i] = s / self.mat.vals[self.diag_idx[i]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace1d(n: usize) -> CsrMatrix {
        let mut b = CooBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn build_sums_duplicates() {
        let mut b = CooBuilder::new(2, 2);
        b.push(0, 1, 1.0);
        b.push(0, 1, 2.5);
        b.push(1, 0, -1.0);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn matvec_and_transpose() {
        let mut b = CooBuilder::new(2, 3);
        b.push(0, 0, 1.0);
        b.push(0, 2, 2.0);
        b.push(1, 1, 3.0);
        let m = b.build();
        let y = m.matvec(&[1.0, 1.0, 1.0]);
        assert_eq!(y, vec![3.0, 3.0]);
        let mut yt = vec![0.0; 3];
        m.add_transpose_matvec(&[1.0, 1.0], 1.0, &mut yt);
        assert_eq!(yt, vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        // ILU(0) of a tridiagonal matrix is the full LU factorization.
        let n = 20;
        let a = laplace1d(n);
        let ilu = Ilu0::new(&a).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = a.matvec(&x_true);
        let mut x = vec![0.0; n];
        ilu.solve_into(&b, &mut x);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-12, "{} {}", x[i], x_true[i]);
        }
    }
}
