//! Dense and banded kernels on top of LAPACK, a small CSR type and
//! pairwise reductions.

use std::os::raw::{c_char, c_int};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition by divide and conquer.
///
/// Returns eigenvalues in ascending order and a matrix whose *rows* are the
/// corresponding orthonormal eigenvectors.
pub fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    syevd(a, true).map(|(w, v)| (w, v.expect("vectors requested")))
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Result<Array1<f64>> {
    syevd(a, false).map(|(w, _)| w)
}

fn syevd(a: &Array2<f64>, vectors: bool) -> Result<(Array1<f64>, Option<Array2<f64>>)> {
    let n = square_dim(a)?;
    if n == 0 {
        return Ok((Array1::zeros(0), vectors.then(|| Array2::zeros((0, 0)))));
    }
    // Row-major storage of a symmetric matrix is its own column-major image.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0; n];
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'L' as c_char;
    let ni = n as c_int;
    let mut info: c_int = 0;
    let mut wq = [0.0f64];
    let mut iq = [0 as c_int];
    let q: c_int = -1;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            wq.as_mut_ptr(), &q, iq.as_mut_ptr(), &q, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    let lwork = wq[0] as c_int;
    let liwork = iq[0];
    let mut work = vec![0.0; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    // Column-major eigenvectors read row-major are already one vector per row.
    let v = vectors.then(|| Array2::from_shape_vec((n, n), buf).expect("shape"));
    Ok((Array1::from(w), v))
}

/// Lower Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = square_dim(a)?;
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let uplo = b'U' as c_char;
    let ni = n as c_int;
    let mut info: c_int = 0;
    unsafe { lapack_sys::dpotrf_(&uplo, &ni, buf.as_mut_ptr(), &ni, &mut info) };
    if info != 0 {
        return Err(Error::Lapack { routine: "dpotrf", info });
    }
    // Column-major upper factor U, read row-major, is Uᵀ = L.
    let mut l = Array2::from_shape_vec((n, n), buf).expect("shape");
    for i in 0..n {
        for j in i + 1..n {
            l[[i, j]] = 0.0;
        }
    }
    Ok(l)
}

fn square_dim(a: &Array2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::ShapeMismatch(format!("expected a square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("nonempty") += v;
                continue;
            }
            col_idx.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, col_idx, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        self.col_idx[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn matvec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |r| self.row(r).map(|(c, v)| v * x[c]).sum())
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                d[[r, c]] += v;
            }
        }
        d
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let d = self.to_dense();
        d.indexed_iter().all(|((i, j), &v)| (v - d[[j, i]]).abs() <= tol)
    }
}

/// Cholesky factor of a symmetric positive definite banded matrix.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    kd: usize,
    ab: Vec<f64>,
}

impl BandedCholesky {
    /// Factors `alpha * I + beta * m`.
    pub fn factor(m: &CsrMatrix, alpha: f64, beta: f64) -> Result<Self> {
        let n = m.dim();
        let kd = m.bandwidth();
        let ld = kd + 1;
        let mut ab = vec![0.0; ld * n];
        for r in 0..n {
            ab[r * ld] += alpha;
            for (c, v) in m.row(r) {
                if r >= c {
                    ab[(r - c) + c * ld] += beta * v;
                }
            }
        }
        let uplo = b'L' as c_char;
        let (ni, ki, li) = (n as c_int, kd as c_int, ld as c_int);
        let mut info: c_int = 0;
        unsafe { lapack_sys::dpbtrf_(&uplo, &ni, &ki, ab.as_mut_ptr(), &li, &mut info) };
        if info != 0 {
            return Err(Error::Lapack { routine: "dpbtrf", info });
        }
        Ok(Self { n, kd, ab })
    }

    pub fn solve(&self, rhs: ArrayView1<f64>) -> Result<Array1<f64>> {
        if rhs.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "right-hand side has length {}, factor has dimension {}",
                rhs.len(),
                self.n
            )));
        }
        let mut b: Vec<f64> = rhs.iter().copied().collect();
        let uplo = b'L' as c_char;
        let (ni, ki, li, one) = (self.n as c_int, self.kd as c_int, (self.kd + 1) as c_int, 1 as c_int);
        let mut info: c_int = 0;
        unsafe {
            lapack_sys::dpbtrs_(
                &uplo, &ni, &ki, &one, self.ab.as_ptr(), &li, b.as_mut_ptr(), &ni, &mut info,
            )
        };
        if info != 0 {
            return Err(Error::Lapack { routine: "dpbtrs", info });
        }
        Ok(Array1::from(b))
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Orthonormal discrete sine basis of size `n`; symmetric.
pub fn sine_basis(n: usize) -> Array2<f64> {
    let scale = (2.0 / (n as f64 + 1.0)).sqrt();
    let w = std::f64::consts::PI / (n as f64 + 1.0);
    Array2::from_shape_fn((n, n), |(j, i)| scale * (w * ((j + 1) * (i + 1)) as f64).sin())
}

/// Eigenvalues of the 1D Dirichlet second difference with spacing `h`.
pub fn sine_eigenvalues(n: usize, h: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |j| {
        let s = (std::f64::consts::PI * (j + 1) as f64 * h / 2.0).sin();
        -4.0 * s * s / (h * h)
    })
}
