//! Dense linear-algebra kernels sized for small problems (states up to ~100,
//! feature dimensions up to ~20): linear solves, inverses, general and
//! symmetric eigenvalue computation, matrix norms, and a Lyapunov-equation
//! solver. Everything is self-contained and allocation-light; no external
//! numeric libraries are used.

use serde::Serialize;

use crate::error::{NtdError, Result};

/// Spectral radius must clear 1 by this margin to count as Schur, and the
/// largest real part must clear 0 by it to count as Hurwitz. Boundary cases
/// within the margin are "marginal" and reported as such by the callers that
/// care (see [`Spectrum`]).
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Width of the band around the stability boundary inside which a spectrum is
/// classified as marginal for the purpose of property sweeps: strict
/// inequalities say nothing about boundaries, so sweeps skip these.
pub const MARGINAL_BAND: f64 = 1e-6;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let data = self.data.iter().map(|a| a * s).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// Matrix power by repeated squaring. `pow(0)` is the identity.
    pub fn pow(&self, mut e: u32) -> Matrix {
        assert!(self.is_square());
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nested-array view used for JSON serialization of reports.
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

/// Eigenvalues of a square matrix together with the two scalar summaries used
/// by stability certificates.
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    /// (real, imaginary) pairs, one per matrix dimension.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Largest eigenvalue modulus.
    pub spectral_radius: f64,
    /// Largest eigenvalue real part.
    pub max_real_part: f64,
}

impl Spectrum {
    fn from_eigs(eigs: Vec<(f64, f64)>) -> Self {
        let spectral_radius = eigs.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
        let max_real_part = eigs.iter().map(|(re, _)| *re).fold(f64::NEG_INFINITY, f64::max);
        Spectrum { eigenvalues: eigs, spectral_radius, max_real_part }
    }

    /// Strictly inside the unit circle, with margin.
    pub fn is_schur(&self) -> bool {
        self.spectral_radius < 1.0 - STABILITY_MARGIN
    }

    /// All real parts strictly negative, with margin.
    pub fn is_hurwitz(&self) -> bool {
        self.max_real_part < -STABILITY_MARGIN
    }

    /// Spectral radius within the marginal band around 1; property sweeps
    /// over strict-inequality statements skip such cases.
    pub fn schur_marginal(&self) -> bool {
        (self.spectral_radius - 1.0).abs() < MARGINAL_BAND
    }

    /// Largest real part within the marginal band around 0.
    pub fn hurwitz_marginal(&self) -> bool {
        self.max_real_part.abs() < MARGINAL_BAND
    }
}

// ---------------------------------------------------------------------------
// Linear solves
// ---------------------------------------------------------------------------

/// Relative pivot threshold below which a matrix is declared singular.
const PIVOT_RTOL: f64 = 1e-13;

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let cols: Vec<Vec<f64>> = vec![b.to_vec()];
    let sol = solve_multi(a, &cols)?;
    Ok(sol.into_iter().next().unwrap())
}

/// Solve `A X = B` for several right-hand sides at once (columns of `B`).
pub fn solve_multi(a: &Matrix, bs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if !a.is_square() {
        return Err(NtdError::Numeric("solve requires a square matrix".into()));
    }
    let n = a.rows();
    for b in bs {
        if b.len() != n {
            return Err(NtdError::Numeric("right-hand side length mismatch".into()));
        }
    }
    let scale = a.max_abs().max(1e-300);
    let mut m = a.clone();
    let mut rhs: Vec<Vec<f64>> = bs.to_vec();

    for k in 0..n {
        // Partial pivot: largest |entry| in column k at or below the diagonal.
        let mut piv = k;
        let mut piv_val = m.get(k, k).abs();
        for i in k + 1..n {
            let v = m.get(i, k).abs();
            if v > piv_val {
                piv = i;
                piv_val = v;
            }
        }
        if piv_val <= PIVOT_RTOL * scale {
            return Err(NtdError::Singular(format!(
                "matrix singular to working tolerance (pivot {piv_val:.3e} at column {k})"
            )));
        }
        if piv != k {
            for j in 0..n {
                let tmp = m.get(k, j);
                m.set(k, j, m.get(piv, j));
                m.set(piv, j, tmp);
            }
            for r in rhs.iter_mut() {
                r.swap(k, piv);
            }
        }
        let d = m.get(k, k);
        for i in k + 1..n {
            let f = m.get(i, k) / d;
            if f == 0.0 {
                continue;
            }
            m.set(i, k, 0.0);
            for j in k + 1..n {
                let v = m.get(i, j) - f * m.get(k, j);
                m.set(i, j, v);
            }
            for r in rhs.iter_mut() {
                r[i] -= f * r[k];
            }
        }
    }
    // Back-substitution.
    let mut out = Vec::with_capacity(rhs.len());
    for r in &rhs {
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = r[i];
            for j in i + 1..n {
                acc -= m.get(i, j) * x[j];
            }
            x[i] = acc / m.get(i, i);
        }
        out.push(x);
    }
    Ok(out)
}

/// Matrix inverse via Gaussian elimination on the identity's columns.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let eye: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let cols = solve_multi(a, &eye)?;
    let mut inv = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    Ok(inv)
}

/// Determinant via LU with partial pivoting (used for nonsingularity checks).
pub fn determinant(a: &Matrix) -> f64 {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut piv_val = m.get(k, k).abs();
        for i in k + 1..n {
            let v = m.get(i, k).abs();
            if v > piv_val {
                piv = i;
                piv_val = v;
            }
        }
        if piv_val == 0.0 {
            return 0.0;
        }
        if piv != k {
            for j in 0..n {
                let tmp = m.get(k, j);
                m.set(k, j, m.get(piv, j));
                m.set(piv, j, tmp);
            }
            det = -det;
        }
        det *= m.get(k, k);
        let d = m.get(k, k);
        for i in k + 1..n {
            let f = m.get(i, k) / d;
            for j in k..n {
                let v = m.get(i, j) - f * m.get(k, j);
                m.set(i, j, v);
            }
        }
    }
    det
}

// ---------------------------------------------------------------------------
// General eigenvalues: Householder Hessenberg reduction + shifted QR
// ---------------------------------------------------------------------------

/// Minimal complex scalar used only inside the QR iteration.
#[derive(Clone, Copy, Debug)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

    fn new(re: f64, im: f64) -> Self {
        C64 { re, im }
    }

    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    fn conj(self) -> Self {
        C64::new(self.re, -self.im)
    }

    fn add(self, o: C64) -> Self {
        C64::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: C64) -> Self {
        C64::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: C64) -> Self {
        C64::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    fn scale(self, s: f64) -> Self {
        C64::new(self.re * s, self.im * s)
    }

    fn sqrt(self) -> Self {
        if self.re == 0.0 && self.im == 0.0 {
            return C64::ZERO;
        }
        let r = self.abs();
        let re = ((r + self.re) * 0.5).max(0.0).sqrt();
        let im_mag = ((r - self.re) * 0.5).max(0.0).sqrt();
        C64::new(re, if self.im < 0.0 { -im_mag } else { im_mag })
    }
}

/// Reduce a square matrix to upper Hessenberg form in place by Householder
/// similarity transforms.
fn hessenberg(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut h = a.clone();
    if n < 3 {
        return h;
    }
    for k in 0..n - 2 {
        // Householder vector annihilating h[k+2.., k].
        let mut norm2 = 0.0;
        for i in k + 1..n {
            norm2 += h.get(i, k) * h.get(i, k);
        }
        let norm = norm2.sqrt();
        if norm <= f64::MIN_POSITIVE {
            continue;
        }
        let x0 = h.get(k + 1, k);
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k + 1] = x0 - alpha;
        for i in k + 2..n {
            v[i] = h.get(i, k);
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 <= f64::MIN_POSITIVE {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // H := (I - beta v v^T) H
        for j in 0..n {
            let mut dot = 0.0;
            for i in k + 1..n {
                dot += v[i] * h.get(i, j);
            }
            let f = beta * dot;
            for i in k + 1..n {
                let val = h.get(i, j) - f * v[i];
                h.set(i, j, val);
            }
        }
        // H := H (I - beta v v^T)
        for i in 0..n {
            let mut dot = 0.0;
            for j in k + 1..n {
                dot += h.get(i, j) * v[j];
            }
            let f = beta * dot;
            for j in k + 1..n {
                let val = h.get(i, j) - f * v[j];
                h.set(i, j, val);
            }
        }
        // Explicitly zero the annihilated entries to avoid drift.
        h.set(k + 1, k, alpha);
        for i in k + 2..n {
            h.set(i, k, 0.0);
        }
    }
    h
}

/// Eigenvalues of the 2x2 complex matrix [[a, b], [c, d]].
fn eig2(a: C64, b: C64, c: C64, d: C64) -> (C64, C64) {
    let tr = a.add(d);
    let det = a.mul(d).sub(b.mul(c));
    let disc = tr.mul(tr).sub(det.scale(4.0)).sqrt();
    let l1 = tr.add(disc).scale(0.5);
    let l2 = tr.sub(disc).scale(0.5);
    (l1, l2)
}

const QR_SWEEP_CAP: usize = 10_000;

/// Eigenvalues of a general square matrix via Hessenberg reduction followed by
/// Wilkinson-shifted QR iteration (complex arithmetic internally, so complex
/// conjugate pairs need no special casing). Returns eigenvalues in no
/// particular order.
pub fn eig_general(a: &Matrix) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(NtdError::Numeric("eigenvalues require a square matrix".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Err(NtdError::Numeric("empty matrix".into()));
    }
    if n == 1 {
        return Ok(Spectrum::from_eigs(vec![(a.get(0, 0), 0.0)]));
    }

    let hr = hessenberg(a);
    // Copy into a complex working matrix.
    let mut h = vec![C64::ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = C64::new(hr.get(i, j), 0.0);
        }
    }
    let idx = |i: usize, j: usize| i * n + j;

    let mut eigs: Vec<C64> = Vec::with_capacity(n);
    let mut m = n - 1; // active trailing index
    let mut iters_this_block = 0usize;
    let mut total_iters = 0usize;
    let eps = f64::EPSILON;

    loop {
        // Deflate any negligible subdiagonals at the active tail.
        while m > 0 {
            let sub = h[idx(m, m - 1)].abs();
            let scale = h[idx(m - 1, m - 1)].abs() + h[idx(m, m)].abs();
            if sub <= eps * scale.max(f64::MIN_POSITIVE) {
                h[idx(m, m - 1)] = C64::ZERO;
                eigs.push(h[idx(m, m)]);
                m -= 1;
                iters_this_block = 0;
            } else {
                break;
            }
        }
        if m == 0 {
            eigs.push(h[idx(0, 0)]);
            break;
        }

        // Find the start of the active block.
        let mut l = m;
        while l > 0 {
            let sub = h[idx(l, l - 1)].abs();
            let scale = h[idx(l - 1, l - 1)].abs() + h[idx(l, l)].abs();
            if sub <= eps * scale.max(f64::MIN_POSITIVE) {
                h[idx(l, l - 1)] = C64::ZERO;
                break;
            }
            l -= 1;
        }

        if m - l == 1 {
            // 2x2 block: closed form, deflate both eigenvalues.
            let (l1, l2) = eig2(h[idx(l, l)], h[idx(l, m)], h[idx(m, l)], h[idx(m, m)]);
            eigs.push(l1);
            eigs.push(l2);
            if l == 0 {
                break;
            }
            m = l - 1;
            iters_this_block = 0;
            continue;
        }

        total_iters += 1;
        iters_this_block += 1;
        if total_iters > QR_SWEEP_CAP {
            return Err(NtdError::NonConvergence(
                "QR iteration did not converge within the sweep cap".into(),
            ));
        }

        // Wilkinson shift from the trailing 2x2; occasional exceptional shift
        // to break symmetric stalls (e.g. permutation-like cycles).
        let mu = if iters_this_block % 12 == 0 {
            let kick = h[idx(m, m - 1)].abs() + h[idx(m - 1, m - 2)].abs();
            h[idx(m, m)].add(C64::new(0.75 * kick, 0.0))
        } else {
            let (l1, l2) = eig2(
                h[idx(m - 1, m - 1)],
                h[idx(m - 1, m)],
                h[idx(m, m - 1)],
                h[idx(m, m)],
            );
            let d = h[idx(m, m)];
            if l1.sub(d).abs() <= l2.sub(d).abs() {
                l1
            } else {
                l2
            }
        };

        // Shifted QR step on the block [l..=m] with Givens rotations.
        for i in l..=m {
            h[idx(i, i)] = h[idx(i, i)].sub(mu);
        }
        let mut rots: Vec<(f64, C64)> = Vec::with_capacity(m - l);
        for i in l..m {
            let aa = h[idx(i, i)];
            let bb = h[idx(i + 1, i)];
            let r = (aa.abs().powi(2) + bb.abs().powi(2)).sqrt();
            let (c, s) = if r <= f64::MIN_POSITIVE {
                (1.0, C64::ZERO)
            } else if aa.abs() <= f64::MIN_POSITIVE {
                (0.0, C64::new(1.0, 0.0))
            } else {
                let phase = aa.scale(1.0 / aa.abs());
                (aa.abs() / r, phase.mul(bb.conj()).scale(1.0 / r))
            };
            // Apply G = [[c, s], [-conj(s), c]] to rows i, i+1.
            for j in i..=m {
                let x = h[idx(i, j)];
                let y = h[idx(i + 1, j)];
                h[idx(i, j)] = x.scale(c).add(s.mul(y));
                h[idx(i + 1, j)] = y.scale(c).sub(s.conj().mul(x));
            }
            rots.push((c, s));
        }
        for (k, (c, s)) in rots.iter().enumerate() {
            let i = l + k;
            // Apply G^H on the right to columns i, i+1.
            let hi = (i + 2).min(m);
            for r in l..=hi {
                let x = h[idx(r, i)];
                let y = h[idx(r, i + 1)];
                h[idx(r, i)] = x.scale(*c).add(s.conj().mul(y));
                h[idx(r, i + 1)] = y.scale(*c).sub(s.mul(x));
            }
        }
        for i in l..=m {
            h[idx(i, i)] = h[idx(i, i)].add(mu);
        }
    }

    // For real input, eigenvalues come in conjugate pairs; snap tiny imaginary
    // parts produced by roundoff to zero for clean downstream reporting.
    let scale = a.max_abs().max(1.0);
    let eigs: Vec<(f64, f64)> = eigs
        .into_iter()
        .map(|e| {
            if e.im.abs() <= 1e-12 * scale {
                (e.re, 0.0)
            } else {
                (e.re, e.im)
            }
        })
        .collect();
    Ok(Spectrum::from_eigs(eigs))
}

// ---------------------------------------------------------------------------
// Symmetric eigenvalues: cyclic Jacobi
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, returned in
/// ascending order. The input is symmetrized internally; it must be symmetric
/// to within `1e-10` relative.
pub fn eig_symmetric(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(NtdError::Numeric("eigenvalues require a square matrix".into()));
    }
    let n = a.rows();
    let scale = a.max_abs();
    for i in 0..n {
        for j in i + 1..n {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-10 * scale.max(1e-300) {
                return Err(NtdError::Numeric(format!(
                    "matrix is not symmetric at ({i},{j}) to the required tolerance"
                )));
            }
        }
    }
    // Work on the symmetrized copy.
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }
    if n == 1 {
        return Ok(vec![m.get(0, 0)]);
    }

    let norm0: f64 = m.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = 1e-12 * norm0.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += 2.0 * m.get(i, j) * m.get(i, j);
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= target / (n as f64 * n as f64) {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let s = if theta >= 0.0 { 1.0 } else { -1.0 };
                    s / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eigs)
}

// ---------------------------------------------------------------------------
// Lyapunov solver
// ---------------------------------------------------------------------------

/// Solve `B^T P + P B = -I` for symmetric positive-definite `P`, given a
/// Hurwitz `B`, via the Kronecker-structured linear system
/// `(I (x) B^T + B^T (x) I) vec(P) = -vec(I)`.
pub fn lyapunov_solve(b: &Matrix) -> Result<Matrix> {
    if !b.is_square() {
        return Err(NtdError::Numeric("Lyapunov solve requires a square matrix".into()));
    }
    let spec = eig_general(b)?;
    if !spec.is_hurwitz() {
        return Err(NtdError::NotHurwitz(format!(
            "max eigenvalue real part {:.6e} is not strictly negative",
            spec.max_real_part
        )));
    }
    let m = b.rows();
    let dim = m * m;
    // vec() stacks columns: v[j*m + i] = P[i][j].
    let mut k = Matrix::zeros(dim, dim);
    for i in 0..m {
        for j in 0..m {
            let row = j * m + i;
            // (I (x) B^T) term: sum_k B[k][i] * P[k][j]
            for kk in 0..m {
                let col = j * m + kk;
                let v = k.get(row, col) + b.get(kk, i);
                k.set(row, col, v);
            }
            // (B^T (x) I) term: sum_l B[l][j] * P[i][l]
            for ll in 0..m {
                let col = ll * m + i;
                let v = k.get(row, col) + b.get(ll, j);
                k.set(row, col, v);
            }
        }
    }
    let mut rhs = vec![0.0; dim];
    for i in 0..m {
        rhs[i * m + i] = -1.0;
    }
    let v = solve(&k, &rhs)?;
    let mut p = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            p.set(i, j, v[j * m + i]);
        }
    }
    // Symmetrize (the exact solution is symmetric; roundoff may not be).
    let pt = p.transpose();
    let p = p.add(&pt).scale(0.5);

    // Residual check.
    let resid = b.transpose().mul(&p).add(&p.mul(b)).add(&Matrix::identity(m));
    if norm_inf(&resid) > 1e-8 {
        return Err(NtdError::Numeric(format!(
            "Lyapunov residual {:.3e} exceeds tolerance",
            norm_inf(&resid)
        )));
    }
    let eigs = eig_symmetric(&p)?;
    if eigs[0] <= 0.0 {
        return Err(NtdError::Numeric(format!(
            "Lyapunov solution is not positive definite (min eigenvalue {:.3e})",
            eigs[0]
        )));
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

/// Maximum absolute row sum.
pub fn norm_inf(a: &Matrix) -> f64 {
    (0..a.rows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Infinity norm of a vector.
pub fn vec_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Weighted Euclidean norm sqrt(sum_s d[s] * x[s]^2).
pub fn weighted_norm(x: &[f64], d: &[f64]) -> f64 {
    assert_eq!(x.len(), d.len(), "dimension mismatch");
    x.iter().zip(d).map(|(xi, di)| di * xi * xi).sum::<f64>().sqrt()
}

/// Spectral norm (largest singular value) via the symmetric eigenproblem on
/// `A^T A`.
pub fn norm_2(a: &Matrix) -> f64 {
    let ata = a.transpose().mul(a);
    let eigs = eig_symmetric(&ata).expect("A^T A is symmetric by construction");
    eigs.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Euclidean norm of a vector.
pub fn vec_norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
