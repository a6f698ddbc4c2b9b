//! Structured Sylvester solvers: complex Schur of the small factors,
//! Thomas elimination along the large tridiagonal factor.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fp_operator::TridiagonalMatrix;
use crate::tt::Core2;

type C64 = Complex64;
type CMatrix = DMatrix<C64>;

const PIVOT_MIN: f64 = 1e-300;

/// Complex Schur factors `L = U W U*`.
#[derive(Clone, Debug)]
pub struct SchurFactors {
    pub u: CMatrix,
    pub w: CMatrix,
}

impl SchurFactors {
    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.w.nrows()).map(|i| self.w[(i, i)]).collect()
    }
}

/// Global counters of the floating-point work done in the solvers.
pub mod ops {
    use super::*;

    pub(super) static THOMAS_ROWS: AtomicU64 = AtomicU64::new(0);
    pub(super) static COUPLING_ENTRIES: AtomicU64 = AtomicU64::new(0);

    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct OpCounts {
        /// Rows eliminated in Thomas solves.
        pub thomas_rows: u64,
        /// Entries touched when subtracting already-solved columns/fibers.
        pub coupling_entries: u64,
    }

    impl OpCounts {
        pub fn total(&self) -> u64 {
            self.thomas_rows + self.coupling_entries
        }
    }

    pub fn snapshot() -> OpCounts {
        OpCounts {
            thomas_rows: THOMAS_ROWS.load(Ordering::Relaxed),
            coupling_entries: COUPLING_ENTRIES.load(Ordering::Relaxed),
        }
    }

    pub fn since(before: OpCounts) -> OpCounts {
        let now = snapshot();
        OpCounts {
            thomas_rows: now.thomas_rows - before.thomas_rows,
            coupling_entries: now.coupling_entries - before.coupling_entries,
        }
    }
}

/// Complex Schur decomposition via Hessenberg reduction and single-shift QR.
pub fn dense_schur(l: &DMatrix<f64>) -> Result<SchurFactors> {
    let n = l.nrows();
    if n == 0 || l.ncols() != n {
        return Err(Error::DimensionMismatch {
            op: "dense_schur",
            detail: format!("{}×{} is not a non-empty square matrix", l.nrows(), l.ncols()),
        });
    }
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("dense_schur: non-finite entry".into()));
    }
    let (q, h) = l.clone().hessenberg().unpack();
    let mut h: CMatrix = h.map(|x| C64::new(x, 0.0));
    let mut z: CMatrix = q.map(|x| C64::new(x, 0.0));
    for i in 2..n {
        for j in 0..i - 1 {
            h[(i, j)] = C64::new(0.0, 0.0);
        }
    }

    let norm = h.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let eps = f64::EPSILON;
    let cap = 100 * n;
    let mut sweeps = 0;
    let mut since_deflation = 0;
    let mut hi = n - 1;
    while hi > 0 {
        // deflate
        let mut lo = hi;
        while lo > 0 {
            let s = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            let s = if s == 0.0 { norm } else { s };
            if h[(lo, lo - 1)].norm() <= eps * s {
                h[(lo, lo - 1)] = C64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        if sweeps >= cap {
            let residual = (lo + 1..=hi).map(|k| h[(k, k - 1)].norm()).fold(0.0, f64::max);
            return Err(Error::SchurNoConvergence { sweeps, residual });
        }
        sweeps += 1;
        since_deflation += 1;
        let mu = if since_deflation % 11 == 10 {
            // exceptional shift
            h[(hi, hi)] + C64::new(h[(hi, hi - 1)].norm() * 0.75, 0.0)
        } else {
            wilkinson_shift(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };
        qr_sweep(&mut h, &mut z, lo, hi, mu);
    }
    for i in 1..n {
        for j in 0..i {
            h[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    Ok(SchurFactors { u: z, w: h })
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let m = (a + d) * 0.5;
    let (e1, e2) = (m + disc, m - disc);
    if (e1 - d).norm() <= (e2 - d).norm() {
        e1
    } else {
        e2
    }
}

/// One explicit shifted QR sweep on the active block `lo..=hi`.
fn qr_sweep(h: &mut CMatrix, z: &mut CMatrix, lo: usize, hi: usize, mu: C64) {
    let n = h.nrows();
    for k in lo..=hi {
        h[(k, k)] -= mu;
    }
    let mut rots = Vec::with_capacity(hi - lo);
    for k in lo..hi {
        let (a, b) = (h[(k, k)], h[(k + 1, k)]);
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (c, s) = if r == 0.0 {
            (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
        } else {
            (a / r, b / r)
        };
        for j in k..n {
            let (x, y) = (h[(k, j)], h[(k + 1, j)]);
            h[(k, j)] = c.conj() * x + s.conj() * y;
            h[(k + 1, j)] = -s * x + c * y;
        }
        rots.push((c, s));
    }
    for (idx, &(c, s)) in rots.iter().enumerate() {
        let k = lo + idx;
        for i in 0..=(k + 1).min(hi) {
            let (x, y) = (h[(i, k)], h[(i, k + 1)]);
            h[(i, k)] = x * c + y * s;
            h[(i, k + 1)] = -x * s.conj() + y * c.conj();
        }
        for i in 0..n {
            let (x, y) = (z[(i, k)], z[(i, k + 1)]);
            z[(i, k)] = x * c + y * s;
            z[(i, k + 1)] = -x * s.conj() + y * c.conj();
        }
    }
    for k in lo..=hi {
        h[(k, k)] += mu;
    }
}

/// Reusable workspace for Thomas elimination.
struct Thomas {
    cp: Vec<C64>,
}

impl Thomas {
    fn new(n: usize) -> Self {
        Self {
            cp: vec![C64::new(0.0, 0.0); n],
        }
    }

    /// Solves `(A + s I) x = rhs` in place.
    fn solve(&mut self, a: &TridiagonalMatrix, s: C64, x: &mut [C64]) -> Result<()> {
        let n = a.n();
        let (sub, diag, sup) = (a.sub(), a.diag(), a.sup());
        let pivot_err = |row: usize, p: C64| Error::SingularTridiagonal {
            row,
            pivot: p.norm(),
            context: format!(" with shift {s}"),
        };
        let mut p = diag[0] + s;
        if !(p.norm() > PIVOT_MIN) {
            return Err(pivot_err(0, p));
        }
        if n > 1 {
            self.cp[0] = sup[0] / p;
        }
        x[0] /= p;
        for i in 1..n {
            p = diag[i] + s - self.cp[i - 1] * sub[i - 1];
            if !(p.norm() > PIVOT_MIN) {
                return Err(pivot_err(i, p));
            }
            if i + 1 < n {
                self.cp[i] = sup[i] / p;
            }
            x[i] = (x[i] - x[i - 1] * sub[i - 1]) / p;
        }
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= self.cp[i] * next;
        }
        ops::THOMAS_ROWS.fetch_add(n as u64, Ordering::Relaxed);
        Ok(())
    }
}

/// Solves `(A + s I) x = rhs` by Thomas elimination without pivoting.
pub fn thomas_solve(a: &TridiagonalMatrix, s: C64, rhs: &[C64]) -> Result<Vec<C64>> {
    if rhs.len() != a.n() {
        return Err(Error::DimensionMismatch {
            op: "thomas_solve",
            detail: format!("rhs length {} vs {}", rhs.len(), a.n()),
        });
    }
    let mut x = rhs.to_vec();
    Thomas::new(a.n()).solve(a, s, &mut x)?;
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// `X ×₁ L_big + X ×₂ L_small = R`, `X` is `Nv × r`.
    BigFirst,
    /// `X ×₁ L_small + X ×₂ L_big = R`, `X` is `r × Nv`.
    BigSecond,
}

/// Solves the matrix Sylvester equation with one tridiagonal factor.
pub fn solve_matrix_sylvester(
    l_big: &TridiagonalMatrix,
    l_small: &DMatrix<f64>,
    r: &DMatrix<f64>,
    orientation: Orientation,
) -> Result<DMatrix<f64>> {
    let z = solve_matrix_sylvester_complex(l_big, l_small, r, orientation)?;
    Ok(z.map(|c| c.re))
}

/// As [`solve_matrix_sylvester`] but returns the back-transformed complex
/// solution before the real part is taken.
pub fn solve_matrix_sylvester_complex(
    l_big: &TridiagonalMatrix,
    l_small: &DMatrix<f64>,
    r: &DMatrix<f64>,
    orientation: Orientation,
) -> Result<CMatrix> {
    let rhs = match orientation {
        Orientation::BigFirst => r.clone(),
        Orientation::BigSecond => r.transpose(),
    };
    let (nv, k) = (l_big.n(), l_small.nrows());
    if rhs.nrows() != nv || rhs.ncols() != k || l_small.ncols() != k {
        return Err(Error::DimensionMismatch {
            op: "solve_matrix_sylvester",
            detail: format!(
                "L_big {nv}×{nv}, L_small {}×{}, R {}×{} ({orientation:?})",
                l_small.nrows(),
                l_small.ncols(),
                r.nrows(),
                r.ncols()
            ),
        });
    }
    // BigFirst:  L_bigᵀ X + X L_small = R.
    // BigSecond: L_smallᵀ X + X L_big = R, i.e. L_bigᵀ Xᵀ + Xᵀ L_small = Rᵀ.
    let schur = dense_schur(l_small)?;
    let lt = l_big.transpose();
    let e = rhs.map(|x| C64::new(x, 0.0)) * &schur.u;
    let mut zm = CMatrix::zeros(nv, k);
    let mut th = Thomas::new(nv);
    let mut col = vec![C64::new(0.0, 0.0); nv];
    for j in 0..k {
        col.copy_from_slice(e.column(j).as_slice());
        for p in 0..j {
            let w = schur.w[(p, j)];
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            for (c, zp) in col.iter_mut().zip(zm.column(p).iter()) {
                *c -= w * zp;
            }
        }
        ops::COUPLING_ENTRIES.fetch_add((j * nv) as u64, Ordering::Relaxed);
        let shift = schur.w[(j, j)];
        th.solve(&lt, shift, &mut col).map_err(|e| with_context(e, format!(" at Schur eigenvalue {shift}")))?;
        zm.column_mut(j).as_mut_slice().copy_from_slice(&col);
    }
    let x = zm * schur.u.adjoint();
    Ok(match orientation {
        Orientation::BigFirst => x,
        Orientation::BigSecond => x.transpose(),
    })
}

fn with_context(e: Error, extra: String) -> Error {
    match e {
        Error::SingularTridiagonal { row, pivot, context } => Error::SingularTridiagonal {
            row,
            pivot,
            context: format!("{context}{extra}"),
        },
        other => other,
    }
}

/// Solves `X ×₁ G + X ×₂ T + X ×₃ H = R` for an `r1 × Nv × r2` tensor.
pub fn solve_tensor_sylvester(g: &DMatrix<f64>, t: &TridiagonalMatrix, h: &DMatrix<f64>, r: &Core2) -> Result<Core2> {
    let (zc, (r1, nv, r2)) = solve_tensor_sylvester_complex(g, t, h, r)?;
    let data = zc.iter().map(|c| c.re).collect();
    Core2::from_column_major(r1, nv, r2, data)
}

/// Complex back-transformed solution, laid out like [`Core2`].
pub fn solve_tensor_sylvester_complex(
    g: &DMatrix<f64>,
    t: &TridiagonalMatrix,
    h: &DMatrix<f64>,
    r: &Core2,
) -> Result<(Vec<C64>, (usize, usize, usize))> {
    let (r1, nv, r2) = r.dims();
    if g.shape() != (r1, r1) || h.shape() != (r2, r2) || t.n() != nv {
        return Err(Error::DimensionMismatch {
            op: "solve_tensor_sylvester",
            detail: format!(
                "G {:?}, T {}, H {:?}, R {r1}×{nv}×{r2}",
                g.shape(),
                t.n(),
                h.shape()
            ),
        });
    }
    let s1 = dense_schur(g)?;
    let s3 = dense_schur(h)?;
    let tt = t.transpose();
    let idx = |a: usize, k: usize, b: usize| a + r1 * (k + nv * b);

    // E = R ×₁ U1 ×₃ U3, one mode at a time
    let rc = CMatrix::from_iterator(r1, nv * r2, r.as_slice().iter().map(|&x| C64::new(x, 0.0)));
    let e1 = s1.u.transpose() * rc;
    let e = CMatrix::from_column_slice(r1 * nv, r2, e1.as_slice()) * &s3.u;
    let e = e.as_slice();

    let mut zt = vec![C64::new(0.0, 0.0); r1 * nv * r2];
    let mut th = Thomas::new(nv);
    let mut fib = vec![C64::new(0.0, 0.0); nv];
    for i in 0..r1 {
        for j in 0..r2 {
            for k in 0..nv {
                let mut v = e[idx(i, k, j)];
                for p in 0..i {
                    v -= s1.w[(p, i)] * zt[idx(p, k, j)];
                }
                for q in 0..j {
                    v -= s3.w[(q, j)] * zt[idx(i, k, q)];
                }
                fib[k] = v;
            }
            ops::COUPLING_ENTRIES.fetch_add(((i + j) * nv) as u64, Ordering::Relaxed);
            let shift = s1.w[(i, i)] + s3.w[(j, j)];
            th.solve(&tt, shift, &mut fib)
                .map_err(|e| with_context(e, format!(" in fiber ({i}, {j})")))?;
            for k in 0..nv {
                zt[idx(i, k, j)] = fib[k];
            }
        }
    }

    // X = Z ×₁ U1* ×₃ U3*
    let x1 = s1.u.conjugate() * CMatrix::from_column_slice(r1, nv * r2, &zt);
    let x = CMatrix::from_column_slice(r1 * nv, r2, x1.as_slice()) * s3.u.adjoint();
    let x = x.as_slice().to_vec();
    Ok((x, (r1, nv, r2)))
}
