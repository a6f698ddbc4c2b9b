//! Three-core tensor trains over the velocity grid.
//!
//! A distribution at one spatial point is stored as
//! `f[k1,k2,k3] = Σ_{α1,α2} core1[k1,α1] core2[α1,k2,α2] core3[α2,k3]`.
//! The integrator cycles the train through five canonical forms:
//!
//! | form | cores                       | orthonormal            |
//! |------|-----------------------------|------------------------|
//! | I    | `[C1, Q2, Q3]`              | Q2, Q3 right           |
//! | II   | `[P1·S1, Q2, Q3]`           | P1 left, Q2, Q3 right  |
//! | III  | `[P1, C2, Q3]`              | P1 left, Q3 right      |
//! | IV   | `[P1, P2, S2·Q3]`           | P1, P2 left, Q3 right  |
//! | V    | `[P1, P2, C3]`              | P1, P2 left            |
//!
//! In forms II and IV the small factor `S` is kept separately in
//! [`TensorTrain3::s`].

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{DenseTensor, DEFAULT_FULL_CAP};
use crate::error::{Error, Result};

/// Tolerance used when a caller's canonical form is verified.
pub const FORM_CHECK_TOL: f64 = 1e-8;

/// Middle core `r1 × nv × r2`, column-major with `α1` fastest, so that both
/// the `(r1·nv) × r2` and the `r1 × (nv·r2)` unfoldings are plain reshapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Core2 {
    r1: usize,
    nv: usize,
    r2: usize,
    data: Vec<f64>,
}

impl Core2 {
    pub fn zeros(r1: usize, nv: usize, r2: usize) -> Self {
        Self {
            r1,
            nv,
            r2,
            data: vec![0.0; r1 * nv * r2],
        }
    }

    pub fn from_fn(r1: usize, nv: usize, r2: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut c = Self::zeros(r1, nv, r2);
        for a2 in 0..r2 {
            for k in 0..nv {
                for a1 in 0..r1 {
                    c.data[a1 + r1 * (k + nv * a2)] = f(a1, k, a2);
                }
            }
        }
        c
    }

    /// Wraps a buffer laid out as `data[a1 + r1*(k + nv*a2)]`.
    pub fn from_column_major(r1: usize, nv: usize, r2: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != r1 * nv * r2 {
            return Err(Error::DimensionMismatch {
                op: "Core2::from_column_major",
                detail: format!("{} entries for {r1}×{nv}×{r2}", data.len()),
            });
        }
        Ok(Self { r1, nv, r2, data })
    }

    pub fn from_left_unfolding(r1: usize, nv: usize, m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), r1 * nv);
        let r2 = m.ncols();
        Self {
            r1,
            nv,
            r2,
            data: m.as_slice().to_vec(),
        }
    }

    pub fn from_right_unfolding(nv: usize, m: DMatrix<f64>) -> Self {
        let r1 = m.nrows();
        assert_eq!(m.ncols() % nv.max(1), 0);
        let r2 = m.ncols() / nv;
        Self {
            r1,
            nv,
            r2,
            data: m.as_slice().to_vec(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.r1, self.nv, self.r2)
    }

    #[inline]
    pub fn get(&self, a1: usize, k: usize, a2: usize) -> f64 {
        self.data[a1 + self.r1 * (k + self.nv * a2)]
    }

    #[inline]
    pub fn set(&mut self, a1: usize, k: usize, a2: usize, v: f64) {
        self.data[a1 + self.r1 * (k + self.nv * a2)] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(r1·nv) × r2` unfolding, row index `α1 + r1·k`.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.r1 * self.nv, self.r2, &self.data)
    }

    /// `r1 × (nv·r2)` unfolding, column index `k + nv·α2`.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.r1, self.nv * self.r2, &self.data)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: self.data.iter().map(|x| alpha * x).collect(),
            ..*self
        }
    }

    /// Applies `op` to every mode-2 fiber `core[a1, :, a2]` in place.
    pub fn map_fibers(&mut self, mut op: impl FnMut(&[f64], &mut [f64])) {
        let (r1, nv) = (self.r1, self.nv);
        let mut fiber = vec![0.0; nv];
        let mut out = vec![0.0; nv];
        for a2 in 0..self.r2 {
            for a1 in 0..r1 {
                for k in 0..nv {
                    fiber[k] = self.data[a1 + r1 * (k + nv * a2)];
                }
                op(&fiber, &mut out);
                for k in 0..nv {
                    self.data[a1 + r1 * (k + nv * a2)] = out[k];
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Form {
    General,
    I,
    II,
    III,
    IV,
    V,
}

impl Form {
    /// Successor in the cycle I → II → III → IV → V → I.
    pub fn next(self) -> Option<Form> {
        match self {
            Form::I => Some(Form::II),
            Form::II => Some(Form::III),
            Form::III => Some(Form::IV),
            Form::IV => Some(Form::V),
            Form::V => Some(Form::I),
            Form::General => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain3 {
    pub core1: DMatrix<f64>,
    pub core2: Core2,
    pub core3: DMatrix<f64>,
    /// Separate small factor in forms II (`r1×r1`) and IV (`r2×r2`).
    pub s: Option<DMatrix<f64>>,
    pub form: Form,
}

impl TensorTrain3 {
    pub fn new(core1: DMatrix<f64>, core2: Core2, core3: DMatrix<f64>) -> Result<Self> {
        let (r1, nv, r2) = core2.dims();
        if core1.nrows() != nv || core1.ncols() != r1 || core3.nrows() != r2 || core3.ncols() != nv {
            return Err(Error::DimensionMismatch {
                op: "TensorTrain3::new",
                detail: format!(
                    "core1 {}×{}, core2 {r1}×{nv}×{r2}, core3 {}×{}",
                    core1.nrows(),
                    core1.ncols(),
                    core3.nrows(),
                    core3.ncols()
                ),
            });
        }
        Ok(Self {
            core1,
            core2,
            core3,
            s: None,
            form: Form::General,
        })
    }

    /// Rank-(1,1) train `u ∘ w ∘ z`.
    pub fn rank_one(u: &[f64], w: &[f64], z: &[f64]) -> Result<Self> {
        let nv = u.len();
        if w.len() != nv || z.len() != nv {
            return Err(Error::DimensionMismatch {
                op: "TensorTrain3::rank_one",
                detail: format!("{} / {} / {}", u.len(), w.len(), z.len()),
            });
        }
        Self::new(
            DMatrix::from_column_slice(nv, 1, u),
            Core2::from_column_major(1, nv, 1, w.to_vec())?,
            DMatrix::from_row_slice(1, nv, z),
        )
    }

    pub fn zeros(nv: usize, r1: usize, r2: usize) -> Self {
        Self {
            core1: DMatrix::zeros(nv, r1),
            core2: Core2::zeros(r1, nv, r2),
            core3: DMatrix::zeros(r2, nv),
            s: None,
            form: Form::General,
        }
    }

    pub fn nv(&self) -> usize {
        self.core1.nrows()
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.core2.r1, self.core2.r2)
    }

    /// First core with the form-II factor absorbed.
    pub fn core1_eff(&self) -> Cow<'_, DMatrix<f64>> {
        match (&self.s, self.form) {
            (Some(s), Form::II) => Cow::Owned(&self.core1 * s),
            _ => Cow::Borrowed(&self.core1),
        }
    }

    /// Third core with the form-IV factor absorbed.
    pub fn core3_eff(&self) -> Cow<'_, DMatrix<f64>> {
        match (&self.s, self.form) {
            (Some(s), Form::IV) => Cow::Owned(s * &self.core3),
            _ => Cow::Borrowed(&self.core3),
        }
    }

    /// Plain three-core representation of the same tensor (form General).
    pub fn to_general(&self) -> TensorTrain3 {
        TensorTrain3 {
            core1: self.core1_eff().into_owned(),
            core2: self.core2.clone(),
            core3: self.core3_eff().into_owned(),
            s: None,
            form: Form::General,
        }
    }

    pub fn scaled(&self, alpha: f64) -> TensorTrain3 {
        let mut out = self.to_general();
        out.core1 *= alpha;
        out
    }

    pub fn to_full(&self) -> Result<DenseTensor> {
        self.to_full_capped(DEFAULT_FULL_CAP)
    }

    pub fn to_full_capped(&self, cap: usize) -> Result<DenseTensor> {
        let nv = self.nv();
        let entries = nv * nv * nv;
        if entries > cap {
            return Err(Error::SizeCap {
                op: "tt_to_full",
                entries,
                cap,
            });
        }
        let (r1, r2) = self.ranks();
        let c1 = self.core1_eff();
        let c3 = self.core3_eff();
        let mut out = DenseTensor::zeros(&[nv, nv, nv]);
        let data = out.data_mut();
        // g[a1, k2, k3] = Σ_a2 core2[a1,k2,a2] core3[a2,k3]
        let mut g = vec![0.0; r1 * nv * nv];
        for a2 in 0..r2 {
            for k2 in 0..nv {
                for a1 in 0..r1 {
                    let c = self.core2.get(a1, k2, a2);
                    if c == 0.0 {
                        continue;
                    }
                    let row = &mut g[(a1 * nv + k2) * nv..(a1 * nv + k2 + 1) * nv];
                    for (k3, v) in row.iter_mut().enumerate() {
                        *v += c * c3[(a2, k3)];
                    }
                }
            }
        }
        for k1 in 0..nv {
            for a1 in 0..r1 {
                let c = c1[(k1, a1)];
                if c == 0.0 {
                    continue;
                }
                let src = &g[a1 * nv * nv..(a1 + 1) * nv * nv];
                let dst = &mut data[k1 * nv * nv..(k1 + 1) * nv * nv];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        Ok(out)
    }

    /// Returns a copy whose `mode`-th core fibers are scaled by `weights`.
    pub fn scale_core_diag(&self, mode: usize, weights: &[f64]) -> Result<TensorTrain3> {
        let nv = self.nv();
        if weights.len() != nv {
            return Err(Error::DimensionMismatch {
                op: "scale_core_diag",
                detail: format!("{} weights for Nv = {nv}", weights.len()),
            });
        }
        let mut out = self.to_general();
        match mode {
            1 => {
                for (k, w) in weights.iter().enumerate() {
                    out.core1.row_mut(k).scale_mut(*w);
                }
            }
            2 => {
                let (r1, _, r2) = out.core2.dims();
                for a2 in 0..r2 {
                    for (k, w) in weights.iter().enumerate() {
                        for a1 in 0..r1 {
                            let v = out.core2.get(a1, k, a2);
                            out.core2.set(a1, k, a2, v * w);
                        }
                    }
                }
            }
            3 => {
                for (k, w) in weights.iter().enumerate() {
                    out.core3.column_mut(k).scale_mut(*w);
                }
            }
            _ => {
                return Err(Error::DimensionMismatch {
                    op: "scale_core_diag",
                    detail: format!("mode {mode} not in 1..=3"),
                })
            }
        }
        Ok(out)
    }

    /// Deviation of the relevant Gram matrices from the identity for the
    /// current form (Frobenius norm, an upper bound on the spectral norm).
    pub fn orthonormality_residual(&self) -> f64 {
        let left1 = || gram_residual(&(self.core1.transpose() * &self.core1));
        let right2 = || {
            let m = self.core2.right_unfolding();
            gram_residual(&(&m * m.transpose()))
        };
        let left2 = || {
            let m = self.core2.left_unfolding();
            gram_residual(&(m.transpose() * &m))
        };
        let right3 = || gram_residual(&(&self.core3 * self.core3.transpose()));
        match self.form {
            Form::General => 0.0,
            Form::I | Form::II => {
                let base = right2().max(right3());
                if self.form == Form::II {
                    base.max(left1())
                } else {
                    base
                }
            }
            Form::III => left1().max(right3()),
            Form::IV => left1().max(left2()).max(right3()),
            Form::V => left1().max(left2()),
        }
    }

    pub fn check_form(&self, expected: Form) -> Result<()> {
        if self.form != expected {
            return Err(Error::Form(format!(
                "expected form {expected:?}, found {:?}",
                self.form
            )));
        }
        let res = self.orthonormality_residual();
        if res > FORM_CHECK_TOL {
            return Err(Error::Form(format!(
                "form {expected:?} orthonormality residual {res:e}"
            )));
        }
        Ok(())
    }

    /// One canonical-form transition. Allowed: the successor of the current
    /// form in the I→…→V→I cycle, or `General → I`.
    pub fn orthogonalize_step(&self, target: Form) -> Result<TensorTrain3> {
        let nv = self.nv();
        let (r1, r2) = self.ranks();
        match (self.form, target) {
            (Form::General, Form::I) | (Form::V, Form::I) => Ok(self.right_orthonormalize()),
            (Form::I, Form::II) => {
                let (p1, s1) = thin_qr(&self.core1);
                Ok(TensorTrain3 {
                    core1: p1,
                    core2: self.core2.clone(),
                    core3: self.core3.clone(),
                    s: Some(s1),
                    form: Form::II,
                })
            }
            (Form::II, Form::III) => {
                let s1 = self.small_factor(r1)?;
                let c2 = s1 * self.core2.right_unfolding();
                Ok(TensorTrain3 {
                    core1: self.core1.clone(),
                    core2: Core2::from_right_unfolding(nv, c2),
                    core3: self.core3.clone(),
                    s: None,
                    form: Form::III,
                })
            }
            (Form::III, Form::IV) => {
                let (p2, s2) = thin_qr(&self.core2.left_unfolding());
                Ok(TensorTrain3 {
                    core1: self.core1.clone(),
                    core2: Core2::from_left_unfolding(r1, nv, p2),
                    core3: self.core3.clone(),
                    s: Some(s2),
                    form: Form::IV,
                })
            }
            (Form::IV, Form::V) => {
                let s2 = self.small_factor(r2)?;
                Ok(TensorTrain3 {
                    core1: self.core1.clone(),
                    core2: self.core2.clone(),
                    core3: s2 * &self.core3,
                    s: None,
                    form: Form::V,
                })
            }
            (from, to) => Err(Error::Form(format!("illegal transition {from:?} -> {to:?}"))),
        }
    }

    fn small_factor(&self, r: usize) -> Result<&DMatrix<f64>> {
        match &self.s {
            Some(s) if s.nrows() == r && s.ncols() == r => Ok(s),
            _ => Err(Error::Form(format!(
                "form {:?} is missing its {r}×{r} factor",
                self.form
            ))),
        }
    }

    /// Right-orthonormalises cores 3 and 2, absorbing the factors into core 1.
    fn right_orthonormalize(&self) -> TensorTrain3 {
        let g = self.to_general();
        let nv = g.nv();
        // core3 = Rᵀ Qᵀ
        let (q3, r3) = thin_qr(&g.core3.transpose());
        let c2 = g.core2.left_unfolding() * r3.transpose();
        let c2 = Core2::from_left_unfolding(g.core2.r1, nv, c2);
        let (q2, r2) = thin_qr(&c2.right_unfolding().transpose());
        let core1 = g.core1 * r2.transpose();
        TensorTrain3 {
            core1,
            core2: Core2::from_right_unfolding(nv, q2.transpose()),
            core3: q3.transpose(),
            s: None,
            form: Form::I,
        }
    }

    /// Converts any representation to form I.
    pub fn to_form_i(&self) -> TensorTrain3 {
        if self.form == Form::I {
            self.clone()
        } else {
            self.right_orthonormalize()
        }
    }

    /// Frobenius norm, from the first core of the form-I representation.
    pub fn norm(&self) -> f64 {
        self.to_form_i().core1.norm()
    }

    /// `Σ_k a[k] b[k]` by factorised contraction.
    pub fn inner(&self, other: &TensorTrain3) -> f64 {
        let env = right_environment(&self.core2, &self.core3_eff(), &other.core2, &other.core3_eff());
        let left = self.core1_eff().transpose() * other.core1_eff().as_ref();
        left.component_mul(&env).sum()
    }

    /// Relative Frobenius distance `‖self − other‖ / ‖other‖`, evaluated
    /// on the concatenated difference train (no full tensor).
    pub fn rel_distance(&self, other: &TensorTrain3) -> Result<f64> {
        let diff = tt_concat_sum(&TtSum::new(vec![self.to_general(), other.scaled(-1.0)])?)?;
        let d = diff.norm();
        let n = other.norm();
        Ok(if n > 0.0 { d / n } else { d })
    }
}

fn gram_residual(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    (g - DMatrix::<f64>::identity(n, n)).norm()
}

/// Thin Householder QR with a non-negative diagonal in `R`.
pub fn thin_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// `env[b1, c1] = Σ_{k,β2,γ2} a2[b1,k,β2] (a3 b3ᵀ)[β2,γ2] b2[c1,k,γ2]`.
pub(crate) fn right_environment(
    a2: &Core2,
    a3: &DMatrix<f64>,
    b2: &Core2,
    b3: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (s1, nv, _) = a2.dims();
    let m3 = a3 * b3.transpose();
    let x = a2.left_unfolding() * m3; // (s1·nv) × r2
    let x = DMatrix::from_column_slice(s1, nv * b2.r2, x.as_slice());
    x * b2.right_unfolding().transpose()
}

/// Formal sum of trains sharing `Nv`.
#[derive(Clone, Debug, Default)]
pub struct TtSum {
    terms: Vec<TensorTrain3>,
}

impl TtSum {
    pub fn new(terms: Vec<TensorTrain3>) -> Result<Self> {
        if let Some(first) = terms.first() {
            let nv = first.nv();
            if let Some(bad) = terms.iter().find(|t| t.nv() != nv) {
                return Err(Error::DimensionMismatch {
                    op: "TtSum::new",
                    detail: format!("Nv {} vs {nv}", bad.nv()),
                });
            }
        }
        Ok(Self { terms })
    }

    pub fn empty() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn push(&mut self, term: TensorTrain3) {
        debug_assert!(self.terms.first().map_or(true, |t| t.nv() == term.nv()));
        self.terms.push(term);
    }

    pub fn extend(&mut self, other: TtSum) {
        self.terms.extend(other.terms);
    }

    pub fn terms(&self) -> &[TensorTrain3] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> TtSum {
        TtSum {
            terms: self.terms.iter().map(|t| t.scaled(alpha)).collect(),
        }
    }

    pub fn to_full(&self, nv: usize) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(&[nv, nv, nv]);
        for t in &self.terms {
            out.axpy(1.0, &t.to_full()?);
        }
        Ok(out)
    }
}

/// Block-diagonal concatenation; ranks add up bond by bond.
pub fn tt_concat_sum(sum: &TtSum) -> Result<TensorTrain3> {
    let terms = sum.terms();
    let first = terms.first().ok_or_else(|| Error::DimensionMismatch {
        op: "tt_concat_sum",
        detail: "empty sum".into(),
    })?;
    let nv = first.nv();
    if terms.len() == 1 {
        return Ok(first.to_general());
    }
    let r1: usize = terms.iter().map(|t| t.ranks().0).sum();
    let r2: usize = terms.iter().map(|t| t.ranks().1).sum();
    let mut out = TensorTrain3::zeros(nv, r1, r2);
    let (mut o1, mut o2) = (0, 0);
    for t in terms {
        if t.nv() != nv {
            return Err(Error::DimensionMismatch {
                op: "tt_concat_sum",
                detail: format!("Nv {} vs {nv}", t.nv()),
            });
        }
        let (t1, t2) = t.ranks();
        let c1 = t.core1_eff();
        let c3 = t.core3_eff();
        out.core1.view_mut((0, o1), (nv, t1)).copy_from(c1.as_ref());
        out.core3.view_mut((o2, 0), (t2, nv)).copy_from(c3.as_ref());
        for a2 in 0..t2 {
            for k in 0..nv {
                for a1 in 0..t1 {
                    out.core2.set(o1 + a1, k, o2 + a2, t.core2.get(a1, k, a2));
                }
            }
        }
        o1 += t1;
        o2 += t2;
    }
    Ok(out)
}

/// `R_I[k1, α1] = Σ K[k1,k2,k3] Q2[α1,k2,α2] Q3[α2,k3]`, shape `Nv × r1`.
pub fn project_right(k: &TensorTrain3, q2: &Core2, q3: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_frame_dims("project_right", k, q2.dims().1, Some(q3.ncols()))?;
    if q2.r2 != q3.nrows() {
        return Err(frame_mismatch("project_right", "Q2/Q3 bond"));
    }
    let env = right_environment(&k.core2, &k.core3_eff(), q2, q3);
    Ok(k.core1_eff().as_ref() * env)
}

/// `R_III[α1, k2, α2] = Σ K[k1,k2,k3] P1[k1,α1] Q3[α2,k3]`.
pub fn project_middle(k: &TensorTrain3, p1: &DMatrix<f64>, q3: &DMatrix<f64>) -> Result<Core2> {
    check_frame_dims("project_middle", k, p1.nrows(), Some(q3.ncols()))?;
    let nv = k.nv();
    let a = p1.transpose() * k.core1_eff().as_ref(); // r1 × s1
    let b = k.core3_eff().as_ref() * q3.transpose(); // s2 × r2
    let x = a * k.core2.right_unfolding(); // r1 × (nv·s2)
    let x = DMatrix::from_column_slice(p1.ncols() * nv, k.core2.r2, x.as_slice());
    Ok(Core2::from_left_unfolding(p1.ncols(), nv, x * b))
}

/// `R_V[α2, k3] = Σ K[k1,k2,k3] P1[k1,α1] P2[α1,k2,α2]`, shape `r2 × Nv`.
pub fn project_left(k: &TensorTrain3, p1: &DMatrix<f64>, p2: &Core2) -> Result<DMatrix<f64>> {
    check_frame_dims("project_left", k, p1.nrows(), None)?;
    if p2.r1 != p1.ncols() || p2.nv != k.nv() {
        return Err(frame_mismatch("project_left", "P1/P2 bond"));
    }
    Ok(left_environment(k, p1, p2) * k.core3_eff().as_ref())
}

/// `env[α2, β2] = Σ P1[k1,α1] P2[α1,k2,α2] K1[k1,β1] K2[β1,k2,β2]`.
pub(crate) fn left_environment(k: &TensorTrain3, p1: &DMatrix<f64>, p2: &Core2) -> DMatrix<f64> {
    let nv = k.nv();
    let a = p1.transpose() * k.core1_eff().as_ref(); // r1 × s1
    let x = a * k.core2.right_unfolding(); // r1 × (nv·s2)
    let x = DMatrix::from_column_slice(p1.ncols() * nv, k.core2.r2, x.as_slice());
    p2.left_unfolding().transpose() * x
}

fn check_frame_dims(op: &'static str, k: &TensorTrain3, nv: usize, nv3: Option<usize>) -> Result<()> {
    if nv != k.nv() || nv3.is_some_and(|n| n != k.nv()) {
        return Err(frame_mismatch(op, "velocity dimension"));
    }
    Ok(())
}

fn frame_mismatch(op: &'static str, what: &str) -> Error {
    Error::DimensionMismatch {
        op,
        detail: format!("{what} mismatch"),
    }
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Number of singular values `≥ δ·σ1`; zero when `σ1 = 0`.
pub fn rank_above(sv: &[f64], delta: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().filter(|&&s| s >= delta * s1).count(),
        _ => 0,
    }
}

/// Effective ranks from the `S` factors of forms II and IV.
pub fn effective_rank(f: &TensorTrain3, delta: f64) -> Result<(usize, usize)> {
    let f1 = f.to_form_i();
    let f2 = f1.orthogonalize_step(Form::II)?;
    let r1 = rank_above(&singular_values(f2.s.as_ref().expect("form II factor")), delta);
    let f4 = f2
        .orthogonalize_step(Form::III)?
        .orthogonalize_step(Form::IV)?;
    let r2 = rank_above(&singular_values(f4.s.as_ref().expect("form IV factor")), delta);
    Ok((r1, r2))
}

/// Pads a train of natural rank `(q1, q2) ≤ target` to exactly `target`.
///
/// Extra directions are orthonormal completions of fixed-seed random
/// matrices. The new core-2 couplings form a block of Frobenius norm `eps`,
/// so the added singular values sit near `eps` times the largest one. Returns the padded train in form I.
pub fn pad_to_rank(f: &TensorTrain3, target: (usize, usize), eps: f64, seed: u64) -> Result<TensorTrain3> {
    let (q1, q2) = f.ranks();
    let (r1, r2) = target;
    let nv = f.nv();
    if q1 > r1 || q2 > r2 {
        return Err(Error::Validation(format!(
            "cannot pad rank ({q1}, {q2}) down to ({r1}, {r2})"
        )));
    }
    if r1 > nv || r2 > nv {
        return Err(Error::Validation(format!("rank ({r1}, {r2}) exceeds Nv = {nv}")));
    }
    let base = f.to_form_i();
    if (q1, q2) == (r1, r2) {
        return Ok(base);
    }
    let sigma = singular_values(&base.core1).first().copied().unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));

    let complete = |known: &DMatrix<f64>, extra: usize, noise: DMatrix<f64>| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(known.nrows(), known.ncols() + extra);
        m.view_mut((0, 0), (known.nrows(), known.ncols())).copy_from(known);
        m.view_mut((0, known.ncols()), (known.nrows(), extra)).copy_from(&noise);
        let (q, _) = thin_qr(&m);
        q.columns(known.ncols(), extra).into_owned()
    };

    let mut core1 = DMatrix::zeros(nv, r1);
    core1.view_mut((0, 0), (nv, q1)).copy_from(&base.core1);
    if r1 > q1 {
        let x1 = complete(&base.core1, r1 - q1, uniform(nv, r1 - q1));
        core1.view_mut((0, q1), (nv, r1 - q1)).copy_from(&(x1 * sigma));
    }
    let mut core3 = DMatrix::zeros(r2, nv);
    core3.view_mut((0, 0), (q2, nv)).copy_from(&base.core3);
    if r2 > q2 {
        let x3 = complete(&base.core3.transpose(), r2 - q2, uniform(nv, r2 - q2));
        core3.view_mut((q2, 0), (r2 - q2, nv)).copy_from(&x3.transpose());
    }
    let mut noise = uniform(r1 * nv, r2);
    for a2 in 0..q2 {
        for k in 0..nv {
            for a1 in 0..q1 {
                noise[(a1 + r1 * k, a2)] = 0.0;
            }
        }
    }
    let scale = noise.norm();
    if scale > 0.0 {
        noise /= scale;
    }
    let core2 = Core2::from_fn(r1, nv, r2, |a1, k, a2| {
        if a1 < q1 && a2 < q2 {
            base.core2.get(a1, k, a2)
        } else {
            eps * noise[(a1 + r1 * k, a2)]
        }
    });
    Ok(TensorTrain3::new(core1, core2, core3)?.to_form_i())
}
