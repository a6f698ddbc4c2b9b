//! Discrete Fokker–Planck operator in one velocity direction and the
//! Galerkin matrices of the projected implicit equations.

use nalgebra::DMatrix;

use crate::domain::VelocityGrid;
use crate::error::{Error, Result};
use crate::tt::{Core2, Form, TensorTrain3, TtSum, FORM_CHECK_TOL};

/// `Nv × Nv` three-band matrix. `sub[k]` sits at `(k+1, k)`, `sup[k]` at
/// `(k, k+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalMatrix {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n == 0 || sub.len() + 1 != n || sup.len() + 1 != n {
            return Err(Error::DimensionMismatch {
                op: "TridiagonalMatrix::new",
                detail: format!("bands {}/{}/{}", sub.len(), n, sup.len()),
            });
        }
        Ok(Self { sub, diag, sup })
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self {
            sub: vec![0.0; n.saturating_sub(1)],
            diag: vec![s; n],
            sup: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            sub: vec![0.0; d.len().saturating_sub(1)],
            diag: d.to_vec(),
            sup: vec![0.0; d.len().saturating_sub(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i == j + 1 {
            self.sub[j]
        } else if j == i + 1 {
            self.sup[i]
        } else {
            0.0
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            sub: self.sup.clone(),
            diag: self.diag.clone(),
            sup: self.sub.clone(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| self.get(i, j))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.sub
            .iter()
            .chain(&self.diag)
            .chain(&self.sup)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let mut s = self.diag[i];
                if i > 0 {
                    s += self.sub[i - 1];
                }
                if i + 1 < self.n() {
                    s += self.sup[i];
                }
                s
            })
            .collect()
    }

    /// `out = A x`.
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    /// `out = Aᵀ x`, the action `x ×₁ A` on a vector.
    pub fn tmul_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sup[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sub[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.mul_into(x, &mut out);
        out
    }

    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.tmul_into(x, &mut out);
        out
    }

    /// `A·M` for a dense `Nv × c` matrix.
    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            self.mul_into(m.column(c).as_slice(), out.column_mut(c).as_mut_slice());
        }
        out
    }

    /// `Aᵀ·M`, i.e. `M ×₁ A` on a first core.
    pub fn tmul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            self.tmul_into(m.column(c).as_slice(), out.column_mut(c).as_mut_slice());
        }
        out
    }

    /// `M·A` for an `r × Nv` matrix, i.e. `M ×₂ A` on a third core.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.tmul_mat(&m.transpose()).transpose()
    }

    /// `core ×₂ A`: every mode-2 fiber replaced by `Aᵀ·fiber`.
    pub fn apply_core2(&self, core: &Core2) -> Core2 {
        let mut out = core.clone();
        out.map_fibers(|x, y| self.tmul_into(x, y));
        out
    }

    /// Every mode-2 fiber replaced by `A·fiber`.
    fn mul_core2(&self, core: &Core2) -> Core2 {
        let mut out = core.clone();
        out.map_fibers(|x, y| self.mul_into(x, y));
        out
    }

    /// `Pᵀ A P` for a tall `Nv × r` matrix.
    pub fn sandwich(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        p.transpose() * self.mul_mat(p)
    }

    /// `I/3 − dt·η·self`.
    pub fn shifted(&self, dt: f64, eta: f64) -> Self {
        let s = dt * eta;
        Self {
            sub: self.sub.iter().map(|x| -s * x).collect(),
            diag: self.diag.iter().map(|x| 1.0 / 3.0 - s * x).collect(),
            sup: self.sup.iter().map(|x| -s * x).collect(),
        }
    }
}

/// Separable Maxwellian `n/(2πT)^{3/2} · m1 ⊗ m2 ⊗ m3`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxwellianFactors {
    pub n: f64,
    pub u: [f64; 3],
    pub t: f64,
    pub m: [Vec<f64>; 3],
    pub prefactor: f64,
}

pub fn build_maxwellian(n: f64, u: [f64; 3], t: f64, grid: &VelocityGrid) -> Result<MaxwellianFactors> {
    if !(n > 0.0) {
        return Err(Error::NonPositiveDensity(n));
    }
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    let nodes = grid.nodes();
    let factor = |ul: f64| -> Vec<f64> {
        nodes
            .iter()
            .map(|v| (-(v - ul) * (v - ul) / (2.0 * t)).exp())
            .collect()
    };
    Ok(MaxwellianFactors {
        n,
        u,
        t,
        m: [factor(u[0]), factor(u[1]), factor(u[2])],
        prefactor: n / (2.0 * std::f64::consts::PI * t).powf(1.5),
    })
}

pub fn maxwellian_tt(mf: &MaxwellianFactors) -> TensorTrain3 {
    let c1: Vec<f64> = mf.m[0].iter().map(|x| mf.prefactor * x).collect();
    TensorTrain3::rank_one(&c1, &mf.m[1], &mf.m[2]).expect("factors share the grid")
}

/// Collision matrix of one direction with zero-flux ends.
pub fn build_collision_tridiag(m: &[f64], t: f64, dv: f64) -> Result<TridiagonalMatrix> {
    let n = m.len();
    if let Some(k) = m.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveWeight(k));
    }
    if n == 0 {
        return Err(Error::DimensionMismatch {
            op: "build_collision_tridiag",
            detail: "empty weight vector".into(),
        });
    }
    let s = t / (2.0 * dv * dv);
    if n == 1 {
        return TridiagonalMatrix::new(vec![], vec![0.0], vec![]);
    }
    // a_k couples f_{k-1}, b_k couples f_{k+1} (0-based k here)
    let a = |k: usize| s * (1.0 + m[k] / m[k - 1]);
    let b = |k: usize| s * (1.0 + m[k] / m[k + 1]);
    let mut sub: Vec<f64> = (0..n - 1).map(b).collect();
    let mut sup: Vec<f64> = (1..n).map(a).collect();
    // c_k = -(b_{k-1} + a_{k+1}). The smaller off-diagonal is nudged by at
    // most one ulp so that the row sum vanishes in floating point.
    let mut diag = vec![0.0; n];
    diag[0] = -sup[0];
    diag[n - 1] = -sub[n - 2];
    for k in 1..n - 1 {
        let (x, y) = (sub[k - 1], sup[k]);
        let total = x + y;
        if x >= y {
            sup[k] = total - x;
        } else {
            sub[k - 1] = total - y;
        }
        diag[k] = -total;
    }
    TridiagonalMatrix::new(sub, diag, sup)
}

pub fn build_shifted_tridiag(j: &TridiagonalMatrix, dt: f64, eta: f64) -> TridiagonalMatrix {
    j.shifted(dt, eta)
}

/// The three single-direction collision terms `Q^(d) f` as separate trains.
pub fn apply_collision_tt(f: &TensorTrain3, j: [&TridiagonalMatrix; 3]) -> Result<TtSum> {
    let nv = f.nv();
    if j.iter().any(|m| m.n() != nv) {
        return Err(Error::DimensionMismatch {
            op: "apply_collision_tt",
            detail: format!("Nv = {nv} vs matrix sizes {}/{}/{}", j[0].n(), j[1].n(), j[2].n()),
        });
    }
    let g = f.to_general();
    let t1 = TensorTrain3 {
        core1: j[0].tmul_mat(&g.core1),
        ..g.clone()
    };
    let t2 = TensorTrain3 {
        core2: j[1].apply_core2(&g.core2),
        ..g.clone()
    };
    let t3 = TensorTrain3 {
        core3: j[2].right_mul(&g.core3),
        ..g
    };
    TtSum::new(vec![t1, t2, t3])
}

/// Small dense coefficient matrices of the projected equations.
#[derive(Clone, Debug, PartialEq)]
pub enum GalerkinMatrices {
    /// `C ×₁ T1 + C ×₂ H = R`.
    Stage1 { h: DMatrix<f64> },
    /// `C ×₁ G + C ×₂ T2 + C ×₃ H = R`.
    Stage3 { g: DMatrix<f64>, h: DMatrix<f64> },
    /// `C ×₁ G + C ×₂ T3 = R`.
    Stage5 { g: DMatrix<f64> },
}

/// Galerkin matrices for substep 1, 3 or 5. `f` must be in form I, III
/// or V respectively; only its orthonormal cores are read.
pub fn galerkin_matrices(t: [&TridiagonalMatrix; 3], f: &TensorTrain3, stage: u8) -> Result<GalerkinMatrices> {
    let expected = match stage {
        1 => Form::I,
        3 => Form::III,
        5 => Form::V,
        _ => return Err(Error::Form(format!("no Galerkin system for substep {stage}"))),
    };
    if f.form != expected {
        return Err(Error::Form(format!(
            "substep {stage} expects form {expected:?}, found {:?}",
            f.form
        )));
    }
    let res = f.orthonormality_residual();
    if res > FORM_CHECK_TOL {
        return Err(Error::Form(format!(
            "substep {stage}: orthonormality residual {res:e} exceeds {FORM_CHECK_TOL:e}"
        )));
    }
    let nv = f.nv();
    let (r1, r2) = f.ranks();
    Ok(match stage {
        1 => {
            let q2 = &f.core2;
            let q2r = q2.right_unfolding();
            let h2 = &q2r * t[1].mul_core2(q2).right_unfolding().transpose();
            let n3 = t[2].sandwich(&f.core3.transpose());
            let z = Core2::from_left_unfolding(r1, nv, q2.left_unfolding() * n3.transpose());
            let h3 = &q2r * z.right_unfolding().transpose();
            GalerkinMatrices::Stage1 { h: h2 + h3 }
        }
        3 => GalerkinMatrices::Stage3 {
            g: t[0].sandwich(&f.core1),
            h: t[2].sandwich(&f.core3.transpose()),
        },
        _ => {
            let p2 = &f.core2;
            let p2l = p2.left_unfolding();
            let g1 = t[0].sandwich(&f.core1);
            let w = Core2::from_right_unfolding(nv, &g1 * p2.right_unfolding());
            let first = p2l.transpose() * w.left_unfolding();
            let second = p2l.transpose() * t[1].mul_core2(p2).left_unfolding();
            debug_assert_eq!(first.shape(), (r2, r2));
            GalerkinMatrices::Stage5 { g: first + second }
        }
    })
}
