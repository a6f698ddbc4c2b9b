//! Velocity moments and macroscopic state.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::domain::{SpatialGrid, VelocityGrid};
use crate::error::{Error, Result};
use crate::transport::transport_by_neighbor;
use crate::tt::TensorTrain3;

/// Temperatures below this are treated as an upstream failure.
pub const MIN_TEMPERATURE: f64 = 1e-12;

/// `(n, n·u1, n·u2, n·u3, n|u|² + 3nT)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentVector(pub [f64; 5]);

impl MomentVector {
    pub fn density(&self) -> f64 {
        self.0[0]
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.map(|x| a * x))
    }

    pub fn axpy(&mut self, a: f64, other: &MomentVector) {
        for (x, y) in self.0.iter_mut().zip(other.0) {
            *x += a * y;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroState {
    pub n: f64,
    pub u: [f64; 3],
    pub t: f64,
}

/// Mode weights shared by all moment evaluations on one grid.
#[derive(Clone, Debug)]
pub struct MomentWeights {
    ones: DVector<f64>,
    v: DVector<f64>,
    v2: DVector<f64>,
    cell: f64,
}

impl MomentWeights {
    pub fn new(grid: &VelocityGrid) -> Self {
        let nodes = grid.nodes();
        Self {
            ones: DVector::from_element(grid.nv, 1.0),
            v2: DVector::from_iterator(grid.nv, nodes.iter().map(|x| x * x)),
            v: DVector::from_vec(nodes),
            cell: grid.cell_volume(),
        }
    }

    /// `Σ_k core2[:, k, :]·w[k]`, an `r1 × r2` matrix.
    fn core2_weighted(core2: &crate::tt::Core2, w: &DVector<f64>) -> DMatrix<f64> {
        let (r1, nv, r2) = core2.dims();
        let mut out = DMatrix::zeros(r1, r2);
        for (a2, block) in core2.as_slice().chunks_exact(r1 * nv).enumerate() {
            let mut col = out.column_mut(a2);
            for (fiber, wk) in block.chunks_exact(r1).zip(w.iter()) {
                for (o, x) in col.iter_mut().zip(fiber) {
                    *o += wk * x;
                }
            }
        }
        out
    }

    /// Moments of the train `[core1, core2, core3]` (no quadrature weight yet).
    fn raw(&self, core1: &DMatrix<f64>, core2: &crate::tt::Core2, core3: &DMatrix<f64>) -> [f64; 5] {
        let z1 = core3 * &self.ones;
        let zv = core3 * &self.v;
        let zv2 = core3 * &self.v2;
        let m1 = Self::core2_weighted(core2, &self.ones);
        let mv = Self::core2_weighted(core2, &self.v);
        let mv2 = Self::core2_weighted(core2, &self.v2);
        let t11 = &m1 * &z1;
        let c1 = core1.transpose() * &self.ones;
        let cv = core1.transpose() * &self.v;
        let cv2 = core1.transpose() * &self.v2;
        let mass = c1.dot(&t11);
        let p1 = cv.dot(&t11);
        let p2 = c1.dot(&(&mv * &z1));
        let p3 = c1.dot(&(&m1 * &zv));
        let e = cv2.dot(&t11) + c1.dot(&(&mv2 * &z1)) + c1.dot(&(&m1 * &zv2));
        [mass, p1, p2, p3, e]
    }
}

/// Moments by factorised per-core weighted sums.
pub fn moments_from_tt(f: &TensorTrain3, grid: &VelocityGrid) -> MomentVector {
    moments_with(f, &MomentWeights::new(grid))
}

pub fn moments_with(f: &TensorTrain3, w: &MomentWeights) -> MomentVector {
    let raw = w.raw(&f.core1_eff(), &f.core2, &f.core3_eff());
    MomentVector(raw.map(|x| x * w.cell))
}

pub fn macro_from_moments(u: &MomentVector) -> Result<MacroState> {
    let n = u.0[0];
    if !(n > 0.0) {
        return Err(Error::NonPositiveDensity(n));
    }
    let vel = [u.0[1] / n, u.0[2] / n, u.0[3] / n];
    let speed2: f64 = vel.iter().map(|x| x * x).sum();
    let t = (u.0[4] - n * speed2) / (3.0 * n);
    if !(t >= MIN_TEMPERATURE) {
        return Err(Error::NonPositiveTemperature(t));
    }
    Ok(MacroState { n, u: vel, t })
}

pub fn moments_from_macro(m: &MacroState) -> MomentVector {
    let speed2: f64 = m.u.iter().map(|x| x * x).sum();
    MomentVector([
        m.n,
        m.n * m.u[0],
        m.n * m.u[1],
        m.n * m.u[2],
        m.n * speed2 + 3.0 * m.n * m.t,
    ])
}

/// Moment image of one explicit transport step:
/// `U_j − dt · Σ_k (Tr f)_j (1, v, |v|²) dv³`.
pub fn update_moments(
    u_prev: &[MomentVector],
    field: &[TensorTrain3],
    e: &[f64],
    dt: f64,
    v_grid: &VelocityGrid,
    x_grid: &SpatialGrid,
) -> Vec<MomentVector> {
    let w = MomentWeights::new(v_grid);
    (0..field.len())
        .into_par_iter()
        .map(|j| {
            let mut out = u_prev[j];
            let ej = e.get(j).copied().unwrap_or(0.0);
            for (m, core1) in transport_by_neighbor(field, ej, j, v_grid, x_grid) {
                let g = field[m].to_general();
                let raw = w.raw(&core1, &g.core2, &g.core3);
                for (o, r) in out.0.iter_mut().zip(raw) {
                    *o -= dt * w.cell * r;
                }
            }
            out
        })
        .collect()
}
