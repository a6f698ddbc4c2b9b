//! Second-order upwind transport in `x` and `v1`, Ampère's law and field
//! diagnostics.

use nalgebra::DMatrix;

use crate::domain::{SpatialGrid, VelocityGrid};
use crate::error::{Error, Result};
use crate::tt::{TensorTrain3, TtSum};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldState {
    pub e: Vec<f64>,
    pub j: Vec<f64>,
}

impl FieldState {
    pub fn zeros(nx: usize) -> Self {
        Self {
            e: vec![0.0; nx],
            j: vec![0.0; nx],
        }
    }
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

fn with_core1(f: &TensorTrain3, core1: DMatrix<f64>) -> TensorTrain3 {
    let g = f.to_general();
    TensorTrain3 { core1, ..g }
}

/// `v1·D_x f` at point `j` as the six stencil terms, each a copy of a
/// neighbour train with its first core scaled by `±c·v±/(2dx)`.
pub fn upwind_x(field: &[TensorTrain3], j: usize, v_grid: &VelocityGrid, x_grid: &SpatialGrid) -> TtSum {
    let v = v_grid.nodes();
    let h = 1.0 / (2.0 * x_grid.dx);
    let vp: Vec<f64> = v.iter().map(|&x| pos(x)).collect();
    let vm: Vec<f64> = v.iter().map(|&x| neg(x)).collect();
    let at = |o: isize| &field[x_grid.wrap(j as isize + o)];
    let term = |o: isize, c: f64, w: &[f64]| {
        let scaled: Vec<f64> = w.iter().map(|x| c * h * x).collect();
        at(o).scale_core_diag(1, &scaled).expect("weights match Nv")
    };
    let mut sum = TtSum::empty();
    sum.push(term(0, 3.0, &vp));
    sum.push(term(-1, -4.0, &vp));
    sum.push(term(-2, 1.0, &vp));
    sum.push(term(2, 1.0, &vm));
    sum.push(term(1, -4.0, &vm));
    sum.push(term(0, 3.0, &vm));
    sum
}

/// Applies the zero-ghost upwind `E·D_v1` stencil to the columns of a first core.
pub fn force_stencil_core1(core1: &DMatrix<f64>, e: f64, dv: f64) -> DMatrix<f64> {
    let (ep, em) = (pos(e), neg(e));
    let nv = core1.nrows();
    let h = 1.0 / (2.0 * dv);
    let mut out = DMatrix::zeros(nv, core1.ncols());
    for c in 0..core1.ncols() {
        let f = core1.column(c);
        let at = |k: isize| if k >= 0 && (k as usize) < nv { f[k as usize] } else { 0.0 };
        for k in 0..nv {
            let ki = k as isize;
            let fwd = -at(ki + 2) + 4.0 * at(ki + 1) - 3.0 * at(ki);
            let bwd = 3.0 * at(ki) - 4.0 * at(ki - 1) + at(ki - 2);
            out[(k, c)] = (ep * fwd - em * bwd) * h;
        }
    }
    out
}

/// `E_j·D_v1 f` as a single-term sum (empty when `E_j = 0`).
pub fn upwind_v1(f: &TensorTrain3, e_j: f64, v_grid: &VelocityGrid) -> TtSum {
    let mut sum = TtSum::empty();
    if e_j != 0.0 {
        let g = f.to_general();
        sum.push(with_core1(&g, force_stencil_core1(&g.core1, e_j, v_grid.dv)));
    }
    sum
}

/// The transport term `v1·D_x f − E·D_v1 f` at point `j`, grouped by the
/// neighbour whose cores 2 and 3 each group shares. Returns `(m, core1)`
/// pairs: the term is `Σ_m [core1, core2(f^m), core3(f^m)]`.
pub fn transport_by_neighbor(
    field: &[TensorTrain3],
    e_j: f64,
    j: usize,
    v_grid: &VelocityGrid,
    x_grid: &SpatialGrid,
) -> Vec<(usize, DMatrix<f64>)> {
    let v = v_grid.nodes();
    let h = 1.0 / (2.0 * x_grid.dx);
    let weights: [(isize, Vec<f64>); 5] = [
        (-2, v.iter().map(|&x| pos(x) * h).collect()),
        (-1, v.iter().map(|&x| -4.0 * pos(x) * h).collect()),
        (0, v.iter().map(|&x| 3.0 * x.abs() * h).collect()),
        (1, v.iter().map(|&x| -4.0 * neg(x) * h).collect()),
        (2, v.iter().map(|&x| neg(x) * h).collect()),
    ];
    let mut groups: Vec<(usize, Vec<f64>)> = Vec::with_capacity(5);
    for (o, w) in weights {
        let m = x_grid.wrap(j as isize + o);
        match groups.iter_mut().find(|(g, _)| *g == m) {
            Some((_, acc)) => acc.iter_mut().zip(&w).for_each(|(a, b)| *a += b),
            None => groups.push((m, w)),
        }
    }
    groups
        .into_iter()
        .map(|(m, w)| {
            let c1 = field[m].core1_eff();
            let mut out = c1.as_ref().clone();
            for (k, wk) in w.iter().enumerate() {
                out.row_mut(k).scale_mut(*wk);
            }
            if m == j && e_j != 0.0 {
                out -= force_stencil_core1(&c1, e_j, v_grid.dv);
            }
            (m, out)
        })
        .collect()
}

/// `J_j = −dv³ Σ v1 f^j`.
pub fn current(field: &[TensorTrain3], v_grid: &VelocityGrid) -> Vec<f64> {
    let v = nalgebra::DVector::from_vec(v_grid.nodes());
    let ones = nalgebra::DVector::from_element(v_grid.nv, 1.0);
    field
        .iter()
        .map(|f| {
            let c1 = f.core1_eff().transpose() * &v;
            let (r1, nv, r2) = f.core2.dims();
            let mut m = DMatrix::<f64>::zeros(r1, r2);
            for a2 in 0..r2 {
                for k in 0..nv {
                    for a1 in 0..r1 {
                        m[(a1, a2)] += f.core2.get(a1, k, a2);
                    }
                }
            }
            let z = f.core3_eff().as_ref() * &ones;
            -v_grid.cell_volume() * c1.dot(&(m * z))
        })
        .collect()
}

pub fn ampere_step(e: &[f64], j: &[f64], dt: f64) -> Vec<f64> {
    e.iter().zip(j).map(|(e, j)| e - dt * j).collect()
}

/// `E(0, x) = −(A/κ) sin(κx)` at the grid nodes.
pub fn gauss_initial_e(a: f64, kappa: f64, x_grid: &SpatialGrid) -> Result<Vec<f64>> {
    if kappa == 0.0 || !kappa.is_finite() {
        return Err(Error::Validation(format!("kappa must be non-zero, got {kappa}")));
    }
    Ok(x_grid.nodes().iter().map(|x| -(a / kappa) * (kappa * x).sin()).collect())
}

pub fn electric_energy(e: &[f64], dx: f64) -> f64 {
    0.5 * dx * e.iter().map(|x| x * x).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseTensor;
    use crate::fp_operator::{build_maxwellian, maxwellian_tt};
    use crate::tt::testutil::random_tt;
    use crate::tt::tt_concat_sum;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_upwind_x(full: &[DenseTensor], j: usize, v: &[f64], xg: &SpatialGrid) -> DenseTensor {
        let nv = v.len();
        let at = |o: isize| &full[xg.wrap(j as isize + o)];
        let mut out = DenseTensor::zeros(&[nv, nv, nv]);
        for a in 0..nv {
            let (vp, vm) = (v[a].max(0.0), (-v[a]).max(0.0));
            for b in 0..nv {
                for c in 0..nv {
                    let val = vp / (2.0 * xg.dx)
                        * (3.0 * at(0).at3(a, b, c) - 4.0 * at(-1).at3(a, b, c) + at(-2).at3(a, b, c))
                        - vm / (2.0 * xg.dx)
                            * (-at(2).at3(a, b, c) + 4.0 * at(1).at3(a, b, c) - 3.0 * at(0).at3(a, b, c));
                    out.set(&[a, b, c], val);
                }
            }
        }
        out
    }

    fn dense_upwind_v(full: &DenseTensor, e: f64, dv: f64) -> DenseTensor {
        let nv = full.shape()[0];
        let (ep, em) = (e.max(0.0), (-e).max(0.0));
        let mut out = DenseTensor::zeros(&[nv, nv, nv]);
        for b in 0..nv {
            for c in 0..nv {
                let f = |k: isize| if k < 0 || k >= nv as isize { 0.0 } else { full.at3(k as usize, b, c) };
                for a in 0..nv as isize {
                    let val = (ep * (-f(a + 2) + 4.0 * f(a + 1) - 3.0 * f(a)) - em * (3.0 * f(a) - 4.0 * f(a - 1) + f(a - 2)))
                        / (2.0 * dv);
                    out.set(&[a as usize, b, c], val);
                }
            }
        }
        out
    }

    fn grouped_full(groups: &[(usize, DMatrix<f64>)], field: &[TensorTrain3], nv: usize) -> DenseTensor {
        let mut out = DenseTensor::zeros(&[nv, nv, nv]);
        for (m, c1) in groups {
            out.axpy(1.0, &with_core1(&field[*m], c1.clone()).to_full().unwrap());
        }
        out
    }

    #[test]
    fn constant_field_annihilated() {
        let vg = VelocityGrid::new(-3.0, 3.0, 6).unwrap();
        let xg = SpatialGrid::new(1.0, 5).unwrap();
        let f = maxwellian_tt(&build_maxwellian(1.0, [0.0; 3], 1.0, &vg).unwrap());
        let field = vec![f; 5];
        for j in 0..5 {
            let s = upwind_x(&field, j, &vg, &xg).to_full(6).unwrap();
            assert!(s.norm() < 1e-13);
        }
    }

    #[test]
    fn linear_field_gives_inverse_dx() {
        let vg = VelocityGrid::new(0.5, 2.5, 2).unwrap(); // nodes 1, 2, all positive
        let xg = SpatialGrid::new(1.0, 10).unwrap();
        let base = TensorTrain3::rank_one(&[1.0, 1.0], &[1.0, 2.0], &[3.0, 1.0]).unwrap();
        let field: Vec<TensorTrain3> = (0..10).map(|j| base.scaled(j as f64)).collect();
        let j = 5;
        let got = upwind_x(&field, j, &vg, &xg).to_full(2).unwrap();
        let mut expected = base.scale_core_diag(1, &vg.nodes()).unwrap().to_full().unwrap();
        expected = expected.scaled(1.0 / xg.dx);
        assert!(got.rel_diff(&expected) < 1e-14);
        let full: Vec<DenseTensor> = field.iter().map(|f| f.to_full().unwrap()).collect();
        assert!(got.rel_diff(&dense_upwind_x(&full, j, &vg.nodes(), &xg)) < 1e-14);
    }

    #[test]
    fn force_stencil_cases() {
        let vg = VelocityGrid::new(-2.0, 2.0, 8).unwrap();
        let f = random_tt(&mut ChaCha8Rng::seed_from_u64(1), 8, 2, 2);
        assert!(upwind_v1(&f, 0.0, &vg).is_empty());
        let c = DMatrix::from_element(8, 1, 1.0);
        let out = force_stencil_core1(&c, 0.8, vg.dv);
        for k in 0..6 {
            assert_eq!(out[(k, 0)], 0.0);
        }
        let out = force_stencil_core1(&c, -0.8, vg.dv);
        for k in 2..8 {
            assert_eq!(out[(k, 0)], 0.0);
        }
    }

    #[test]
    fn rank_accounting() {
        let vg = VelocityGrid::new(-2.0, 2.0, 6).unwrap();
        let xg = SpatialGrid::new(1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let field: Vec<_> = (0..5).map(|_| random_tt(&mut rng, 6, 2, 3)).collect();
        let s = upwind_x(&field, 2, &vg, &xg);
        assert_eq!(s.len(), 6);
        assert_eq!(tt_concat_sum(&s).unwrap().ranks(), (12, 18));
        let grouped = transport_by_neighbor(&field, 0.3, 2, &vg, &xg);
        assert_eq!(grouped.len(), 5);
        assert!(grouped.iter().all(|(_, c)| c.ncols() == 2));
    }

    #[test]
    fn current_cases() {
        let vg = VelocityGrid::new(-6.0, 6.0, 48).unwrap();
        let even = maxwellian_tt(&build_maxwellian(1.0, [0.0; 3], 1.0, &vg).unwrap());
        assert!(current(&[even.clone()], &vg)[0].abs() < 1e-13);
        let drift = maxwellian_tt(&build_maxwellian(1.0, [0.2, 0.0, 0.0], 1.0, &vg).unwrap());
        let j = current(&[drift.clone()], &vg)[0];
        assert!((j + 0.2).abs() < 1e-6, "{j}");
        let j3 = current(&[drift.scaled(3.0)], &vg)[0];
        assert!((j3 - 3.0 * j).abs() < 1e-15);
    }

    #[test]
    fn ampere_and_gauss() {
        assert_eq!(ampere_step(&[0.3, -1.0], &[0.0, 0.0], 0.1), vec![0.3, -1.0]);
        assert_eq!(ampere_step(&[0.0], &[1.0], 0.5), vec![-0.5]);
        let e = [0.1, 0.2, -0.3];
        let j = [1.0, -2.0, 0.5];
        let out = ampere_step(&e, &j, 0.25);
        for i in 0..3 {
            assert_eq!(out[i], e[i] - 0.25 * j[i]);
        }

        // x = π is the node j = 16 when Nx = 32 on [0, 4π)... use a direct check
        let xg = SpatialGrid::new(4.0 * std::f64::consts::PI, 128).unwrap();
        let e0 = gauss_initial_e(0.001, 0.5, &xg).unwrap();
        for (x, e) in xg.nodes().iter().zip(&e0) {
            assert_eq!(*e, -0.002 * (0.5 * x).sin());
        }
        let at_pi = -(0.001 / 0.5) * (0.5 * std::f64::consts::PI).sin();
        assert!((at_pi + 0.002).abs() < 1e-18);
        assert!(gauss_initial_e(0.0, 0.5, &xg).unwrap().iter().all(|&x| x == 0.0));
        assert!(gauss_initial_e(0.001, 0.0, &xg).is_err());
        let xg2 = SpatialGrid::new(10.0 * std::f64::consts::PI, 128).unwrap();
        let e2 = gauss_initial_e(0.005, 0.2, &xg2).unwrap();
        let max = e2.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(max <= 0.025 && max > 0.025 * 0.999);
    }

    #[test]
    fn energy_cases() {
        assert_eq!(electric_energy(&[0.0; 4], 0.1), 0.0);
        assert!((electric_energy(&[1.0; 8], 0.25) - 1.0).abs() < 1e-15);
        let l = 4.0 * std::f64::consts::PI;
        let xg = SpatialGrid::new(l, 128).unwrap();
        let e = gauss_initial_e(0.001, 0.5, &xg).unwrap();
        let w = electric_energy(&e, xg.dx);
        assert!((w - std::f64::consts::PI * 4e-6).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn stencils_match_dense(seed in any::<u64>(), nx in 1usize..=6, nv in 2usize..=8, e in -1.0f64..1.0) {
            let vg = VelocityGrid::new(-2.0, 2.0, nv).unwrap();
            let xg = SpatialGrid::new(1.0, nx).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let field: Vec<_> = (0..nx).map(|_| random_tt(&mut rng, nv, 2, 2)).collect();
            let full: Vec<DenseTensor> = field.iter().map(|f| f.to_full().unwrap()).collect();
            for j in 0..nx {
                let dx = dense_upwind_x(&full, j, &vg.nodes(), &xg);
                let got = upwind_x(&field, j, &vg, &xg).to_full(nv).unwrap();
                prop_assert!(got.sub(&dx).norm() <= 1e-12 * dx.norm().max(1.0));
                let dvf = dense_upwind_v(&full[j], e, vg.dv);
                let got = upwind_v1(&field[j], e, &vg).to_full(nv).unwrap();
                prop_assert!(got.sub(&dvf).norm() <= 1e-12 * dvf.norm().max(1.0));
                let mut tr = dx.clone();
                tr.axpy(-1.0, &dvf);
                let grouped = grouped_full(&transport_by_neighbor(&field, e, j, &vg, &xg), &field, nv);
                prop_assert!(grouped.sub(&tr).norm() <= 1e-12 * tr.norm().max(1.0));
            }
            // conservative telescoping of the x stencil
            let mut total = DenseTensor::zeros(&[nv, nv, nv]);
            for j in 0..nx {
                total.axpy(1.0, &dense_upwind_x(&full, j, &vg.nodes(), &xg));
            }
            prop_assert!(total.norm() <= 1e-12 * full.iter().map(|f| f.norm()).sum::<f64>() / xg.dx);
        }
    }
}
