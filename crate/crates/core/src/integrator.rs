//! One IMEX time step: moment update, frozen Maxwellians, and the five
//! projector-splitting substeps swept over all spatial points in lockstep.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::domain::{SimConfig, SpatialGrid, VelocityGrid};
use crate::error::{Error, Result};
use crate::fp_operator::{
    apply_collision_tt, build_collision_tridiag, build_maxwellian, galerkin_matrices, GalerkinMatrices,
    TridiagonalMatrix,
};
use crate::moments::{macro_from_moments, moments_from_tt, update_moments, MacroState, MomentVector};
use crate::sylvester::{solve_matrix_sylvester, solve_tensor_sylvester, Orientation};
use crate::transport::{ampere_step, current, transport_by_neighbor, FieldState};
use crate::tt::{project_left, project_middle, project_right, Core2, Form, TensorTrain3, TtSum};

/// Which Maxwellian the collision operator relaxes towards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CollisionModel {
    /// Local Maxwellian from the updated moments at each point.
    Local,
    /// A prescribed Maxwellian, the same at every point.
    Fixed(MacroState),
    /// Constant weights with unit temperature: the Laplacian.
    Laplacian,
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    /// Form I at step boundaries.
    pub field: Vec<TensorTrain3>,
    /// Moment vectors advanced by the conservative moment update.
    pub moments: Vec<MomentVector>,
    pub macro_state: Vec<MacroState>,
    pub fields: FieldState,
    pub step_index: usize,
}

/// Collision matrices `J` and shifted matrices `T = I/3 − dt·η·J` of one point.
#[derive(Clone, Debug)]
pub struct StageOperators {
    pub j: [TridiagonalMatrix; 3],
    pub t: [TridiagonalMatrix; 3],
    pub dt: f64,
    pub eta: f64,
}

impl StageOperators {
    pub fn new(j: [TridiagonalMatrix; 3], dt: f64, eta: f64) -> Self {
        let t = [j[0].shifted(dt, eta), j[1].shifted(dt, eta), j[2].shifted(dt, eta)];
        Self { j, t, dt, eta }
    }

    pub fn from_maxwellian(m: &MacroState, grid: &VelocityGrid, dt: f64, eta: f64) -> Result<Self> {
        let mf = build_maxwellian(m.n, m.u, m.t, grid)?;
        let j = [
            build_collision_tridiag(&mf.m[0], m.t, grid.dv)?,
            build_collision_tridiag(&mf.m[1], m.t, grid.dv)?,
            build_collision_tridiag(&mf.m[2], m.t, grid.dv)?,
        ];
        Ok(Self::new(j, dt, eta))
    }

    pub fn laplacian(grid: &VelocityGrid, dt: f64, eta: f64) -> Result<Self> {
        let ones = vec![1.0; grid.nv];
        let j = build_collision_tridiag(&ones, 1.0, grid.dv)?;
        Ok(Self::new([j.clone(), j.clone(), j], dt, eta))
    }

    fn t_refs(&self) -> [&TridiagonalMatrix; 3] {
        [&self.t[0], &self.t[1], &self.t[2]]
    }

    fn j_refs(&self) -> [&TridiagonalMatrix; 3] {
        [&self.j[0], &self.j[1], &self.j[2]]
    }
}

/// Everything a step needs besides the state.
#[derive(Clone, Debug)]
pub struct Integrator {
    pub v_grid: VelocityGrid,
    pub x_grid: SpatialGrid,
    pub dt: f64,
    pub eta: f64,
    pub transport: bool,
    pub field_coupling: bool,
    pub collision: CollisionModel,
}

impl Integrator {
    pub fn from_config(cfg: &SimConfig) -> Self {
        use crate::domain::Case;
        let collision = match cfg.case {
            Case::HomogeneousFP => CollisionModel::Fixed(MacroState {
                n: 1.0,
                u: [0.0; 3],
                t: 1.0,
            }),
            Case::Heat => CollisionModel::Laplacian,
            _ => CollisionModel::Local,
        };
        Self {
            v_grid: cfg.v_grid.clone(),
            x_grid: cfg.x_grid.clone(),
            dt: cfg.dt,
            eta: cfg.eta,
            transport: cfg.case.has_transport(),
            field_coupling: cfg.case.has_field(),
            collision,
        }
    }

    /// State at `t = 0` from a field (brought to form I) and an electric field.
    pub fn initial_state(&self, field: Vec<TensorTrain3>, e: Vec<f64>) -> Result<SimState> {
        if field.len() != self.x_grid.nx || e.len() != self.x_grid.nx {
            return Err(Error::DimensionMismatch {
                op: "initial_state",
                detail: format!("{} trains, {} field values, Nx = {}", field.len(), e.len(), self.x_grid.nx),
            });
        }
        let field: Vec<TensorTrain3> = field.iter().map(|f| f.to_form_i()).collect();
        let moments: Vec<MomentVector> = field.iter().map(|f| moments_from_tt(f, &self.v_grid)).collect();
        let macro_state = macros(&moments, self.collision)?;
        let j = if self.field_coupling {
            current(&field, &self.v_grid)
        } else {
            vec![0.0; field.len()]
        };
        Ok(SimState {
            t: 0.0,
            field,
            moments,
            macro_state,
            fields: FieldState { e, j },
            step_index: 0,
        })
    }

    /// Macroscopic states the collision model relaxes towards.
    pub fn macro_states(&self, moments: &[MomentVector]) -> Result<Vec<MacroState>> {
        macros(moments, self.collision)
    }

    /// Per-point operators for the given macroscopic states.
    pub fn stage_operators(&self, macro_state: &[MacroState]) -> Result<Vec<StageOperators>> {
        match self.collision {
            CollisionModel::Local => macro_state
                .par_iter()
                .enumerate()
                .map(|(j, m)| {
                    StageOperators::from_maxwellian(m, &self.v_grid, self.dt, self.eta).map_err(|e| e.at_stage(j, 0))
                })
                .collect(),
            CollisionModel::Fixed(m) => {
                let ops = StageOperators::from_maxwellian(&m, &self.v_grid, self.dt, self.eta)?;
                Ok(vec![ops; macro_state.len()])
            }
            CollisionModel::Laplacian => {
                let ops = StageOperators::laplacian(&self.v_grid, self.dt, self.eta)?;
                Ok(vec![ops; macro_state.len()])
            }
        }
    }

    /// Right-hand side `f^j + alpha·Tr(f)^j` with neighbours read from `field`.
    pub fn build_rhs(&self, field: &[TensorTrain3], e: &[f64], j: usize, alpha: f64) -> TtSum {
        let e_j = if self.field_coupling { e[j] } else { 0.0 };
        build_rhs_k(field, e_j, j, alpha, self.transport, &self.v_grid, &self.x_grid)
    }

    /// Advances the state by one step.
    pub fn time_step(&self, state: &SimState) -> Result<SimState> {
        let dt = self.dt;
        let e = &state.fields.e;
        let moments = if self.transport {
            let e_used: Vec<f64> = if self.field_coupling {
                e.clone()
            } else {
                vec![0.0; e.len()]
            };
            update_moments(&state.moments, &state.field, &e_used, dt, &self.v_grid, &self.x_grid)
        } else {
            state.moments.clone()
        };
        let macro_state = macros(&moments, self.collision)?;
        let ops = self.stage_operators(&macro_state)?;

        let mut field = state.field.clone();
        for stage in 1..=5u8 {
            let prev = field;
            field = (0..prev.len())
                .into_par_iter()
                .map(|j| self.substep(stage, &prev, e, j, &ops[j]).map_err(|err| err.at_stage(j, stage)))
                .collect::<Result<Vec<_>>>()?;
        }

        let moments = match self.collision {
            CollisionModel::Local => moments,
            _ => field.iter().map(|f| moments_from_tt(f, &self.v_grid)).collect(),
        };
        let (e_new, j_new) = if self.field_coupling {
            let j = current(&field, &self.v_grid);
            (ampere_step(e, &j, dt), j)
        } else {
            (e.clone(), vec![0.0; field.len()])
        };
        Ok(SimState {
            t: state.t + dt,
            field,
            moments,
            macro_state,
            fields: FieldState { e: e_new, j: j_new },
            step_index: state.step_index + 1,
        })
    }

    fn substep(&self, stage: u8, field: &[TensorTrain3], e: &[f64], j: usize, ops: &StageOperators) -> Result<TensorTrain3> {
        let f = &field[j];
        if stage % 2 == 1 {
            let k = self.build_rhs(field, e, j, -self.dt);
            forward_substep(stage, f, &k, ops)
        } else {
            let mut rhs = self.build_rhs(field, e, j, self.dt);
            if self.eta != 0.0 {
                rhs.extend(apply_collision_tt(f, ops.j_refs())?.scaled(-self.dt * self.eta));
            }
            backward_substep(stage, f, &rhs)
        }
    }
}

fn macros(moments: &[MomentVector], model: CollisionModel) -> Result<Vec<MacroState>> {
    moments
        .iter()
        .enumerate()
        .map(|(j, u)| match model {
            CollisionModel::Local => macro_from_moments(u).map_err(|e| e.at_stage(j, 0)),
            _ => Ok(macro_from_moments(u).unwrap_or(MacroState {
                n: u.density(),
                u: [0.0; 3],
                t: 0.0,
            })),
        })
        .collect()
}

/// `K^j = f^j + alpha·(v1·D_x f − E_j·D_v1 f)^j` as a sum sharing cores with
/// the neighbours. The neighbour group `m = j` is folded into `f^j`.
pub fn build_rhs_k(
    field: &[TensorTrain3],
    e_j: f64,
    j: usize,
    alpha: f64,
    transport: bool,
    v_grid: &VelocityGrid,
    x_grid: &SpatialGrid,
) -> TtSum {
    let own = field[j].to_general();
    let mut sum = TtSum::empty();
    if !transport || alpha == 0.0 {
        sum.push(own);
        return sum;
    }
    let mut own = own;
    for (m, core1) in transport_by_neighbor(field, e_j, j, v_grid, x_grid) {
        if m == j {
            own.core1 += alpha * core1;
        } else {
            let g = field[m].to_general();
            sum.push(TensorTrain3 {
                core1: alpha * core1,
                ..g
            });
        }
    }
    let mut out = TtSum::empty();
    out.push(own);
    out.extend(sum);
    out
}

fn sum_project_right(k: &TtSum, q2: &Core2, q3: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut acc = DMatrix::zeros(q3.ncols(), q2.dims().0);
    for term in k.terms() {
        acc += project_right(term, q2, q3)?;
    }
    Ok(acc)
}

fn sum_project_middle(k: &TtSum, p1: &DMatrix<f64>, q3: &DMatrix<f64>) -> Result<Core2> {
    let mut acc: Option<Core2> = None;
    for term in k.terms() {
        let r = project_middle(term, p1, q3)?;
        match acc.as_mut() {
            None => acc = Some(r),
            Some(a) => a.as_mut_slice().iter_mut().zip(r.as_slice()).for_each(|(x, y)| *x += y),
        }
    }
    Ok(acc.unwrap_or_else(|| Core2::zeros(p1.ncols(), p1.nrows(), q3.nrows())))
}

fn sum_project_left(k: &TtSum, p1: &DMatrix<f64>, p2: &Core2) -> Result<DMatrix<f64>> {
    let mut acc = DMatrix::zeros(p2.dims().2, p1.nrows());
    for term in k.terms() {
        acc += project_left(term, p1, p2)?;
    }
    Ok(acc)
}

fn expect_form(f: &TensorTrain3, form: Form, stage: u8) -> Result<()> {
    if f.form != form {
        return Err(Error::Form(format!(
            "substep {stage} expects form {form:?}, found {:?}",
            f.form
        )));
    }
    Ok(())
}

/// Implicit substep 1, 3 or 5: the Galerkin projection of
/// `(I − dt·η·Q) f̃ = K` solved for the free core.
pub fn forward_substep(stage: u8, f: &TensorTrain3, k: &TtSum, ops: &StageOperators) -> Result<TensorTrain3> {
    let t = ops.t_refs();
    match stage {
        1 => {
            expect_form(f, Form::I, 1)?;
            let r = sum_project_right(k, &f.core2, &f.core3)?;
            let GalerkinMatrices::Stage1 { h } = galerkin_matrices(t, f, 1)? else {
                unreachable!("stage 1 matrices")
            };
            let c = solve_matrix_sylvester(t[0], &h, &r, Orientation::BigFirst)?;
            TensorTrain3 {
                core1: c,
                ..f.clone()
            }
            .orthogonalize_step(Form::II)
        }
        3 => {
            expect_form(f, Form::III, 3)?;
            let r = sum_project_middle(k, &f.core1, &f.core3)?;
            let GalerkinMatrices::Stage3 { g, h } = galerkin_matrices(t, f, 3)? else {
                unreachable!("stage 3 matrices")
            };
            let c = solve_tensor_sylvester(&g, t[1], &h, &r)?;
            TensorTrain3 {
                core2: c,
                ..f.clone()
            }
            .orthogonalize_step(Form::IV)
        }
        5 => {
            expect_form(f, Form::V, 5)?;
            let r = sum_project_left(k, &f.core1, &f.core2)?;
            let GalerkinMatrices::Stage5 { g } = galerkin_matrices(t, f, 5)? else {
                unreachable!("stage 5 matrices")
            };
            let c = solve_matrix_sylvester(t[2], &g, &r, Orientation::BigSecond)?;
            TensorTrain3 {
                core3: c,
                ..f.clone()
            }
            .orthogonalize_step(Form::I)
        }
        _ => Err(Error::Form(format!("substep {stage} is not a forward substep"))),
    }
}

/// Explicit substep 2 or 4: the small factor becomes the projection of the
/// given right-hand side (`f̃ + dt·Tr f̃ − dt·η·Q f̃`) onto the frozen frame.
pub fn backward_substep(stage: u8, f_tilde: &TensorTrain3, rhs: &TtSum) -> Result<TensorTrain3> {
    match stage {
        2 => {
            expect_form(f_tilde, Form::II, 2)?;
            let p1 = &f_tilde.core1;
            let s = p1.transpose() * sum_project_right(rhs, &f_tilde.core2, &f_tilde.core3)?;
            TensorTrain3 {
                s: Some(s),
                ..f_tilde.clone()
            }
            .orthogonalize_step(Form::III)
        }
        4 => {
            expect_form(f_tilde, Form::IV, 4)?;
            let l = sum_project_left(rhs, &f_tilde.core1, &f_tilde.core2)?;
            let s = l * f_tilde.core3.transpose();
            TensorTrain3 {
                s: Some(s),
                ..f_tilde.clone()
            }
            .orthogonalize_step(Form::V)
        }
        _ => Err(Error::Form(format!("substep {stage} is not a backward substep"))),
    }
}

/// Relative Frobenius distance of a field to a reference field.
pub fn field_rel_distance(a: &[TensorTrain3], b: &[TensorTrain3]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = crate::tt::tt_concat_sum(&TtSum::new(vec![x.to_general(), y.scaled(-1.0)])?)?.norm();
        num += d * d;
        den += y.norm().powi(2);
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::load_config;
    use crate::fp_operator::maxwellian_tt;
    use crate::init::{homogeneous_exact, initial_e, initial_field};
    use crate::tt::pad_to_rank;

    fn config(case: &str, nv: usize, nx: usize, rank: usize, eta: f64, dt: f64, vmax: f64) -> SimConfig {
        load_config(&format!(
            "eta = {eta}\ndt = {dt}\nt_end = 1\nr1 = {rank}\nr2 = {rank}\nnv = {nv}\nv_min = -{vmax}\nv_max = {vmax}\n\
             nx = {nx}\nl_x = 1\ncase = {case}\noutput_dir = out\nsnapshot_stride = 1\n"
        ))
        .unwrap()
    }

    fn uniform_maxwellian(cfg: &SimConfig, u1: f64) -> Vec<TensorTrain3> {
        let m = maxwellian_tt(&build_maxwellian(1.0, [u1, 0.0, 0.0], 1.0, &cfg.v_grid).unwrap());
        (0..cfg.x_grid.nx)
            .map(|_| pad_to_rank(&m, cfg.rank, 1e-12, 7).unwrap())
            .collect()
    }

    #[test]
    fn rhs_trivial_cases() {
        let cfg = config("InhomogeneousFP", 8, 4, 2, 1.0, 0.01, 4.0);
        let field = initial_field(&cfg).unwrap();
        let ig = Integrator::from_config(&cfg);
        let k = ig.build_rhs(&field, &[0.0; 4], 1, 0.0);
        assert_eq!(k.len(), 1);
        assert!(k.to_full(8).unwrap().rel_diff(&field[1].to_full().unwrap()) < 1e-15);

        let uniform = vec![field[0].clone(); 4];
        let k = ig.build_rhs(&uniform, &[0.0; 4], 2, -0.01);
        assert!(k.to_full(8).unwrap().rel_diff(&uniform[2].to_full().unwrap()) < 1e-13);
    }

    #[test]
    fn forward_identity_without_collisions() {
        let cfg = config("HomogeneousFP", 8, 1, 2, 0.0, 0.1, 4.0);
        let f = initial_field(&cfg).unwrap().remove(0);
        let ops = Integrator::from_config(&cfg).stage_operators(&[MacroState { n: 1.0, u: [0.0; 3], t: 1.0 }]).unwrap();
        let mut k = TtSum::empty();
        k.push(f.clone());
        let out = forward_substep(1, &f, &k, &ops[0]).unwrap();
        assert_eq!(out.form, Form::II);
        assert!(out.rel_distance(&f).unwrap() < 1e-14);
    }

    #[test]
    fn backward_without_change_keeps_s() {
        let cfg = config("HomogeneousFP", 8, 1, 2, 1.0, 0.1, 4.0);
        let f = initial_field(&cfg).unwrap().remove(0).orthogonalize_step(Form::II).unwrap();
        let mut rhs = TtSum::empty();
        rhs.push(f.to_general());
        let out = backward_substep(2, &f, &rhs).unwrap();
        assert_eq!(out.form, Form::III);
        assert!(out.rel_distance(&f).unwrap() < 1e-14);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        for eta in [0.0, 1.0, 1e6] {
            for dt in [1e-3, 1e-1] {
                let cfg = config("InhomogeneousFP", 32, 4, 2, eta, dt, 8.0);
                let ig = Integrator::from_config(&cfg);
                let field = uniform_maxwellian(&cfg, 0.3);
                let s0 = ig.initial_state(field, vec![0.0; 4]).unwrap();
                let s1 = ig.time_step(&s0).unwrap();
                let d = field_rel_distance(&s1.field, &s0.field).unwrap();
                // the explicit collision term carries the rounding of Q f times dt·η
                let j_max = ig.stage_operators(&s1.macro_state).unwrap()[0].j[0].max_abs();
                let floor = 10.0 * f64::EPSILON * dt * eta * j_max;
                assert!(d < 1e-10_f64.max(floor), "eta {eta} dt {dt}: {d:e}");
                assert!((s1.t - dt).abs() < 1e-18);
                assert!(s1.field.iter().all(|f| f.form == Form::I));
            }
        }
    }

    fn homogeneous_error(nv: usize, dt: f64) -> f64 {
        let cfg = config("HomogeneousFP", nv, 1, 5, 1.0, dt, 8.0);
        let ig = Integrator::from_config(&cfg);
        let s0 = ig.initial_state(initial_field(&cfg).unwrap(), initial_e(&cfg).unwrap()).unwrap();
        let s1 = ig.time_step(&s0).unwrap();
        let exact = homogeneous_exact(dt, &cfg.v_grid).unwrap();
        s1.field[0].rel_distance(&exact).unwrap()
    }

    #[test]
    fn homogeneous_one_step_error() {
        let dt = 1.0 / 1024.0;
        let fine = homogeneous_error(256, dt);
        assert!(fine < 1e-5, "{fine:e}");
        // at Nv = 64 the dt·dv² velocity error dominates the local error
        let coarse = homogeneous_error(64, dt);
        let ratio = coarse / homogeneous_error(64, dt / 4.0);
        assert!(coarse < 3e-5 && (3.5..4.5).contains(&ratio), "{coarse:e} {ratio}");
    }
}
