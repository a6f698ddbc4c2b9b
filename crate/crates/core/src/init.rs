//! Initial distributions and exact reference solutions of the experiments.

use std::f64::consts::PI;

use crate::domain::{Case, SimConfig, VelocityGrid};
use crate::error::Result;
use crate::fp_operator::{build_maxwellian, maxwellian_tt};
use crate::transport::gauss_initial_e;
use crate::tt::{pad_to_rank, TensorTrain3};

/// Temperature of the homogeneous Fokker–Planck solution at time `t`.
pub fn homogeneous_temperature(t: f64) -> f64 {
    1.0 - (-(1.0 + 2.0 * t)).exp()
}

/// Exact homogeneous Fokker–Planck solution on the grid.
pub fn homogeneous_exact(t: f64, grid: &VelocityGrid) -> Result<TensorTrain3> {
    Ok(maxwellian_tt(&build_maxwellian(1.0, [0.0; 3], homogeneous_temperature(t), grid)?))
}

/// Free-space heat kernel solution `∂t f = Δf` started from a unit-mass
/// Gaussian of variance `var0`.
pub fn heat_exact(t: f64, var0: f64, grid: &VelocityGrid) -> Result<TensorTrain3> {
    Ok(maxwellian_tt(&build_maxwellian(1.0, [0.0; 3], var0 + 2.0 * t, grid)?))
}

fn gaussian(v: &[f64], center: f64) -> Vec<f64> {
    v.iter().map(|x| (-(x - center) * (x - center) / 2.0).exp()).collect()
}

/// Unpadded (rank-1) initial train at spatial node `x`.
pub fn initial_point(cfg: &SimConfig, x: f64) -> Result<TensorTrain3> {
    let g = &cfg.v_grid;
    match cfg.case {
        Case::HomogeneousFP => homogeneous_exact(0.0, g),
        Case::Heat => heat_exact(0.0, cfg.param_or("var0", 1.0), g),
        Case::InhomogeneousFP => {
            let n = (2.0 + (2.0 * PI * x).sin()) / 3.0;
            let t = (3.0 + (2.0 * PI * x).cos()) / 4.0;
            let u1 = cfg.param_or("u1", 0.2);
            Ok(maxwellian_tt(&build_maxwellian(n, [u1, 0.0, 0.0], t, g)?))
        }
        Case::LandauDamping => {
            let n = 1.0 + cfg.amplitude() * (cfg.kappa() * x).cos();
            Ok(maxwellian_tt(&build_maxwellian(n, [0.0; 3], 1.0, g)?))
        }
        Case::TwoStream => {
            let v = g.nodes();
            let vs = cfg.param_or("v_star", 2.4);
            let amp = (1.0 + cfg.amplitude() * (cfg.kappa() * x).cos()) / (2.0 * (2.0 * PI).powf(1.5));
            let plus = gaussian(&v, vs);
            let minus = gaussian(&v, -vs);
            let c1: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| amp * (a + b)).collect();
            let m = gaussian(&v, 0.0);
            TensorTrain3::rank_one(&c1, &m, &m)
        }
    }
}

/// Initial field over all spatial nodes, padded to the configured rank.
pub fn initial_field(cfg: &SimConfig) -> Result<Vec<TensorTrain3>> {
    cfg.x_grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = initial_point(cfg, x)?;
            pad_to_rank(&f, cfg.rank, cfg.pad_eps, cfg.seed.wrapping_add(j as u64))
        })
        .collect()
}

/// Initial electric field (zero for cases without one).
pub fn initial_e(cfg: &SimConfig) -> Result<Vec<f64>> {
    if cfg.case.has_field() {
        gauss_initial_e(cfg.amplitude(), cfg.kappa(), &cfg.x_grid)
    } else {
        Ok(vec![0.0; cfg.x_grid.nx])
    }
}

/// `max|E(0, x)|` used by the automatic time step.
pub fn initial_field_max(cfg: &SimConfig) -> f64 {
    if cfg.case.has_field() {
        (cfg.amplitude() / cfg.kappa()).abs()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::load_config;
    use crate::moments::{macro_from_moments, moments_from_tt};
    use crate::tt::effective_rank;

    fn cfg(case: &str, extra: &str) -> SimConfig {
        let text = format!(
            "eta = 1\ndt = 0.01\nt_end = 0.1\nr1 = 3\nr2 = 2\nnv = 32\nv_min = -8\nv_max = 8\nnx = 8\nl_x = 1\n\
             case = {case}\noutput_dir = out\nsnapshot_stride = 1\n{extra}"
        );
        load_config(&text).unwrap()
    }

    #[test]
    fn homogeneous_temperature_limits() {
        assert!((homogeneous_temperature(0.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-16);
        assert!((homogeneous_temperature(40.0) - 1.0).abs() < 1e-16);
    }

    #[test]
    fn inhomogeneous_macro_profile() {
        let c = cfg("InhomogeneousFP", "");
        let field = initial_field(&c).unwrap();
        for (f, x) in field.iter().zip(c.x_grid.nodes()) {
            assert_eq!(f.ranks(), (3, 2));
            let m = macro_from_moments(&moments_from_tt(f, &c.v_grid)).unwrap();
            let n = (2.0 + (2.0 * PI * x).sin()) / 3.0;
            let t = (3.0 + (2.0 * PI * x).cos()) / 4.0;
            assert!((m.n - n).abs() < 1e-6 * n, "{} {n}", m.n);
            assert!((m.u[0] - 0.2).abs() < 1e-6);
            assert!((m.t - t).abs() < 1e-6);
        }
    }

    #[test]
    fn two_stream_is_separable() {
        let c = cfg("TwoStream", "[case.TwoStream]\nA = 0.005\nkappa = 0.2\n");
        let field = initial_field(&c).unwrap();
        assert_eq!(effective_rank(&field[0], 1e-5).unwrap(), (1, 1));
        let m = moments_from_tt(&initial_point(&c, 0.0).unwrap(), &c.v_grid);
        assert!((m.0[0] - 1.005).abs() < 1e-6);
    }

    #[test]
    fn e_initialisation() {
        let c = cfg("LandauDamping", "");
        assert!((initial_field_max(&c) - 0.002).abs() < 1e-18);
        assert_eq!(initial_e(&c).unwrap().len(), 8);
        let h = cfg("HomogeneousFP", "");
        assert!(initial_e(&h).unwrap().iter().all(|&e| e == 0.0));
    }
}
