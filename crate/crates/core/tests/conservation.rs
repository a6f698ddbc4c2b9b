use ttkinetic::domain::load_config;
use ttkinetic::experiments::{diagnostics, simulate};

// Drift of the carried mass. The low-rank f itself is not mass-conserving
// under truncation and is not checked here.
fn mass_drift(case: &str, eta: f64, extra: &str) -> f64 {
    let cfg = load_config(&format!(
        "eta = {eta}\ndt = 0.001\nt_end = 0.1\nr1 = 3\nr2 = 3\nnv = 16\nv_min = -9\nv_max = 9\nnx = 8\nl_x = 1\n\
         case = {case}\noutput_dir = unused\nsnapshot_stride = 1\n{extra}"
    ))
    .unwrap();
    let mut m0 = None;
    let mut carried = 0.0f64;
    let last = simulate(&cfg, |s, _| {
        let row = diagnostics(&cfg, s, 0.0)?;
        let m = *m0.get_or_insert(row.total_mass);
        carried = carried.max((row.total_mass - m).abs() / m);
        Ok(())
    })
    .unwrap();
    assert_eq!(last.step_index, 100);
    carried
}

#[test]
fn inhomogeneous_mass_over_100_steps() {
    for eta in [0.0, 1.0, 1e4] {
        let carried = mass_drift("InhomogeneousFP", eta, "");
        assert!(carried <= 1e-11, "eta {eta}: {carried}");
    }
}

#[test]
fn landau_mass_over_100_steps() {
    let carried = mass_drift("LandauDamping", 1.0, "[case.LandauDamping]\nA = 0.05\nkappa = 6.283185307179586\n");
    assert!(carried <= 1e-11, "{carried}");
}
