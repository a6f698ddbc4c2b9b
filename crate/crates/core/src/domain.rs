//! Grids, experiment configuration and the config document parser.
//!
//! The config document is a flat `key = value` text file. `#` starts a
//! comment, and `[case.<name>]` sections carry named real parameters for one
//! experiment; only the section matching the selected `case` is used.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Uniform cell-centred grid on `[v_min, v_max]`, shared by all three
/// velocity directions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VelocityGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub nv: usize,
    pub dv: f64,
}

impl VelocityGrid {
    pub fn new(v_min: f64, v_max: f64, nv: usize) -> Result<Self> {
        if nv == 0 {
            return Err(Error::Validation("nv must be positive".into()));
        }
        if !(v_max > v_min) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::Validation(format!(
                "velocity domain [{v_min}, {v_max}] is empty"
            )));
        }
        let dv = (v_max - v_min) / nv as f64;
        Ok(Self { v_min, v_max, nv, dv })
    }

    /// Node `k` (zero-based): `v_min + (k + 1/2) dv`.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.v_min + (k as f64 + 0.5) * self.dv
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nv).map(|k| self.node(k)).collect()
    }

    /// Largest |v| over the truncated domain (endpoints, not nodes).
    pub fn max_abs(&self) -> f64 {
        self.v_min.abs().max(self.v_max.abs())
    }

    /// Midpoint quadrature weight of one velocity cell, `dv^3`.
    pub fn cell_volume(&self) -> f64 {
        self.dv * self.dv * self.dv
    }
}

/// Periodic cell-centred grid on `[0, L_x]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialGrid {
    pub l_x: f64,
    pub nx: usize,
    pub dx: f64,
}

impl SpatialGrid {
    pub fn new(l_x: f64, nx: usize) -> Result<Self> {
        if nx == 0 {
            return Err(Error::Validation("nx must be positive".into()));
        }
        if !(l_x > 0.0) || !l_x.is_finite() {
            return Err(Error::Validation(format!("l_x = {l_x} must be positive")));
        }
        Ok(Self {
            l_x,
            nx,
            dx: l_x / nx as f64,
        })
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.node(j)).collect()
    }

    /// Periodic index map.
    #[inline]
    pub fn wrap(&self, j: isize) -> usize {
        j.rem_euclid(self.nx as isize) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Case {
    HomogeneousFP,
    InhomogeneousFP,
    LandauDamping,
    TwoStream,
    Heat,
}

impl Case {
    fn normalized(s: &str) -> String {
        s.chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect()
    }

    /// Names accepted in the `[case.<name>]` section.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            Case::HomogeneousFP => &[],
            Case::Heat => &["var0"],
            Case::InhomogeneousFP => &["u1"],
            Case::LandauDamping => &["A", "kappa"],
            Case::TwoStream => &["A", "kappa", "v_star"],
        }
    }

    /// Cases with a self-consistent electric field (Vlasov-Ampère).
    pub fn has_field(self) -> bool {
        matches!(self, Case::LandauDamping | Case::TwoStream)
    }

    /// Cases with spatial transport.
    pub fn has_transport(self) -> bool {
        matches!(
            self,
            Case::InhomogeneousFP | Case::LandauDamping | Case::TwoStream
        )
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match Self::normalized(s).as_str() {
            "homogeneousfp" | "homogeneous" => Ok(Case::HomogeneousFP),
            "inhomogeneousfp" | "inhomogeneous" => Ok(Case::InhomogeneousFP),
            "landaudamping" | "landau" => Ok(Case::LandauDamping),
            "twostream" => Ok(Case::TwoStream),
            "heat" => Ok(Case::Heat),
            _ => Err(Error::Validation(format!("unknown case '{s}'"))),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Full description of one experiment.
#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    pub eta: f64,
    pub dt: f64,
    /// `dt` was derived from the CFL-type rule rather than given.
    pub dt_auto: bool,
    pub t_end: f64,
    pub rank: (usize, usize),
    pub v_grid: VelocityGrid,
    pub x_grid: SpatialGrid,
    pub case: Case,
    pub case_params: BTreeMap<String, f64>,
    pub output_dir: PathBuf,
    pub snapshot_stride: usize,
    /// Effective-rank threshold reported in diagnostics.
    pub delta: f64,
    /// Seed of the rank-padding completion.
    pub seed: u64,
    /// Relative size of padded singular values.
    pub pad_eps: f64,
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.case_params.get(name).copied()
    }

    pub fn param_or(&self, name: &str, default: f64) -> f64 {
        self.param(name).unwrap_or(default)
    }

    /// Number of steps needed to reach `t_end` (the last step is not shortened).
    pub fn n_steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (r1, r2) = self.rank;
        let nv = self.v_grid.nv;
        if r1 == 0 || r2 == 0 {
            return Err(Error::Validation("ranks must be positive".into()));
        }
        if r1 > nv || r2 > nv {
            return Err(Error::Validation(format!(
                "rank exceeds Nv: ({r1}, {r2}) with Nv = {nv}"
            )));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Validation("eta must be non-negative".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Validation("dt must be positive".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Validation("t_end must be positive".into()));
        }
        if self.dt > self.t_end * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "dt = {} exceeds t_end = {}",
                self.dt, self.t_end
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Validation("snapshot_stride must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Validation("delta must lie in (0, 1)".into()));
        }
        if self.case.has_field() {
            let kappa = self.kappa();
            if kappa == 0.0 {
                return Err(Error::Validation("kappa must be non-zero".into()));
            }
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        let default = match self.case {
            Case::TwoStream => 0.2,
            _ => 0.5,
        };
        self.param_or("kappa", default)
    }

    pub fn amplitude(&self) -> f64 {
        let default = match self.case {
            Case::TwoStream => 0.005,
            _ => 0.001,
        };
        self.param_or("A", default)
    }
}

/// Time step `0.1 min(dx / max|v1|, dv / max|E|)`; a zero field removes the
/// second bound.
pub fn cfl_time_step(cfg: &SimConfig, max_e: f64) -> f64 {
    let transport = cfg.x_grid.dx / cfg.v_grid.max_abs();
    let force = if max_e > 0.0 {
        cfg.v_grid.dv / max_e
    } else {
        f64::INFINITY
    };
    0.1 * transport.min(force)
}

const REQUIRED: &[&str] = &[
    "eta",
    "dt",
    "t_end",
    "r1",
    "r2",
    "nv",
    "v_min",
    "v_max",
    "nx",
    "l_x",
    "case",
    "output_dir",
    "snapshot_stride",
];
const OPTIONAL: &[&str] = &["delta", "seed", "pad_eps", "threads"];

struct Entry {
    value: String,
    line: usize,
}

/// Parses and validates a config document.
pub fn load_config(text: &str) -> Result<SimConfig> {
    let mut top: BTreeMap<String, Entry> = BTreeMap::new();
    let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut current: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::ConfigParse {
                line,
                message: format!("unterminated section header '{content}'"),
            })?;
            let name = name.trim();
            let case = name.strip_prefix("case.").ok_or_else(|| Error::ConfigParse {
                line,
                message: format!("unknown section '[{name}]', expected [case.<name>]"),
            })?;
            let key = Case::normalized(case);
            sections.entry(key.clone()).or_default();
            current = Some(key);
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            message: format!("expected 'key = value', found '{content}'"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line,
                message: "empty key".into(),
            });
        }
        let table = match &current {
            Some(section) => sections.get_mut(section).expect("section inserted"),
            None => &mut top,
        };
        if table.contains_key(&key) {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
        table.insert(key, Entry { value, line });
    }

    for key in top.keys() {
        if !REQUIRED.contains(&key.as_str()) && !OPTIONAL.contains(&key.as_str()) {
            let line = top[key].line;
            return Err(Error::ConfigParse {
                line,
                message: format!("unknown key '{key}'"),
            });
        }
    }
    for key in REQUIRED {
        if !top.contains_key(*key) {
            return Err(Error::Validation(format!("missing required key '{key}'")));
        }
    }

    let case: Case = top["case"].value.parse()?;
    let mut case_params = BTreeMap::new();
    if let Some(section) = sections.get(&Case::normalized(&case.to_string())) {
        for (k, e) in section {
            if !case.parameters().contains(&k.as_str()) {
                return Err(Error::ConfigParse {
                    line: e.line,
                    message: format!("unknown parameter '{k}' for case {case}, expected one of {:?}", case.parameters()),
                });
            }
            case_params.insert(k.clone(), parse_num::<f64>(e, k)?);
        }
    }

    let v_grid = VelocityGrid::new(
        parse_num(&top["v_min"], "v_min")?,
        parse_num(&top["v_max"], "v_max")?,
        parse_num(&top["nv"], "nv")?,
    )?;
    let x_grid = SpatialGrid::new(
        parse_num(&top["l_x"], "l_x")?,
        parse_num(&top["nx"], "nx")?,
    )?;

    let dt_entry = &top["dt"];
    let dt_auto = dt_entry.value.eq_ignore_ascii_case("auto");
    let dt = if dt_auto { 0.0 } else { parse_num(dt_entry, "dt")? };

    let opt = |key: &str| top.get(key);
    let mut cfg = SimConfig {
        eta: parse_num(&top["eta"], "eta")?,
        dt,
        dt_auto,
        t_end: parse_num(&top["t_end"], "t_end")?,
        rank: (
            parse_num(&top["r1"], "r1")?,
            parse_num(&top["r2"], "r2")?,
        ),
        v_grid,
        x_grid,
        case,
        case_params,
        output_dir: PathBuf::from(&top["output_dir"].value),
        snapshot_stride: parse_num(&top["snapshot_stride"], "snapshot_stride")?,
        delta: opt("delta").map(|e| parse_num(e, "delta")).transpose()?.unwrap_or(1e-5),
        seed: opt("seed").map(|e| parse_num(e, "seed")).transpose()?.unwrap_or(0),
        pad_eps: opt("pad_eps")
            .map(|e| parse_num(e, "pad_eps"))
            .transpose()?
            .unwrap_or(1e-12),
        threads: opt("threads").map(|e| parse_num(e, "threads")).transpose()?,
    };
    if dt_auto {
        let max_e = crate::init::initial_field_max(&cfg);
        cfg.dt = cfl_time_step(&cfg, max_e);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_num<T: FromStr>(entry: &Entry, key: &str) -> Result<T> {
    entry.value.parse().map_err(|_| Error::ConfigParse {
        line: entry.line,
        message: format!("cannot parse value '{}' for '{key}'", entry.value),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(extra: &str) -> String {
        format!(
            "# test\neta = 1\ndt = 0.001\nt_end = 0.1\nr1 = 5\nr2 = 5\nnv = 64\n\
             v_min = -6\nv_max = 6\nnx = 64\nl_x = 1\ncase = InhomogeneousFP\n\
             output_dir = out/test\nsnapshot_stride = 10\n{extra}"
        )
    }

    #[test]
    fn velocity_spacing_closed_form() {
        let cfg = load_config(&doc("")).unwrap();
        assert_eq!(cfg.v_grid.dv, 0.1875);
        assert_eq!(cfg.v_grid.nv, 64);
    }

    #[test]
    fn inhomogeneous_setup_fields() {
        let cfg = load_config(&doc("")).unwrap();
        assert_eq!(cfg.x_grid.nx, 64);
        assert_eq!(cfg.v_grid.v_min, -6.0);
        assert_eq!(cfg.v_grid.v_max, 6.0);
        assert_eq!(cfg.eta, 1.0);
        assert_eq!(cfg.dt, 0.001);
        assert_eq!(cfg.rank, (5, 5));
        assert_eq!(cfg.case, Case::InhomogeneousFP);
        assert_eq!(cfg.n_steps(), 100);
    }

    #[test]
    fn rank_above_nv_rejected() {
        let text = doc("").replace("r1 = 5", "r1 = 100");
        let err = load_config(&text).unwrap_err().to_string();
        assert!(err.contains("rank exceeds Nv"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let text = doc("bogus line without equals\n");
        match load_config(&text) {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dt_above_t_end_rejected() {
        let text = doc("").replace("dt = 0.001", "dt = 0.5");
        assert!(load_config(&text).is_err());
    }

    #[test]
    fn case_section_selected() {
        let text = doc("[case.landau_damping]\nA = 0.5\n[case.inhomogeneous_fp]\nu1 = 0.3\n");
        let cfg = load_config(&text).unwrap();
        assert_eq!(cfg.param("u1"), Some(0.3));
        assert_eq!(cfg.param("A"), None);
        let stray = doc("[case.inhomogeneous_fp]\nu1 = 0.3\npad_eps = 0\n");
        assert!(matches!(load_config(&stray), Err(Error::ConfigParse { line: 17, .. })));
    }

    #[test]
    fn node_formula_exact() {
        let g = VelocityGrid::new(-8.0, 8.0, 64).unwrap();
        for k in 0..64 {
            assert_eq!(g.node(k), -8.0 + (k as f64 + 0.5) * 0.25);
        }
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn periodic_wrap() {
        let g = SpatialGrid::new(1.0, 7).unwrap();
        for j in -20isize..20 {
            assert_eq!(g.wrap(j + 7), g.wrap(j));
            assert!(g.wrap(j) < 7);
        }
        assert_eq!(g.wrap(-1), 6);
    }

    fn landau_cfg(nx: usize, l_x: f64, nv: usize) -> SimConfig {
        let text = format!(
            "eta = 0\ndt = 0.001\nt_end = 1\nr1 = 5\nr2 = 5\nnv = {nv}\nv_min = -9\nv_max = 9\n\
             nx = {nx}\nl_x = {l_x}\ncase = LandauDamping\noutput_dir = out\nsnapshot_stride = 1\n"
        );
        load_config(&text).unwrap()
    }

    #[test]
    fn cfl_landau_reference_value() {
        let cfg = landau_cfg(128, 4.0 * std::f64::consts::PI, 128);
        let dt = cfl_time_step(&cfg, 0.002);
        let expected = 0.1 * (4.0 * std::f64::consts::PI / 128.0 / 9.0);
        assert!((dt - expected).abs() < 1e-15);
        assert!((dt - 0.0010908).abs() < 1e-7);
    }

    #[test]
    fn cfl_field_free_limit() {
        let cfg = landau_cfg(128, 4.0 * std::f64::consts::PI, 128);
        assert_eq!(cfl_time_step(&cfg, 0.0), 0.1 * cfg.x_grid.dx / 9.0);
    }

    #[test]
    fn cfl_two_stream_direct_formula() {
        let cfg = landau_cfg(128, 10.0 * std::f64::consts::PI, 128);
        // dx = 10π/128 = 0.245437, dv = 18/128 = 0.140625
        let by_hand = 0.1 * f64::min(0.245_436_926_061_702_6 / 9.0, 0.140625 / 0.025);
        assert!((cfl_time_step(&cfg, 0.025) - by_hand).abs() < 1e-15);
        assert!((by_hand - 0.002_727_076_956_241_14).abs() < 1e-15);
    }

    #[test]
    fn auto_time_step_uses_initial_field() {
        let text = "eta = 0\ndt = auto\nt_end = 1\nr1 = 5\nr2 = 5\nnv = 128\nv_min = -9\nv_max = 9\n\
                    nx = 128\nl_x = 12.566370614359172\ncase = LandauDamping\noutput_dir = out\nsnapshot_stride = 1\n";
        let cfg = load_config(text).unwrap();
        assert!(cfg.dt_auto);
        assert!((cfg.dt - 0.00109083).abs() < 1e-7, "{}", cfg.dt);
    }
}
