//! Run configuration: a TOML file whose keys are read as flat dotted paths.
//!
//! ```toml
//! [geometry]
//! target_h = 0.03
//! [gamma]
//! preset = "medium"
//! [sigma]
//! case = "case2"
//! [noise]
//! alpha_percent = 5.0
//! eig_floor = 1e-5
//! ```
//!
//! The noise stage runs only when the file has at least one `noise.*` key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::export::ExportFormat;
use crate::fem::{SolverKind, SolverOptions};
use crate::forward::{TestCaseConductivity, DEFAULT_EPS_D};
use crate::mesh::{BoundarySpec, GammaPreset};
use crate::metrics::{SweepConfig, DATA_REFINEMENT_RATIO};
use crate::noise::{NoiseSpec, DEFAULT_EIG_FLOOR, DEFAULT_SEED};
use crate::recon::UnwrapMode;

const KEYS: [&str; 19] = [
    "geometry.target_h",
    "geometry.data_h",
    "geometry.refinements",
    "gamma.preset",
    "gamma.arcs",
    "sigma.case",
    "sigma.value",
    "noise.alpha_percent",
    "noise.seed",
    "noise.eig_floor",
    "recon.eps_d",
    "recon.theta_unwrap",
    "recon.theta_intervals",
    "solver.rel_tol",
    "solver.max_iter",
    "solver.method",
    "output.dir",
    "output.formats",
    "output.fields",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub target_h: f64,
    pub data_h: f64,
    pub refinements: usize,
    pub gamma_name: String,
    pub gamma: BoundarySpec,
    pub sigma: TestCaseConductivity,
    /// `None` when the file has no `noise.*` key.
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    pub eps_d: f64,
    pub unwrap: UnwrapMode,
    pub solver: SolverOptions,
    pub output_dir: PathBuf,
    pub formats: Vec<ExportFormat>,
    /// Whether `run` writes nodal fields in addition to tables.
    pub write_fields: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target_h: 0.03,
            data_h: 0.03 / DATA_REFINEMENT_RATIO,
            refinements: 0,
            gamma_name: GammaPreset::Large.name().into(),
            gamma: GammaPreset::Large.spec(),
            sigma: TestCaseConductivity::Case1,
            noise: None,
            seed: DEFAULT_SEED,
            eps_d: DEFAULT_EPS_D,
            unwrap: UnwrapMode::Auto,
            solver: SolverOptions::default(),
            output_dir: PathBuf::from("out"),
            formats: vec![ExportFormat::Csv, ExportFormat::VtkLegacy],
            write_fields: true,
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(key, "expected a number")),
    }
}

fn uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::config(key, "expected a non-negative integer")),
    }
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::config(key, "expected a string"))
}

fn pairs(key: &str, v: &Value) -> Result<Vec<(f64, f64)>> {
    let arr = v.as_array().ok_or_else(|| Error::config(key, "expected a list of [start, end] pairs"))?;
    arr.iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([a, b]) => Ok((float(key, a)?, float(key, b)?)),
            _ => Err(Error::config(key, "expected a list of [start, end] pairs")),
        })
        .collect()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::config("<file>", e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        if let Some(k) = flat.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::config(k.clone(), "unknown key"));
        }
        let mut c = RunConfig::default();
        let get = |k: &str| flat.get(k);

        if let Some(v) = get("geometry.target_h") {
            c.target_h = float("geometry.target_h", v)?;
        }
        if !(c.target_h > 0.0 && c.target_h < 1.0) {
            return Err(Error::config("geometry.target_h", "must lie in (0, 1)"));
        }
        c.data_h = match get("geometry.data_h") {
            Some(v) => float("geometry.data_h", v)?,
            None => c.target_h / DATA_REFINEMENT_RATIO,
        };
        if !(c.data_h > 0.0 && c.data_h < c.target_h) {
            return Err(Error::config("geometry.data_h", "must be positive and smaller than geometry.target_h"));
        }
        if let Some(v) = get("geometry.refinements") {
            c.refinements = uint("geometry.refinements", v)? as usize;
            if c.refinements > 3 {
                return Err(Error::config("geometry.refinements", "at most 3 refinements"));
            }
        }

        match (get("gamma.preset"), get("gamma.arcs")) {
            (Some(_), Some(_)) => {
                return Err(Error::config("gamma.arcs", "give either gamma.preset or gamma.arcs"))
            }
            (Some(v), None) => {
                let name = string("gamma.preset", v)?;
                let preset = GammaPreset::from_name(name)
                    .ok_or_else(|| Error::config("gamma.preset", format!("unknown preset `{name}`")))?;
                c.gamma_name = preset.name().into();
                c.gamma = preset.spec();
            }
            (None, Some(v)) => {
                c.gamma = BoundarySpec::new(pairs("gamma.arcs", v)?)
                    .map_err(|e| Error::config("gamma.arcs", e.to_string()))?;
                c.gamma_name = "custom".into();
            }
            (None, None) => {}
        }

        let value = get("sigma.value").map(|v| float("sigma.value", v)).transpose()?;
        if let Some(v) = get("sigma.case") {
            c.sigma = match v {
                Value::Integer(1) => TestCaseConductivity::Case1,
                Value::Integer(2) => TestCaseConductivity::Case2,
                Value::String(s) if s == "case1" => TestCaseConductivity::Case1,
                Value::String(s) if s == "case2" => TestCaseConductivity::Case2,
                Value::String(s) if s == "constant" => {
                    let value = value.ok_or_else(|| Error::config("sigma.value", "required for a constant conductivity"))?;
                    if !(value > 0.0 && value.is_finite()) {
                        return Err(Error::config("sigma.value", "must be positive"));
                    }
                    TestCaseConductivity::Constant(value)
                }
                _ => return Err(Error::config("sigma.case", "expected case1, case2 or constant")),
            };
        }
        if value.is_some() && !matches!(c.sigma, TestCaseConductivity::Constant(_)) {
            return Err(Error::config("sigma.value", "only valid with sigma.case = \"constant\""));
        }

        if let Some(v) = get("noise.seed") {
            c.seed = uint("noise.seed", v)?;
        }
        if flat.keys().any(|k| k.starts_with("noise.")) {
            let mut spec = NoiseSpec { alpha_percent: 0.0, seed: c.seed, eig_floor: DEFAULT_EIG_FLOOR };
            if let Some(v) = get("noise.alpha_percent") {
                spec.alpha_percent = float("noise.alpha_percent", v)?;
                if !(spec.alpha_percent >= 0.0) {
                    return Err(Error::config("noise.alpha_percent", "must be >= 0"));
                }
            }
            if let Some(v) = get("noise.eig_floor") {
                spec.eig_floor = float("noise.eig_floor", v)?;
                if !(spec.eig_floor >= 0.0) {
                    return Err(Error::config("noise.eig_floor", "must be >= 0"));
                }
            }
            c.noise = Some(spec);
        }

        if let Some(v) = get("recon.eps_d") {
            c.eps_d = float("recon.eps_d", v)?;
            if !(c.eps_d > 0.0) {
                return Err(Error::config("recon.eps_d", "must be positive"));
            }
        }
        let intervals = get("recon.theta_intervals").map(|v| pairs("recon.theta_intervals", v)).transpose()?;
        let mode = get("recon.theta_unwrap").map(|v| string("recon.theta_unwrap", v)).transpose()?;
        c.unwrap = match (mode, intervals) {
            (None | Some("auto"), None) => UnwrapMode::Auto,
            (Some("interval"), Some(iv)) => UnwrapMode::Interval(iv),
            (Some("interval"), None) => {
                return Err(Error::config("recon.theta_intervals", "required for interval unwrapping"))
            }
            (None | Some("auto"), Some(_)) => {
                return Err(Error::config("recon.theta_intervals", "only valid with theta_unwrap = \"interval\""))
            }
            (Some(other), _) => {
                return Err(Error::config("recon.theta_unwrap", format!("expected auto or interval, got `{other}`")))
            }
        };

        if let Some(v) = get("solver.rel_tol") {
            c.solver.rel_tol = float("solver.rel_tol", v)?;
        }
        if let Some(v) = get("solver.max_iter") {
            c.solver.max_iter = uint("solver.max_iter", v)? as usize;
        }
        if let Some(v) = get("solver.method") {
            c.solver.kind = match string("solver.method", v)? {
                "auto" => SolverKind::Auto,
                "pcg" => SolverKind::Pcg,
                "direct" => SolverKind::Direct,
                other => return Err(Error::config("solver.method", format!("unknown method `{other}`"))),
            };
        }
        c.solver.validate().map_err(|e| Error::config("solver", e.to_string()))?;

        if let Some(v) = get("output.dir") {
            c.output_dir = PathBuf::from(string("output.dir", v)?);
        }
        if let Some(v) = get("output.formats") {
            let arr = v.as_array().ok_or_else(|| Error::config("output.formats", "expected a list"))?;
            c.formats = arr
                .iter()
                .map(|f| {
                    let s = string("output.formats", f)?;
                    ExportFormat::from_name(s)
                        .ok_or_else(|| Error::config("output.formats", format!("unknown format `{s}`")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("output.fields") {
            c.write_fields = v.as_bool().ok_or_else(|| Error::config("output.fields", "expected a boolean"))?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    /// Settings shared with the table sweeps.
    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            target_h: self.target_h,
            data_h: Some(self.data_h),
            refinements: self.refinements,
            eps_d: self.eps_d,
            unwrap: self.unwrap.clone(),
            solver: self.solver,
            seed: self.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(n) = &mut self.noise {
            n.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let a = RunConfig::from_toml_str("geometry.target_h = 0.1\ngamma.preset = \"small\"\n").unwrap();
        let b = RunConfig::from_toml_str("[geometry]\ntarget_h = 0.1\n[gamma]\npreset = \"small\"\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gamma, GammaPreset::Small.spec());
        assert!((a.data_h - 0.1 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_is_named() {
        match RunConfig::from_toml_str("[geometry]\ntarget_hh = 0.1\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "geometry.target_hh"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_measure_arc_is_rejected() {
        match RunConfig::from_toml_str("gamma.arcs = [[1.0, 1.0]]\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "gamma.arcs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noise_section_enables_noise() {
        let c = RunConfig::from_toml_str("[noise]\nalpha_percent = 5\nseed = 9\n").unwrap();
        assert_eq!(c.noise, Some(NoiseSpec { alpha_percent: 5.0, seed: 9, eig_floor: 1e-5 }));
        assert_eq!(RunConfig::from_toml_str("").unwrap().noise, None);
    }

    #[test]
    fn interval_unwrap_needs_intervals() {
        assert!(RunConfig::from_toml_str("recon.theta_unwrap = \"interval\"\n").is_err());
        let c = RunConfig::from_toml_str(
            "recon.theta_unwrap = \"interval\"\nrecon.theta_intervals = [[-1.5707963267948966, -1.1780972450961724]]\n",
        )
        .unwrap();
        assert!(matches!(c.unwrap, UnwrapMode::Interval(ref v) if v.len() == 1));
    }

    #[test]
    fn constant_sigma_needs_value() {
        assert!(RunConfig::from_toml_str("sigma.case = \"constant\"\n").is_err());
        let c = RunConfig::from_toml_str("sigma.case = \"constant\"\nsigma.value = 2\n").unwrap();
        assert_eq!(c.sigma, TestCaseConductivity::Constant(2.0));
        assert!(RunConfig::from_toml_str("sigma.value = 2\n").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "geometry.target_h = 1.5",
            "geometry.data_h = 0.05",
            "solver.rel_tol = 0",
            "noise.alpha_percent = -1",
            "output.formats = [\"png\"]",
            "sigma.case = 3",
            "not toml at all [",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config { .. })), "{text}");
        }
    }
}
