//! Experiment configuration: TOML text with `[model]`, `[experiment]` and
//! `[output]` sections, named presets and `section.key=value` overrides.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LinearGaussianModel;
use crate::theory::ScalarModel;

pub const PAPER_PRESET: &str = "paper-3.4";
pub const SCALAR_PRESET: &str = "scalar-benchmark";
pub const PRESETS: [&str; 2] = [PAPER_PRESET, SCALAR_PRESET];

pub const DEFAULT_LAMBDAS: [f64; 2] = [5.0, 10.0];
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: LinearGaussianModel,
    /// Initial ensemble covariance used by the scalar theory; `None` means `P0`.
    pub q0m: Option<f64>,
    pub lambda_values: Vec<f64>,
    pub m_values: Vec<usize>,
    pub horizon: f64,
    pub grid_dt: f64,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub preset_name: Option<String>,
    /// `false` reports the first realization only, with zero standard errors.
    pub aggregate: bool,
    pub bessel_correction: bool,
}

impl ExperimentConfig {
    pub fn is_scalar(&self) -> bool {
        self.model.state_dim() == 1 && self.model.obs_dim() == 1 && self.model.noise_dim() == 1
    }

    /// The scalar-theory view of the model at one `(lambda, M)` pair.
    pub fn scalar_model(&self, lambda: f64, m: usize) -> Option<Result<ScalarModel>> {
        if !self.is_scalar() {
            return None;
        }
        let md = &self.model;
        Some(ScalarModel::new(
            md.a()[(0, 0)],
            md.g()[(0, 0)],
            md.c()[(0, 0)],
            md.v()[(0, 0)],
            lambda,
            m as u64,
            md.x0_cov()[(0, 0)],
            self.q0m,
        ))
    }

    /// Fully explicit TOML text; parsing it yields an equal config.
    pub fn to_toml(&self) -> String {
        let md = &self.model;
        let raw = RawConfig {
            model: RawModel {
                a: Some(MatrixValue::from_matrix(md.a())),
                g: Some(MatrixValue::from_matrix(md.g())),
                c: Some(MatrixValue::from_matrix(md.c())),
                v: Some(MatrixValue::from_matrix(md.v())),
                x0_mean: Some(MatrixValue::Vector(md.x0_mean().iter().copied().collect())),
                x0_cov: (!self.is_scalar()).then(|| MatrixValue::from_matrix(md.x0_cov())),
                p0: self.is_scalar().then(|| md.x0_cov()[(0, 0)]),
                q0m: self.q0m,
            },
            experiment: RawExperiment {
                preset: self.preset_name.clone(),
                lambda_values: Some(self.lambda_values.clone()),
                m_values: Some(self.m_values.iter().map(|&m| m as i64).collect()),
                horizon: Some(self.horizon),
                grid_dt: Some(self.grid_dt),
                n_realizations: Some(self.n_realizations as i64),
                master_seed: Some(self.master_seed as i64),
                aggregate: Some(self.aggregate),
                bessel_correction: Some(self.bessel_correction),
            },
            output: RawOutput { dir: Some(self.output_dir.to_string_lossy().into_owned()) },
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixValue {
    Scalar(f64),
    /// A column vector.
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl MatrixValue {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        if m.nrows() == 1 && m.ncols() == 1 {
            MatrixValue::Scalar(m[(0, 0)])
        } else {
            MatrixValue::Matrix(m.row_iter().map(|r| r.iter().copied().collect()).collect())
        }
    }

    fn to_matrix(&self, key: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixValue::Scalar(x) => Ok(DMatrix::from_element(1, 1, *x)),
            MatrixValue::Vector(v) if v.is_empty() => Err(Error::config(key, "empty array")),
            MatrixValue::Vector(v) => Ok(DMatrix::from_column_slice(v.len(), 1, v)),
            MatrixValue::Matrix(rows) => {
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.is_empty() || ncols == 0 {
                    return Err(Error::config(key, "empty matrix"));
                }
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::config(key, "matrix rows have different lengths"));
                }
                Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
            }
        }
    }

    fn to_vector(&self, key: &str) -> Result<DVector<f64>> {
        let m = self.to_matrix(key)?;
        if m.ncols() != 1 {
            return Err(Error::config(key, "expected a vector"));
        }
        Ok(m.column(0).into_owned())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    model: RawModel,
    experiment: RawExperiment,
    output: RawOutput,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    a: Option<MatrixValue>,
    #[serde(rename = "G", skip_serializing_if = "Option::is_none")]
    g: Option<MatrixValue>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    c: Option<MatrixValue>,
    #[serde(rename = "V", skip_serializing_if = "Option::is_none")]
    v: Option<MatrixValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x0_mean: Option<MatrixValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x0_cov: Option<MatrixValue>,
    /// Scalar shorthand for `x0_cov`.
    #[serde(rename = "P0", skip_serializing_if = "Option::is_none")]
    p0: Option<f64>,
    #[serde(rename = "Q0M", skip_serializing_if = "Option::is_none")]
    q0m: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawExperiment {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_values: Option<Vec<f64>>,
    #[serde(rename = "M_values", skip_serializing_if = "Option::is_none")]
    m_values: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_realizations: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bessel_correction: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    dir: Option<String>,
}

fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        PAPER_PRESET => Some(
            r#"
[model]
A = [[0.0, 3.0, 1.0], [2.0, -2.0, 1.0], [-2.0, 1.0, -3.0]]
G = [0.5, 0.5, 0.5]
C = [[1.0, -1.0, 2.0], [1.0, 0.0, 1.0]]
V = [[0.5, 0.1], [0.1, 0.5]]
x0_mean = [0.0, 0.0, 0.0]
x0_cov = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]

[experiment]
lambda_values = [5.0, 10.0]
M_values = [10, 20]
horizon = 2.0
grid_dt = 0.001
n_realizations = 200
"#,
        ),
        SCALAR_PRESET => Some(
            r#"
[model]
A = -1.0
G = 1.0
C = 1.0
V = 0.5
x0_mean = 0.0
P0 = 1.0

[experiment]
lambda_values = [5.0]
M_values = [10, 20, 40]
horizon = 5.0
grid_dt = 0.01
n_realizations = 200
"#,
        ),
        _ => None,
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_with_overrides(&text, &path.display().to_string(), &[])
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(text, origin, &[])
}

/// The named preset with no further changes.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(&format!("[experiment]\npreset = \"{name}\"\n"), "<preset>", &[])
}

/// Parses `text`, applies `section.key=value` overrides (which win over
/// file values), layers the result over the named preset and validates.
pub fn parse_config_with_overrides(text: &str, origin: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut table = parse_table(text, origin)?;
    // schema errors in the file itself still carry a line number
    toml::from_str::<RawConfig>(text).map_err(|e| parse_error(text, origin, &e))?;
    for (key, value) in overrides {
        apply_override(&mut table, key, value)?;
    }
    let preset_name = match table.get("experiment").and_then(|e| e.get("preset")) {
        None => None,
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(Error::config("experiment.preset", "expected a string")),
    };
    if let Some(name) = &preset_name {
        let base_text = preset_text(name).ok_or_else(|| {
            Error::config("experiment.preset", format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))
        })?;
        let mut base = parse_table(base_text, "<preset>")?;
        // an explicit prior covariance replaces the preset's, whichever key it uses
        if let (Some(toml::Value::Table(bm)), Some(toml::Value::Table(om))) = (base.get_mut("model"), table.get("model")) {
            if om.contains_key("x0_cov") || om.contains_key("P0") {
                bm.remove("x0_cov");
                bm.remove("P0");
            }
        }
        merge(&mut base, table);
        table = base;
    }
    let raw: RawConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Parse {
        path: origin.to_string(),
        line: 0,
        message: e.message().to_string(),
    })?;
    resolve(raw)
}

fn parse_error(text: &str, origin: &str, e: &toml::de::Error) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line: e.span().map_or(0, |s| 1 + text[..s.start.min(text.len())].matches('\n').count()),
        message: e.message().to_string(),
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| parse_error(text, origin, &e))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `section.key` to `value`, read as a TOML value. A bare
/// comma-separated list is read as an array and any other unparsable
/// value as a string.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let (section, field) = key
        .split_once('.')
        .filter(|(s, f)| !s.is_empty() && !f.is_empty())
        .ok_or_else(|| Error::config(key, "override keys have the form section.key"))?;
    if !["model", "experiment", "output"].contains(&section) {
        return Err(Error::config(key, format!("unknown section `{section}`")));
    }
    let parse = |s: &str| s.parse::<toml::Table>().ok().and_then(|mut t| t.remove("v"));
    let v = parse(&format!("v = {value}"))
        .or_else(|| value.contains(',').then(|| parse(&format!("v = [{value}]"))).flatten())
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    table
        .entry(section)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::config(section, "expected a section"))?
        .insert(field.to_string(), v);
    Ok(())
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let m = raw.model;
    let required = |v: Option<MatrixValue>, key: &str| v.ok_or_else(|| Error::config(key, "missing (and no preset given)"));
    let a = required(m.a, "model.A")?.to_matrix("model.A")?;
    let g = required(m.g, "model.G")?.to_matrix("model.G")?;
    let c = required(m.c, "model.C")?.to_matrix("model.C")?;
    let v = required(m.v, "model.V")?.to_matrix("model.V")?;
    let n = a.nrows();
    let x0_mean = match m.x0_mean {
        Some(x) => x.to_vector("model.x0_mean")?,
        None => DVector::zeros(n),
    };
    let x0_cov = match (m.x0_cov, m.p0) {
        (Some(_), Some(_)) => return Err(Error::config("model.P0", "give either P0 or x0_cov, not both")),
        (Some(x), None) => x.to_matrix("model.x0_cov")?,
        (None, Some(p0)) if n == 1 => DMatrix::from_element(1, 1, p0),
        (None, Some(_)) => return Err(Error::config("model.P0", "P0 is only valid for scalar models")),
        (None, None) => DMatrix::identity(n, n),
    };
    let model = LinearGaussianModel::new(a, g, c, v, x0_mean, x0_cov).map_err(|e| Error::config("model", e.to_string()))?;
    let scalar = model.state_dim() == 1 && model.obs_dim() == 1 && model.noise_dim() == 1;
    if let Some(q) = m.q0m {
        if !scalar {
            return Err(Error::config("model.Q0M", "Q0M is only valid for scalar models"));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::config("model.Q0M", format!("must be positive, got {q}")));
        }
    }

    let e = raw.experiment;
    let lambda_values = e.lambda_values.unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
    if lambda_values.is_empty() {
        return Err(Error::config("experiment.lambda_values", "must not be empty"));
    }
    if let Some(l) = lambda_values.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::config("experiment.lambda_values", format!("rates must be positive, got {l}")));
    }
    let m_values = e.m_values.unwrap_or_else(|| vec![10, 20]);
    if m_values.is_empty() {
        return Err(Error::config("experiment.M_values", "must not be empty"));
    }
    if let Some(bad) = m_values.iter().find(|&&m| m < 2) {
        return Err(Error::config("experiment.M_values", format!("ensemble sizes must be at least 2, got {bad}")));
    }
    let positive = |x: Option<f64>, default: f64, key: &str| {
        let x = x.unwrap_or(default);
        if x > 0.0 && x.is_finite() { Ok(x) } else { Err(Error::config(key, format!("must be positive, got {x}"))) }
    };
    let horizon = positive(e.horizon, 2.0, "experiment.horizon")?;
    let grid_dt = positive(e.grid_dt, 1e-3, "experiment.grid_dt")?;
    let n_realizations = e.n_realizations.unwrap_or(100);
    if n_realizations < 1 {
        return Err(Error::config("experiment.n_realizations", format!("must be at least 1, got {n_realizations}")));
    }
    if n_realizations > u32::MAX as i64 {
        return Err(Error::config("experiment.n_realizations", "too many realizations"));
    }
    let master_seed = e.master_seed.unwrap_or(DEFAULT_SEED as i64);
    if master_seed < 0 {
        return Err(Error::config("experiment.master_seed", "must be nonnegative"));
    }
    Ok(ExperimentConfig {
        model,
        q0m: m.q0m,
        lambda_values,
        m_values: m_values.into_iter().map(|m| m as usize).collect(),
        horizon,
        grid_dt,
        n_realizations: n_realizations as usize,
        master_seed: master_seed as u64,
        output_dir: PathBuf::from(raw.output.dir.unwrap_or_else(|| "out".to_string())),
        preset_name: e.preset,
        aggregate: e.aggregate.unwrap_or(true),
        bessel_correction: e.bessel_correction.unwrap_or(false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_state_preset_matrices() {
        let cfg = preset(PAPER_PRESET).unwrap();
        let m = &cfg.model;
        assert_eq!(m.a(), &DMatrix::from_row_slice(3, 3, &[0.0, 3.0, 1.0, 2.0, -2.0, 1.0, -2.0, 1.0, -3.0]));
        assert_eq!(m.c(), &DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 2.0, 1.0, 0.0, 1.0]));
        assert_eq!(m.g(), &DMatrix::from_column_slice(3, 1, &[0.5, 0.5, 0.5]));
        assert_eq!(m.v(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.5]));
        assert_eq!(m.x0_cov(), &DMatrix::identity(3, 3));
        assert_eq!(cfg.lambda_values, vec![5.0, 10.0]);
        assert_eq!(cfg.m_values, vec![10, 20]);
        assert_eq!(cfg.horizon, 2.0);
        assert_eq!(cfg.grid_dt, 1e-3);
    }

    #[test]
    fn scalar_preset() {
        let cfg = preset(SCALAR_PRESET).unwrap();
        assert!(cfg.is_scalar());
        let s = cfg.scalar_model(5.0, 10).unwrap().unwrap();
        assert_eq!((s.a, s.g, s.c, s.v, s.p0, s.q0m), (-1.0, 1.0, 1.0, 0.5, 1.0, 1.0));
    }

    #[test]
    fn lambda_defaults() {
        let cfg = parse_config("[model]\nA = -1.0\nG = 1.0\nC = 1.0\nV = 0.5\n", "t").unwrap();
        assert_eq!(cfg.lambda_values, vec![5.0, 10.0]);
        assert_eq!(cfg.master_seed, 42);
        assert!(cfg.aggregate && !cfg.bessel_correction);
    }

    #[test]
    fn rejects_single_particle() {
        let err = parse_config("[experiment]\npreset = \"scalar-benchmark\"\nM_values = [1]\n", "t").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "experiment.M_values"), "{err}");
    }

    #[test]
    fn parse_error_has_line() {
        let err = parse_config("[model]\nA = -1.0\nG = = 1\n", "cfg.toml").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("[experiment]\npreset = \"scalar-benchmark\"\nlambdas = [1.0]\n", "t").unwrap_err();
        assert!(err.to_string().contains("lambdas"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("nope"), Err(Error::Config { .. })));
    }

    #[test]
    fn overrides_win() {
        let text = "[experiment]\npreset = \"scalar-benchmark\"\nn_realizations = 7\n";
        let ov = [
            ("experiment.n_realizations".to_string(), "3".to_string()),
            ("experiment.M_values".to_string(), "2,4".to_string()),
            ("model.A".to_string(), "-2".to_string()),
            ("output.dir".to_string(), "/tmp/x".to_string()),
        ];
        let cfg = parse_config_with_overrides(text, "t", &ov).unwrap();
        assert_eq!(cfg.n_realizations, 3);
        assert_eq!(cfg.m_values, vec![2, 4]);
        assert_eq!(cfg.model.a()[(0, 0)], -2.0);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
        let bad = [("experiment.nope".to_string(), "1".to_string())];
        assert!(parse_config_with_overrides(text, "t", &bad).is_err());
    }

    #[test]
    fn echo_round_trips() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            assert_eq!(parse_config(&cfg.to_toml(), "echo").unwrap(), cfg);
        }
        let mut cfg = preset(SCALAR_PRESET).unwrap();
        cfg.q0m = Some(0.3);
        cfg.grid_dt = 0.1 + 0.2;
        cfg.master_seed = u32::MAX as u64 * 3;
        assert_eq!(parse_config(&cfg.to_toml(), "echo").unwrap(), cfg);
    }
}
