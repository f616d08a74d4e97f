//! Parameter documents and tabular output.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{MctouError, ParamViolation, Result};
use crate::model::{lambda_from_zeta, validate_params, FactorState, ModelParams, SigmaConvention};

/// Flat JSON parameter file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub kappa: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub rho12: f64,
    pub rho13: f64,
    pub rho23: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta3: Option<f64>,
    #[serde(default)]
    pub sigma_convention: SigmaConvention,
    pub x0: [f64; 3],
}

impl ParamsDocument {
    pub fn from_model(p: &ModelParams, x0: Vector3<f64>) -> Self {
        let zeta = p.zeta;
        ParamsDocument {
            kappa: p.kappa,
            epsilon: p.epsilon,
            delta: p.delta,
            alpha2: p.alpha2,
            alpha3: p.alpha3,
            sigma1: p.sigma1,
            sigma2: p.sigma2,
            sigma3: p.sigma3,
            rho12: p.rho12,
            rho13: p.rho13,
            rho23: p.rho23,
            lambda1: Some(p.lambda1),
            lambda2: Some(p.lambda2),
            lambda3: Some(p.lambda3),
            zeta1: zeta.map(|z| z[0]),
            zeta2: zeta.map(|z| z[1]),
            zeta3: zeta.map(|z| z[2]),
            sigma_convention: p.sigma_convention,
            x0: [x0[0], x0[1], x0[2]],
        }
    }

    /// The published example as a document.
    pub fn table1() -> Self {
        ParamsDocument::from_model(&ModelParams::table1(), ModelParams::table1_x0())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ParamsDocument::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Convert to validated parameters and the initial state at `t = 0`.
    ///
    /// Missing `lambda` values are filled from `zeta`; when both are given they must agree.
    pub fn into_model(self) -> Result<(ModelParams, FactorState)> {
        let zeta = match (self.zeta1, self.zeta2, self.zeta3) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            (None, None, None) => None,
            _ => {
                return Err(MctouError::InvalidParams(vec![ParamViolation {
                    field: "zeta",
                    message: "zeta1, zeta2 and zeta3 must be given together".into(),
                }]))
            }
        };
        let mut p = ModelParams {
            kappa: self.kappa,
            epsilon: self.epsilon,
            delta: self.delta,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            sigma3: self.sigma3,
            rho12: self.rho12,
            rho13: self.rho13,
            rho23: self.rho23,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            zeta,
            sigma_convention: self.sigma_convention,
        };
        match (self.lambda1, self.lambda2, self.lambda3, zeta) {
            (Some(a), Some(b), Some(c), _) => p = p.with_lambda(Vector3::new(a, b, c)),
            (None, None, None, Some(z)) => {
                // correlations must be valid before the map is meaningful
                validate_params(ModelParams { zeta: None, ..p })
                    .map_err(MctouError::InvalidParams)?;
                p = p.with_lambda(lambda_from_zeta(&p, Vector3::from(z)));
            }
            _ => {
                return Err(MctouError::InvalidParams(vec![ParamViolation {
                    field: "lambda",
                    message: "give lambda1..3 (or zeta1..3)".into(),
                }]))
            }
        }
        let p = validate_params(p).map_err(MctouError::InvalidParams)?;
        let x0 = FactorState::new(0.0, Vector3::from(self.x0));
        if !x0.is_finite() {
            return Err(MctouError::InvalidParams(vec![ParamViolation {
                field: "x0",
                message: "must be finite".into(),
            }]));
        }
        Ok((p, x0))
    }
}

/// Shortest representation that round-trips, scientific outside `[1e-5, 1e16)`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A header plus string rows, written as comma-separated values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Dataset {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Dataset {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// `{"columns": [...], "rows": [[...]]}` with numeric fields as numbers and
    /// empty fields as null.
    pub fn to_json(&self) -> serde_json::Value {
        let cell = |s: &String| -> serde_json::Value {
            if s.is_empty() {
                serde_json::Value::Null
            } else if let Some(n) = s.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
                serde_json::Value::Number(n)
            } else {
                serde_json::Value::String(s.clone())
            }
        };
        serde_json::json!({
            "columns": self.header,
            "rows": self.rows.iter().map(|r| r.iter().map(cell).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }
}

/// Write to a temporary sibling, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
