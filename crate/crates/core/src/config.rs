//! JSON model configuration.
//!
//! A config either names a built-in family and overrides its parameters,
//! or describes a custom model through explicit complex matrices written
//! as `[re, im]` pairs. A custom matrix may depend on the single parameter
//! through its values at `θ₀` and `θ₀ ± δ`, interpolated quadratically.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::model::{
    builtin, coupled_qubits, micromaser, CoupledQubitParams, InitialState, JumpChannel, LindbladModel, MicromaserParams,
    ModelPoint, MonitorSetting,
};

/// Rows of `[re, im]` entries.
pub type RawMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Fixed(RawMatrix),
    Family {
        base: RawMatrix,
        dtheta_plus: RawMatrix,
        dtheta_minus: RawMatrix,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub label: String,
    pub matrix: MatrixSpec,
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default = "yes")]
    pub monitored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSpec {
    pub name: String,
    /// Current value `θ₀`.
    #[serde(default)]
    pub value: f64,
    /// Offset `δ` of the `dtheta_plus`/`dtheta_minus` samples.
    #[serde(default)]
    pub step: Option<f64>,
    /// Free-text note on how the parameter enters the model.
    #[serde(default)]
    pub enters: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    /// `"steady-state"`.
    Named(String),
    Matrix(RawMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSpec {
    pub label: String,
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default = "yes")]
    pub monitored: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Fock levels of the micromaser field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// Adds the thermal absorption channel to the coupled qubits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub monitor: Vec<MonitorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<ChannelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
}

impl ModelConfig {
    pub fn builtin(name: &str) -> Self {
        Self {
            model: name.to_string(),
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `name=value` overrides; for custom models the parameter name
    /// refers to `theta`.
    pub fn apply_overrides(&mut self, sets: &[(String, f64)]) -> Result<()> {
        for (name, value) in sets {
            match &mut self.theta {
                Some(t) if self.model == "custom" => {
                    if &t.name != name {
                        return Err(Error::UnknownParameter(name.clone()));
                    }
                    t.value = *value;
                }
                _ => {
                    self.params.insert(name.clone(), *value);
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<LindbladModel> {
        let model = if self.model == "custom" {
            self.build_custom()?
        } else {
            self.build_builtin()?
        };
        if self.monitor.is_empty() {
            return Ok(model);
        }
        model.with_monitor_settings(
            self.monitor
                .iter()
                .map(|m| MonitorSetting {
                    label: m.label.clone(),
                    efficiency: m.efficiency,
                    monitored: m.monitored,
                })
                .collect(),
        )
    }

    fn build_builtin(&self) -> Result<LindbladModel> {
        if self.dim.is_some() || self.hamiltonian.is_some() || self.channels.is_some() || self.theta.is_some() {
            return Err(Error::Config(format!(
                "'dim', 'hamiltonian', 'channels' and 'theta' apply only to custom models, not '{}'",
                self.model
            )));
        }
        let mut model = match self.model.as_str() {
            "coupled-qubits" if self.thermal == Some(true) => coupled_qubits(CoupledQubitParams {
                thermal_occupation: Some(self.params.get("nbar_th").copied().unwrap_or(1.0)),
                ..Default::default()
            })?,
            "micromaser" => micromaser(MicromaserParams {
                levels: self.levels.unwrap_or(MicromaserParams::default().levels),
                ..Default::default()
            })?,
            name => builtin(name)?,
        };
        if self.levels.is_some() && self.model != "micromaser" {
            return Err(Error::Config("'levels' applies only to the micromaser".into()));
        }
        let mut theta = model.theta().to_vec();
        for (name, value) in &self.params {
            theta[model.param_index(name)?] = *value;
        }
        model = model.with_theta(theta)?;
        if let Some(init) = &self.initial {
            model = model.with_initial_state(initial_state(init, model.dim())?)?;
        }
        Ok(model)
    }

    fn build_custom(&self) -> Result<LindbladModel> {
        let dim = self
            .dim
            .ok_or_else(|| Error::Config("custom model needs 'dim'".into()))?;
        if dim == 0 {
            return Err(Error::Config("'dim' must be positive".into()));
        }
        let theta = self.theta.clone().unwrap_or(ThetaSpec {
            name: "theta".into(),
            value: 0.0,
            step: None,
            enters: None,
        });
        let step = theta.step.unwrap_or(1e-4 * theta.value.abs().max(1.0));
        if !(step > 0.0) {
            return Err(Error::Config(format!("theta step {step} must be positive")));
        }
        let hamiltonian = match &self.hamiltonian {
            Some(h) => Family::parse(h, dim, "hamiltonian", theta.value, step)?,
            None => Family::constant(CMatrix::zeros(dim, dim)),
        };
        let channels = self
            .channels
            .as_ref()
            .ok_or_else(|| Error::Config("custom model needs 'channels'".into()))?
            .iter()
            .map(|c| {
                Ok((
                    c.clone(),
                    Family::parse(&c.matrix, dim, &format!("channel '{}'", c.label), theta.value, step)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let initial = match &self.initial {
            Some(init) => initial_state(init, dim)?,
            None => InitialState::SteadyState,
        };
        LindbladModel::new("custom", dim, &[theta.name.as_str()], vec![theta.value], initial, move |t| {
            Ok(ModelPoint {
                hamiltonian: hamiltonian.at(t[0]),
                channels: channels
                    .iter()
                    .map(|(spec, fam)| JumpChannel {
                        label: spec.label.clone(),
                        operator: fam.at(t[0]),
                        efficiency: spec.efficiency,
                        monitored: spec.monitored,
                    })
                    .collect(),
            })
        })
    }
}

fn initial_state(spec: &InitialSpec, dim: usize) -> Result<InitialState> {
    match spec {
        InitialSpec::Named(s) if s == "steady-state" => Ok(InitialState::SteadyState),
        InitialSpec::Named(s) => Err(Error::Config(format!(
            "unknown initial state '{s}' (use \"steady-state\" or a matrix)"
        ))),
        InitialSpec::Matrix(m) => Ok(InitialState::Fixed(to_matrix(m, dim, "initial")?)),
    }
}

/// Quadratic interpolation through the samples at `θ₀` and `θ₀ ± δ`.
#[derive(Debug, Clone)]
struct Family {
    center: f64,
    base: CMatrix,
    slope: CMatrix,
    curvature: CMatrix,
}

impl Family {
    fn constant(m: CMatrix) -> Self {
        let z = CMatrix::zeros(m.nrows(), m.ncols());
        Self {
            center: 0.0,
            base: m,
            slope: z.clone(),
            curvature: z,
        }
    }

    fn parse(spec: &MatrixSpec, dim: usize, what: &str, center: f64, step: f64) -> Result<Self> {
        match spec {
            MatrixSpec::Fixed(m) => Ok(Self::constant(to_matrix(m, dim, what)?)),
            MatrixSpec::Family {
                base,
                dtheta_plus,
                dtheta_minus,
            } => {
                let b = to_matrix(base, dim, what)?;
                let p = to_matrix(dtheta_plus, dim, what)?;
                let m = to_matrix(dtheta_minus, dim, what)?;
                let slope = (&p - &m) / C64::new(2.0 * step, 0.0);
                let curvature = (&p - &b * C64::new(2.0, 0.0) + &m) / C64::new(2.0 * step * step, 0.0);
                Ok(Self {
                    center,
                    base: b,
                    slope,
                    curvature,
                })
            }
        }
    }

    fn at(&self, theta: f64) -> CMatrix {
        let x = theta - self.center;
        &self.base + &self.slope * C64::new(x, 0.0) + &self.curvature * C64::new(x * x, 0.0)
    }
}

fn to_matrix(raw: &RawMatrix, dim: usize, what: &str) -> Result<CMatrix> {
    if raw.len() != dim || raw.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("{what}: expected a {dim}×{dim} matrix of [re, im] pairs")));
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| C64::new(raw[i][j][0], raw[i][j][1])))
}

/// Parses `name=value[,name=value...]`.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, f64)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected name=value, found '{pair}'")))?;
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("'{}' is not a number in '{pair}'", v.trim())))?;
            Ok((k.trim().to_string(), value))
        })
        .collect()
}
