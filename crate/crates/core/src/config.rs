//! JSON scenario files.
//!
//! ```json
//! {
//!   "grid": {"kind": "interval", "n": 255},
//!   "alpha": 1.0,
//!   "objective": {"mu_j": 0.0, "y_D": "0", "g": "-2"},
//!   "psi": "x^2 - x",
//!   "bounds": {"ua": "-inf", "ub": "inf"},
//!   "control": "x*(1-x)",
//!   "seed": 7,
//!   "params": {"c": 0.0625}
//! }
//! ```
//!
//! Expressions see the coordinates (`x` on intervals, `x, y` on squares,
//! `r` and its alias `x` on radial grids) and every name in `params`.
//! Numbers may be given instead of expression strings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Grid, GridFn, GridKind};
use crate::stationarity::ObjectiveSpec;
use crate::vi::{ControlBounds, Obstacle};

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ExprSrc {
    Number(f64),
    Text(String),
}

impl ExprSrc {
    fn zero() -> Self {
        ExprSrc::Number(0.0)
    }

    fn parse(&self) -> Result<Expr> {
        match self {
            ExprSrc::Number(v) => Ok(Expr::Num(*v)),
            ExprSrc::Text(s) => Expr::parse(s),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    pub n: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    #[serde(default)]
    pub mu_j: f64,
    #[serde(rename = "y_D", default = "ExprSrc::zero")]
    pub y_d: ExprSrc,
    #[serde(default = "ExprSrc::zero")]
    pub g: ExprSrc,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { mu_j: 0.0, y_d: ExprSrc::zero(), g: ExprSrc::zero() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "neg_inf")]
    pub ua: ExprSrc,
    #[serde(default = "pos_inf")]
    pub ub: ExprSrc,
}

fn neg_inf() -> ExprSrc {
    ExprSrc::Text("-inf".into())
}

fn pos_inf() -> ExprSrc {
    ExprSrc::Text("inf".into())
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { ua: neg_inf(), ub: pos_inf() }
    }
}

/// One column of a parameter sweep: `name` is `alpha`, `n` or a key of `params`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub max_iter: Option<usize>,
    pub escape: Option<bool>,
    pub sample_directions: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SscConfig {
    pub samples: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub psi: ExprSrc,
    #[serde(default)]
    pub bounds: BoundsConfig,
    /// The control `ū` examined by `solve`, `stationarity` and `ssc`, and the
    /// starting point of the descent method.
    #[serde(default = "ExprSrc::zero")]
    pub control: ExprSrc,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub ssc: SscConfig,
}

/// Everything a subcommand needs, sampled on the grid.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: Grid,
    pub spec: ObjectiveSpec,
    pub psi: Obstacle,
    pub bounds: ControlBounds,
    pub control: GridFn,
    pub seed: u64,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn build(&self) -> Result<Problem> {
        self.build_with(None)
    }

    /// Build with one value overridden, as a sweep does.
    pub fn build_with(&self, over: Option<(&str, f64)>) -> Result<Problem> {
        let mut n = self.grid.n;
        let mut alpha = self.alpha;
        let mut params = self.params.clone();
        match over {
            Some(("n", v)) => {
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(Error::InvalidParameter(format!("grid size {v}")));
                }
                n = v as usize;
            }
            Some(("alpha", v)) => alpha = v,
            Some((name, v)) => {
                if !params.contains_key(name) {
                    return Err(Error::InvalidParameter(format!("sweep over unknown parameter {name:?}")));
                }
                params.insert(name.to_string(), v);
            }
            None => {}
        }
        let grid = Grid::new(self.grid.kind, n)?;
        let coords: &[&str] = match self.grid.kind {
            GridKind::Interval => &["x"],
            GridKind::Square => &["x", "y"],
            GridKind::Radial => &["r", "x"],
        };
        let mut names: Vec<&str> = coords.to_vec();
        names.extend(params.keys().map(String::as_str));
        let compile = |src: &ExprSrc, what: &str| -> Result<Expr> {
            let e = src.parse().map_err(|e| Error::InvalidParameter(format!("{what}: {e}")))?;
            e.check(&names).map_err(|e| Error::InvalidParameter(format!("{what}: {e}")))?;
            Ok(e)
        };
        let eval = |e: &Expr, p: &[f64]| {
            let mut vars: BTreeMap<&str, f64> = params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            match self.grid.kind {
                GridKind::Radial => {
                    vars.insert("r", p[0]);
                    vars.insert("x", p[0]);
                }
                _ => {
                    vars.insert("x", p[0]);
                    if let Some(y) = p.get(1) {
                        vars.insert("y", *y);
                    }
                }
            }
            e.eval(&vars)
        };
        let sample = |src: &ExprSrc, what: &str| -> Result<GridFn> {
            let e = compile(src, what)?;
            let f = GridFn::from_fn(&grid, |p| eval(&e, p));
            if f.values().iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidParameter(format!("{what} evaluates to NaN")));
            }
            Ok(f)
        };
        let psi_expr = compile(&self.psi, "psi")?;
        let psi = Obstacle::from_fn(&grid, |p| eval(&psi_expr, p));
        if psi.values().values().iter().chain(psi.laplacian().values()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("psi must be finite".into()));
        }
        let spec = ObjectiveSpec::new(
            self.objective.mu_j,
            sample(&self.objective.y_d, "y_D")?,
            sample(&self.objective.g, "g")?,
            alpha,
        )?;
        let bounds = ControlBounds::new(
            sample(&self.bounds.ua, "ua")?.into_values(),
            sample(&self.bounds.ub, "ub")?.into_values(),
        )?;
        let control = sample(&self.control, "control")?;
        Ok(Problem { grid, spec, psi, bounds, control, seed: self.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = Config::from_json(r#"{"grid": {"kind": "interval", "n": 7}, "psi": "x^2 - x"}"#).unwrap();
        let p = c.build().unwrap();
        assert_eq!(p.spec.alpha, 1.0);
        assert!(p.bounds.is_unbounded());
        assert_eq!(p.control.norm_linf(), 0.0);
        assert!((p.psi.laplacian().min() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn params_and_overrides() {
        let c = Config::from_json(
            r#"{"grid": {"kind": "square", "n": 3}, "psi": "-c", "params": {"c": 1}, "control": 2}"#,
        )
        .unwrap();
        let p = c.build_with(Some(("c", 3.0))).unwrap();
        assert_eq!(p.psi.values().max(), -3.0);
        assert_eq!(p.control.min(), 2.0);
        assert!(c.build_with(Some(("d", 1.0))).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(Config::from_json(r#"{"grid": {"kind": "cube", "n": 3}, "psi": "0"}"#).is_err());
        assert!(Config::from_json(r#"{"grid": {"kind": "interval", "n": 3}, "psi": "0", "extra": 1}"#).is_err());
        let c = Config::from_json(r#"{"grid": {"kind": "interval", "n": 3}, "psi": "z"}"#).unwrap();
        assert!(c.build().is_err());
        let c = Config::from_json(r#"{"grid": {"kind": "interval", "n": 3}, "psi": "0", "bounds": {"ua": 1}}"#)
            .unwrap();
        assert!(c.build().is_err());
    }
}
