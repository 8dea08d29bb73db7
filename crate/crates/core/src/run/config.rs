//! TOML run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda::PicardOptions;
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    pub utility: UtilityConfig,
    pub discount: DiscountConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    /// Not written to manifests, so a manifest reproduces a run wherever it
    /// is pointed.
    #[serde(default, skip_serializing)]
    pub output: Option<OutputConfig>,
    /// Results recorded by a previous run; ignored on input.
    #[serde(default, skip_serializing)]
    pub diagnostics: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub r: f64,
    pub sigma: f64,
    /// Excess return `alpha - r`; give this or `alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscountConfig {
    Exponential { rho: f64 },
    Hyperbolic { k: f64, gamma: f64 },
    Mixture { weights: Vec<f64>, rates: Vec<f64> },
}

impl DiscountConfig {
    pub fn to_spec(&self) -> Result<DiscountSpec> {
        match self {
            DiscountConfig::Exponential { rho } => DiscountSpec::exponential(*rho),
            DiscountConfig::Hyperbolic { k, gamma } => DiscountSpec::hyperbolic(*k, *gamma),
            DiscountConfig::Mixture { weights, rates } => {
                if weights.len() != rates.len() {
                    return Err(Error::Config(format!(
                        "mixture has {} weights but {} rates",
                        weights.len(),
                        rates.len()
                    )));
                }
                let pairs: Vec<(f64, f64)> =
                    weights.iter().copied().zip(rates.iter().copied()).collect();
                DiscountSpec::mixture(&pairs)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Picard,
    Mixture,
    ClosedForm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Picard => "picard",
            Method::Mixture => "mixture",
            Method::ClosedForm => "closed_form",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picard" => Ok(Method::Picard),
            "mixture" => Ok(Method::Mixture),
            "closed_form" => Ok(Method::ClosedForm),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected picard, mixture or closed_form)"
            ))),
        }
    }
}

/// Which functional is maximised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Utility of consumption plus a bequest at `T`.
    #[default]
    Consumption,
    /// Utility of terminal wealth only.
    TerminalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default)]
    pub problem: Problem,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::damping")]
    pub damping: f64,
    /// Number of candidate rates when a mixture has to be fitted.
    #[serde(default = "defaults::fit_size")]
    pub fit_size: usize,
    #[serde(default = "defaults::fit_rate_min")]
    pub fit_rate_min: f64,
    #[serde(default = "defaults::fit_rate_max")]
    pub fit_rate_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_ceiling: Option<f64>,
}

impl SolverConfig {
    pub fn picard_options(&self) -> PicardOptions {
        PicardOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
            initial_guess: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "defaults::x0")]
    pub x0: f64,
    /// Orders `q` of the wealth moments `E[X^q]` to record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moments: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    ValueIdentity,
    Martingale,
    Perturbation,
    Moments,
    Duality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Defaults to every check applicable to the problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckKind>>,
    #[serde(default)]
    pub value_time: f64,
    #[serde(default = "defaults::checkpoints")]
    pub checkpoints: usize,
    /// Constant stock fraction of the deliberately suboptimal policy.
    #[serde(default)]
    pub alternative_fraction: f64,
    #[serde(default = "defaults::perturbation_time")]
    pub perturbation_time: f64,
    #[serde(default = "defaults::epsilons")]
    pub epsilons: Vec<f64>,
    /// Stock-fraction offsets of the gross and the small spike.
    #[serde(default = "defaults::gross_shift")]
    pub gross_shift: f64,
    #[serde(default = "defaults::small_shift")]
    pub small_shift: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: None,
            value_time: 0.0,
            checkpoints: defaults::checkpoints(),
            alternative_fraction: 0.0,
            perturbation_time: defaults::perturbation_time(),
            epsilons: defaults::epsilons(),
            gross_shift: defaults::gross_shift(),
            small_shift: defaults::small_shift(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub discounts: Vec<DiscountConfig>,
    #[serde(default)]
    pub probe_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

mod defaults {
    pub fn tol() -> f64 {
        1e-10
    }
    pub fn max_iter() -> usize {
        1000
    }
    pub fn damping() -> f64 {
        0.5
    }
    pub fn fit_size() -> usize {
        8
    }
    pub fn fit_rate_min() -> f64 {
        0.01
    }
    pub fn fit_rate_max() -> f64 {
        20.0
    }
    pub fn x0() -> f64 {
        1.0
    }
    pub fn checkpoints() -> usize {
        5
    }
    pub fn perturbation_time() -> f64 {
        0.2
    }
    pub fn epsilons() -> Vec<f64> {
        vec![0.2, 0.1]
    }
    pub fn gross_shift() -> f64 {
        1.0
    }
    pub fn small_shift() -> f64 {
        0.01
    }
}

/// Validated model objects built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Model {
    pub market: MarketParams,
    pub utility: CrraUtility,
    pub discount: DiscountSpec,
    pub grid: TimeGrid,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn model(&self) -> Result<Model> {
        let MarketConfig {
            r,
            sigma,
            mu,
            alpha,
        } = self.market;
        let market = match (mu, alpha) {
            (Some(mu), None) => MarketParams::from_excess_return(r, mu, sigma)?,
            (None, Some(alpha)) => MarketParams::new(r, alpha, sigma)?,
            _ => {
                return Err(Error::Config(
                    "[market] needs exactly one of `mu` and `alpha`".into(),
                ))
            }
        };
        let discount = self.discount.to_spec()?;
        let grid = TimeGrid::new(self.grid.horizon, self.grid.n_steps)?;
        discount.validate_on(grid.horizon())?;
        Ok(Model {
            market,
            utility: CrraUtility::new(self.utility.p)?,
            discount,
            grid,
        })
    }

    pub fn sim_config(&self, grid: &TimeGrid) -> Result<SimConfig> {
        let sim = self
            .sim
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sim] section".into()))?;
        SimConfig::new(sim.n_paths, sim.seed, *grid, sim.x0)
    }

    /// The configuration as TOML with `diagnostics` appended as its own table.
    pub fn manifest(&self, diagnostics: toml::Table) -> Result<String> {
        let mut table =
            toml::Table::try_from(self).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        table.insert("diagnostics".into(), toml::Value::Table(diagnostics));
        toml::to_string(&table).map_err(|e| Error::Config(format!("manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[market]
r = 0.05
sigma = 0.2
mu = 0.07

[utility]
p = 0.5

[discount]
kind = "hyperbolic"
k = 1.0
gamma = 1.0

[grid]
horizon = 1.0
n_steps = 100

[solver]
method = "picard"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.solver.tol, 1e-10);
        assert_eq!(cfg.solver.problem, Problem::Consumption);
        assert!(cfg.sim.is_none());
        let model = cfg.model().unwrap();
        assert!((model.market.mu() - 0.07).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("method = \"picard\"", "method = \"picard\"\ndampng = 0.3");
        assert!(matches!(
            RunConfig::from_toml_str(&typo),
            Err(Error::Config(_))
        ));
        let extra = MINIMAL.replace("gamma = 1.0", "gamma = 1.0\nrho = 0.1");
        assert!(RunConfig::from_toml_str(&extra).is_err());
        let section = format!("{MINIMAL}\n[extras]\na = 1\n");
        assert!(RunConfig::from_toml_str(&section).is_err());
    }

    #[test]
    fn missing_section_is_rejected() {
        let no_grid = MINIMAL.replace("[grid]\nhorizon = 1.0\nn_steps = 100\n", "");
        assert!(RunConfig::from_toml_str(&no_grid).is_err());
    }

    #[test]
    fn market_needs_exactly_one_return() {
        let both = MINIMAL.replace("mu = 0.07", "mu = 0.07\nalpha = 0.12");
        let cfg = RunConfig::from_toml_str(&both).unwrap();
        assert!(matches!(cfg.model(), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_reads_back_as_the_same_config() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let mut diag = toml::Table::new();
        diag.insert("iterations".into(), 12.into());
        let text = cfg.manifest(diag).unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert!(back.diagnostics.is_some());
        assert_eq!(
            RunConfig {
                diagnostics: None,
                ..back
            },
            cfg
        );
    }

    #[test]
    fn method_names() {
        for m in [Method::Picard, Method::Mixture, Method::ClosedForm] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("newton".parse::<Method>().is_err());
    }
}
