use std::path::Path;

use grouse_core::bounds::{k1_bound, k2_bound, BoundParams};
use grouse_core::step::{StepConfig, StepMode};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One experiment: problem size, noise, step schedule and run controls.
///
/// The JSON form uses these field names; omitted optional fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub sigma_sq: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `3·(K₁ + K₂)` rounded up.
    #[serde(default)]
    pub max_iters: Option<u64>,
    #[serde(default = "default_eps_star")]
    pub eps_star: f64,
    #[serde(default = "default_mode")]
    pub mode: StepMode,
    #[serde(default)]
    pub sparse_ubar: bool,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Defaults to 1 when `n·d ≤ 10⁵`, else 10.
    #[serde(default)]
    pub record_every: Option<u64>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub out_path: Option<String>,
}

fn default_trials() -> usize {
    1
}

fn default_eps_star() -> f64 {
    1e-4
}

fn default_mode() -> StepMode {
    StepMode::GreedyNoiseless
}

fn default_c() -> f64 {
    1.0
}

fn default_threads() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            sigma_sq: 0.0,
            trials: default_trials(),
            seed: 0,
            max_iters: None,
            eps_star: default_eps_star(),
            mode: default_mode(),
            sparse_ubar: false,
            c: default_c(),
            record_every: None,
            threads: default_threads(),
            out_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.d == 0 || self.d >= self.n {
            return bad(format!("need 0 < d < n, got n = {}, d = {}", self.n, self.d));
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if self.record_every == Some(0) {
            return bad("record_every must be >= 1".into());
        }
        if self.max_iters == Some(0) {
            return bad("max_iters must be >= 1".into());
        }
        if self.mode == StepMode::PracticalNoisy && self.sigma_sq <= 0.0 {
            return bad("the practical schedule needs sigma_sq > 0".into());
        }
        self.bound_params().validate()?;
        self.step_config().validate()?;
        k2_bound(&self.bound_params())?;
        Ok(())
    }

    /// Phase targets use the noisy form whenever `sigma_sq > 0`.
    pub fn noisy(&self) -> bool {
        self.sigma_sq > 0.0
    }

    pub fn bound_params(&self) -> BoundParams {
        BoundParams::new(self.n, self.d).with_sigma_sq(self.sigma_sq).with_eps_star(self.eps_star)
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig { sigma_sq: self.sigma_sq, c: self.c, mode: self.mode, ..StepConfig::default() }
    }

    pub fn resolved_max_iters(&self) -> Result<u64> {
        if let Some(m) = self.max_iters {
            return Ok(m);
        }
        let p = self.bound_params();
        Ok((3.0 * (k1_bound(&p) + k2_bound(&p)?)).ceil() as u64)
    }

    pub fn resolved_record_every(&self) -> u64 {
        self.record_every.unwrap_or(if self.n * self.d <= 100_000 { 1 } else { 10 })
    }

    /// Fills in the defaulted horizon and cadence so the saved config
    /// reproduces the run without re-deriving them.
    pub fn resolved(&self) -> Result<Self> {
        Ok(Self {
            max_iters: Some(self.resolved_max_iters()?),
            record_every: Some(self.resolved_record_every()),
            ..self.clone()
        })
    }
}

/// Reads either a single config object or an array of them.
pub fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<ExperimentConfig>),
        One(ExperimentConfig),
    }
    let parsed: OneOrMany = serde_json::from_str(&text)
        .map_err(|source| HarnessError::Json { path: path.display().to_string(), source })?;
    let configs = match parsed {
        OneOrMany::Many(v) => v,
        OneOrMany::One(c) => vec![c],
    };
    if configs.is_empty() {
        return Err(HarnessError::Config(format!("{} holds no configs", path.display())));
    }
    Ok(configs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_rules() {
        let cfg = ExperimentConfig::new(200, 5);
        cfg.validate().unwrap();
        assert_eq!(cfg.resolved_record_every(), 1);
        assert_eq!(ExperimentConfig::new(20_000, 10).resolved_record_every(), 10);
        let k = k1_bound(&cfg.bound_params()) + k2_bound(&cfg.bound_params()).unwrap();
        assert_eq!(cfg.resolved_max_iters().unwrap(), (3.0 * k).ceil() as u64);
        let resolved = cfg.resolved().unwrap();
        assert_eq!(resolved.resolved_max_iters().unwrap(), cfg.resolved_max_iters().unwrap());
    }

    #[test]
    fn json_uses_field_names_and_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"n": 100, "d": 4, "sigma_sq": 0.01, "mode": "practical", "seed": 7}"#).unwrap();
        assert_eq!(cfg.mode, StepMode::PracticalNoisy);
        assert_eq!((cfg.trials, cfg.threads, cfg.c, cfg.eps_star), (1, 1, 1.0, 1e-4));
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"n": 100, "d": 4, "sigma": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ExperimentConfig::new(100, 4);
        assert!(ExperimentConfig { d: 100, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { trials: 0, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { record_every: Some(0), ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { mode: StepMode::PracticalNoisy, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { eps_star: 0.0, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { c: -1.0, ..base }.validate().is_err());
    }
}
