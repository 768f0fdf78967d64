//! Experiment configuration: TOML file, per-experiment defaults and dotted
//! `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use impdiff_core::ScheduleKind;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    LangevinReward,
    LangevinScratch,
    Gauss1d,
    Rates,
    FiniteState,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::LangevinReward,
        Experiment::LangevinScratch,
        Experiment::Gauss1d,
        Experiment::Rates,
        Experiment::FiniteState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::LangevinReward => "langevin-reward",
            Experiment::LangevinScratch => "langevin-scratch",
            Experiment::Gauss1d => "gauss1d",
            Experiment::Rates => "rates",
            Experiment::FiniteState => "finite-state",
        }
    }

    /// Experiment component of the random stream key.
    pub fn stream_id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Sampling algorithm of the `langevin-reward` experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    LangevinTheta0,
    Implicit,
    Guided,
    LangevinThetaOpt,
    Nested,
    Unroll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoglikMode {
    /// `−V(x, θ_opt)`.
    Unnormalized,
    /// `−V(x, θ_opt) − log Z` with `Z` from quadrature.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: Algorithm,
    /// Inner sampler steps per outer step (nested and unroll).
    pub inner_steps: usize,
    pub gamma_x: f64,
    pub gamma_theta: f64,
    pub schedule: ScheduleKind,
    pub eps_base: f64,
    pub schedule_offset: u64,
    pub guidance_lambda: f64,
    pub sigmoid_tau: f64,
    /// Step applied to the unrolled gradient, which carries a factor γ_X.
    pub unroll_eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HexagonConfig {
    pub radius: f64,
    pub theta0: Vec<f64>,
    pub reward_mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScratchConfig {
    pub theta0: Vec<f64>,
    pub theta_star: Vec<f64>,
    /// Target samples per step, drawn fresh from the π*(θ*) grid.
    pub reference_n: usize,
    pub grid_half_width: f64,
    pub grid_pts: usize,
    /// Resolution of the KDE grid for the KL metric.
    pub kl_grid_pts: usize,
    /// θ update; `algorithm.gamma_theta` is the step or Adam learning rate.
    pub optimizer: ThetaOptimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaOptimizer {
    Sgd,
    /// The softmax logits start on a plateau where Γ is of order e⁻¹⁴; plain
    /// steps need tens of thousands of iterations to leave it.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Queue of slots advanced by Euler–Maruyama steps, Γ in closed form.
    Queue,
    /// Forward queue plus a pipelined adjoint queue.
    DoubleQueue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gauss1dConfig {
    pub theta0: f64,
    pub theta_target: f64,
    pub horizon: f64,
    pub slots: usize,
    pub substeps: usize,
    /// Continuous-time rate; each outer step moves θ by `eta · T / M · Γ`.
    pub eta: f64,
    pub warm_start: bool,
    pub antithetic: bool,
    pub pipeline: Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatesProblem {
    Hexagon,
    /// Quadratic potential with a linear reward: ∇ℓ ≡ −1, no decay.
    QuadraticLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub problem: RatesProblem,
    pub c1: f64,
    pub fd_h: f64,
    pub grid_half_width: f64,
    pub grid_pts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiniteStateProblemKind {
    RandomSmooth,
    TwoStateLogistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteStateConfig {
    pub problem: FiniteStateProblemKind,
    pub states: usize,
    pub params: usize,
    pub eta: f64,
    /// Replace the reward table by a constant.
    pub constant_reward: Option<f64>,
    pub fd_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON file with a `theta` array from a finished implicit run.
    pub theta_opt: Option<PathBuf>,
    pub loglik: LoglikMode,
    pub thresholds: Vec<f64>,
    /// Stop once the log-likelihood metric reaches this value.
    pub stop_at_loglik: Option<f64>,
    pub dump_ensemble: bool,
    pub wall_ms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: Option<u64>,
    pub n: usize,
    pub steps: u64,
    pub cadence: u64,
    pub algorithm: AlgorithmConfig,
    pub hexagon: HexagonConfig,
    pub scratch: ScratchConfig,
    pub gauss1d: Gauss1dConfig,
    pub rates: RatesConfig,
    pub finite_state: FiniteStateConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            seed: None,
            n: 1000,
            steps: 5000,
            cadence: 1,
            algorithm: AlgorithmConfig {
                kind: Algorithm::Implicit,
                inner_steps: 1,
                gamma_x: 0.05,
                gamma_theta: 0.5,
                schedule: ScheduleKind::Constant,
                eps_base: 1.0,
                schedule_offset: 1,
                guidance_lambda: 1.0,
                sigmoid_tau: 0.1,
                unroll_eta: 20.0,
            },
            hexagon: HexagonConfig {
                radius: 2.0,
                theta0: vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
                reward_mu: vec![1.0, 0.95],
            },
            scratch: ScratchConfig {
                theta0: vec![-7.0, -7.0, -7.0, -7.0, -7.0, -7.0, 11.0],
                theta_star: vec![1.5, 0.0, 1.5, 0.0, 1.5, 0.0, 0.0],
                reference_n: 1000,
                grid_half_width: 4.0,
                grid_pts: 401,
                kl_grid_pts: 201,
                optimizer: ThetaOptimizer::Adam,
            },
            gauss1d: Gauss1dConfig {
                theta0: 0.0,
                theta_target: 1.0,
                horizon: 3.0,
                slots: 1024,
                substeps: 1,
                eta: 1.0,
                warm_start: false,
                antithetic: true,
                pipeline: Pipeline::Queue,
            },
            rates: RatesConfig {
                problem: RatesProblem::Hexagon,
                c1: 1.0,
                fd_h: 1e-4,
                grid_half_width: 4.0,
                grid_pts: 201,
            },
            finite_state: FiniteStateConfig {
                problem: FiniteStateProblemKind::RandomSmooth,
                states: 5,
                params: 3,
                eta: 0.5,
                constant_reward: None,
                fd_h: 1e-5,
            },
            output: OutputConfig {
                theta_opt: None,
                loglik: LoglikMode::Unnormalized,
                thresholds: vec![-5.8, -2.0],
                stop_at_loglik: None,
                dump_ensemble: false,
                wall_ms: false,
            },
        };
        match experiment {
            Experiment::LangevinReward => {}
            Experiment::LangevinScratch => {
                c.steps = 40_000;
                c.cadence = 1000;
                c.algorithm.gamma_theta = 0.01;
            }
            Experiment::Gauss1d => {
                c.n = 200;
                c.steps = 2 * c.gauss1d.slots as u64;
                c.cadence = 16;
            }
            Experiment::Rates => {
                c.steps = 4096;
                c.cadence = 16;
                c.algorithm.schedule = ScheduleKind::Thm2;
                // past the peak of ‖∇ℓ‖ along θ₂; from (1,0,1,0,1,0) the
                // θ-steps c1/k do not reach the decaying region within 4096 steps
                c.hexagon.theta0 = vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0];
            }
            Experiment::FiniteState => {
                c.n = 1;
                c.steps = 200;
            }
        }
        c
    }

    /// Defaults, then the file (if any), then overrides, in that order.
    pub fn load(
        experiment: Experiment,
        file: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, HarnessError> {
        let mut value = toml::Value::try_from(Self::defaults(experiment))
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            let file_value: toml::Value =
                toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, file_value);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if let Some(s) = seed {
            set_path(&mut value, "seed", toml::Value::Integer(s as i64))?;
        }
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        if cfg.experiment != experiment {
            return Err(HarnessError::Config(format!(
                "config names experiment `{}` but `{experiment}` was requested",
                cfg.experiment
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64, HarnessError> {
        self.seed
            .ok_or_else(|| HarnessError::Config("a seed is required (--seed)".into()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        self.seed()?;
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.cadence == 0 {
            return bad("cadence must be positive");
        }
        let a = &self.algorithm;
        if !(a.gamma_x > 0.0) || !(a.gamma_theta >= 0.0) || a.inner_steps == 0 {
            return bad("algorithm needs gamma_x > 0, gamma_theta >= 0 and inner_steps >= 1");
        }
        match self.experiment {
            Experiment::LangevinReward => {
                if self.hexagon.theta0.len() != 6 || self.hexagon.reward_mu.len() != 2 {
                    return bad("hexagon.theta0 needs 6 entries and hexagon.reward_mu 2");
                }
                if a.kind == Algorithm::LangevinThetaOpt && self.output.theta_opt.is_none() {
                    return Err(HarnessError::MissingThetaOpt);
                }
            }
            Experiment::LangevinScratch => {
                if self.scratch.theta0.len() != 7 || self.scratch.theta_star.len() != 7 {
                    return bad("scratch.theta0 and scratch.theta_star need 7 entries");
                }
            }
            Experiment::Gauss1d => {
                let g = &self.gauss1d;
                if g.slots == 0 || g.substeps == 0 || !(g.horizon > 0.0) || !(g.eta >= 0.0) {
                    return bad("gauss1d needs slots, substeps >= 1, horizon > 0 and eta >= 0");
                }
                if g.antithetic && self.n % 2 == 1 {
                    return bad("antithetic sampling needs an even n");
                }
            }
            Experiment::Rates => {
                if !(self.rates.c1 > 0.0) || !(self.rates.fd_h > 0.0) {
                    return bad("rates needs c1 > 0 and fd_h > 0");
                }
            }
            Experiment::FiniteState => {
                if self.finite_state.states < 2 || self.finite_state.params == 0 {
                    return bad("finite_state needs states >= 2 and params >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// `a.b.c=value`; the value is parsed as a TOML literal, falling back to a string.
pub fn apply_override(value: &mut toml::Value, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let parsed = parse_literal(raw.trim());
    set_path(value, key.trim(), parsed)
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(value: &mut toml::Value, key: &str, new: toml::Value) -> Result<(), HarnessError> {
    let mut cur = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), new);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(HarnessError::Config(format!("empty override key in `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let c = ExperimentConfig::load(
            Experiment::LangevinReward,
            None,
            &["algorithm.kind=nested".into(), "algorithm.inner_steps=10".into(), "n=20".into()],
            Some(3),
        )
        .unwrap();
        assert_eq!(c.algorithm.kind, Algorithm::Nested);
        assert_eq!(c.algorithm.inner_steps, 10);
        assert_eq!(c.n, 20);
        assert_eq!(c.seed, Some(3));
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(ExperimentConfig::load(Experiment::Rates, None, &[], None).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::load(Experiment::Rates, None, &["rates.bogus=1".into()], Some(1)).is_err());
    }

    #[test]
    fn theta_opt_required_for_post_training_run() {
        let e = ExperimentConfig::load(
            Experiment::LangevinReward,
            None,
            &["algorithm.kind=langevin-theta-opt".into()],
            Some(1),
        )
        .unwrap_err();
        assert!(matches!(e, HarnessError::MissingThetaOpt));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::defaults(Experiment::Gauss1d);
        c.seed = Some(9);
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
