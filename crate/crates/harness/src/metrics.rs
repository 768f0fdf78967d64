//! Per-tick metrics and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::Experiment;
use crate::HarnessError;

/// One row per cadence tick. Unused fields stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: u64,
    pub gradient_evaluations: u64,
    pub parallel_depth: Option<u64>,
    pub mean_reward: Option<f64>,
    pub loglik_under_theta_opt: Option<f64>,
    pub kl_to_pretrained: Option<f64>,
    pub kl_to_target: Option<f64>,
    pub theta: Option<f64>,
    pub theta_error: Option<f64>,
    pub oracle_theta_error: Option<f64>,
    pub sample_mean: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub grad_norm_sq_running_avg: Option<f64>,
    pub rate_ratio: Option<f64>,
    pub loss: Option<f64>,
    pub fd_rel_error: Option<f64>,
    pub wall_ms: f64,
}

/// Fixed CSV columns of an experiment, without `wall_ms`.
pub fn columns(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::LangevinReward => &["k", "gradient_evaluations", "mean_reward", "loglik_under_theta_opt"],
        Experiment::LangevinScratch => &["k", "gradient_evaluations", "kl_to_target"],
        Experiment::Gauss1d => &[
            "k",
            "gradient_evaluations",
            "parallel_depth",
            "theta",
            "theta_error",
            "oracle_theta_error",
            "sample_mean",
        ],
        Experiment::Rates => &[
            "k",
            "gradient_evaluations",
            "mean_reward",
            "grad_norm_sq",
            "grad_norm_sq_running_avg",
            "rate_ratio",
        ],
        Experiment::FiniteState => &["k", "gradient_evaluations", "loss", "grad_norm_sq", "fd_rel_error"],
    }
}

impl MetricsRow {
    /// Cell text; floats use the shortest decimal that round-trips.
    pub fn cell(&self, column: &str) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        match column {
            "k" => self.k.to_string(),
            "gradient_evaluations" => self.gradient_evaluations.to_string(),
            "parallel_depth" => self.parallel_depth.map(|v| v.to_string()).unwrap_or_default(),
            "mean_reward" => f(self.mean_reward),
            "loglik_under_theta_opt" => f(self.loglik_under_theta_opt),
            "kl_to_pretrained" => f(self.kl_to_pretrained),
            "kl_to_target" => f(self.kl_to_target),
            "theta" => f(self.theta),
            "theta_error" => f(self.theta_error),
            "oracle_theta_error" => f(self.oracle_theta_error),
            "sample_mean" => f(self.sample_mean),
            "grad_norm_sq" => f(self.grad_norm_sq),
            "grad_norm_sq_running_avg" => f(self.grad_norm_sq_running_avg),
            "rate_ratio" => f(self.rate_ratio),
            "loss" => f(self.loss),
            "fd_rel_error" => f(self.fd_rel_error),
            "wall_ms" => self.wall_ms.to_string(),
            other => panic!("unknown metrics column {other}"),
        }
    }
}

pub fn write_csv<W: Write>(
    out: W,
    experiment: Experiment,
    rows: &[MetricsRow],
    wall_ms: bool,
) -> Result<(), HarnessError> {
    let mut cols: Vec<&str> = columns(experiment).to_vec();
    if wall_ms {
        cols.push("wall_ms");
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(&cols)?;
    for r in rows {
        w.write_record(cols.iter().map(|c| r.cell(c)))?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
    Ok(())
}

pub fn csv_string(experiment: Experiment, rows: &[MetricsRow], wall_ms: bool) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, experiment, rows, wall_ms).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// First tick whose metric reaches `threshold`, as a gradient-evaluation count.
pub fn first_crossing(rows: &[MetricsRow], metric: impl Fn(&MetricsRow) -> Option<f64>, threshold: f64) -> Option<u64> {
    rows.iter()
        .find(|r| metric(r).is_some_and(|v| v >= threshold))
        .map(|r| r.gradient_evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        let r = MetricsRow {
            k: 3,
            gradient_evaluations: 30,
            mean_reward: Some(0.1 + 0.2),
            ..Default::default()
        };
        let s = csv_string(Experiment::LangevinReward, &[r], false);
        assert_eq!(s, "k,gradient_evaluations,mean_reward,loglik_under_theta_opt\n3,30,0.30000000000000004,\n");
        let v: f64 = "0.30000000000000004".parse().unwrap();
        assert_eq!(v, 0.1 + 0.2);
    }

    #[test]
    fn crossings_are_monotone_in_threshold() {
        let rows: Vec<MetricsRow> = [-7.0, -5.0, -3.0, -1.5]
            .iter()
            .enumerate()
            .map(|(i, v)| MetricsRow {
                k: i as u64 + 1,
                gradient_evaluations: 10 * (i as u64 + 1),
                loglik_under_theta_opt: Some(*v),
                ..Default::default()
            })
            .collect();
        let at = |t| first_crossing(&rows, |r| r.loglik_under_theta_opt, t);
        assert_eq!(at(-5.8), Some(20));
        assert_eq!(at(-2.0), Some(40));
        assert_eq!(at(0.0), None);
    }
}
