//! Gradient descent on a finite-state Gibbs loss with the implicit gradient.

use std::collections::BTreeMap;

use impdiff_core::estimators::{finite_state_implicit_gradient, FiniteStateProblem};
use impdiff_core::oracles::finite_difference_grad;
use serde_json::Value;

use super::{json_f64, json_vec, stream, RunOutput};
use crate::config::{ExperimentConfig, FiniteStateProblemKind};
use crate::metrics::MetricsRow;
use crate::HarnessError;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let rng = stream(cfg)?;
    let f = &cfg.finite_state;
    let base = match f.problem {
        FiniteStateProblemKind::RandomSmooth => FiniteStateProblem::random_smooth(f.states, f.params, &rng)?,
        FiniteStateProblemKind::TwoStateLogistic => FiniteStateProblem::two_state_logistic(),
    };
    let problem = match f.constant_reward {
        Some(c) => {
            let table = base.clone();
            FiniteStateProblem::new(
                base.num_states(),
                base.num_params(),
                move |th, v, jac| {
                    let (tv, tj) = table.table(th).expect("parameter length checked by the driver");
                    v.copy_from_slice(&tv);
                    jac.copy_from_slice(&tj);
                },
                vec![c; base.num_states()],
            )?
        }
        None => base,
    };
    let start = std::time::Instant::now();
    let mut theta = vec![0.0; problem.num_params()];
    let mut rows = Vec::new();
    let mut worst_fd: f64 = 0.0;
    for k in 1..=cfg.steps {
        let g = finite_state_implicit_gradient(&problem, &theta)?;
        let tick = k % cfg.cadence == 0 || k == cfg.steps;
        if tick {
            let fd = finite_difference_grad(|t: &[f64]| problem.loss(t), &theta, f.fd_h)?;
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = if scale > 0.0 { diff / scale } else { diff };
            worst_fd = worst_fd.max(rel);
            rows.push(MetricsRow {
                k: k - 1,
                gradient_evaluations: k - 1,
                loss: Some(problem.loss(&theta)?),
                grad_norm_sq: Some(g.iter().map(|v| v * v).sum()),
                fd_rel_error: Some(rel),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                ..Default::default()
            });
        }
        theta.iter_mut().zip(&g).for_each(|(t, v)| *t -= f.eta * v);
    }
    let mut summary = BTreeMap::new();
    summary.insert("terminal_theta".into(), json_vec(&theta));
    summary.insert("terminal_loss".into(), json_f64(problem.loss(&theta)?));
    summary.insert("initial_loss".into(), json_f64(problem.loss(&vec![0.0; problem.num_params()])?));
    summary.insert("max_fd_rel_error".into(), json_f64(worst_fd));
    summary.insert("stationary".into(), json_vec(&problem.stationary(&theta)?));
    summary.insert("reward".into(), json_vec(problem.reward()));
    summary.insert("steps".into(), Value::from(cfg.steps));
    Ok(RunOutput {
        config: cfg.clone(),
        rows,
        summary,
        terminal_theta: theta,
        terminal_ensemble: None,
    })
}
