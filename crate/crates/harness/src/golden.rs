//! Golden oracle values, regenerated by `impdiff golden regenerate`.

use std::collections::BTreeMap;
use std::path::Path;

use impdiff_core::estimators::IndicatorGaussianReward;
use impdiff_core::oracles::{
    analytic_path_kl_1d, diffusion1d_theta_path, example1_moments, finite_difference_grad, quadrature_loss, GridSpec,
    QuadratureObjective,
};
use impdiff_core::potentials::{MixturePotential, WeightParam};
use impdiff_core::ParamVector;
use serde_json::{json, Value};

use crate::experiments::{json_f64, json_vec};
use crate::HarnessError;

pub const HEXAGON_THETA0: [f64; 6] = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];

pub fn golden_values() -> Result<BTreeMap<String, Value>, HarnessError> {
    let mut g = BTreeMap::new();
    let pot = MixturePotential::hexagon(2.0, WeightParam::Softmax)?;
    let reward = IndicatorGaussianReward::default();
    let obj = QuadratureObjective::reward_only(&reward);
    let grid = GridSpec::default_for_dim(2)?;
    let theta0 = ParamVector::new(HEXAGON_THETA0.to_vec())?;
    g.insert("hexagon_theta0_loss".into(), json_f64(quadrature_loss(&pot, &theta0, &obj, &grid)?));
    let plain = grid.clone().without_refine_check();
    let fd = finite_difference_grad(
        |t: &[f64]| quadrature_loss(&pot, &ParamVector::new(t.to_vec())?, &obj, &plain),
        &HEXAGON_THETA0,
        1e-4,
    )?;
    g.insert("hexagon_theta0_fd_grad".into(), json_vec(&fd));

    let moments: Vec<Value> = [1u32, 5, 20, 100]
        .iter()
        .map(|&s| {
            let (m, v) = example1_moments(s, 0.1, 0.0, 3.0, 4.0)?;
            Ok(json!({ "s": s, "mean": json_f64(m), "variance": json_f64(v) }))
        })
        .collect::<Result<_, HarnessError>>()?;
    g.insert("example1_moments".into(), Value::Array(moments));

    let paths: Vec<Value> = [2.0, 4.0, 6.0]
        .iter()
        .map(|&t| {
            let p = diffusion1d_theta_path(0.0, 1.0, 1.0, t)?;
            Ok(json!({ "horizon": json_f64(t), "theta_2t": json_f64(p.terminal_theta()) }))
        })
        .collect::<Result<_, HarnessError>>()?;
    g.insert("diffusion1d_theta_path".into(), Value::Array(paths));
    g.insert("path_kl_1d_t3".into(), json_f64(analytic_path_kl_1d(1.0, 0.0, 3.0)));
    let decay = 1.0 - (-6.0f64).exp();
    g.insert("sde_mean_theta2_t3".into(), json_f64(2.0 * decay));
    g.insert("adjoint_grad_theta1_t3".into(), json_f64(-2.0 * (decay - 2.0) * decay));
    Ok(g)
}

pub fn regenerate(path: &Path) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let mut text = serde_json::to_vec_pretty(&golden_values()?)?;
    text.push(b'\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
