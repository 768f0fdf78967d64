use super::{
    estimator_stream, init_stream, norm, require_steps, transition_stream, update_theta, InitialDistribution,
    Observer, Recorder, RunTrace, StepInfo,
};
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::estimators::{EstimateContext, GradientEstimator, Reward};
use crate::rng::RngStream;
use crate::samplers::{Drift, SamplingOperator, StepContext};

/// The queue `[p^(1), …, p^(M)]`; `p^(0)` is a fresh `p0` draw every step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    /// `slots[m − 1]` holds `p^(m)`; `None` until the ramp-up reaches it.
    pub slots: Vec<Option<ParticleEnsemble>>,
    /// Number of leading slots that hold a distribution.
    pub filled_through: usize,
}

impl QueueState {
    pub fn empty(m: usize) -> Self {
        Self {
            slots: vec![None; m],
            filled_through: 0,
        }
    }

    /// Every slot filled with an independent `p0` draw.
    pub fn warm(m: usize, p0: &InitialDistribution, rng: &RngStream) -> Result<Self> {
        let slots = (1..=m)
            .map(|pos| p0.draw(&init_stream(rng, pos, 0)).map(Some))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            filled_through: m,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn last(&self) -> Option<&ParticleEnsemble> {
        self.slots.last().and_then(Option::as_ref)
    }

    /// Deepest filled slot.
    pub fn deepest(&self) -> Option<&ParticleEnsemble> {
        self.slots.iter().rev().find_map(Option::as_ref)
    }
}

/// Finite-horizon single loop with a queue of `M` distributions.
///
/// At step `k`, all slot transitions `p^(m+1) ← Σ_m(p^(m), θ_k)` use `θ_k`, and
/// `θ_{k+1} = θ_k − η Γ(p_k^(M), θ_k)`. Without warm start the queue fills
/// over the first `M` steps and θ stays frozen until `k ≥ M`.
#[allow(clippy::too_many_arguments)]
pub fn run_implicit_finite_queue<S, G>(
    theta0: &[f64],
    p0: &InitialDistribution,
    m: usize,
    outer_steps: u64,
    sampler: &S,
    gamma_fn: &G,
    eta: f64,
    rng: &RngStream,
    warm_start: bool,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    S: SamplingOperator + ?Sized,
    G: GradientEstimator + ?Sized,
{
    require_steps(m as u64, "queue length M")?;
    require_steps(outer_steps, "outer steps K")?;
    check_dim("initial distribution", sampler.dim(), p0.dim())?;
    let cost = sampler.evaluations_per_step();
    let mut queue = if warm_start {
        QueueState::warm(m, p0, rng)?
    } else {
        QueueState::empty(m)
    };
    let mut rec = Recorder::new(obs, theta0);
    let mut theta = theta0.to_vec();
    for k in 0..outer_steps {
        let head = p0.draw(&init_stream(rng, 0, k))?;
        let g = match queue.last() {
            Some(tail) => {
                let c = EstimateContext {
                    k,
                    rng: estimator_stream(rng, k),
                };
                Some(gamma_fn.estimate(tail, &theta, &c).map_err(|e| e.at_step(k, Some(m as u64)))?)
            }
            None => None,
        };
        let mut next = Vec::with_capacity(m);
        let mut moved = 0u64;
        for slot in 0..m {
            let src = if slot == 0 { Some(&head) } else { queue.slots[slot - 1].as_ref() };
            next.push(match src {
                Some(src) => {
                    moved += 1;
                    Some(
                        sampler
                            .step(src, &theta, StepContext::slot(slot), &transition_stream(rng, slot, k))
                            .map_err(|e| e.at_step(k, Some(slot as u64)))?,
                    )
                }
                None => None,
            });
        }
        queue.filled_through = next.iter().take_while(|s| s.is_some()).count();
        queue.slots = next;
        let grad_norm = match &g {
            Some(g) => {
                theta = update_theta(&theta, eta, g).map_err(|e| e.at_step(k, None))?;
                norm(g)
            }
            None => 0.0,
        };
        let info = StepInfo {
            gamma: sampler.nominal_step(),
            eps: 1.0,
            theta_step: if g.is_some() { eta } else { 0.0 },
            grad_norm,
            evals: moved * cost,
            depth: cost,
        };
        let view = queue.deepest().expect("slot 1 is filled after one step");
        if rec.step(k, &theta, view, info, k + 1 == outer_steps).is_break() {
            break;
        }
    }
    let terminal = queue.deepest().cloned();
    Ok(rec.finish(terminal))
}

/// Queue of `M` slots over `T` sampler steps, `M | T`: each slot advances
/// `T/M` sub-steps per outer step. `sampler` must perform exactly `T/M`
/// sequential steps per call.
#[allow(clippy::too_many_arguments)]
pub fn run_queue_m_divides_t<S, G>(
    theta0: &[f64],
    p0: &InitialDistribution,
    m: usize,
    total_steps: usize,
    outer_steps: u64,
    sampler: &S,
    gamma_fn: &G,
    eta: f64,
    rng: &RngStream,
    warm_start: bool,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    S: SamplingOperator + ?Sized,
    G: GradientEstimator + ?Sized,
{
    if m == 0 || !total_steps.is_multiple_of(m) {
        return Err(Error::invalid(format!("M = {m} does not divide T = {total_steps}")));
    }
    let per_slot = (total_steps / m) as u64;
    if sampler.evaluations_per_step() != per_slot {
        return Err(Error::invalid(format!(
            "slot sampler performs {} sub-steps, expected T/M = {per_slot}",
            sampler.evaluations_per_step()
        )));
    }
    run_implicit_finite_queue(theta0, p0, m, outer_steps, sampler, gamma_fn, eta, rng, warm_start, obs)
}

#[derive(Debug, Clone)]
struct AdjointBatch {
    z: Vec<f64>,
    a: Vec<f64>,
    g: Vec<f64>,
}

/// Pipelined forward and adjoint queues for an ODE/SDE sampler.
///
/// Forward slots take Euler steps of size `h = T/M` at times `m·h`; adjoint
/// level `m` takes one backward Euler step of `(Z, A, G)` at time `T − m·h`.
/// `Z^(0)` is loaded from `Y_k^(M)` and θ is updated from `−mean G^(M)`.
/// Both queues ramp up from empty, so θ first moves after `2M + 1` steps.
#[allow(clippy::too_many_arguments)]
pub fn run_double_queue_adjoint<D, R>(
    theta0: &[f64],
    p0: &InitialDistribution,
    m: usize,
    outer_steps: u64,
    drift: &D,
    reward: &R,
    eta: f64,
    rng: &RngStream,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    D: Drift + ?Sized,
    R: Reward + ?Sized,
{
    if !reward.is_differentiable() {
        return Err(Error::NotDifferentiable);
    }
    require_steps(m as u64, "queue length M")?;
    require_steps(outer_steps, "outer steps K")?;
    check_dim("initial distribution", drift.dim(), p0.dim())?;
    check_dim("parameter", drift.num_params(), theta0.len())?;
    let (d, p) = (drift.dim(), drift.num_params());
    let big_t = drift.horizon();
    let h = big_t / m as f64;
    let sig = drift.noise_scale() * h.sqrt();
    let mut fwd: Vec<Option<ParticleEnsemble>> = vec![None; m];
    let mut adj: Vec<Option<AdjointBatch>> = vec![None; m + 1];
    let mut rec = Recorder::new(obs, theta0);
    let mut theta = theta0.to_vec();
    let (mut mu, mut jy, mut jt) = (vec![0.0; d], vec![0.0; d * d], vec![0.0; d * p]);
    let mut xi = vec![0.0; d];
    for k in 0..outer_steps {
        let head = p0.draw(&init_stream(rng, 0, k))?;
        let n = head.len();
        // θ update from the finished adjoint level
        let g = adj[m].as_ref().map(|b| {
            let mut g = vec![0.0; p];
            for row in b.g.chunks_exact(p) {
                for (acc, v) in g.iter_mut().zip(row) {
                    *acc -= v;
                }
            }
            g.iter_mut().for_each(|v| *v /= n as f64);
            g
        });
        let mut moved = 0u64;
        // forward queue
        let mut next_fwd = Vec::with_capacity(m);
        for slot in 0..m {
            let src = if slot == 0 { Some(&head) } else { fwd[slot - 1].as_ref() };
            next_fwd.push(match src {
                None => None,
                Some(src) => {
                    moved += 1;
                    let t = slot as f64 * h;
                    let key = transition_stream(rng, slot, k);
                    let mut out = Vec::with_capacity(src.as_slice().len());
                    for (i, y) in src.points().enumerate() {
                        drift.drift_into(t, y, &theta, &mut mu);
                        if sig != 0.0 {
                            key.fill_particle_normal(i, false, &mut xi);
                        }
                        out.extend((0..d).map(|a| y[a] + h * mu[a] + sig * xi[a]));
                    }
                    Some(ParticleEnsemble::new(d, out).map_err(|e| e.at_step(k, Some(slot as u64)))?)
                }
            });
        }
        // adjoint queue
        let mut next_adj: Vec<Option<AdjointBatch>> = vec![None; m + 1];
        if let Some(y) = fwd[m - 1].as_ref() {
            let mut a = vec![0.0; n * d];
            for (pt, row) in y.points().zip(a.chunks_exact_mut(d)) {
                reward.grad_into(pt, row)?;
            }
            next_adj[0] = Some(AdjointBatch {
                z: y.as_slice().to_vec(),
                a,
                g: vec![0.0; n * p],
            });
        }
        for level in 0..m {
            let Some(b) = adj[level].as_ref() else { continue };
            moved += 1;
            let t = big_t - level as f64 * h;
            let mut nb = b.clone();
            for i in 0..b.z.len() / d {
                let z = &b.z[i * d..(i + 1) * d];
                let a = &b.a[i * d..(i + 1) * d];
                drift.drift_into(t, z, &theta, &mut mu);
                drift.jac_y_into(t, z, &theta, &mut jy);
                drift.jac_theta_into(t, z, &theta, &mut jt);
                for c in 0..d {
                    nb.z[i * d + c] -= h * mu[c];
                    nb.a[i * d + c] += h * (0..d).map(|r| a[r] * jy[r * d + c]).sum::<f64>();
                }
                for j in 0..p {
                    nb.g[i * p + j] += h * (0..d).map(|r| a[r] * jt[r * p + j]).sum::<f64>();
                }
            }
            next_adj[level + 1] = Some(nb);
        }
        fwd = next_fwd;
        adj = next_adj;
        let grad_norm = match &g {
            Some(g) => {
                theta = update_theta(&theta, eta, g).map_err(|e| e.at_step(k, None))?;
                norm(g)
            }
            None => 0.0,
        };
        let info = StepInfo {
            gamma: h,
            eps: 1.0,
            theta_step: if g.is_some() { eta } else { 0.0 },
            grad_norm,
            evals: moved,
            depth: 1,
        };
        let view = fwd.iter().rev().find_map(Option::as_ref).expect("slot 1 is filled");
        if rec.step(k, &theta, view, info, k + 1 == outer_steps).is_break() {
            break;
        }
    }
    let terminal = fwd.iter().rev().find_map(Option::as_ref).cloned();
    Ok(rec.finish(terminal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{Diffusion1dClosedForm, NegSquaredDistance, ZeroEstimator};
    use crate::optimizers::{run_implicit_infinite, ImplicitOptions, NoObserver, ThetaStep};
    use crate::potentials::{MixturePotential, WeightParam};
    use crate::samplers::{DiffusionDrift, DiffusionSlotSampler, LangevinSampler};

    fn one_d(n: usize) -> InitialDistribution {
        InitialDistribution::standard_normal(n, 1)
    }

    #[test]
    fn length_one_queue_equals_reinitialized_single_loop() {
        let pot = MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap();
        let s = LangevinSampler::new(pot.clone(), 0.05);
        let est = crate::estimators::RewardCovariance {
            potential: pot,
            reward: crate::estimators::IndicatorGaussianReward::default(),
        };
        let p0 = InitialDistribution::standard_normal(40, 2);
        let rng = RngStream::new(11);
        let th = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let a = run_implicit_finite_queue(&th, &p0, 1, 12, &s, &est, 0.5, &rng, true, &mut NoObserver).unwrap();
        let b = run_implicit_infinite(
            &th,
            &p0,
            12,
            &s,
            &est,
            ThetaStep::Constant { eta: 0.5 },
            ImplicitOptions { reinit: true },
            &rng,
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(a.theta_path(), b.theta_path());
    }

    #[test]
    fn no_warm_start_freezes_theta_until_full() {
        let s = DiffusionSlotSampler::new(DiffusionDrift::sde(3.0), 16, 1).unwrap();
        let est = Diffusion1dClosedForm {
            theta_target: 1.0,
            horizon: 3.0,
        };
        let t = run_implicit_finite_queue(&[0.0], &one_d(10), 16, 15, &s, &est, 1.0, &RngStream::new(1), false, &mut NoObserver)
            .unwrap();
        assert_eq!(t.terminal_theta, vec![0.0]);
        // ramp-up moves 1, 2, …, 15 slots
        assert_eq!(t.gradient_evaluations(), (1..=15).sum::<u64>());
        let t = run_implicit_finite_queue(&[0.0], &one_d(10), 16, 17, &s, &est, 1.0, &RngStream::new(1), false, &mut NoObserver)
            .unwrap();
        assert_ne!(t.terminal_theta, vec![0.0]);
    }

    #[test]
    fn budget_is_k_times_m() {
        let s = DiffusionSlotSampler::new(DiffusionDrift::sde(2.0), 8, 2).unwrap();
        let est = ZeroEstimator { num_params: 1 };
        let t = run_implicit_finite_queue(&[0.0], &one_d(5), 8, 10, &s, &est, 1.0, &RngStream::new(1), true, &mut NoObserver)
            .unwrap();
        assert_eq!(t.gradient_evaluations(), 10 * 8 * 2);
        assert_eq!(t.parallel_depth(), 10 * 2);
    }

    #[test]
    fn m_divides_t_checks_and_matches() {
        let est = Diffusion1dClosedForm {
            theta_target: 1.0,
            horizon: 2.0,
        };
        let s = DiffusionSlotSampler::new(DiffusionDrift::sde(2.0), 8, 1).unwrap();
        let rng = RngStream::new(4);
        let a = run_queue_m_divides_t(&[0.0], &one_d(8), 8, 8, 20, &s, &est, 1.0, &rng, true, &mut NoObserver).unwrap();
        let b = run_implicit_finite_queue(&[0.0], &one_d(8), 8, 20, &s, &est, 1.0, &rng, true, &mut NoObserver).unwrap();
        assert_eq!(a, b);
        assert!(run_queue_m_divides_t(&[0.0], &one_d(8), 3, 8, 20, &s, &est, 1.0, &rng, true, &mut NoObserver).is_err());
        assert!(run_queue_m_divides_t(&[0.0], &one_d(8), 4, 8, 20, &s, &est, 1.0, &rng, true, &mut NoObserver).is_err());
    }

    #[test]
    fn double_queue_needs_primed_pipeline() {
        let drift = DiffusionDrift::ode(2.0);
        let r = NegSquaredDistance::new(vec![1.0]);
        let t = run_double_queue_adjoint(&[0.0], &one_d(10), 6, 12, &drift, &r, 1.0, &RngStream::new(2), &mut NoObserver).unwrap();
        assert_eq!(t.terminal_theta, vec![0.0]);
        let t = run_double_queue_adjoint(&[0.0], &one_d(10), 6, 14, &drift, &r, 1.0, &RngStream::new(2), &mut NoObserver).unwrap();
        assert_ne!(t.terminal_theta, vec![0.0]);
    }

    #[test]
    fn taint_travels_one_slot_per_step() {
        // A marked particle placed in slot m at step k must reach slot m+1 at
        // step k+1 and nowhere else; the ODE drift keeps particles separate.
        let s = DiffusionSlotSampler::new(DiffusionDrift::ode(1.0), 4, 1).unwrap();
        let mut q = QueueState::warm(4, &one_d(3), &RngStream::new(1)).unwrap();
        let marker = 1e6;
        let mut slot1 = q.slots[1].clone().unwrap().into_raw();
        slot1[2] = marker;
        q.slots[1] = Some(ParticleEnsemble::new(1, slot1).unwrap());
        let theta = [0.3];
        let head = ParticleEnsemble::new(1, vec![0.0; 3]).unwrap();
        let next: Vec<ParticleEnsemble> = (0..4)
            .map(|m| {
                let src = if m == 0 { &head } else { q.slots[m - 1].as_ref().unwrap() };
                s.step(src, &theta, StepContext::slot(m), &RngStream::new(0)).unwrap()
            })
            .collect();
        for (m, e) in next.iter().enumerate() {
            let tainted = e.as_slice().iter().any(|v| v.abs() > 1e5);
            assert_eq!(tainted, m == 2, "slot {}", m + 1);
        }
    }
}
