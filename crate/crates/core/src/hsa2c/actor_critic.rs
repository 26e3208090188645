//! Softmax-linear actor and linear critic over one-hot cell features,
//! k-step returns and advantage gradients.

use rand::Rng;

use super::env::{ToyEnv, ACTIONS};
use crate::error::{check_dim, Result};

/// Layout of the concatenated parameter vector: policy weights
/// `theta[s * ACTIONS + a]` first, then value weights `theta_v[s]` from
/// [`ActorCritic::split`] on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActorCritic {
    pub cells: usize,
}

impl ActorCritic {
    pub fn new(cells: usize) -> Self {
        Self { cells }
    }

    pub fn split(&self) -> usize {
        self.cells * ACTIONS
    }

    pub fn dim(&self) -> usize {
        self.cells * (ACTIONS + 1)
    }

    /// Action probabilities in cell `s`.
    pub fn policy(&self, params: &[f64], s: usize) -> [f64; ACTIONS] {
        let logits = &params[s * ACTIONS..(s + 1) * ACTIONS];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p = [0.0; ACTIONS];
        let mut z = 0.0;
        for (p, l) in p.iter_mut().zip(logits) {
            *p = (l - max).exp();
            z += *p;
        }
        p.iter_mut().for_each(|p| *p /= z);
        p
    }

    pub fn log_policy(&self, params: &[f64], s: usize, a: usize) -> f64 {
        let logits = &params[s * ACTIONS..(s + 1) * ACTIONS];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[a] - lse
    }

    pub fn value(&self, params: &[f64], s: usize) -> f64 {
        params[self.split() + s]
    }

    pub fn sample_action(&self, params: &[f64], s: usize, rng: &mut impl Rng) -> usize {
        let p = self.policy(params, s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        ACTIONS - 1
    }
}

/// A k-step segment of experience.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `(state, action, reward)`.
    pub steps: Vec<(usize, usize, f64)>,
    /// Bootstrap value: 0 after reaching the goal, else the critic's value
    /// of the last state reached.
    pub r_init: f64,
    /// Discounted returns of episodes that ended inside this segment.
    pub finished: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Acts for up to `t_max` steps with the policy in `params`, stopping early
/// when an episode ends.
pub fn rollout(env: &mut ToyEnv, ac: &ActorCritic, params: &[f64], t_max: usize, rng: &mut impl Rng) -> Trajectory {
    assert!(t_max >= 1, "t_max must be >= 1");
    let mut traj = Trajectory::default();
    for _ in 0..t_max {
        let s = env.state();
        let a = ac.sample_action(params, s, rng);
        let step = env.step(a);
        traj.steps.push((s, a, step.reward));
        traj.r_init = if step.terminal { 0.0 } else { ac.value(params, step.next) };
        if let Some(ret) = step.episode_return {
            traj.finished.push(ret);
            break;
        }
    }
    traj
}

/// `R_i = r_i + gamma R_{i+1}`, seeded with the bootstrap value.
pub fn kstep_returns(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut r = traj.r_init;
    let mut out = vec![0.0; traj.len()];
    for (o, &(_, _, reward)) in out.iter_mut().zip(&traj.steps).rev() {
        r = reward + gamma * r;
        *o = r;
    }
    out
}

/// Adds the descent direction of one segment to `out` (length
/// [`ActorCritic::dim`]).
///
/// The actor block is `-sum_i grad log pi(a_i|s_i) (R_i - V(s_i))` with the
/// advantage held constant, so a descent step raises the likelihood of
/// better-than-expected actions. The critic block is
/// `sum_i d(R_i - V(s_i))^2 / d theta_v`.
pub fn ac_gradients(traj: &Trajectory, returns: &[f64], ac: &ActorCritic, params: &[f64], out: &mut [f64]) -> Result<()> {
    check_dim(traj.len(), returns.len())?;
    check_dim(ac.dim(), params.len())?;
    check_dim(ac.dim(), out.len())?;
    let split = ac.split();
    for (&(s, a, _), &r) in traj.steps.iter().zip(returns) {
        let adv = r - ac.value(params, s);
        let p = ac.policy(params, s);
        for (b, pb) in p.iter().enumerate() {
            let indicator = if b == a { 1.0 } else { 0.0 };
            out[s * ACTIONS + b] -= (indicator - pb) * adv;
        }
        out[split + s] -= 2.0 * adv;
    }
    Ok(())
}
