//! Behavior cloning of the logging policy.
//!
//! Picks and bans are fitted separately as masked multinomial logistic
//! regressions over the same block features the bandits use. The fitted
//! probabilities of the logged actions become the records' propensities.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    action_probabilities, log_prob_coefficients, ActionDistribution, ParamRole, PolicyParameters,
    TargetPolicy,
};
use crate::domain::{ActionKind, DecisionRecord, N_MAPS};
use crate::error::{Error, Result};
use crate::features::CONTEXT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorFitConfig {
    pub max_iterations: usize,
    /// Stop once every gradient entry is below this.
    pub tolerance: f64,
    /// Small L2 term keeping the optimum finite on separable data.
    pub l2: f64,
}

impl Default for BehaviorFitConfig {
    fn default() -> Self {
        BehaviorFitConfig {
            max_iterations: 100,
            tolerance: 1e-8,
            l2: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    pub pick: PolicyParameters,
    pub ban: PolicyParameters,
    pub converged: bool,
}

impl BehaviorPolicy {
    pub fn distribution_for(&self, record: &DecisionRecord) -> Result<ActionDistribution> {
        let params = match record.kind {
            ActionKind::Pick => &self.pick,
            ActionKind::Ban => &self.ban,
        };
        action_probabilities(params, &record.context, true, 0)
    }

    /// Writes μ(logged action | context) into every record.
    pub fn attach_propensities(&self, records: &mut [DecisionRecord]) -> Result<()> {
        for r in records.iter_mut() {
            let p = self.distribution_for(r)?.prob(r.action);
            r.behavior_propensity = Some(p);
        }
        Ok(())
    }
}

impl TargetPolicy for BehaviorPolicy {
    fn distribution(&self, record: &DecisionRecord) -> Result<ActionDistribution> {
        self.distribution_for(record)
    }

    fn label(&self) -> String {
        "Behavior clone".into()
    }
}

pub fn fit_behavior_policy(
    decisions: &[DecisionRecord],
    config: &BehaviorFitConfig,
) -> Result<BehaviorPolicy> {
    if decisions.is_empty() {
        return Err(Error::Empty(
            "no decisions to fit a behavior policy on".into(),
        ));
    }
    let picks: Vec<&DecisionRecord> = decisions
        .iter()
        .filter(|d| d.kind == ActionKind::Pick)
        .collect();
    let bans: Vec<&DecisionRecord> = decisions
        .iter()
        .filter(|d| d.kind == ActionKind::Ban)
        .collect();
    let (pick, pick_ok) = fit_one(&picks, ParamRole::SplitPick, config)?;
    let (ban, ban_ok) = fit_one(&bans, ParamRole::SplitBan, config)?;
    Ok(BehaviorPolicy {
        pick,
        ban,
        converged: pick_ok && ban_ok,
    })
}

/// Mean log-likelihood minus the L2 term, with its gradient and the negated
/// Hessian when requested.
struct Objective {
    value: f64,
    grad: Vec<f64>,
    neg_hessian: Option<DMatrix<f64>>,
}

/// Log-likelihood, gradient and Hessian summed over one chunk.
type Partial = (f64, Vec<f64>, Vec<f64>);

fn objective(
    records: &[&DecisionRecord],
    params: &PolicyParameters,
    l2: f64,
    derivatives: bool,
) -> Result<Objective> {
    let dim = params.dim();
    let chunk = (records.len() / 32).max(256);
    let partials: Vec<Result<Partial>> = records
        .par_chunks(chunk)
        .map(|chunk| {
            let mut ll = 0.0;
            let mut grad = if derivatives {
                vec![0.0; dim]
            } else {
                Vec::new()
            };
            let mut hess = if derivatives {
                vec![0.0; dim * dim]
            } else {
                Vec::new()
            };
            let mut outer = [0.0; CONTEXT_DIM * CONTEXT_DIM];
            for r in chunk {
                let dist = action_probabilities(params, &r.context, true, 0)?;
                ll += dist.prob(r.action).ln();
                if !derivatives {
                    continue;
                }
                let x = r.context.values();
                let coeffs = log_prob_coefficients(&dist, r.action)?;
                for (a, c) in coeffs.iter().enumerate() {
                    if *c == 0.0 {
                        continue;
                    }
                    let block = &mut grad[a * CONTEXT_DIM..(a + 1) * CONTEXT_DIM];
                    for (g, xv) in block.iter_mut().zip(x) {
                        *g += c * xv;
                    }
                }
                for i in 0..CONTEXT_DIM {
                    for j in 0..CONTEXT_DIM {
                        outer[i * CONTEXT_DIM + j] = x[i] * x[j];
                    }
                }
                // (diag(π) - ππᵀ) ⊗ xxᵀ, upper block triangle only
                let pi = dist.probs();
                for a in dist.mask().iter().map(|m| m.index()) {
                    for b in dist.mask().iter().map(|m| m.index()).filter(|b| *b >= a) {
                        let w = if a == b {
                            pi[a] - pi[a] * pi[a]
                        } else {
                            -pi[a] * pi[b]
                        };
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..CONTEXT_DIM {
                            let row = (a * CONTEXT_DIM + i) * dim + b * CONTEXT_DIM;
                            let src = &outer[i * CONTEXT_DIM..(i + 1) * CONTEXT_DIM];
                            for (h, o) in hess[row..row + CONTEXT_DIM].iter_mut().zip(src) {
                                *h += w * o;
                            }
                        }
                    }
                }
            }
            Ok((ll, grad, hess))
        })
        .collect();

    // fixed-order reduction keeps fits bit-reproducible
    let n = records.len() as f64;
    let mut ll = 0.0;
    let mut grad = if derivatives {
        vec![0.0; dim]
    } else {
        Vec::new()
    };
    let mut hess = if derivatives {
        vec![0.0; dim * dim]
    } else {
        Vec::new()
    };
    for part in partials {
        let (l, g, h) = part?;
        ll += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        for (a, b) in hess.iter_mut().zip(h) {
            *a += b;
        }
    }
    let theta = params.theta();
    let penalty: f64 = 0.5 * l2 * theta.iter().map(|t| t * t).sum::<f64>();
    for (g, t) in grad.iter_mut().zip(theta) {
        *g = *g / n - l2 * t;
    }
    let neg_hessian = derivatives.then(|| {
        let mut m = DMatrix::from_row_slice(dim, dim, &hess) / n;
        for i in 0..dim {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
            m[(i, i)] += l2;
        }
        m
    });
    Ok(Objective {
        value: ll / n - penalty,
        grad,
        neg_hessian,
    })
}

/// Damped Newton ascent with backtracking.
fn fit_one(
    records: &[&DecisionRecord],
    role: ParamRole,
    config: &BehaviorFitConfig,
) -> Result<(PolicyParameters, bool)> {
    let mut params = PolicyParameters::zeros(role);
    if records.is_empty() {
        warn!("no {role:?} decisions in the behavior fit; leaving that policy uniform");
        return Ok((params, true));
    }
    debug_assert_eq!(role.blocks(), N_MAPS);
    let mut current = objective(records, &params, config.l2, true)?;
    for _ in 0..config.max_iterations {
        let gmax = current.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < config.tolerance {
            return Ok((params, true));
        }
        let grad = DVector::from_column_slice(&current.grad);
        let hess = current.neg_hessian.take().expect("derivatives requested");
        let direction = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let dim = hess.nrows();
                let damped = hess + DMatrix::identity(dim, dim) * 1e-6;
                match damped.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let accepted = loop {
            let mut candidate = params.clone();
            for (t, d) in candidate.theta_mut().iter_mut().zip(direction.iter()) {
                *t += step * d;
            }
            let trial = objective(records, &candidate, config.l2, false)?;
            if trial.value >= current.value + 1e-4 * step * slope {
                break Some(candidate);
            }
            step *= 0.5;
            if step < 1e-10 {
                break None;
            }
        };
        match accepted {
            Some(next) => {
                params = next;
                current = objective(records, &params, config.l2, true)?;
            }
            None => {
                warn!("behavior fit line search stalled for {role:?}; keeping the best iterate");
                return Ok((params, false));
            }
        }
    }
    warn!(
        "behavior fit for {role:?} did not converge in {} iterations; using the last iterate",
        config.max_iterations
    );
    Ok((params, false))
}
