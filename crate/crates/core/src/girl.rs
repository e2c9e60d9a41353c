//! Gradient inverse reinforcement learning.
//!
//! With a reward linear in its features, `R = ωᵀφ`, the policy gradient of
//! the expected return is linear in the weights: `∇θ J(θ, ω) = G ω`, where
//! column `q` of `G` is the gradient of the return of feature `q` alone. If
//! the demonstrations come from a policy that is optimal for some weights,
//! the gradient vanishes there, so the weights are recovered by minimizing
//! `‖G ω‖²` over the probability simplex.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demos::TrajectorySet;
use crate::error::{Error, Result};
use crate::features::{policy_features, reward_features, RewardConfig, RewardWeights};
use crate::policy::LinearGaussianPolicy;
use crate::trainers::returns::{absorbing_features, TerminalTail};

/// `G`: one row per policy parameter, one column per reward feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureGradientMatrix {
    rows: Vec<Vec<f64>>,
}

impl FeatureGradientMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidArgument("empty gradient matrix".into()));
        }
        for row in &rows {
            if row.len() != cols {
                return Err(Error::ShapeMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Fault("non-finite gradient estimate".into()));
            }
        }
        Ok(FeatureGradientMatrix { rows })
    }

    pub fn zeros(n_params: usize, n_features: usize) -> Self {
        FeatureGradientMatrix {
            rows: vec![vec![0.0; n_features]; n_params],
        }
    }

    pub fn n_params(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, param: usize, feature: usize) -> f64 {
        self.rows[param][feature]
    }

    pub fn column(&self, q: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[q]).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        FeatureGradientMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|x| c * x).collect())
                .collect(),
        }
    }

    /// `G ω`
    pub fn apply(&self, omega: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(omega).map(|(g, w)| g * w).sum())
            .collect()
    }

    /// `‖G ω‖²`
    pub fn objective(&self, omega: &[f64]) -> f64 {
        self.apply(omega).iter().map(|x| x * x).sum()
    }

    /// `Gᵀ G`
    pub fn gram(&self) -> DMatrix<f64> {
        let q = self.n_features();
        let mut a = DMatrix::zeros(q, q);
        for r in &self.rows {
            for i in 0..q {
                for j in 0..q {
                    a[(i, j)] += r[i] * r[j];
                }
            }
        }
        a
    }
}

/// One step of a demonstration, reduced to what the estimator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub policy_features: Vec<f64>,
    pub action: f64,
    /// Reward features of the state the action led to.
    pub reward_features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEpisode {
    pub steps: Vec<GradientSample>,
    /// Per-step reward features earned forever after the last step, if the
    /// episode ended in an absorbing state.
    pub tail: Option<Vec<f64>>,
}

/// GPOMDP estimate of `∇θ J_q` for every reward feature `q`:
///
/// ```text
/// G[:, q] = mean over episodes of Σ_t (Σ_{τ≤t} s_τ) γ^t φ_q(s_{t+1})
/// ```
///
/// where `s_τ = (a_τ − θᵀφ(s_τ)) φ(s_τ) / σ²` is the Gaussian score.
pub fn gpomdp_feature_gradients(
    episodes: &[GradientEpisode],
    policy: &LinearGaussianPolicy,
    gamma: f64,
) -> Result<FeatureGradientMatrix> {
    if policy.sigma <= 0.0 {
        return Err(Error::DegeneratePolicy(
            "GIRL needs a stochastic expert policy (sigma > 0)".into(),
        ));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let first = episodes
        .iter()
        .find_map(|e| e.steps.first())
        .ok_or_else(|| Error::DegenerateData("no demonstration steps".into()))?;
    let n_params = policy.theta.len();
    let n_features = first.reward_features.len();

    let mut g = vec![vec![0.0; n_features]; n_params];
    for episode in episodes {
        let mut cum_score = vec![0.0; n_params];
        let mut discount = 1.0;
        for step in &episode.steps {
            if step.policy_features.len() != n_params {
                return Err(Error::ShapeMismatch {
                    expected: n_params,
                    got: step.policy_features.len(),
                });
            }
            if step.reward_features.len() != n_features {
                return Err(Error::ShapeMismatch {
                    expected: n_features,
                    got: step.reward_features.len(),
                });
            }
            policy.add_score(&step.policy_features, step.action, &mut cum_score)?;
            for (row, s) in g.iter_mut().zip(&cum_score) {
                for (cell, phi) in row.iter_mut().zip(&step.reward_features) {
                    *cell += s * discount * phi;
                }
            }
            discount *= gamma;
        }
        if let Some(tail) = &episode.tail {
            let weight = discount / (1.0 - gamma);
            for (row, s) in g.iter_mut().zip(&cum_score) {
                for (cell, phi) in row.iter_mut().zip(tail) {
                    *cell += s * weight * phi;
                }
            }
        }
    }
    let m = episodes.len() as f64;
    for row in &mut g {
        for cell in row.iter_mut() {
            *cell /= m;
        }
    }
    FeatureGradientMatrix::from_rows(g)
}

/// Converts demonstrations into estimator samples.
pub fn gradient_episodes(
    demos: &TrajectorySet,
    reward_cfg: &RewardConfig,
    tail: TerminalTail,
) -> Vec<GradientEpisode> {
    demos
        .episodes
        .iter()
        .map(|ep| GradientEpisode {
            steps: ep
                .transitions
                .iter()
                .map(|t| GradientSample {
                    policy_features: policy_features(&t.obs).to_vec(),
                    action: t.action,
                    reward_features: reward_features(&t.next_obs, t.realized_accel, reward_cfg)
                        .to_vec(),
                })
                .collect(),
            tail: ep
                .final_obs()
                .and_then(|obs| absorbing_features(tail, ep.terminal(), obs, reward_cfg))
                .map(|f| f.to_vec()),
        })
        .collect()
}

pub fn estimate_feature_gradients(
    demos: &TrajectorySet,
    policy: &LinearGaussianPolicy,
    reward_cfg: &RewardConfig,
    gamma: f64,
    tail: TerminalTail,
) -> Result<FeatureGradientMatrix> {
    gpomdp_feature_gradients(&gradient_episodes(demos, reward_cfg, tail), policy, gamma)
}

pub const SOLVER_TOL: f64 = 1e-10;
pub const SOLVER_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirlSolution {
    pub omega: RewardWeights,
    /// `‖G ω‖²`
    pub objective: f64,
    pub iterations: usize,
}

/// Euclidean projection onto `{ω ≥ 0, Σω = 1}` (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Minimizes `ωᵀ (GᵀG) ω` over the simplex by projected gradient descent
/// with step `1 / (2 λ_max(GᵀG))`, starting from the uniform weights.
pub fn solve_simplex_min_norm(g: &FeatureGradientMatrix) -> Result<GirlSolution> {
    let q = g.n_features();
    if q == 1 {
        return Ok(GirlSolution {
            omega: RewardWeights::new(vec![1.0])?,
            objective: g.objective(&[1.0]),
            iterations: 0,
        });
    }
    if g.rows().iter().flatten().all(|&x| x == 0.0) {
        return Err(Error::AmbiguousSolution(
            "gradient matrix is zero; every weight vector is optimal".into(),
        ));
    }
    let a = g.gram();
    let lambda_max = a.clone().symmetric_eigenvalues().max();
    let step = 1.0 / (2.0 * lambda_max);

    let mut omega = vec![1.0 / q as f64; q];
    let mut iterations = 0;
    while iterations < SOLVER_MAX_ITER {
        iterations += 1;
        let grad: Vec<f64> = (0..q)
            .map(|i| 2.0 * (0..q).map(|j| a[(i, j)] * omega[j]).sum::<f64>())
            .collect();
        let trial: Vec<f64> = omega.iter().zip(&grad).map(|(w, d)| w - step * d).collect();
        let next = project_simplex(&trial);
        let moved = next
            .iter()
            .zip(&omega)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        omega = next;
        if moved < SOLVER_TOL {
            break;
        }
    }
    // Projected gradient crawls along badly conditioned directions and its
    // step test can fire long before the optimum, so finish with the exact
    // minimizer on the best face of the simplex when that is better.
    if let Some(exact) = best_face_solution(&a) {
        if g.objective(&exact) < g.objective(&omega) {
            omega = exact;
        }
    }
    // Remove rounding drift so the weights sit on the simplex exactly.
    let sum: f64 = omega.iter().sum();
    let omega: Vec<f64> = omega.iter().map(|w| w / sum).collect();
    Ok(GirlSolution {
        objective: g.objective(&omega),
        omega: RewardWeights::new(omega)?,
        iterations,
    })
}

/// Exact minimizer of `ωᵀAω` over the simplex, found by solving the
/// equality-constrained problem `ω_S ∝ A_S⁻¹ 1` on every face `S` and keeping
/// the best nonnegative one. Only used for small `q`.
fn best_face_solution(a: &DMatrix<f64>) -> Option<Vec<f64>> {
    let q = a.nrows();
    if q > 12 {
        return None;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << q) {
        let support: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let sub = DMatrix::from_fn(k, k, |i, j| a[(support[i], support[j])]);
        let Some(chol) = sub.cholesky() else { continue };
        let x = chol.solve(&DVector::from_element(k, 1.0));
        let total: f64 = x.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            continue;
        }
        let mut omega = vec![0.0; q];
        for (&i, xi) in support.iter().zip(x.iter()) {
            omega[i] = xi / total;
        }
        if omega.iter().any(|&w| w < 0.0) {
            continue;
        }
        let value: f64 = (0..q)
            .map(|i| omega[i] * (0..q).map(|j| a[(i, j)] * omega[j]).sum::<f64>())
            .sum();
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, omega));
        }
    }
    best.map(|(_, omega)| omega)
}

/// Largest violation of the first-order optimality condition: the most
/// negative directional derivative of `‖Gω‖²` from `ω` toward a vertex.
pub fn optimality_gap(g: &FeatureGradientMatrix, omega: &[f64]) -> f64 {
    let a = g.gram();
    let q = omega.len();
    let grad: Vec<f64> = (0..q)
        .map(|i| 2.0 * (0..q).map(|j| a[(i, j)] * omega[j]).sum::<f64>())
        .collect();
    let at_omega: f64 = grad.iter().zip(omega).map(|(d, w)| d * w).sum();
    grad.iter().map(|d| d - at_omega).fold(f64::INFINITY, f64::min)
}

/// Full reward recovery: estimate `G` from the demonstrations, then solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirlResult {
    pub omega: RewardWeights,
    pub objective: f64,
    pub iterations: usize,
    pub gradient_matrix: FeatureGradientMatrix,
}

pub fn recover_reward(
    demos: &TrajectorySet,
    policy: &LinearGaussianPolicy,
    reward_cfg: &RewardConfig,
    gamma: f64,
    tail: TerminalTail,
) -> Result<GirlResult> {
    let g = estimate_feature_gradients(demos, policy, reward_cfg, gamma, tail)?;
    let sol = solve_simplex_min_norm(&g)?;
    log::info!(
        "recovered omega {:?} with objective {:.6e} after {} iterations",
        sol.omega.as_slice(),
        sol.objective,
        sol.iterations
    );
    log::debug!("gradient matrix {:?}", g.rows());
    Ok(GirlResult {
        omega: sol.omega,
        objective: sol.objective,
        iterations: sol.iterations,
        gradient_matrix: g,
    })
}

impl GirlResult {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
