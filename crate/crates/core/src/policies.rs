//! Learning policies: Protected LinUCB with the closed-form optimistic
//! surrogate, round-robin ε-LinUCB and ε-greedy with a PCA projection.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{beta_radius, ConfidenceParams, EstimatorState};
use crate::environment::{random_unit, ArmSet, Environment, RoundOutcome};
use crate::error::{Error, Result};
use crate::linalg::{self, Subspace, SymMatrix};

/// Relative tolerance under which two arm values count as tied.
const TIE_TOL: f64 = 1e-12;
const FEASIBILITY_TOL: f64 = 1e-9;

/// `(Aₜ, Iₜ)`: the action played and the vector whose feedback is requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChoice {
    pub arm: Vec<f64>,
    pub index: usize,
}

/// Which αᵢ expression the surrogate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaFormula {
    /// Chosen so that `⟨a, θ̃ᵢ⟩ = 0` whenever the clip is inactive.
    #[default]
    Corrected,
    /// `clip((⟨a,θ̂ᵢ⟩ + √β‖a‖/‖a‖_V) / (2√β‖a‖/‖a‖_V))`
    Uncorrected,
}

/// Direction along which the surrogate moves each estimate to the ellipsoid boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// `V⁻¹a/‖a‖_{V⁻¹}`, the maximizer of `⟨a, θ⟩` over the ellipsoid.
    #[default]
    Natural,
    /// `a/‖a‖_V`
    AlongArm,
}

/// Candidate indices for the feedback query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSet {
    /// `{0} ∪ S̃`
    #[default]
    WithTarget,
    /// `S̃` only.
    ProtectedOnly,
}

/// How the overall δ is spread over the tracked confidence sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSplit {
    /// `δ/(L+1)` for every vector (union bound).
    #[default]
    PerVector,
    /// `δ` for every vector.
    Shared,
}

/// Sample count plugged into `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaCount {
    /// `β(Tᵢ)` with `Tᵢ` the number of queries of vector `i` so far.
    #[default]
    PerVector,
    /// `β(T)` with `T` the horizon.
    Horizon,
}

/// Alternating-ascent settings for the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 200,
            tol: 1e-9,
        }
    }
}

/// Tunables shared by the optimistic policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOptions {
    pub optimizer: OptimizerConfig,
    pub alpha: AlphaFormula,
    pub direction: DirectionMode,
    pub index_set: IndexSet,
    pub delta_split: DeltaSplit,
    pub beta_count: BetaCount,
    pub horizon: u64,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            alpha: AlphaFormula::default(),
            direction: DirectionMode::default(),
            index_set: IndexSet::default(),
            delta_split: DeltaSplit::default(),
            beta_count: BetaCount::default(),
            horizon: 1000,
        }
    }
}

/// Surrogate parameters for one arm and the value they certify.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticChoice {
    pub arm: Vec<f64>,
    /// Position in a finite action set.
    pub arm_index: Option<usize>,
    pub tilde_theta0: Vec<f64>,
    pub tilde_thetas: BTreeMap<usize, Vec<f64>>,
    /// `⟨a, Proj⊥_{θ̃ᵢ} θ̃₀⟩`
    pub value: f64,
}

/// Point on the boundary of an ellipsoid that pushes `⟨a, ·⟩` up, as a
/// unit-V-norm direction and the gain `g` it buys at radius `√β`.
fn boundary_step(est: &EstimatorState, a: &[f64], sqrt_beta: f64, mode: DirectionMode) -> Result<(Vec<f64>, f64)> {
    match mode {
        DirectionMode::Natural => {
            let w = est.design_inv().mul_vec(a);
            let width = linalg::dot(a, &w).max(0.0).sqrt();
            if !(width > 0.0) {
                return Err(Error::numerical("zero exploration width"));
            }
            Ok((linalg::scale(&w, 1.0 / width), sqrt_beta * width))
        }
        DirectionMode::AlongArm => {
            let vn = est.design_norm(a);
            if !(vn > 0.0) {
                return Err(Error::numerical("zero design norm"));
            }
            let dir = linalg::scale(a, 1.0 / vn);
            let gain = sqrt_beta * linalg::dot(a, &dir);
            Ok((dir, gain))
        }
    }
}

/// Protected LinUCB after CORE-SET: estimators for the target and each
/// selected protected vector.
#[derive(Debug, Clone)]
pub struct ProtectedLinUCBState {
    dim: usize,
    coreset: Vec<usize>,
    estimators: BTreeMap<usize, EstimatorState>,
    params: ConfidenceParams,
    options: PolicyOptions,
    candidates: Vec<BTreeMap<usize, Vec<f64>>>,
}

impl ProtectedLinUCBState {
    /// Fresh estimators with regularizer `rho` for `0` and every index in `coreset`.
    /// `num_protected` is L, used for the δ split.
    pub fn new(
        dim: usize,
        coreset: Vec<usize>,
        num_protected: usize,
        noise: f64,
        norm_bound: f64,
        delta: f64,
        rho: f64,
        options: PolicyOptions,
    ) -> Result<Self> {
        let mut sorted = coreset.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != coreset.len() || sorted.iter().any(|&i| i == 0 || i > num_protected) {
            return Err(Error::invalid(format!(
                "coreset {coreset:?} must hold distinct indices in 1..={num_protected}"
            )));
        }
        let split = match options.delta_split {
            DeltaSplit::PerVector => delta / (num_protected as f64 + 1.0),
            DeltaSplit::Shared => delta,
        };
        let params = ConfidenceParams::new(noise, norm_bound, split, dim)?;
        let mut estimators = BTreeMap::new();
        for i in std::iter::once(0).chain(sorted.iter().copied()) {
            estimators.insert(i, EstimatorState::new(dim, rho)?);
        }
        Ok(Self {
            dim,
            coreset: sorted,
            estimators,
            params,
            options,
            candidates: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coreset(&self) -> &[usize] {
        &self.coreset
    }

    pub fn params(&self) -> &ConfidenceParams {
        &self.params
    }

    pub fn options(&self) -> &PolicyOptions {
        &self.options
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.estimators.keys().copied()
    }

    pub fn estimator(&self, index: usize) -> Option<&EstimatorState> {
        self.estimators.get(&index)
    }

    /// Replaces the estimator for a tracked index, e.g. with one carried over from CORE-SET.
    pub fn set_estimator(&mut self, index: usize, est: EstimatorState) -> Result<()> {
        if est.dim() != self.dim {
            return Err(Error::invalid("estimator dimension mismatch"));
        }
        match self.estimators.get_mut(&index) {
            Some(slot) => {
                *slot = est;
                Ok(())
            }
            None => Err(Error::invalid(format!("index {index} is not tracked"))),
        }
    }

    /// Registers a joint choice of protected parameters (keyed by coreset index)
    /// to be considered alongside the surrogate while it stays inside every
    /// confidence ellipsoid. Only used on finite action sets.
    pub fn add_candidate(&mut self, candidate: BTreeMap<usize, Vec<f64>>) -> Result<()> {
        let keys: Vec<usize> = candidate.keys().copied().collect();
        if keys != self.coreset {
            return Err(Error::invalid(format!(
                "candidate keys {keys:?} must match the coreset {:?}",
                self.coreset
            )));
        }
        if candidate.values().any(|v| v.len() != self.dim) {
            return Err(Error::invalid("candidate vector dimension mismatch"));
        }
        self.candidates.push(candidate);
        Ok(())
    }

    /// `√β` for a tracked index under the configured count rule.
    pub fn sqrt_beta(&self, index: usize) -> f64 {
        let est = &self.estimators[&index];
        let count = match self.options.beta_count {
            BetaCount::PerVector => est.count(),
            BetaCount::Horizon => self.options.horizon,
        };
        beta_radius(count, &self.params, est.rho())
    }

    /// Applies one observation to the queried estimator only.
    pub fn update(&mut self, index: usize, arm: &[f64], feedback: f64) -> Result<()> {
        self.estimators
            .get_mut(&index)
            .ok_or_else(|| Error::invalid(format!("index {index} is not tracked")))?
            .update(arm, feedback)
    }

    fn alpha(&self, index: usize, a: &[f64], sqrt_beta: f64, gain: f64) -> f64 {
        let est = &self.estimators[&index];
        let along = linalg::dot(a, est.mle());
        let raw = match self.options.alpha {
            AlphaFormula::Corrected => (gain - along) / (2.0 * gain),
            AlphaFormula::Uncorrected => {
                let h = sqrt_beta * linalg::norm(a) / est.design_norm(a);
                (along + h) / (2.0 * h)
            }
        };
        raw.clamp(0.0, 1.0)
    }

    /// Closed-form surrogate parameters for arm `a`, plus `Proj⊥_{θ̃ᵢ} θ̃₀`.
    fn surrogate(&self, a: &[f64]) -> Result<(OptimisticChoice, Vec<f64>)> {
        if a.len() != self.dim {
            return Err(Error::invalid("arm dimension mismatch"));
        }
        if linalg::norm(a) == 0.0 {
            return Err(Error::invalid("the zero action has no optimistic parameters"));
        }
        let mode = self.options.direction;
        let sb0 = self.sqrt_beta(0);
        let est0 = &self.estimators[&0];
        let (dir0, _) = boundary_step(est0, a, sb0, mode)?;
        let mut tilde_theta0 = est0.mle().to_vec();
        linalg::axpy(&mut tilde_theta0, sb0, &dir0);

        let mut tilde_thetas = BTreeMap::new();
        for &i in &self.coreset {
            let sb = self.sqrt_beta(i);
            let (dir, gain) = boundary_step(&self.estimators[&i], a, sb, mode)?;
            let alpha = self.alpha(i, a, sb, gain);
            let mut th = self.estimators[&i].mle().to_vec();
            linalg::axpy(&mut th, (2.0 * alpha - 1.0) * sb, &dir);
            tilde_thetas.insert(i, th);
        }
        let span: Vec<Vec<f64>> = tilde_thetas.values().cloned().collect();
        let perp = linalg::proj_orth_complement(&span, &tilde_theta0)?;
        let value = linalg::dot(a, &perp);
        Ok((
            OptimisticChoice {
                arm: a.to_vec(),
                arm_index: None,
                tilde_theta0,
                tilde_thetas,
                value,
            },
            perp,
        ))
    }

    /// Surrogate optimistic parameters for a single arm.
    pub fn optimistic_params(&self, a: &[f64]) -> Result<OptimisticChoice> {
        Ok(self.surrogate(a)?.0)
    }

    fn feasible_candidates(&self) -> Vec<&BTreeMap<usize, Vec<f64>>> {
        self.candidates
            .iter()
            .filter(|c| {
                c.iter()
                    .all(|(i, th)| self.estimators[i].distance(th) <= self.sqrt_beta(*i) + FEASIBILITY_TOL)
            })
            .collect()
    }

    /// Exact optimum of `⟨a, Proj⊥ θ₀⟩` over the target ellipsoid for fixed protected parameters.
    fn candidate_choice(&self, a: &[f64], candidate: &BTreeMap<usize, Vec<f64>>) -> Result<OptimisticChoice> {
        let span: Vec<Vec<f64>> = candidate.values().cloned().collect();
        let pa = Subspace::spanned_by(&span, self.dim)?.project_out(a);
        let est0 = &self.estimators[&0];
        let mut tilde_theta0 = est0.mle().to_vec();
        let width = est0.exploration_width(&pa);
        if width > 0.0 {
            let w = est0.design_inv().mul_vec(&pa);
            linalg::axpy(&mut tilde_theta0, self.sqrt_beta(0) / width, &w);
        }
        Ok(OptimisticChoice {
            arm: a.to_vec(),
            arm_index: None,
            value: linalg::dot(&pa, &tilde_theta0),
            tilde_theta0,
            tilde_thetas: candidate.clone(),
        })
    }

    /// Optimistic arm for the realised action set.
    pub fn select_action(&self, arms: &ArmSet, rng: &mut impl Rng) -> Result<OptimisticChoice> {
        match arms {
            ArmSet::Finite(list) => self.select_finite(list),
            ArmSet::Ball { dim } => {
                if *dim != self.dim {
                    return Err(Error::invalid("action space dimension mismatch"));
                }
                self.select_ball(rng)
            }
        }
    }

    fn select_finite(&self, list: &[Vec<f64>]) -> Result<OptimisticChoice> {
        if list.is_empty() {
            return Err(Error::invalid("empty action set"));
        }
        let feasible = self.feasible_candidates();
        let mut best: Option<OptimisticChoice> = None;
        for (k, a) in list.iter().enumerate() {
            if linalg::norm(a) == 0.0 {
                continue;
            }
            let mut choice = self.optimistic_params(a)?;
            for cand in &feasible {
                let alt = self.candidate_choice(a, cand)?;
                if alt.value > choice.value {
                    choice = alt;
                }
            }
            if choice.value.is_nan() {
                continue;
            }
            choice.arm_index = Some(k);
            let better = match &best {
                None => true,
                Some(b) => choice.value > b.value + TIE_TOL * b.value.abs().max(1.0),
            };
            if better {
                best = Some(choice);
            }
        }
        best.ok_or_else(|| Error::numerical("every arm produced a NaN surrogate value"))
    }

    fn ascend(&self, start: Vec<f64>) -> Result<OptimisticChoice> {
        let cfg = self.options.optimizer;
        let (mut cur, mut perp) = self.surrogate(&start)?;
        for _ in 0..cfg.max_iters {
            let Some(next) = linalg::normalize(&perp) else { break };
            let (cand, cand_perp) = self.surrogate(&next)?;
            if !(cand.value > cur.value + cfg.tol) {
                if cand.value > cur.value {
                    cur = cand;
                }
                break;
            }
            cur = cand;
            perp = cand_perp;
        }
        Ok(cur)
    }

    fn select_ball(&self, rng: &mut impl Rng) -> Result<OptimisticChoice> {
        let mut starts = Vec::with_capacity(self.options.optimizer.restarts + 1);
        let hats: Vec<Vec<f64>> = self.coreset.iter().map(|i| self.estimators[i].mle().to_vec()).collect();
        let plug_in = linalg::proj_orth_complement(&hats, self.estimators[&0].mle())?;
        if let Some(u) = linalg::normalize(&plug_in) {
            starts.push(u);
        }
        for _ in 0..self.options.optimizer.restarts {
            starts.push(random_unit(rng, self.dim));
        }
        if starts.is_empty() {
            starts.push(linalg::basis_vector(self.dim, 0));
        }
        let mut best: Option<OptimisticChoice> = None;
        for s in starts {
            let c = self.ascend(s)?;
            if c.value.is_nan() {
                continue;
            }
            if best.as_ref().is_none_or(|b| c.value > b.value) {
                best = Some(c);
            }
        }
        best.ok_or_else(|| Error::numerical("every restart produced a NaN surrogate value"))
    }

    /// `(i, ‖a‖_{Vᵢ⁻¹}·√βᵢ)` over the configured index set.
    pub fn index_scores(&self, arm: &[f64]) -> Vec<(usize, f64)> {
        let with_target = self.options.index_set == IndexSet::WithTarget || self.coreset.is_empty();
        self.estimators
            .iter()
            .filter(|(i, _)| **i != 0 || with_target)
            .map(|(i, est)| (*i, est.exploration_width(arm) * self.sqrt_beta(*i)))
            .collect()
    }

    /// Index with the widest confidence along `arm`; ties go to the lowest index.
    pub fn select_index(&self, arm: &[f64]) -> usize {
        argmax_lowest(&self.index_scores(arm))
    }

    /// `2(3√s·M/λ + 1)·‖a‖_{V_I⁻¹}·√β_T` for the index `I` the policy would query.
    pub fn diagnostic_delta_bound(&self, choice: &OptimisticChoice, lambda_min: f64) -> Result<f64> {
        if !(lambda_min > 0.0) {
            return Err(Error::invalid("λ_min must be > 0"));
        }
        let index = self.select_index(&choice.arm);
        let est = &self.estimators[&index];
        let s = self.coreset.len() as f64;
        let sqrt_beta_t = beta_radius(self.options.horizon, &self.params, est.rho());
        Ok(2.0 * (3.0 * s.sqrt() * self.params.norm_bound / lambda_min + 1.0)
            * est.exploration_width(&choice.arm)
            * sqrt_beta_t)
    }

    /// Indices whose estimators have seen no data yet.
    pub fn untrained(&self) -> Vec<usize> {
        self.estimators.iter().filter(|(_, e)| e.count() == 0).map(|(i, _)| *i).collect()
    }
}

fn argmax_lowest(scores: &[(usize, f64)]) -> usize {
    let mut best = scores.first().map_or((0, f64::NEG_INFINITY), |s| *s);
    for &(i, v) in &scores[1.min(scores.len())..] {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// One round of Protected LinUCB.
pub fn plinucb_step(
    state: &mut ProtectedLinUCBState,
    arms: &ArmSet,
    env: &mut Environment<'_>,
    rng: &mut impl Rng,
) -> Result<RoundOutcome> {
    let choice = state.select_action(arms, rng)?;
    let index = state.select_index(&choice.arm);
    let action = ActionChoice {
        arm: choice.arm,
        index,
    };
    let outcome = env.play(arms, &action, choice.arm_index)?;
    state.update(index, &action.arm, outcome.feedback)?;
    Ok(outcome)
}

/// `argmax_a ⟨a, θ̂⟩ + √β‖a‖_{V⁻¹}` for a single estimator.
pub fn oful_arm(
    est: &EstimatorState,
    sqrt_beta: f64,
    arms: &ArmSet,
    optimizer: &OptimizerConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Option<usize>)> {
    let ucb = |a: &[f64]| linalg::dot(a, est.mle()) + sqrt_beta * est.exploration_width(a);
    match arms {
        ArmSet::Finite(list) => {
            let scores: Vec<(usize, f64)> = list.iter().enumerate().map(|(k, a)| (k, ucb(a))).collect();
            if scores.is_empty() {
                return Err(Error::invalid("empty action set"));
            }
            let k = argmax_lowest(&scores);
            Ok((list[k].clone(), Some(k)))
        }
        ArmSet::Ball { dim } => {
            let mut starts: Vec<Vec<f64>> = linalg::normalize(est.mle()).into_iter().collect();
            for _ in 0..optimizer.restarts {
                starts.push(random_unit(rng, *dim));
            }
            let mut best: Option<(Vec<f64>, f64)> = None;
            for mut a in starts {
                let mut v = ucb(&a);
                for _ in 0..optimizer.max_iters {
                    let w = est.design_inv().mul_vec(&a);
                    let width = est.exploration_width(&a);
                    let mut target = est.mle().to_vec();
                    if width > 0.0 {
                        linalg::axpy(&mut target, sqrt_beta / width, &w);
                    }
                    let Some(next) = linalg::normalize(&target) else { break };
                    let nv = ucb(&next);
                    if !(nv > v + optimizer.tol) {
                        if nv > v {
                            a = next;
                            v = nv;
                        }
                        break;
                    }
                    a = next;
                    v = nv;
                }
                if best.as_ref().is_none_or(|b| v > b.1) {
                    best = Some((a, v));
                }
            }
            Ok((best.expect("at least one start").0, None))
        }
    }
}

/// Exploration probability `ε_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsSchedule {
    /// `t^{−p}`
    Power { exponent: f64 },
    Constant { value: f64 },
}

impl EpsSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            EpsSchedule::Power { exponent } => (t.max(1) as f64).powf(-exponent),
            EpsSchedule::Constant { value } => value,
        }
        .clamp(0.0, 1.0)
    }
}

/// Round-robin ε-LinUCB: Protected LinUCB over every protected vector, with
/// scheduled round-robin exploration of the protected vectors.
#[derive(Debug, Clone)]
pub struct RoundRobinState {
    pub inner: ProtectedLinUCBState,
    pub schedule: EpsSchedule,
    cursor: usize,
    t: u64,
}

impl RoundRobinState {
    pub fn new(inner: ProtectedLinUCBState, schedule: EpsSchedule) -> Self {
        Self {
            inner,
            schedule,
            cursor: 0,
            t: 0,
        }
    }
}

/// One round of round-robin ε-LinUCB.
pub fn rr_linucb_step(
    state: &mut RoundRobinState,
    arms: &ArmSet,
    env: &mut Environment<'_>,
    rng: &mut impl Rng,
) -> Result<RoundOutcome> {
    state.t += 1;
    let eps = state.schedule.at(state.t);
    let coin: f64 = rng.random();
    let protected = state.inner.coreset().to_vec();
    let (arm, arm_index, index) = if coin < eps && !protected.is_empty() {
        let index = protected[state.cursor % protected.len()];
        state.cursor = (state.cursor + 1) % protected.len();
        let est = state.inner.estimator(index).expect("tracked");
        let sb = state.inner.sqrt_beta(index);
        let (arm, k) = oful_arm(est, sb, arms, &state.inner.options.optimizer, rng)?;
        (arm, k, index)
    } else {
        let choice = state.inner.select_action(arms, rng)?;
        (choice.arm, choice.arm_index, 0)
    };
    let action = ActionChoice { arm, index };
    let outcome = env.play(arms, &action, arm_index)?;
    state.inner.update(index, &action.arm, outcome.feedback)?;
    Ok(outcome)
}

/// `I − Σ uⱼuⱼᵀ` over the top-`s` eigenvectors of `Σᵢ θ̂ᵢθ̂ᵢᵀ`.
pub fn principal_complement(estimates: &[Vec<f64>], s: usize, dim: usize) -> Result<SymMatrix> {
    let mut p = SymMatrix::identity(dim);
    if s == 0 || estimates.is_empty() {
        return Ok(p);
    }
    let eig = linalg::sym_eigen(&SymMatrix::gram(estimates, dim)?)?;
    for u in eig.vectors.iter().rev().take(s.min(dim)) {
        p.add_outer(u, -1.0);
    }
    Ok(p)
}

/// Greedy arm for `⟨a, Pθ̂₀⟩`; ties go to the lowest index.
pub fn exploit_arm(
    theta0_hat: &[f64],
    protected_hats: &[Vec<f64>],
    s: usize,
    arms: &ArmSet,
) -> Result<(Vec<f64>, Option<usize>)> {
    let d = theta0_hat.len();
    let w = principal_complement(protected_hats, s, d)?.mul_vec(theta0_hat);
    match arms {
        ArmSet::Ball { .. } => Ok((linalg::normalize(&w).unwrap_or_else(|| linalg::basis_vector(d, 0)), None)),
        ArmSet::Finite(list) => {
            if list.is_empty() {
                return Err(Error::invalid("empty action set"));
            }
            let scores: Vec<(usize, f64)> = list.iter().enumerate().map(|(k, a)| (k, linalg::dot(a, &w))).collect();
            let k = argmax_lowest(&scores);
            Ok((list[k].clone(), Some(k)))
        }
    }
}

/// ε-greedy with a PCA estimate of the protected subspace.
#[derive(Debug, Clone)]
pub struct EpsGreedyState {
    /// Estimator `i` for query index `i`, `0..=L`.
    pub estimators: Vec<EstimatorState>,
    pub subspace_dim: usize,
    pub epsilon: f64,
    t: u64,
}

impl EpsGreedyState {
    pub fn new(dim: usize, num_protected: usize, subspace_dim: usize, epsilon: f64, rho: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!("ε must be >= 0, got {epsilon}")));
        }
        let estimators = (0..=num_protected)
            .map(|_| EstimatorState::new(dim, rho))
            .collect::<Result<_>>()?;
        Ok(Self {
            estimators,
            subspace_dim,
            epsilon,
            t: 0,
        })
    }
}

/// One round of ε-greedy.
pub fn eps_greedy_step(
    state: &mut EpsGreedyState,
    arms: &ArmSet,
    env: &mut Environment<'_>,
    rng: &mut impl Rng,
) -> Result<RoundOutcome> {
    state.t += 1;
    let p = (state.epsilon / (state.t as f64).sqrt()).min(1.0);
    let coin: f64 = rng.random();
    let (arm, arm_index, index) = if coin < p {
        let index = rng.random_range(0..state.estimators.len());
        match arms {
            ArmSet::Ball { dim } => (random_unit(rng, *dim), None, index),
            ArmSet::Finite(list) => {
                let k = rng.random_range(0..list.len());
                (list[k].clone(), Some(k), index)
            }
        }
    } else {
        let hats: Vec<Vec<f64>> = state.estimators[1..].iter().map(|e| e.mle().to_vec()).collect();
        let (arm, k) = exploit_arm(state.estimators[0].mle(), &hats, state.subspace_dim, arms)?;
        (arm, k, 0)
    };
    let action = ActionChoice { arm, index };
    let outcome = env.play(arms, &action, arm_index)?;
    state.estimators[index].update(&action.arm, outcome.feedback)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{stream_rng, unit_angle, ActionSpaceSpec, ProtectedInstance};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8};

    fn state(d: usize, coreset: Vec<usize>, l: usize, rho: f64) -> ProtectedLinUCBState {
        ProtectedLinUCBState::new(d, coreset, l, 0.1, 1.0, 0.1, rho, PolicyOptions::default()).unwrap()
    }

    fn feed(st: &mut ProtectedLinUCBState, index: usize, truth: &[f64], n: usize, rng: &mut impl Rng) {
        let d = st.dim();
        for _ in 0..n {
            let a = random_unit(rng, d);
            let x = linalg::dot(&a, truth) + 0.1 * rng.random_range(-1.0..1.0);
            st.update(index, &a, x).unwrap();
        }
    }

    /// Asserts the feasibility and zeroing properties of a surrogate choice.
    fn check_feasible(st: &ProtectedLinUCBState, c: &OptimisticChoice) {
        let e0 = st.estimator(0).unwrap();
        let r0 = st.sqrt_beta(0);
        assert!((e0.distance(&c.tilde_theta0) - r0).abs() <= 1e-9 * r0.max(1.0));
        for (i, th) in &c.tilde_thetas {
            let e = st.estimator(*i).unwrap();
            assert!(e.distance(th) <= st.sqrt_beta(*i) + 1e-9);
        }
    }

    #[test]
    fn centered_estimate_is_left_in_place() {
        let mut st = state(2, vec![1], 1, 1.0);
        st.update(1, &[1.0, 0.0], 1.0).unwrap();
        let a = [0.0, 1.0];
        let c = st.optimistic_params(&a).unwrap();
        assert!(linalg::dot(&a, st.estimator(1).unwrap().mle()).abs() < 1e-15);
        let diff = linalg::sub(&c.tilde_thetas[&1], st.estimator(1).unwrap().mle());
        assert!(linalg::norm(&diff) < 1e-12);
    }

    #[test]
    fn fresh_state_closed_form() {
        let rho = 0.5;
        let st = state(3, vec![1, 2], 2, rho);
        let a = [0.6, 0.0, 0.8];
        let c = st.optimistic_params(&a).unwrap();
        let sb = st.sqrt_beta(0);
        let want0 = linalg::scale(&a, sb / (rho.sqrt() * linalg::norm(&a)));
        assert!(linalg::norm(&linalg::sub(&c.tilde_theta0, &want0)) < 1e-12);
        assert!((c.value - sb * linalg::norm(&a) / rho.sqrt()).abs() < 1e-12);
        for mode in [DirectionMode::Natural, DirectionMode::AlongArm] {
            let mut o = PolicyOptions::default();
            o.direction = mode;
            let s2 = ProtectedLinUCBState::new(3, vec![1, 2], 2, 0.1, 1.0, 0.1, rho, o).unwrap();
            assert!((s2.optimistic_params(&a).unwrap().value - c.value).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_arm_rejected() {
        let st = state(2, vec![], 0, 1.0);
        assert!(matches!(st.optimistic_params(&[0.0, 0.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bad_coreset_rejected() {
        let r = ProtectedLinUCBState::new(2, vec![1, 1], 2, 0.1, 1.0, 0.1, 1.0, PolicyOptions::default());
        assert!(r.is_err());
        let r = ProtectedLinUCBState::new(2, vec![3], 2, 0.1, 1.0, 0.1, 1.0, PolicyOptions::default());
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn surrogate_feasible_and_zeroing(seed in 0u64..500, natural in any::<bool>()) {
            let mut rng = stream_rng(seed, 9);
            let d = 3;
            let mut o = PolicyOptions::default();
            o.direction = if natural { DirectionMode::Natural } else { DirectionMode::AlongArm };
            let mut st = ProtectedLinUCBState::new(d, vec![1, 2], 2, 0.1, 1.0, 0.1, 0.5, o).unwrap();
            let truths: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut rng, d)).collect();
            for i in 0..3 {
                let n = rng.random_range(0..20);
                feed(&mut st, i, &truths[i], n, &mut rng);
            }
            let a = random_unit(&mut rng, d);
            let c = st.optimistic_params(&a).unwrap();
            check_feasible(&st, &c);
            for (&i, th) in &c.tilde_thetas {
                let est = st.estimator(i).unwrap();
                let (_, g) = boundary_step(est, &a, st.sqrt_beta(i), o.direction).unwrap();
                let raw = (g - linalg::dot(&a, est.mle())) / (2.0 * g);
                if raw > 0.0 && raw < 1.0 {
                    prop_assert!(linalg::dot(&a, th).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn index_argmax_invariant_to_beta_scaling(seed in 0u64..300, scale in 0.01f64..100.0) {
            let mut rng = stream_rng(seed, 10);
            let mut st = state(3, vec![1, 2], 2, 1.0);
            for i in 0..3 {
                let t = random_unit(&mut rng, 3);
                feed(&mut st, i, &t, 5, &mut rng);
            }
            let a = random_unit(&mut rng, 3);
            let scaled: Vec<(usize, f64)> = st.index_scores(&a).into_iter().map(|(i, v)| (i, v * scale)).collect();
            prop_assert_eq!(argmax_lowest(&scaled), st.select_index(&a));
        }
    }

    #[test]
    fn fresh_finite_arms_tie_to_lowest() {
        let st = state(2, vec![1], 1, 1.0);
        let arms = ArmSet::Finite(vec![unit_angle(0.3), unit_angle(1.2), unit_angle(2.0)]);
        let c = st.select_action(&arms, &mut stream_rng(0, 3)).unwrap();
        assert_eq!(c.arm_index, Some(0));
    }

    #[test]
    fn example_one_candidate_prefers_first_arm() {
        let mut st = state(2, vec![1], 1, 1.0);
        let theta0 = unit_angle(FRAC_PI_4);
        for _ in 0..2000 {
            for j in 0..2 {
                let e = linalg::basis_vector(2, j);
                st.update(0, &e, linalg::dot(&e, &theta0)).unwrap();
            }
        }
        for j in 0..2 {
            let e = linalg::basis_vector(2, j);
            st.update(1, &e, e[0]).unwrap();
        }
        let bar = linalg::add(&unit_angle(0.0), &unit_angle(-FRAC_PI_4));
        st.add_candidate(BTreeMap::from([(1, bar.clone())])).unwrap();
        let arms = ArmSet::Finite(vec![unit_angle(FRAC_PI_4), unit_angle(FRAC_PI_2)]);
        let c = st.select_action(&arms, &mut stream_rng(0, 3)).unwrap();
        assert_eq!(c.arm_index, Some(0));
        assert!(c.value >= FRAC_PI_8.cos().powi(2) - 1e-9);
        let other = st.candidate_choice(&unit_angle(FRAC_PI_2), &BTreeMap::from([(1, bar)])).unwrap();
        assert!(other.value <= c.value + 1e-12);
    }

    #[test]
    fn tight_ellipsoids_point_at_optimum() {
        let theta0 = [0.8, 0.6];
        let theta1 = [1.0, 0.0];
        let mut st = state(2, vec![1], 1, 1.0);
        for _ in 0..20000 {
            for j in 0..2 {
                let e = linalg::basis_vector(2, j);
                st.update(0, &e, linalg::dot(&e, &theta0)).unwrap();
                st.update(1, &e, linalg::dot(&e, &theta1)).unwrap();
            }
        }
        let c = st.select_action(&ArmSet::Ball { dim: 2 }, &mut stream_rng(1, 3)).unwrap();
        let angle = (c.arm[1].atan2(c.arm[0]) - FRAC_PI_2).abs();
        assert!(angle < 0.05, "angle {angle}");
    }

    #[test]
    fn index_rules() {
        let st = state(2, vec![1, 2], 2, 1.0);
        assert_eq!(st.select_index(&[1.0, 0.0]), 0);
        let mut st = state(2, vec![1], 1, 1.0);
        for _ in 0..50 {
            st.update(1, &[1.0, 0.0], 0.3).unwrap();
        }
        assert_ne!(st.select_index(&[1.0, 0.0]), 1);
        let mut o = PolicyOptions::default();
        o.index_set = IndexSet::ProtectedOnly;
        let st = ProtectedLinUCBState::new(2, vec![1, 2], 2, 0.1, 1.0, 0.1, 1.0, o).unwrap();
        assert_eq!(st.select_index(&[1.0, 0.0]), 1);
    }

    #[test]
    fn widths_follow_scalar_recursion() {
        let mut st = state(1, vec![1], 1, 1.0);
        for n in 0..6u64 {
            for (i, w) in st.index_scores(&[1.0]) {
                let est = st.estimator(i).unwrap();
                let want = 1.0 / (1.0 + est.count() as f64).sqrt() * st.sqrt_beta(i);
                assert!((w - want).abs() < 1e-12);
            }
            st.update(1, &[1.0], 0.0).unwrap();
            assert_eq!(st.estimator(1).unwrap().count(), n + 1);
        }
        assert_eq!(st.select_index(&[1.0]), 0);
    }

    #[test]
    fn diagnostic_bound_fresh_and_monotone() {
        let mut st = state(3, vec![1, 2], 2, 1.0);
        let a = vec![1.0, 0.0, 0.0];
        let c = st.optimistic_params(&a).unwrap();
        let b = st.diagnostic_delta_bound(&c, 0.5).unwrap();
        let bt = beta_radius(st.options().horizon, st.params(), 1.0);
        assert_eq!(st.sqrt_beta(0), beta_radius(0, st.params(), 1.0));
        assert!((b - 2.0 * (3.0 * 2f64.sqrt() / 0.5 + 1.0) * bt).abs() < 1e-9);
        let mut last = b;
        for _ in 0..10 {
            for i in [0, 1, 2] {
                st.update(i, &a, 0.0).unwrap();
            }
            let nb = st.diagnostic_delta_bound(&c, 0.5).unwrap();
            assert!(nb <= last + 1e-12);
            last = nb;
        }
        assert!(st.diagnostic_delta_bound(&c, 0.0).is_err());
    }

    #[test]
    fn principal_complement_for_basis_pair() {
        let p = principal_complement(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 2, 3).unwrap();
        let want = SymMatrix::diag(&[0.0, 0.0, 1.0]);
        assert!(p.sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn exploit_with_perfect_estimates() {
        let arms = ArmSet::Finite(vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]]);
        let (_, k) = exploit_arm(&[0.7, 0.7], &[vec![1.0, 0.0]], 1, &arms).unwrap();
        assert_eq!(k, Some(2));
        let (a, _) = exploit_arm(&[0.7, 0.7], &[vec![1.0, 0.0]], 1, &ArmSet::Ball { dim: 2 }).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-12);
    }

    fn ball_instance() -> ProtectedInstance {
        ProtectedInstance::new(vec![0.6, 0.0, 0.8], vec![vec![0.0, 0.0, 1.0]], 1.0, 0.0, 1, ActionSpaceSpec::UnitBall)
            .unwrap()
    }

    #[test]
    fn steps_are_reproducible() {
        let inst = ball_instance();
        let run = || {
            let mut env = Environment::new(&inst, 5);
            let mut rng = stream_rng(5, 3);
            let mut st = state(3, vec![1], 1, 1.0);
            let arms = env.next_arms();
            plinucb_step(&mut st, &arms, &mut env, &mut rng).unwrap()
        };
        assert_eq!(run(), run());

        let rr = || {
            let mut env = Environment::new(&inst, 6);
            let mut rng = stream_rng(6, 3);
            let mut st = RoundRobinState::new(state(3, vec![1], 1, 1.0), EpsSchedule::Power { exponent: 0.5 });
            (0..5).map(|_| {
                let arms = env.next_arms();
                rr_linucb_step(&mut st, &arms, &mut env, &mut rng).unwrap()
            }).collect::<Vec<_>>()
        };
        assert_eq!(rr(), rr());

        let eg = || {
            let mut env = Environment::new(&inst, 7);
            let mut rng = stream_rng(7, 3);
            let mut st = EpsGreedyState::new(3, 1, 1, 1.0, 1.0).unwrap();
            (0..5).map(|_| {
                let arms = env.next_arms();
                eps_greedy_step(&mut st, &arms, &mut env, &mut rng).unwrap()
            }).collect::<Vec<_>>()
        };
        assert_eq!(eg(), eg());
    }

    #[test]
    fn constant_one_schedule_cycles_protected() {
        let inst = ProtectedInstance::new(
            vec![0.6, 0.0, 0.8],
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.5]],
            1.0,
            0.0,
            1,
            ActionSpaceSpec::UnitBall,
        )
        .unwrap();
        let mut env = Environment::new(&inst, 1);
        let mut rng = stream_rng(1, 3);
        let mut st = RoundRobinState::new(state(3, vec![1, 2], 2, 1.0), EpsSchedule::Constant { value: 1.0 });
        let idx: Vec<usize> = (0..6)
            .map(|_| {
                let arms = env.next_arms();
                rr_linucb_step(&mut st, &arms, &mut env, &mut rng).unwrap().action.index
            })
            .collect();
        assert_eq!(idx, vec![1, 2, 1, 2, 1, 2]);
    }

    #[test]
    fn noiseless_unprotected_linucb_improves() {
        let arms = vec![unit_angle(0.0), unit_angle(0.7), unit_angle(1.4), unit_angle(2.1)];
        let inst = ProtectedInstance::new(
            unit_angle(0.75),
            vec![],
            1.0,
            0.0,
            0,
            ActionSpaceSpec::FiniteFixed { arms: arms.clone() },
        )
        .unwrap();
        let mut env = Environment::new(&inst, 2);
        let mut rng = stream_rng(2, 3);
        let mut st = ProtectedLinUCBState::new(2, vec![], 0, 0.0, 1.0, 0.1, 1.0, PolicyOptions::default()).unwrap();
        for j in 0..2 {
            let e = linalg::basis_vector(2, j);
            st.update(0, &e, linalg::dot(&e, inst.theta0())).unwrap();
        }
        let set = ArmSet::Finite(arms);
        let gaps: Vec<f64> = (0..750)
            .map(|_| plinucb_step(&mut st, &set, &mut env, &mut rng).unwrap().suboptimality)
            .collect();
        // exploration never stops, but its rate per round falls window over window
        let rate = |lo: usize, hi: usize| gaps[lo..hi].iter().filter(|&&g| g > 0.0).count() as f64 / (hi - lo) as f64;
        let rates = [rate(0, 50), rate(50, 150), rate(150, 350), rate(350, 750)];
        assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
        assert!(gaps.iter().all(|&g| g >= 0.0));
    }
}
