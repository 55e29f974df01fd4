//! CORE-SET: isotropic round-robin exploration of the protected vectors,
//! stopping once some size-k subset is provably well conditioned.

use serde::{Deserialize, Serialize};

use crate::confidence::EstimatorState;
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;
pub const DEFAULT_MAX_ROUNDS: u64 = 1_000_000;
/// Regularizer used inside CORE-SET; small enough to leave estimates unchanged
/// after the first isotropic pass.
pub const CORESET_RHO: f64 = 1e-12;

/// A candidate subset (1-based protected indices) and its conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Vec<usize>,
    pub score: f64,
}

/// `C(n, k)` without overflow for any realistic input.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Smallest eigenvalue of `Σ_{i∈S} vᵢvᵢᵀ` on the span of the chosen vectors,
/// computed from the |S|×|S| Gram matrix (same nonzero spectrum).
pub fn subset_score(vectors: &[Vec<f64>], subset: &[usize]) -> Result<f64> {
    let k = subset.len();
    if k == 0 {
        return Err(Error::invalid("empty subset"));
    }
    let gram = SymMatrix::from_fn(k, |a, b| {
        linalg::dot(&vectors[subset[a] - 1], &vectors[subset[b] - 1])
    });
    linalg::min_eigenvalue(&gram)
}

/// Exact `argmax_{|S|=k} λ_min(Σ_{i∈S} θ̂ᵢθ̂ᵢᵀ)`; ties keep the lexicographically
/// smallest subset.
pub fn best_subset(estimates: &[Vec<f64>], k: usize) -> Result<SubsetScore> {
    best_subset_with_cap(estimates, k, DEFAULT_ENUMERATION_CAP)
}

pub fn best_subset_with_cap(estimates: &[Vec<f64>], k: usize, cap: u64) -> Result<SubsetScore> {
    let l = estimates.len();
    if k == 0 || k > l {
        return Err(Error::invalid(format!("subset size must satisfy 1 <= k <= L, got k = {k}, L = {l}")));
    }
    if let Some(d) = estimates.first().map(Vec::len) {
        if estimates.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("estimates have mixed dimensions"));
        }
    }
    let required = binomial(l, k);
    if required > cap as u128 {
        return Err(Error::Capacity { required, cap });
    }
    let mut subset: Vec<usize> = (1..=k).collect();
    let mut best: Option<SubsetScore> = None;
    loop {
        let score = subset_score(estimates, &subset)?;
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(SubsetScore {
                subset: subset.clone(),
                score,
            });
        }
        if !next_combination(&mut subset, l) {
            break;
        }
    }
    Ok(best.expect("at least one subset"))
}

/// Advances a sorted 1-based combination in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - (k - 1 - i) {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Which termination constant to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `2·8·L·M·R·(M+R)·c/√t`
    #[default]
    WithNormBound,
    /// `16·L·R·(M+R)·c/√t`
    WithoutNormBound,
}

/// Problem constants shared by both CORE-SET variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoresetConfig {
    pub delta: f64,
    pub noise: f64,
    pub norm_bound: f64,
    pub threshold: ThresholdRule,
    pub max_rounds: u64,
    pub enumeration_cap: u64,
}

impl CoresetConfig {
    pub fn new(delta: f64, noise: f64, norm_bound: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::invalid(format!("R must be >= 0, got {noise}")));
        }
        if !(norm_bound > 0.0) || !norm_bound.is_finite() {
            return Err(Error::invalid(format!("M must be > 0, got {norm_bound}")));
        }
        Ok(Self {
            delta,
            noise,
            norm_bound,
            threshold: ThresholdRule::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    /// `d·ln 6 + ln(1/δ)`
    fn covering_term(&self, d: usize) -> f64 {
        d as f64 * 6f64.ln() + (1.0 / self.delta).ln()
    }

    /// Termination threshold after `t` completed outer rounds.
    pub fn threshold(&self, l: usize, d: usize, t: u64) -> f64 {
        let (r, m) = (self.noise, self.norm_bound);
        let lead = match self.threshold {
            ThresholdRule::WithNormBound => 16.0 * l as f64 * m * r * (m + r),
            ThresholdRule::WithoutNormBound => 16.0 * l as f64 * r * (m + r),
        };
        lead * self.covering_term(d) / (t as f64).sqrt()
    }

    /// Outer rounds the known-λ variant needs: smallest `T ≥ 1` with
    /// `8LR(M+R)c/√T ≤ λ`.
    pub fn known_lambda_rounds(&self, l: usize, d: usize, lambda: f64) -> f64 {
        let num = 8.0 * l as f64 * self.noise * (self.norm_bound + self.noise) * self.covering_term(d);
        (num / lambda).powi(2).ceil().max(1.0)
    }
}

/// Outcome of a CORE-SET run.
#[derive(Debug, Clone)]
pub struct CoresetResult {
    /// Chosen 1-based protected indices, ascending.
    pub subset: Vec<usize>,
    pub outer_rounds: u64,
    pub queries_spent: u64,
    pub score: f64,
    /// Estimator for protected vector `i` at position `i − 1`.
    pub estimators: Vec<EstimatorState>,
}

/// Serialized summary written next to experiment traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetReport {
    pub subset: Vec<usize>,
    pub outer_rounds: u64,
    pub queries_spent: u64,
    pub score: f64,
}

impl CoresetResult {
    pub fn report(&self) -> CoresetReport {
        CoresetReport {
            subset: self.subset.clone(),
            outer_rounds: self.outer_rounds,
            queries_spent: self.queries_spent,
            score: self.score,
        }
    }

    pub fn estimates(&self) -> Vec<Vec<f64>> {
        self.estimators.iter().map(|e| e.mle().to_vec()).collect()
    }
}

fn fresh_estimators(l: usize, d: usize) -> Result<Vec<EstimatorState>> {
    (0..l).map(|_| EstimatorState::new(d, CORESET_RHO)).collect()
}

/// One outer round: every basis vector against every protected index.
fn explore_round<F>(oracle: &mut F, estimators: &mut [EstimatorState], d: usize) -> Result<()>
where
    F: FnMut(&[f64], usize) -> Result<f64>,
{
    for (pos, est) in estimators.iter_mut().enumerate() {
        for j in 0..d {
            let e = linalg::basis_vector(d, j);
            let x = oracle(&e, pos + 1)?;
            est.update(&e, x)?;
        }
    }
    Ok(())
}

fn check_shape(l: usize, d: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::invalid("CORE-SET needs at least one protected vector"));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    Ok(())
}

/// CORE-SET for rank `k` with the configured threshold rule.
///
/// `oracle(a, i)` returns noisy feedback `⟨a, θᵢ⟩ + η` for 1-based `i`.
pub fn run_coreset<F>(oracle: F, l: usize, d: usize, k: usize, cfg: &CoresetConfig) -> Result<CoresetResult>
where
    F: FnMut(&[f64], usize) -> Result<f64>,
{
    run_coreset_with_threshold(oracle, l, d, k, cfg, |t| cfg.threshold(l, d, t))
}

/// CORE-SET with an injected termination threshold `t ↦ τ(t)`; stops after
/// the first round `t` where some size-k subset scores strictly above `τ(t)`.
pub fn run_coreset_with_threshold<F, T>(
    mut oracle: F,
    l: usize,
    d: usize,
    k: usize,
    cfg: &CoresetConfig,
    threshold_fn: T,
) -> Result<CoresetResult>
where
    F: FnMut(&[f64], usize) -> Result<f64>,
    T: Fn(u64) -> f64,
{
    check_shape(l, d)?;
    if k == 0 || k > l {
        return Err(Error::invalid(format!("need 1 <= k <= L, got k = {k}, L = {l}")));
    }
    let required = binomial(l, k);
    if required > cfg.enumeration_cap as u128 {
        return Err(Error::Capacity {
            required,
            cap: cfg.enumeration_cap,
        });
    }
    let mut estimators = fresh_estimators(l, d)?;
    let mut t = 0u64;
    loop {
        explore_round(&mut oracle, &mut estimators, d)?;
        t += 1;
        let estimates: Vec<Vec<f64>> = estimators.iter().map(|e| e.mle().to_vec()).collect();
        let best = best_subset_with_cap(&estimates, k, cfg.enumeration_cap)?;
        let done = best.score > threshold_fn(t);
        if done || t >= cfg.max_rounds {
            let result = CoresetResult {
                subset: best.subset,
                outer_rounds: t,
                queries_spent: (d * l) as u64 * t,
                score: best.score,
                estimators,
            };
            if done {
                log::debug!("CORE-SET stopped after {t} rounds, subset {:?}", result.subset);
                return Ok(result);
            }
            return Err(Error::Timeout {
                rounds: t,
                partial: Box::new(result),
            });
        }
    }
}

/// CORE-SET when a lower bound `λ` on the best subset's conditioning is known:
/// explore for a fixed budget, infer the rank from the spectrum, then select.
pub fn run_coreset_known_lambda<F>(
    mut oracle: F,
    l: usize,
    d: usize,
    lambda_known: f64,
    cfg: &CoresetConfig,
) -> Result<CoresetResult>
where
    F: FnMut(&[f64], usize) -> Result<f64>,
{
    check_shape(l, d)?;
    if !(lambda_known > 0.0) || !lambda_known.is_finite() {
        return Err(Error::invalid(format!("known λ_min must be > 0, got {lambda_known}")));
    }
    let needed = cfg.known_lambda_rounds(l, d, lambda_known);
    let mut estimators = fresh_estimators(l, d)?;
    let budget = if needed > cfg.max_rounds as f64 { cfg.max_rounds } else { needed as u64 };
    for _ in 0..budget {
        explore_round(&mut oracle, &mut estimators, d)?;
    }
    let estimates: Vec<Vec<f64>> = estimators.iter().map(|e| e.mle().to_vec()).collect();
    let total = SymMatrix::gram(&estimates, d)?;
    let eig = linalg::sym_eigen(&total)?;
    let k = eig.values.iter().filter(|&&v| v >= lambda_known).count();
    if needed > cfg.max_rounds as f64 {
        let partial = CoresetResult {
            subset: Vec::new(),
            outer_rounds: budget,
            queries_spent: (d * l) as u64 * budget,
            score: 0.0,
            estimators,
        };
        return Err(Error::Timeout {
            rounds: budget,
            partial: Box::new(partial),
        });
    }
    if k == 0 {
        return Err(Error::DegenerateInstance(format!(
            "no eigenvalue of the estimated Gram matrix reaches λ = {lambda_known}"
        )));
    }
    let best = best_subset_with_cap(&estimates, k.min(l), cfg.enumeration_cap)?;
    Ok(CoresetResult {
        subset: best.subset,
        outer_rounds: budget,
        queries_spent: (d * l) as u64 * budget,
        score: best.score,
        estimators,
    })
}
