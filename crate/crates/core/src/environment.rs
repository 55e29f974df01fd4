//! Ground truth for a protected linear bandit: the hidden target and
//! protected vectors, noisy feedback, and genie-side regret.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Subspace, RANK_TOL};
use crate::policies::ActionChoice;

const NORM_SLACK: f64 = 1e-12;

/// `u_α = (cos α, sin α)`
pub fn unit_angle(alpha: f64) -> Vec<f64> {
    vec![alpha.cos(), alpha.sin()]
}

/// How the per-round action set is realised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ActionSpaceSpec {
    /// Every vector with `‖a‖₂ ≤ 1`.
    UnitBall,
    /// The same finite arm list every round.
    FiniteFixed { arms: Vec<Vec<f64>> },
    /// `count` fresh Gaussian directions on the unit sphere every round.
    FiniteResampled { count: usize, seed: u64 },
    /// `{u_{π−α}, u_{2α}}` or `{u_{π−α}, u_{2α}, u_{π−3α}}` with equal probability.
    LowerBoundPair {
        alpha: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl ActionSpaceSpec {
    fn stream_seed(&self) -> u64 {
        match self {
            ActionSpaceSpec::FiniteResampled { seed, .. }
            | ActionSpaceSpec::LowerBoundPair { seed, .. } => *seed,
            _ => 0,
        }
    }
}

/// One round's realised action set.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmSet {
    Ball { dim: usize },
    Finite(Vec<Vec<f64>>),
}

impl ArmSet {
    pub fn dim(&self) -> usize {
        match self {
            ArmSet::Ball { dim } => *dim,
            ArmSet::Finite(arms) => arms.first().map_or(0, Vec::len),
        }
    }

    pub fn arms(&self) -> Option<&[Vec<f64>]> {
        match self {
            ArmSet::Ball { .. } => None,
            ArmSet::Finite(arms) => Some(arms),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one purpose within one run.
pub fn stream_rng(run_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const NOISE_STREAM: u64 = 1;
pub(crate) const POLICY_STREAM: u64 = 3;

/// Per-run source of action sets. Two instances sharing an action-space seed
/// see the same sets for the same run seed.
#[derive(Debug, Clone)]
pub struct ArmStream {
    spec: ActionSpaceSpec,
    dim: usize,
    rng: ChaCha8Rng,
}

impl ArmStream {
    pub fn new(spec: &ActionSpaceSpec, dim: usize, run_seed: u64) -> Self {
        let seed = splitmix(spec.stream_seed() ^ splitmix(run_seed));
        Self {
            spec: spec.clone(),
            dim,
            rng: stream_rng(seed, 2),
        }
    }

    pub fn next_set(&mut self) -> ArmSet {
        match &self.spec {
            ActionSpaceSpec::UnitBall => ArmSet::Ball { dim: self.dim },
            ActionSpaceSpec::FiniteFixed { arms } => ArmSet::Finite(arms.clone()),
            ActionSpaceSpec::FiniteResampled { count, .. } => {
                let arms = (0..*count).map(|_| random_unit(&mut self.rng, self.dim)).collect();
                ArmSet::Finite(arms)
            }
            ActionSpaceSpec::LowerBoundPair { alpha, .. } => {
                use rand::Rng;
                let a = *alpha;
                let mut arms = vec![
                    unit_angle(std::f64::consts::PI - a),
                    unit_angle(2.0 * a),
                ];
                if self.rng.random_bool(0.5) {
                    arms.push(unit_angle(std::f64::consts::PI - 3.0 * a));
                }
                ArmSet::Finite(arms)
            }
        }
    }
}

/// Uniform direction on the unit sphere (normalised Gaussian).
pub fn random_unit(rng: &mut impl rand::Rng, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = linalg::normalize(&g) {
            return u;
        }
    }
}

/// On-disk instance layout; field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub s: usize,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub theta0: Vec<f64>,
    pub protected: Vec<Vec<f64>>,
    pub action_space: ActionSpaceSpec,
}

/// Hidden parameters of one protected linear bandit. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct ProtectedInstance {
    theta0: Vec<f64>,
    protected: Vec<Vec<f64>>,
    norm_bound: f64,
    noise: f64,
    subspace_dim: usize,
    action_space: ActionSpaceSpec,
    protected_space: Subspace,
    theta_perp: Vec<f64>,
}

impl ProtectedInstance {
    pub fn new(
        theta0: Vec<f64>,
        protected: Vec<Vec<f64>>,
        norm_bound: f64,
        noise: f64,
        subspace_dim: usize,
        action_space: ActionSpaceSpec,
    ) -> Result<Self> {
        let d = theta0.len();
        if d == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(norm_bound > 0.0) || !norm_bound.is_finite() {
            return Err(Error::invalid(format!("M must be > 0, got {norm_bound}")));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::invalid(format!("R must be >= 0, got {noise}")));
        }
        if !linalg::is_finite(&theta0) {
            return Err(Error::invalid("theta0 has non-finite entries"));
        }
        let cap = norm_bound + NORM_SLACK;
        if linalg::norm(&theta0) > cap {
            return Err(Error::invalid(format!(
                "‖theta0‖ = {} exceeds M = {norm_bound}",
                linalg::norm(&theta0)
            )));
        }
        for (i, p) in protected.iter().enumerate() {
            if p.len() != d {
                return Err(Error::invalid(format!(
                    "protected vector {} has dimension {}, expected {d}",
                    i + 1,
                    p.len()
                )));
            }
            if linalg::norm(p) > cap {
                return Err(Error::invalid(format!(
                    "‖theta_{}‖ = {} exceeds M = {norm_bound}",
                    i + 1,
                    linalg::norm(p)
                )));
            }
        }
        let protected_space = Subspace::spanned_by(&protected, d)?;
        if protected_space.rank() != subspace_dim {
            return Err(Error::invalid(format!(
                "protected vectors span rank {} at tolerance {RANK_TOL:e}, but s = {subspace_dim}",
                protected_space.rank()
            )));
        }
        Self::check_action_space(&action_space, d, norm_bound)?;
        let theta_perp = protected_space.project_out(&theta0);
        if matches!(action_space, ActionSpaceSpec::UnitBall)
            && linalg::norm(&theta_perp) <= 1e-12 * norm_bound
        {
            return Err(Error::DegenerateInstance(
                "theta0 lies in the protected span, every ball action has zero reward".into(),
            ));
        }
        Ok(Self {
            theta0,
            protected,
            norm_bound,
            noise,
            subspace_dim,
            action_space,
            protected_space,
            theta_perp,
        })
    }

    fn check_action_space(spec: &ActionSpaceSpec, d: usize, m: f64) -> Result<()> {
        match spec {
            ActionSpaceSpec::UnitBall => Ok(()),
            ActionSpaceSpec::FiniteFixed { arms } => {
                if arms.is_empty() {
                    return Err(Error::invalid("finite action set is empty"));
                }
                for (k, a) in arms.iter().enumerate() {
                    if a.len() != d || !linalg::is_finite(a) {
                        return Err(Error::invalid(format!("arm {k} is not a finite {d}-vector")));
                    }
                    if linalg::norm(a) > m + NORM_SLACK {
                        return Err(Error::invalid(format!("arm {k} has norm above M = {m}")));
                    }
                }
                Ok(())
            }
            ActionSpaceSpec::FiniteResampled { count, .. } => {
                if *count == 0 {
                    return Err(Error::invalid("resampled action set needs count >= 1"));
                }
                if m < 1.0 - NORM_SLACK {
                    return Err(Error::invalid("unit-norm resampled arms need M >= 1"));
                }
                Ok(())
            }
            ActionSpaceSpec::LowerBoundPair { alpha, .. } => {
                if d != 2 {
                    return Err(Error::invalid("lower-bound action sets live in d = 2"));
                }
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
                }
                if m < 1.0 - NORM_SLACK {
                    return Err(Error::invalid("unit-norm lower-bound arms need M >= 1"));
                }
                Ok(())
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn num_protected(&self) -> usize {
        self.protected.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspace_dim
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn protected(&self) -> &[Vec<f64>] {
        &self.protected
    }

    pub fn action_space(&self) -> &ActionSpaceSpec {
        &self.action_space
    }

    pub fn protected_space(&self) -> &Subspace {
        &self.protected_space
    }

    /// θ for query index `i`: 0 is the target, `1..=L` the protected vectors.
    pub fn vector(&self, index: usize) -> Result<&[f64]> {
        match index {
            0 => Ok(&self.theta0),
            i if i <= self.protected.len() => Ok(&self.protected[i - 1]),
            i => Err(Error::invalid(format!(
                "query index {i} out of range 0..={}",
                self.protected.len()
            ))),
        }
    }

    /// `X = ⟨a, θ_i⟩ + η`, `η ~ N(0, R²)`. One normal draw per call, even when R = 0.
    pub fn feedback(&self, a: &[f64], index: usize, rng: &mut impl rand::Rng) -> Result<f64> {
        let theta = self.vector(index)?;
        if a.len() != theta.len() {
            return Err(Error::invalid(format!(
                "action has dimension {}, instance has {}",
                a.len(),
                theta.len()
            )));
        }
        let z: f64 = StandardNormal.sample(rng);
        Ok(linalg::dot(a, theta) + self.noise * z)
    }

    /// `θ⊥`, the part of θ₀ orthogonal to the protected span.
    pub fn theta_perp(&self) -> &[f64] {
        &self.theta_perp
    }

    /// Expected reward `⟨a, θ⊥⟩`.
    pub fn reward(&self, a: &[f64]) -> f64 {
        linalg::dot(a, &self.theta_perp)
    }

    /// Best action in the realised set and its position (finite sets only).
    /// Ties go to the lowest arm index.
    pub fn optimal_action(&self, arms: &ArmSet) -> Result<(Vec<f64>, Option<usize>)> {
        match arms {
            ArmSet::Ball { .. } => linalg::normalize(&self.theta_perp)
                .filter(|_| linalg::norm(&self.theta_perp) > 1e-12 * self.norm_bound)
                .map(|a| (a, None))
                .ok_or_else(|| Error::DegenerateInstance("theta_perp is zero".into())),
            ArmSet::Finite(list) => {
                let mut best: Option<(usize, f64)> = None;
                for (k, a) in list.iter().enumerate() {
                    let r = self.reward(a);
                    if best.is_none_or(|(_, b)| r > b) {
                        best = Some((k, r));
                    }
                }
                let (k, _) = best.ok_or_else(|| Error::invalid("empty action set"))?;
                Ok((list[k].clone(), Some(k)))
            }
        }
    }

    pub fn optimal_reward(&self, arms: &ArmSet) -> Result<f64> {
        Ok(self.reward(&self.optimal_action(arms)?.0))
    }

    /// `Δ_a = ⟨a* − a, θ⊥⟩`.
    pub fn suboptimality(&self, a: &[f64], arms: &ArmSet) -> Result<f64> {
        Ok(self.optimal_reward(arms)? - self.reward(a))
    }
}

impl TryFrom<InstanceFile> for ProtectedInstance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        if f.theta0.len() != f.d {
            return Err(Error::invalid(format!(
                "theta0 has length {}, but d = {}",
                f.theta0.len(),
                f.d
            )));
        }
        if f.protected.len() != f.l {
            return Err(Error::invalid(format!(
                "{} protected vectors listed, but L = {}",
                f.protected.len(),
                f.l
            )));
        }
        ProtectedInstance::new(f.theta0, f.protected, f.m, f.r, f.s, f.action_space)
    }
}

impl From<ProtectedInstance> for InstanceFile {
    fn from(p: ProtectedInstance) -> Self {
        InstanceFile {
            d: p.dim(),
            l: p.protected.len(),
            s: p.subspace_dim,
            m: p.norm_bound,
            r: p.noise,
            theta0: p.theta0,
            protected: p.protected,
            action_space: p.action_space,
        }
    }
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub t: u64,
    pub action: ActionChoice,
    /// Position of the arm in a finite realised set.
    pub arm_index: Option<usize>,
    pub feedback: f64,
    pub suboptimality: f64,
    pub cumulative_regret: f64,
}

/// One run's interaction with an instance: noise and action-set streams
/// plus the regret tally.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    instance: &'a ProtectedInstance,
    noise_rng: ChaCha8Rng,
    arm_stream: ArmStream,
    t: u64,
    cumulative: f64,
}

impl<'a> Environment<'a> {
    pub fn new(instance: &'a ProtectedInstance, run_seed: u64) -> Self {
        Self {
            instance,
            noise_rng: stream_rng(run_seed, NOISE_STREAM),
            arm_stream: ArmStream::new(instance.action_space(), instance.dim(), run_seed),
            t: 0,
            cumulative: 0.0,
        }
    }

    pub fn instance(&self) -> &'a ProtectedInstance {
        self.instance
    }

    pub fn rounds(&self) -> u64 {
        self.t
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.cumulative
    }

    pub fn next_arms(&mut self) -> ArmSet {
        self.arm_stream.next_set()
    }

    /// Plays `choice` against the realised set `arms`, charging its regret.
    pub fn play(
        &mut self,
        arms: &ArmSet,
        choice: &ActionChoice,
        arm_index: Option<usize>,
    ) -> Result<RoundOutcome> {
        let feedback = self
            .instance
            .feedback(&choice.arm, choice.index, &mut self.noise_rng)?;
        let suboptimality = self.instance.suboptimality(&choice.arm, arms)?;
        if cfg!(debug_assertions) {
            let in_set = match arms {
                ArmSet::Ball { .. } => linalg::norm(&choice.arm) <= 1.0 + 1e-9,
                ArmSet::Finite(_) => arm_index.is_some(),
            };
            debug_assert!(
                !in_set || suboptimality >= -1e-9,
                "negative suboptimality {suboptimality} for an arm inside the action set"
            );
        }
        self.t += 1;
        self.cumulative += suboptimality;
        Ok(RoundOutcome {
            t: self.t,
            action: choice.clone(),
            arm_index,
            feedback,
            suboptimality,
            cumulative_regret: self.cumulative,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn inst(theta0: Vec<f64>, protected: Vec<Vec<f64>>, s: usize, r: f64) -> ProtectedInstance {
        let m = 2.0;
        ProtectedInstance::new(theta0, protected, m, r, s, ActionSpaceSpec::UnitBall).unwrap()
    }

    #[test]
    fn noiseless_feedback() {
        let p = inst(vec![1.0, 1.0], vec![vec![2.0, 0.0]], 1, 0.0);
        let mut rng = stream_rng(1, NOISE_STREAM);
        assert_eq!(p.feedback(&[1.0, 0.0], 1, &mut rng).unwrap(), 2.0);
        assert!(matches!(p.feedback(&[1.0, 0.0], 2, &mut rng), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_action_gives_pure_noise() {
        let p = inst(vec![1.0, 1.0], vec![vec![1.0, 0.0]], 1, 0.5);
        let mut a = stream_rng(9, NOISE_STREAM);
        let mut b = stream_rng(9, NOISE_STREAM);
        let x = p.feedback(&[0.0, 0.0], 0, &mut a).unwrap();
        let z: f64 = StandardNormal.sample(&mut b);
        assert_eq!(x, 0.5 * z);
    }

    #[test]
    fn feedback_mean_concentrates() {
        let p = inst(vec![0.3, -0.8], vec![vec![1.0, 0.0]], 1, 1.0);
        let mut rng = stream_rng(4, NOISE_STREAM);
        let a = [0.6, 0.8];
        let n = 100_000;
        let mean = (0..n).map(|_| p.feedback(&a, 0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        let truth = linalg::dot(&a, p.theta0());
        assert!((mean - truth).abs() <= 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn theta_perp_cases() {
        let p = ProtectedInstance::new(
            vec![1.0, 1.0, 1.0],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            2.0,
            0.1,
            1,
            ActionSpaceSpec::UnitBall,
        )
        .unwrap();
        let tp = p.theta_perp();
        assert!((tp[0]).abs() < 1e-12 && (tp[1] - 1.0).abs() < 1e-12 && (tp[2] - 1.0).abs() < 1e-12);

        let q = inst(vec![0.3, 0.4], vec![], 0, 0.1);
        assert_eq!(q.theta_perp(), q.theta0());

        let fixed = ActionSpaceSpec::FiniteFixed {
            arms: vec![vec![1.0, 0.0]],
        };
        let r = ProtectedInstance::new(vec![0.5, 0.0], vec![vec![1.0, 0.0]], 1.0, 0.1, 1, fixed).unwrap();
        assert!(linalg::norm(r.theta_perp()) < 1e-15);
    }

    #[test]
    fn degenerate_ball_instance_rejected() {
        let err = ProtectedInstance::new(
            vec![0.5, 0.0],
            vec![vec![1.0, 0.0]],
            1.0,
            0.1,
            1,
            ActionSpaceSpec::UnitBall,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateInstance(_)));
    }

    #[test]
    fn rank_and_norm_checks() {
        let bad_rank = ProtectedInstance::new(
            vec![0.0, 0.0, 1.0],
            vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]],
            2.0,
            0.1,
            2,
            ActionSpaceSpec::UnitBall,
        );
        assert!(matches!(bad_rank, Err(Error::InvalidInput(_))));
        let too_long = ProtectedInstance::new(vec![0.0, 3.0], vec![], 2.0, 0.1, 0, ActionSpaceSpec::UnitBall);
        assert!(matches!(too_long, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ball_optimum_and_gap() {
        let p = ProtectedInstance::new(
            vec![1.0, 1.0, 1.0],
            vec![vec![1.0, 0.0, 0.0]],
            2.0,
            0.1,
            1,
            ActionSpaceSpec::UnitBall,
        )
        .unwrap();
        let ball = ArmSet::Ball { dim: 3 };
        let (a, idx) = p.optimal_action(&ball).unwrap();
        assert!(idx.is_none());
        assert!((a[0]).abs() < 1e-12 && (a[1] - FRAC_1_SQRT_2).abs() < 1e-12 && (a[2] - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(p.suboptimality(&a, &ball).unwrap().abs() < 1e-12);
    }

    #[test]
    fn example_one_gap() {
        let arms = vec![unit_angle(FRAC_PI_4), unit_angle(FRAC_PI_2)];
        let p = ProtectedInstance::new(
            unit_angle(FRAC_PI_4),
            vec![unit_angle(0.0)],
            1.0,
            0.1,
            1,
            ActionSpaceSpec::FiniteFixed { arms: arms.clone() },
        )
        .unwrap();
        let set = ArmSet::Finite(arms.clone());
        let (_, idx) = p.optimal_action(&set).unwrap();
        assert_eq!(idx, Some(1));
        let gap = p.suboptimality(&arms[0], &set).unwrap();
        assert!((gap - (FRAC_1_SQRT_2 - 0.5)).abs() < 1e-12);
        assert!((gap - 0.2071).abs() < 1e-4);
    }

    #[test]
    fn finite_ties_go_to_lowest_index() {
        let arms = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = ProtectedInstance::new(
            vec![0.0, 1.0],
            vec![],
            1.0,
            0.0,
            0,
            ActionSpaceSpec::FiniteFixed { arms: arms.clone() },
        )
        .unwrap();
        assert_eq!(p.optimal_action(&ArmSet::Finite(arms)).unwrap().1, Some(0));
    }

    #[test]
    fn json_field_names() {
        let p = inst(vec![1.0, 0.5], vec![vec![0.0, 1.0]], 1, 0.25);
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["d", "L", "s", "M", "R", "theta0", "protected", "action_space"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["action_space"]["kind"], "UnitBall");
        let back = ProtectedInstance::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let typo = r#"{"d":1,"L":0,"s":0,"M":1,"R":0,"theta0":[1],"protected":[],"action_space":{"kind":"UnitBall"},"extra":1}"#;
        assert!(ProtectedInstance::from_json(typo).is_err());
    }

    #[test]
    fn resampled_sets_are_unit_and_seeded() {
        let spec = ActionSpaceSpec::FiniteResampled { count: 5, seed: 11 };
        let mut a = ArmStream::new(&spec, 4, 7);
        let mut b = ArmStream::new(&spec, 4, 7);
        for _ in 0..3 {
            let sa = a.next_set();
            assert_eq!(sa, b.next_set());
            for arm in sa.arms().unwrap() {
                assert!((linalg::norm(arm) - 1.0).abs() < 1e-12);
            }
        }
    }
}
