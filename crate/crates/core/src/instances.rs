//! Instance constructors: random synthetic problems, the two-point lower-bound
//! construction, the optimism counterexample, and regression fits from a
//! dosing dataset.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::environment::{random_unit, unit_angle, ActionSpaceSpec, ProtectedInstance};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

const MAX_REDRAWS: usize = 100;
/// Largest L the synthetic generator accepts.
pub const MAX_PROTECTED: usize = 1024;

/// Random instance: `s` Gaussian directions span the protected space, the `L`
/// protected vectors are random combinations of them, everything has norm `M`.
pub fn gen_synthetic(
    d: usize,
    l: usize,
    s: usize,
    m: f64,
    r: f64,
    seed: u64,
    action_space: ActionSpaceSpec,
) -> Result<ProtectedInstance> {
    if s > l || s > d || l > MAX_PROTECTED || d == 0 {
        return Err(Error::invalid(format!(
            "need s <= L <= {MAX_PROTECTED}, s <= d and d >= 1; got d={d}, L={l}, s={s}"
        )));
    }
    if l > 0 && s == 0 {
        return Err(Error::invalid("L > 0 protected vectors cannot span a 0-dimensional space"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for _ in 0..MAX_REDRAWS {
        let basis: Vec<Vec<f64>> = (0..s).map(|_| gaussian(&mut rng, d)).collect();
        let mut protected = Vec::with_capacity(l);
        for _ in 0..l {
            let mut v = vec![0.0; d];
            for b in &basis {
                let c: f64 = StandardNormal.sample(&mut rng);
                linalg::axpy(&mut v, c, b);
            }
            protected.push(v);
        }
        let theta0 = random_unit(&mut rng, d);
        let Some(protected) = protected.iter().map(|v| linalg::normalize(v)).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let protected = protected.into_iter().map(|v| linalg::scale(&v, m)).collect();
        match ProtectedInstance::new(linalg::scale(&theta0, m), protected, m, r, s, action_space.clone()) {
            Ok(inst) => return Ok(inst),
            Err(e @ (Error::InvalidInput(_) | Error::DegenerateInstance(_))) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "no valid instance after {MAX_REDRAWS} draws (last: {})",
        last_err.map_or_else(|| "zero vector".to_string(), |e| e.to_string())
    )))
}

fn gaussian(rng: &mut impl rand::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// The two instances that no algorithm can both solve quickly.
#[derive(Debug, Clone)]
pub struct LowerBoundPair {
    /// `θ₁ = u₀`
    pub instance1: ProtectedInstance,
    /// `θ₁ = u_{−α}`
    pub instance2: ProtectedInstance,
    pub alpha: f64,
    pub seed: u64,
}

/// Builds both lower-bound instances for horizon `T ≥ 256`, sharing one
/// action-set coin stream.
pub fn gen_lower_bound(horizon: u64, seed: u64) -> Result<LowerBoundPair> {
    if horizon < 256 {
        return Err(Error::invalid(format!("the lower-bound construction needs T >= 256, got {horizon}")));
    }
    let alpha = (horizon as f64).powf(-0.25);
    let space = ActionSpaceSpec::LowerBoundPair { alpha, seed };
    let theta0 = unit_angle(FRAC_PI_2 - alpha);
    let build = |theta1: Vec<f64>| ProtectedInstance::new(theta0.clone(), vec![theta1], 1.0, 1.0, 1, space.clone());
    Ok(LowerBoundPair {
        instance1: build(unit_angle(0.0))?,
        instance2: build(unit_angle(-alpha))?,
        alpha,
        seed,
    })
}

/// Two arms where an optimistic player that never refines `θ₁` along the
/// unplayed direction keeps choosing the worse arm: `θ₀ = u_{π/4}`, `θ₁ = u₀`,
/// arms `{u_{π/4}, u_{π/2}}`.
pub fn gen_example1() -> ProtectedInstance {
    let arms = vec![unit_angle(FRAC_PI_4), unit_angle(FRAC_PI_2)];
    ProtectedInstance::new(
        unit_angle(FRAC_PI_4),
        vec![unit_angle(0.0)],
        1.0,
        1.0,
        1,
        ActionSpaceSpec::FiniteFixed { arms },
    )
    .expect("fixed construction is valid")
}

/// The alternative protected vector `u₀ + u_{−π/4}` that stays consistent with
/// every observation made along `u_{π/4}`.
pub fn example1_alternative() -> BTreeMap<usize, Vec<f64>> {
    BTreeMap::from([(1, linalg::add(&unit_angle(0.0), &unit_angle(-FRAC_PI_4)))])
}

/// Noise scale for a fitted dataset instance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChoice {
    /// Residual standard deviation of the protected-vector fit.
    #[default]
    Residual,
    Fixed(f64),
}

/// Column mapping and fit settings for [`ingest_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub dose_columns: Vec<String>,
    pub inr_column: String,
    pub stability_column: String,
    #[serde(default = "default_inr_target")]
    pub inr_target: f64,
    /// Ridge penalty for the INR fit; `None` means `1e-3·n`.
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
    #[serde(default)]
    pub noise: NoiseChoice,
}

fn default_inr_target() -> f64 {
    2.5
}

fn default_norm_bound() -> f64 {
    1.0
}

impl DatasetConfig {
    pub fn new(dose_columns: Vec<String>, inr_column: &str, stability_column: &str) -> Self {
        Self {
            dose_columns,
            inr_column: inr_column.to_string(),
            stability_column: stability_column.to_string(),
            inr_target: default_inr_target(),
            ridge: None,
            norm_bound: default_norm_bound(),
            noise: NoiseChoice::default(),
        }
    }
}

/// What ingestion fitted and how much data it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInstanceReport {
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub inr_residual_norm: f64,
    pub stability_residual_norm: f64,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub arms: usize,
    pub noise: f64,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
        row,
        msg: format!("column '{column}' has non-numeric value '{cell}'"),
    })
}

fn parse_label(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" => Ok(1.0),
        "false" | "no" => Ok(0.0),
        _ => {
            let v = parse_number(cell, row, column)?;
            if v == 0.0 || v == 1.0 {
                Ok(v)
            } else {
                Err(Error::Parse {
                    row,
                    msg: format!("column '{column}' must be 0/1, got '{cell}'"),
                })
            }
        }
    }
}

/// Reads the dataset, fits reward (logistic on Stability) and protected
/// (ridge on INR deviation) vectors over unit-normalised dose rows, and
/// returns a finite-arm instance over the distinct rows.
pub fn ingest_dataset(path: &Path, cfg: &DatasetConfig) -> Result<(ProtectedInstance, DatasetInstanceReport)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, cfg)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, cfg: &DatasetConfig) -> Result<(ProtectedInstance, DatasetInstanceReport)> {
    if cfg.dose_columns.is_empty() {
        return Err(Error::invalid("no dose columns configured"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("column '{name}' not found in header")))
    };
    let dose_idx: Vec<usize> = cfg.dose_columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let inr_idx = find(&cfg.inr_column)?;
    let stab_idx = find(&cfg.stability_column)?;
    let d = dose_idx.len();

    let mut rows = Vec::new();
    let mut inr = Vec::new();
    let mut stability = Vec::new();
    let (mut read, mut dropped) = (0usize, 0usize);
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 1;
        read += 1;
        let cells: Vec<&str> = dose_idx
            .iter()
            .chain([&inr_idx, &stab_idx])
            .map(|&i| record.get(i).unwrap_or(""))
            .collect();
        if cells.iter().any(|c| is_missing(c)) {
            log::warn!("dropping row {row}: missing value");
            dropped += 1;
            continue;
        }
        let dose: Vec<f64> = cells[..d]
            .iter()
            .zip(&cfg.dose_columns)
            .map(|(c, name)| parse_number(c, row, name))
            .collect::<Result<_>>()?;
        let y = parse_number(cells[d], row, &cfg.inr_column)?;
        let z = parse_label(cells[d + 1], row, &cfg.stability_column)?;
        let Some(unit) = linalg::normalize(&dose) else {
            log::warn!("dropping row {row}: all-zero dose vector");
            dropped += 1;
            continue;
        };
        rows.push(unit);
        inr.push(y - cfg.inr_target);
        stability.push(z);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Generation("no usable rows".into()));
    }
    let gram = SymMatrix::gram(&rows, d)?;
    let eig = linalg::sym_eigen(&gram)?;
    let top = eig.values.last().copied().unwrap_or(0.0);
    let rank = eig.values.iter().filter(|&&v| v > linalg::RANK_TOL * top.max(f64::MIN_POSITIVE)).count();
    if rank < 2 {
        return Err(Error::Generation(format!("dose design has rank {rank} < 2")));
    }

    let lambda = cfg.ridge.unwrap_or(1e-3 * n as f64);
    let theta1_raw = ridge_fit(&rows, &inr, lambda)?;
    let residuals: Vec<f64> = rows.iter().zip(&inr).map(|(a, y)| y - linalg::dot(a, &theta1_raw)).collect();
    let inr_residual_norm = linalg::norm(&residuals);
    let dof = if n > d { n - d } else { n };
    let sigma = inr_residual_norm / (dof as f64).sqrt();

    let theta0_raw = logistic_fit(&rows, &stability)?;
    let probs: Vec<f64> = rows.iter().map(|a| sigmoid(linalg::dot(a, &theta0_raw))).collect();
    let stability_residual_norm = linalg::norm(&linalg::sub(&stability, &probs));

    let m = cfg.norm_bound;
    let cap = |v: &[f64]| {
        let nv = linalg::norm(v);
        let c = if nv > m { m / nv } else { 1.0 };
        (linalg::scale(v, c), c)
    };
    let (theta0, _) = cap(&theta0_raw);
    let (theta1, c1) = cap(&theta1_raw);
    if linalg::norm(&theta1) == 0.0 {
        return Err(Error::Generation("INR fit is identically zero".into()));
    }
    let noise = match cfg.noise {
        NoiseChoice::Residual => sigma * c1,
        NoiseChoice::Fixed(v) => v,
    };

    let mut arms: Vec<Vec<f64>> = Vec::new();
    for a in rows {
        let dup = arms.iter().any(|b| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
        if !dup {
            arms.push(a);
        }
    }
    let arm_count = arms.len();
    let inst = ProtectedInstance::new(
        theta0.clone(),
        vec![theta1.clone()],
        m,
        noise,
        1,
        ActionSpaceSpec::FiniteFixed { arms },
    )?;
    let report = DatasetInstanceReport {
        theta0,
        theta1,
        inr_residual_norm,
        stability_residual_norm,
        rows_read: read,
        rows_dropped: dropped,
        arms: arm_count,
        noise,
    };
    Ok((inst, report))
}

/// `(XᵀX + λI)⁻¹Xᵀy`
pub fn ridge_fit(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let mut g = SymMatrix::gram(rows, d)?;
    g.add_identity(lambda);
    let mut rhs = vec![0.0; d];
    for (a, &v) in rows.iter().zip(y) {
        linalg::axpy(&mut rhs, v, a);
    }
    linalg::spd_solve(&g, &rhs)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(a, &t)| {
            let z = linalg::dot(a, w);
            // log σ(z) = −ln(1+e^{−z}), written stably
            let log1pexp = |u: f64| if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
            -t * log1pexp(-z) - (1.0 - t) * log1pexp(z)
        })
        .sum()
}

const IRLS_MAX_ITERS: usize = 100;
const IRLS_TOL: f64 = 1e-8;

/// Damped Newton (IRLS) for logistic regression without intercept.
pub fn logistic_fit(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Generation("stability labels are constant, logistic fit is undefined".into()));
    }
    let mut w = vec![0.0; d];
    let mut ll = log_likelihood(rows, y, &w);
    for _ in 0..IRLS_MAX_ITERS {
        let mut h = SymMatrix::zeros(d);
        let mut grad = vec![0.0; d];
        for (a, &t) in rows.iter().zip(y) {
            let p = sigmoid(linalg::dot(a, &w));
            h.add_outer(a, p * (1.0 - p));
            linalg::axpy(&mut grad, t - p, a);
        }
        h.add_identity(1e-10);
        let step = linalg::spd_solve(&h, &grad)?;
        let mut scale = 1.0;
        let mut next;
        loop {
            next = w.clone();
            linalg::axpy(&mut next, scale, &step);
            let nll = log_likelihood(rows, y, &next);
            if nll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-10 {
                ll = nll.max(ll);
                break;
            }
            scale *= 0.5;
        }
        let moved = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
        w = next;
        if !linalg::is_finite(&w) {
            break;
        }
        if moved < IRLS_TOL {
            return Ok(w);
        }
    }
    Err(Error::Generation(format!(
        "logistic fit did not converge in {IRLS_MAX_ITERS} iterations (labels may be separable)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ArmSet;
    use rand::Rng;

    #[test]
    fn synthetic_shapes() {
        for (d, l, s) in [(6, 4, 2), (5, 3, 2), (4, 3, 3)] {
            let inst = gen_synthetic(d, l, s, 1.0, 0.1, 42, ActionSpaceSpec::UnitBall).unwrap();
            assert_eq!(inst.dim(), d);
            assert_eq!(inst.num_protected(), l);
            assert_eq!(inst.protected_space().rank(), s);
        }
        assert!(gen_synthetic(2, 3, 3, 1.0, 0.1, 1, ActionSpaceSpec::UnitBall).is_err());
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = gen_synthetic(5, 3, 2, 1.0, 0.1, 9, ActionSpaceSpec::UnitBall).unwrap();
        let b = gen_synthetic(5, 3, 2, 1.0, 0.1, 9, ActionSpaceSpec::UnitBall).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_invariants_over_many_seeds() {
        for seed in 0..1000 {
            let inst = gen_synthetic(6, 4, 2, 1.0, 0.001, seed, ActionSpaceSpec::UnitBall).unwrap();
            assert_eq!(inst.protected_space().rank(), 2);
            for p in inst.protected() {
                assert!(linalg::norm(p) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn lower_bound_rewards() {
        let pair = gen_lower_bound(4096, 3).unwrap();
        let a = pair.alpha;
        assert!((a - 0.125).abs() < 1e-15);
        let arms = vec![
            unit_angle(std::f64::consts::PI - a),
            unit_angle(2.0 * a),
            unit_angle(std::f64::consts::PI - 3.0 * a),
        ];
        let want1 = [a.sin() * a.cos(), (2.0 * a).sin() * a.cos(), (3.0 * a).sin() * a.cos()];
        let want2 = [0.0, (3.0 * a).sin(), (2.0 * a).sin()];
        for (k, arm) in arms.iter().enumerate() {
            assert!((pair.instance1.reward(arm) - want1[k]).abs() < 1e-12);
            assert!((pair.instance2.reward(arm) - want2[k]).abs() < 1e-12);
        }
        let set = ArmSet::Finite(arms.clone());
        assert!(pair.instance1.suboptimality(&arms[1], &set).unwrap() >= a / 4.0);
        assert!(pair.instance2.suboptimality(&arms[2], &set).unwrap() >= a / 2.0);
        assert!(matches!(gen_lower_bound(255, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn example_one() {
        let inst = gen_example1();
        let tp = inst.theta_perp();
        assert!(tp[0].abs() < 1e-15 && (tp[1] - 0.5f64.sqrt()).abs() < 1e-15);
        let set = ArmSet::Finite(inst_arms(&inst));
        assert_eq!(inst.optimal_action(&set).unwrap().1, Some(1));
    }

    fn inst_arms(inst: &ProtectedInstance) -> Vec<Vec<f64>> {
        match inst.action_space() {
            ActionSpaceSpec::FiniteFixed { arms } => arms.clone(),
            _ => unreachable!(),
        }
    }

    fn angle(a: &[f64], b: &[f64]) -> f64 {
        (linalg::dot(a, b) / (linalg::norm(a) * linalg::norm(b))).clamp(-1.0, 1.0).acos()
    }

    fn synthetic_csv(n: usize, theta0: &[f64], theta1: &[f64], seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = String::from("d1,d2,d3,INR,Stable\n");
        for _ in 0..n {
            let a = random_unit(&mut rng, 3);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let inr = 2.5 + linalg::dot(&a, theta1) + 0.01 * noise;
            let p = sigmoid(linalg::dot(&a, theta0));
            let s = (rng.random::<f64>() < p) as u8;
            out += &format!("{},{},{},{inr},{s}\n", a[0], a[1], a[2]);
        }
        out
    }

    fn cfg() -> DatasetConfig {
        DatasetConfig::new(vec!["d1".into(), "d2".into(), "d3".into()], "INR", "Stable")
    }

    #[test]
    fn dataset_round_trip_recovers_directions() {
        let theta0 = [3.0, -1.5, 2.0];
        let theta1 = [0.4, 0.7, -0.2];
        let csv = synthetic_csv(5000, &theta0, &theta1, 1);
        let (inst, report) = ingest_reader(csv.as_bytes(), &cfg()).unwrap();
        assert!(angle(inst.theta0(), &theta0) < 0.1);
        assert!(angle(&inst.protected()[0], &theta1) < 0.1);
        assert_eq!(report.arms, 5000);
        assert_eq!(inst.dim(), 3);
        assert!(linalg::norm(inst.theta0()) <= 1.0 + 1e-12);
    }

    #[test]
    fn dataset_is_deterministic_and_dedups() {
        let mut csv = synthetic_csv(200, &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0], 2);
        csv += "1,0,0,2.5,1\n2,0,0,2.6,0\n";
        let (a, ra) = ingest_reader(csv.as_bytes(), &cfg()).unwrap();
        let (b, _) = ingest_reader(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ra.arms, 201);
    }

    #[test]
    fn dataset_errors() {
        let csv = "d1,d2,d3,INR,Stable\n1,0,0,2.5,0\n0,1,0,2.4,0\n0,0,1,2.7,0\n";
        assert!(matches!(ingest_reader(csv.as_bytes(), &cfg()), Err(Error::Generation(_))));
        let csv = "d1,d2,d3,INR,Stable\n1,0,0,2.5,0\n0,x,0,2.4,1\n";
        match ingest_reader(csv.as_bytes(), &cfg()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let csv = "d1,d2,d3,INR,Stable\n1,0,0,2.5,0\n,1,0,2.4,1\n1,0,0,2.5,1\n";
        assert!(matches!(ingest_reader(csv.as_bytes(), &cfg()), Err(Error::Generation(_))));
    }

    #[test]
    fn missing_rows_are_dropped() {
        let mut csv = synthetic_csv(300, &[1.0, 0.5, 0.0], &[0.0, 1.0, 0.3], 3);
        csv += "0.5,,0.5,2.5,1\n";
        let (_, report) = ingest_reader(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(report.rows_read, 301);
        assert_eq!(report.rows_dropped, 1);
    }

    #[test]
    fn fixed_noise_option() {
        let csv = synthetic_csv(300, &[1.0, 0.5, 0.0], &[0.0, 1.0, 0.3], 4);
        let mut c = cfg();
        c.noise = NoiseChoice::Fixed(0.001);
        let (inst, _) = ingest_reader(csv.as_bytes(), &c).unwrap();
        assert_eq!(inst.noise(), 0.001);
    }
}
