//! Kernel regularization: choose the length-scale weights `theta` that
//! minimize the condition number of the self-correlation matrix.
//!
//! The search runs in two stages on normalized locations:
//!
//! 1. a seeding scan evaluating `theta0` and a set of random multiplicative
//!    perturbations of it, keeping the best-conditioned candidate;
//! 2. a compass search in `ln(theta)` started from that candidate, polling
//!    `+-step` along every coordinate, greedily accepting the best strict
//!    improvement and shrinking the step when no poll improves.
//!
//! Matrices that lost positive definiteness score [`KAPPA_SENTINEL`] and are
//! never accepted. The observed values play no part in any of this, so the
//! whole path depends on locations and configuration only.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{kappa_for, KernelParams, KAPPA_SENTINEL};
use crate::error::{Error, Result};
use crate::kriging::TrainingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    /// Starting weights. A single entry is broadcast to every dimension.
    pub theta0: Vec<f64>,
    pub n_seeds: usize,
    /// Range of the log-uniform multiplicative perturbation factors.
    pub seed_factor_range: (f64, f64),
    /// Box applied to every component of theta, in normalized space.
    pub theta_bounds: (f64, f64),
    /// Initial compass step in ln(theta).
    pub initial_step: f64,
    pub step_shrink: f64,
    pub step_tol: f64,
    pub max_iters: usize,
    pub rng_seed: u64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            theta0: vec![1.0],
            n_seeds: 200,
            seed_factor_range: (0.1, 10.0),
            theta_bounds: (1e-3, 30.0),
            initial_step: 0.5,
            step_shrink: 0.5,
            step_tol: 1e-4,
            max_iters: 200,
            rng_seed: 0,
        }
    }
}

impl RegularizerConfig {
    /// Checks the configuration and returns `theta0` expanded to `dim` entries.
    pub fn resolve_theta0(&self, dim: usize) -> Result<Vec<f64>> {
        let (lo, hi) = self.theta_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::invalid(format!("theta bounds must satisfy 0 < min < max, got [{lo}, {hi}]")));
        }
        let (flo, fhi) = self.seed_factor_range;
        if !(flo.is_finite() && fhi.is_finite() && flo > 0.0 && flo <= fhi) {
            return Err(Error::invalid(format!("seed factor range must satisfy 0 < min <= max, got [{flo}, {fhi}]")));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::invalid("initial step must be positive"));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::invalid("step shrink factor must lie in (0, 1)"));
        }
        if !(self.step_tol.is_finite() && self.step_tol > 0.0) {
            return Err(Error::invalid("step tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        let theta0 = match self.theta0.len() {
            1 => vec![self.theta0[0]; dim],
            n if n == dim => self.theta0.clone(),
            n => return Err(Error::invalid(format!("theta0 has {n} entries, expected 1 or {dim}"))),
        };
        if let Some(t) = theta0.iter().find(|t| !(**t >= lo && **t <= hi)) {
            return Err(Error::invalid(format!("theta0 component {t} lies outside the bounds [{lo}, {hi}]")));
        }
        Ok(theta0)
    }
}

fn kappa_of(points: &DMatrix<f64>, theta: &[f64]) -> Result<f64> {
    kappa_for(points, &KernelParams::new(theta.to_vec())?)
}

/// Outcome of the seeding scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub theta: Vec<f64>,
    pub kappa: f64,
    pub theta0: Vec<f64>,
    pub kappa_theta0: f64,
    /// Every evaluated candidate in generation order, `theta0` first.
    pub candidates: Vec<(Vec<f64>, f64)>,
}

/// Generates the perturbed candidates. Kept separate from evaluation so the
/// random stream never depends on evaluation order.
fn seed_candidates(theta0: &[f64], config: &RegularizerConfig) -> Vec<Vec<f64>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.rng_seed);
    let (flo, fhi) = (config.seed_factor_range.0.ln(), config.seed_factor_range.1.ln());
    let (lo, hi) = config.theta_bounds;
    let mut out = Vec::with_capacity(config.n_seeds + 1);
    out.push(theta0.to_vec());
    for _ in 0..config.n_seeds {
        let cand = theta0
            .iter()
            .map(|t| {
                let f = if flo < fhi { rng.gen_range(flo..=fhi) } else { flo };
                (t * f.exp()).clamp(lo, hi)
            })
            .collect();
        out.push(cand);
    }
    out
}

fn check_points(points: &DMatrix<f64>) -> Result<()> {
    if points.nrows() < 2 {
        return Err(Error::invalid("regularization needs at least two points"));
    }
    Ok(())
}

/// Evaluates `theta0` and `n_seeds` log-uniform perturbations of it and
/// returns the best-conditioned one.
pub fn seed_search(points: &DMatrix<f64>, config: &RegularizerConfig) -> Result<SeedOutcome> {
    check_points(points)?;
    let theta0 = config.resolve_theta0(points.ncols())?;
    let thetas = seed_candidates(&theta0, config);
    let kappas = thetas
        .par_iter()
        .map(|t| kappa_of(points, t))
        .collect::<Result<Vec<f64>>>()?;

    let mut best = 0;
    for (i, k) in kappas.iter().enumerate() {
        if *k < kappas[best] {
            best = i;
        }
    }
    if kappas[best] >= KAPPA_SENTINEL {
        return Err(Error::RegularizationFailed(format!(
            "none of the {} seed candidates gives a positive definite correlation matrix",
            thetas.len()
        )));
    }
    Ok(SeedOutcome {
        theta: thetas[best].clone(),
        kappa: kappas[best],
        kappa_theta0: kappas[0],
        theta0,
        candidates: thetas.into_iter().zip(kappas).collect(),
    })
}

/// One row of the convergence record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub kappa: f64,
    /// Compass step in force after this iteration.
    pub step: f64,
    pub accepted: bool,
}

/// Seeding summary attached to traces produced by [`regularize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub theta0: Vec<f64>,
    pub kappa_theta0: f64,
    pub candidates: usize,
}

/// Condition number history of the compass search.
///
/// Row 0 is the starting point of the search and defines `kappa0`; each
/// further row is one poll iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub entries: Vec<TraceEntry>,
    pub kappa0: f64,
    pub max_iters: usize,
    pub seeding: Option<SeedSummary>,
}

impl ConvergenceTrace {
    pub fn final_kappa(&self) -> f64 {
        self.entries.last().map_or(self.kappa0, |e| e.kappa)
    }

    pub fn final_theta(&self) -> &[f64] {
        &self.entries.last().expect("trace has a starting row").theta
    }

    fn kappa_ratio(&self, kappa: f64) -> f64 {
        if kappa == self.kappa0 {
            1.0
        } else {
            kappa / self.kappa0
        }
    }

    /// `(iter / max_iters, kappa / kappa0)` pairs.
    pub fn normalized(&self) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.iter as f64 / self.max_iters as f64, self.kappa_ratio(e.kappa)))
            .collect()
    }

    /// Final `kappa / kappa0`.
    pub fn improvement(&self) -> f64 {
        self.kappa_ratio(self.final_kappa())
    }

    /// CSV with columns `iter,iter_norm,kappa,kappa_norm,theta_1..theta_k`.
    pub fn to_csv(&self) -> String {
        let k = self.entries.first().map_or(0, |e| e.theta.len());
        let mut out = String::from("iter,iter_norm,kappa,kappa_norm");
        for j in 1..=k {
            let _ = write!(out, ",theta_{j}");
        }
        out.push('\n');
        for (e, (iter_norm, kappa_norm)) in self.entries.iter().zip(self.normalized()) {
            let _ = write!(out, "{},{},{},{}", e.iter, iter_norm, e.kappa, kappa_norm);
            for t in &e.theta {
                let _ = write!(out, ",{t}");
            }
            out.push('\n');
        }
        out
    }
}

/// Compass search on `ln(theta)` starting from `theta_start`.
pub fn direct_search(
    points: &DMatrix<f64>,
    theta_start: &[f64],
    config: &RegularizerConfig,
) -> Result<(Vec<f64>, ConvergenceTrace)> {
    check_points(points)?;
    config.resolve_theta0(points.ncols())?;
    let (lo, hi) = config.theta_bounds;
    if theta_start.len() != points.ncols() {
        return Err(Error::invalid(format!(
            "start has {} components but points have {} dimensions",
            theta_start.len(),
            points.ncols()
        )));
    }
    if let Some(t) = theta_start.iter().find(|t| !(**t >= lo && **t <= hi)) {
        return Err(Error::invalid(format!("start component {t} lies outside the bounds [{lo}, {hi}]")));
    }
    let (log_lo, log_hi) = (lo.ln(), hi.ln());

    let mut theta = theta_start.to_vec();
    let mut log_theta: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
    let mut kappa = kappa_of(points, &theta)?;
    let mut step = config.initial_step;
    let mut entries = vec![TraceEntry { iter: 0, theta: theta.clone(), kappa, step, accepted: true }];

    let mut iter = 0;
    while step >= config.step_tol && iter < config.max_iters {
        iter += 1;
        let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for j in 0..log_theta.len() {
            for dir in [1.0, -1.0] {
                let moved = (log_theta[j] + dir * step).clamp(log_lo, log_hi);
                if moved == log_theta[j] {
                    continue;
                }
                let mut cand_log = log_theta.clone();
                cand_log[j] = moved;
                let mut cand = theta.clone();
                cand[j] = moved.exp().clamp(lo, hi);
                let k = kappa_of(points, &cand)?;
                let bar = best.as_ref().map_or(kappa, |b| b.2);
                if k < bar {
                    best = Some((cand_log, cand, k));
                }
            }
        }
        let accepted = best.is_some();
        match best {
            Some((cand_log, cand, k)) => {
                log_theta = cand_log;
                theta = cand;
                kappa = k;
            }
            None => step *= config.step_shrink,
        }
        entries.push(TraceEntry { iter, theta: theta.clone(), kappa, step, accepted });
    }

    let trace = ConvergenceTrace { kappa0: entries[0].kappa, entries, max_iters: config.max_iters, seeding: None };
    Ok((theta, trace))
}

/// Seeding followed by compass search on already normalized locations.
pub fn regularize_points(points: &DMatrix<f64>, config: &RegularizerConfig) -> Result<(KernelParams, ConvergenceTrace)> {
    let seeded = seed_search(points, config)?;
    let (theta, mut trace) = direct_search(points, &seeded.theta, config)?;
    trace.seeding = Some(SeedSummary {
        theta0: seeded.theta0,
        kappa_theta0: seeded.kappa_theta0,
        candidates: seeded.candidates.len(),
    });
    Ok((KernelParams::new(theta)?, trace))
}

/// Tunes the kernel of `training` by condition-number minimization.
pub fn regularize(training: &TrainingSet, config: &RegularizerConfig) -> Result<(KernelParams, ConvergenceTrace)> {
    regularize_points(training.normalized(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    use crate::kriging::Domain;

    fn two_points(d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.3, 0.5, 0.3 + d, 0.5])
    }

    /// Closed form for two points: kappa = (1 + rho) / (1 - rho).
    fn pair_kappa(dist: f64, theta: f64) -> f64 {
        let rho = (-theta * dist * dist).exp();
        (1.0 + rho) / (1.0 - rho)
    }

    fn random_unit_points(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn config_validation() {
        let cfg = RegularizerConfig::default();
        assert_eq!(cfg.resolve_theta0(3).unwrap(), vec![1.0; 3]);
        let bad = RegularizerConfig { theta_bounds: (10.0, 1.0), ..cfg.clone() };
        assert!(bad.resolve_theta0(2).is_err());
        let bad = RegularizerConfig { theta0: vec![1e4], ..cfg.clone() };
        assert!(bad.resolve_theta0(2).is_err());
        let bad = RegularizerConfig { theta0: vec![1.0, 2.0, 3.0], ..cfg.clone() };
        assert!(bad.resolve_theta0(2).is_err());
        let bad = RegularizerConfig { max_iters: 0, ..cfg };
        assert!(bad.resolve_theta0(2).is_err());
    }

    #[test]
    fn no_seeds_returns_theta0() {
        let cfg = RegularizerConfig { n_seeds: 0, ..Default::default() };
        let p = two_points(0.2);
        let out = seed_search(&p, &cfg).unwrap();
        assert_eq!(out.theta, vec![1.0, 1.0]);
        assert_eq!(out.kappa, kappa_of(&p, &[1.0, 1.0]).unwrap());
        assert_eq!(out.candidates.len(), 1);
    }

    #[test]
    fn seed_scan_beats_theta0_for_close_pair() {
        let cfg = RegularizerConfig { n_seeds: 50, rng_seed: 3, ..Default::default() };
        let p = two_points(0.1);
        let out = seed_search(&p, &cfg).unwrap();
        // Only the first coordinate carries lag, so the oracle is the 2x2
        // closed form scanned over every candidate.
        let oracle_best = out
            .candidates
            .iter()
            .map(|(t, _)| pair_kappa(0.1, t[0]))
            .fold(f64::INFINITY, f64::min);
        assert!(out.kappa < pair_kappa(0.1, 1.0));
        assert!((out.kappa - oracle_best).abs() <= 1e-9 * oracle_best);
        for (t, k) in &out.candidates {
            assert!((k - pair_kappa(0.1, t[0])).abs() <= 1e-9 * k);
        }
    }

    #[test]
    fn seed_search_is_deterministic_and_serially_consistent() {
        let p = random_unit_points(20, 11);
        let cfg = RegularizerConfig { n_seeds: 40, rng_seed: 99, ..Default::default() };
        let a = seed_search(&p, &cfg).unwrap();
        let b = seed_search(&p, &cfg).unwrap();
        assert_eq!(a, b);
        let serial: Vec<f64> = a.candidates.iter().map(|(t, _)| kappa_of(&p, t).unwrap()).collect();
        let parallel: Vec<f64> = a.candidates.iter().map(|(_, k)| *k).collect();
        assert_eq!(serial, parallel);
        let (lo, hi) = cfg.theta_bounds;
        assert!(a.candidates.iter().all(|(t, _)| t.iter().all(|v| *v >= lo && *v <= hi)));
    }

    #[test]
    fn seed_search_fails_when_nothing_is_positive_definite() {
        // Dense points with tiny theta everywhere: every candidate is numerically singular.
        let p = random_unit_points(80, 5);
        let cfg = RegularizerConfig {
            theta0: vec![1e-3],
            n_seeds: 5,
            seed_factor_range: (1.0, 2.0),
            ..Default::default()
        };
        assert!(matches!(seed_search(&p, &cfg), Err(Error::RegularizationFailed(_))));
    }

    #[test]
    fn rejects_single_point() {
        let p = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(seed_search(&p, &RegularizerConfig::default()).is_err());
    }

    #[test]
    fn minimizer_on_the_bound_stays_put() {
        let cfg = RegularizerConfig::default();
        let p = DMatrix::from_row_slice(2, 2, &[0.2, 0.3, 0.5, 0.6]);
        let start = vec![cfg.theta_bounds.1; 2];
        let (theta, trace) = direct_search(&p, &start, &cfg).unwrap();
        assert_eq!(theta, start);
        let k0 = trace.kappa0;
        assert!(trace.entries.iter().all(|e| e.kappa == k0));
        assert!(trace.entries.iter().skip(1).all(|e| !e.accepted));
        assert!(trace.entries.last().unwrap().step < cfg.step_tol);
    }

    #[test]
    fn pair_search_reaches_grid_scan_minimum() {
        let cfg = RegularizerConfig::default();
        let p = DMatrix::from_row_slice(2, 2, &[0.2, 0.3, 0.45, 0.4]);
        let (lo, hi) = cfg.theta_bounds;
        // 100 x 100 log-spaced scan over the bound box, closed-form kappa.
        let (dx, dy) = (0.25f64, 0.1f64);
        let mut oracle = f64::INFINITY;
        for a in 0..100 {
            for b in 0..100 {
                let ta = (lo.ln() + (hi.ln() - lo.ln()) * a as f64 / 99.0).exp();
                let tb = (lo.ln() + (hi.ln() - lo.ln()) * b as f64 / 99.0).exp();
                let rho = (-(ta * dx * dx + tb * dy * dy)).exp();
                oracle = oracle.min((1.0 + rho) / (1.0 - rho));
            }
        }
        let (_, trace) = direct_search(&p, &[1.0, 1.0], &cfg).unwrap();
        let got = trace.final_kappa();
        assert!(got <= oracle * 1.01, "search {got} vs scan {oracle}");
    }

    #[test]
    fn trace_is_monotone_and_normalized() {
        let p = random_unit_points(121, 8);
        let cfg = RegularizerConfig { rng_seed: 8, ..Default::default() };
        let (params, trace) = regularize_points(&p, &cfg).unwrap();
        let norm = trace.normalized();
        assert_eq!(norm[0], (0.0, 1.0));
        for w in trace.entries.windows(2) {
            assert!(w[1].kappa <= w[0].kappa);
        }
        let seeding = trace.seeding.as_ref().unwrap();
        assert!(trace.final_kappa() <= seeding.kappa_theta0);
        assert_eq!(params.theta(), trace.final_theta());
        let (lo, hi) = cfg.theta_bounds;
        for e in &trace.entries {
            assert!(e.theta.iter().all(|t| *t >= lo && *t <= hi));
        }
    }

    #[test]
    fn values_do_not_influence_the_path() {
        let unit = random_unit_points(30, 21);
        let domain = Domain::new(vec![(-5.0, 5.0), (-5.0, 5.0)]).unwrap();
        let a = TrainingSet::from_normalized(unit.clone(), DVector::from_fn(30, |i, _| i as f64), domain.clone()).unwrap();
        let b = a.with_values(DVector::from_fn(30, |i, _| (i as f64).sin() * 100.0)).unwrap();
        let cfg = RegularizerConfig { rng_seed: 4, ..Default::default() };
        assert_eq!(regularize(&a, &cfg).unwrap(), regularize(&b, &cfg).unwrap());
    }

    #[test]
    fn pair_regularization_improves_on_theta0() {
        let p = two_points(0.3);
        let cfg = RegularizerConfig { rng_seed: 1, n_seeds: 10, ..Default::default() };
        let (params, trace) = regularize_points(&p, &cfg).unwrap();
        let before = pair_kappa(0.3, 1.0);
        let after = pair_kappa(0.3, params.theta()[0]);
        assert!(after < before);
        assert!((trace.final_kappa() - after).abs() <= 1e-9 * after);
    }

    #[test]
    fn csv_layout() {
        let p = two_points(0.3);
        let cfg = RegularizerConfig { n_seeds: 2, max_iters: 3, ..Default::default() };
        let (_, trace) = regularize_points(&p, &cfg).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iter,iter_norm,kappa,kappa_norm,theta_1,theta_2");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "0");
        assert_eq!(first[3], "1");
        assert_eq!(csv.lines().count(), trace.entries.len() + 1);
        assert!(!csv.contains('\r'));
    }
}
