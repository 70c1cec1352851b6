//! Gaussian-family correlation kernel and the correlation matrices built from it.
//!
//! All coordinates handled here are already mapped to the unit box `[0,1]^k`.
//! The kernel is
//!
//! ```text
//! rho(h) = exp(-sum_j theta_j * |h_j|^p_j)
//! ```
//!
//! with `p_j = 2` unless a caller explicitly asks otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value reported for the condition number once a correlation matrix has
/// numerically lost positive definiteness.
pub const KAPPA_SENTINEL: f64 = f64::MAX;

/// Human readable name of the condition-number definition, echoed in output metadata.
pub const CONDITION_NORM: &str = "2-norm (symmetric eigendecomposition)";

/// Relative tolerance used when checking matrix symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Slack allowed around the unit box for coordinates that went through an
/// affine map and picked up rounding.
const UNIT_BOX_SLACK: f64 = 1e-12;

/// Per-dimension kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    theta: Vec<f64>,
    p: Vec<f64>,
}

impl KernelParams {
    /// Gaussian kernel (`p_j = 2`) with the given length-scale weights.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        let p = vec![2.0; theta.len()];
        Self::with_exponents(theta, p)
    }

    pub fn isotropic(theta: f64, dim: usize) -> Result<Self> {
        Self::new(vec![theta; dim])
    }

    /// Exponents other than 2 are accepted in `(0, 2]`, the range for which
    /// the kernel stays positive definite.
    pub fn with_exponents(theta: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::invalid("kernel needs at least one dimension"));
        }
        if theta.len() != p.len() {
            return Err(Error::invalid(format!(
                "theta has {} entries but p has {}",
                theta.len(),
                p.len()
            )));
        }
        if let Some(t) = theta.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::invalid(format!("theta must be finite and positive, got {t}")));
        }
        if let Some(e) = p.iter().find(|e| !(e.is_finite() && **e > 0.0 && **e <= 2.0)) {
            return Err(Error::invalid(format!("exponent must lie in (0, 2], got {e}")));
        }
        Ok(Self { theta, p })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn exponents(&self) -> &[f64] {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Kernel exponent `sum_j theta_j |a_j - b_j|^p_j` without validation.
    #[inline]
    fn weighted_lag(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.theta.len() {
            let h = (a[j] - b[j]).abs();
            let hp = if self.p[j] == 2.0 { h * h } else { h.powf(self.p[j]) };
            acc += self.theta[j] * hp;
        }
        acc
    }
}

/// Componentwise absolute coordinate difference between two normalized points.
#[derive(Debug, Clone, PartialEq)]
pub struct LagVector(Vec<f64>);

impl LagVector {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if let Some(v) = h.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("lag component is not finite: {v}")));
        }
        if let Some(v) = h.iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!("lag component is negative: {v}")));
        }
        Ok(Self(h))
    }

    pub fn between(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid("points have different dimensions"));
        }
        Self::new(a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Correlation between two locations separated by `h`.
pub fn correlate(h: &LagVector, params: &KernelParams) -> Result<f64> {
    if h.0.len() != params.dim() {
        return Err(Error::invalid(format!(
            "lag has dimension {} but kernel has {}",
            h.0.len(),
            params.dim()
        )));
    }
    let zero = vec![0.0; h.0.len()];
    Ok((-params.weighted_lag(&h.0, &zero)).exp())
}

/// Row-major copy of a point matrix, validated against the unit box.
pub(crate) fn unit_rows(points: &DMatrix<f64>, dim: usize) -> Result<Vec<Vec<f64>>> {
    if points.nrows() == 0 {
        return Err(Error::invalid("at least one point is required"));
    }
    if points.ncols() != dim {
        return Err(Error::invalid(format!(
            "points have {} columns but kernel has dimension {dim}",
            points.ncols()
        )));
    }
    let mut rows = Vec::with_capacity(points.nrows());
    for (i, row) in points.row_iter().enumerate() {
        let row: Vec<f64> = row.iter().copied().collect();
        for &x in &row {
            if !x.is_finite() {
                return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
            }
            if !(-UNIT_BOX_SLACK..=1.0 + UNIT_BOX_SLACK).contains(&x) {
                return Err(Error::invalid(format!(
                    "point {i} coordinate {x} lies outside the normalized box [0, 1]"
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn assemble(rows: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = rows.len();
    let mut r = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = (-params.weighted_lag(&rows[i], &rows[j])).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Self-correlation matrix of the given normalized points (no factorization).
pub fn self_correlation_matrix(points: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    let rows = unit_rows(points, params.dim())?;
    Ok(assemble(&rows, params))
}

/// Condition number of the self-correlation matrix for `params`.
///
/// This is the objective of the regularizer; it skips the factorization
/// that [`build_self_correlation`] performs.
pub fn kappa_for(points: &DMatrix<f64>, params: &KernelParams) -> Result<f64> {
    condition_number(&self_correlation_matrix(points, params)?)
}

fn check_symmetric(r: &DMatrix<f64>) -> Result<()> {
    if !r.is_square() {
        return Err(Error::invalid(format!("matrix is {}x{}, not square", r.nrows(), r.ncols())));
    }
    if r.nrows() == 0 {
        return Err(Error::invalid("matrix is empty"));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = r.amax().max(f64::MIN_POSITIVE);
    let n = r.nrows();
    for i in 0..n {
        for j in 0..i {
            if (r[(i, j)] - r[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn kappa_from_eigenvalues(values: &DVector<f64>) -> f64 {
    let lo = values.min();
    let hi = values.max();
    if !(lo > 0.0) || !hi.is_finite() {
        return KAPPA_SENTINEL;
    }
    hi / lo
}

/// 2-norm condition number `lambda_max / lambda_min` of a symmetric matrix.
///
/// Returns [`KAPPA_SENTINEL`] when the smallest eigenvalue is not positive.
pub fn condition_number(r: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(r)?;
    Ok(kappa_from_eigenvalues(&r.clone().symmetric_eigenvalues()))
}

#[derive(Debug, Clone)]
enum Factor {
    /// Lower-triangular Cholesky factor.
    Cholesky(DMatrix<f64>),
    /// Full symmetric eigendecomposition, used when Cholesky breaks down.
    Eigen { vectors: DMatrix<f64>, values: DVector<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizationKind {
    Cholesky,
    Eigen,
}

/// Self-correlation matrix together with a factorization ready for solves.
#[derive(Debug, Clone)]
pub struct CorrelationSystem {
    matrix: DMatrix<f64>,
    factor: Factor,
    kappa: f64,
}

impl CorrelationSystem {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn factorization(&self) -> FactorizationKind {
        match self.factor {
            Factor::Cholesky(_) => FactorizationKind::Cholesky,
            Factor::Eigen { .. } => FactorizationKind::Eigen,
        }
    }

    /// Solves `R x = b` through the stored factorization.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Cholesky(l) => {
                let n = l.nrows();
                let mut y = b.clone();
                for i in 0..n {
                    let mut s = y[i];
                    for k in 0..i {
                        s -= l[(i, k)] * y[k];
                    }
                    y[i] = s / l[(i, i)];
                }
                for i in (0..n).rev() {
                    let mut s = y[i];
                    for k in i + 1..n {
                        s -= l[(k, i)] * y[k];
                    }
                    y[i] = s / l[(i, i)];
                }
                y
            }
            Factor::Eigen { vectors, values } => {
                let mut coeffs = vectors.tr_mul(b);
                coeffs.component_div_assign(values);
                vectors * coeffs
            }
        }
    }
}

/// In-place Cholesky on a copy of `a`. On breakdown returns the failing
/// pivot index and the value found there.
fn cholesky(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err((j, d));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Assembles and factorizes the self-correlation matrix of normalized points.
///
/// Cholesky is tried first. If it breaks down the matrix is decomposed
/// spectrally instead; the system is only rejected when that decomposition
/// has an exactly zero or non-finite eigenvalue, or when two points coincide.
/// No diagonal jitter is ever added.
pub fn build_self_correlation(points: &DMatrix<f64>, params: &KernelParams) -> Result<CorrelationSystem> {
    let rows = unit_rows(points, params.dim())?;
    for j in 1..rows.len() {
        if rows[..j].contains(&rows[j]) {
            // coincident rows make pivot j exactly zero
            return Err(Error::Factorization { index: j, value: 0.0 });
        }
    }
    let matrix = assemble(&rows, params);
    match cholesky(&matrix) {
        Ok(l) => {
            let kappa = kappa_from_eigenvalues(&matrix.clone().symmetric_eigenvalues());
            Ok(CorrelationSystem { matrix, factor: Factor::Cholesky(l), kappa })
        }
        Err(_) => {
            let eig = matrix.clone().symmetric_eigen();
            for (index, &value) in eig.eigenvalues.iter().enumerate() {
                if value == 0.0 || !value.is_finite() {
                    return Err(Error::Factorization { index, value });
                }
            }
            let kappa = kappa_from_eigenvalues(&eig.eigenvalues);
            Ok(CorrelationSystem {
                matrix,
                factor: Factor::Eigen { vectors: eig.eigenvectors, values: eig.eigenvalues },
                kappa,
            })
        }
    }
}

/// Correlations between every training point and one query location.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    pub values: DVector<f64>,
    /// Set when the query lies outside the unit box.
    pub extrapolated: bool,
}

pub fn build_cross_correlation(
    points: &DMatrix<f64>,
    query: &[f64],
    params: &KernelParams,
) -> Result<CrossCorrelation> {
    let rows = unit_rows(points, params.dim())?;
    cross_from_rows(&rows, query, params)
}

pub(crate) fn cross_from_rows(rows: &[Vec<f64>], query: &[f64], params: &KernelParams) -> Result<CrossCorrelation> {
    if query.len() != params.dim() {
        return Err(Error::invalid(format!(
            "query has dimension {} but kernel has {}",
            query.len(),
            params.dim()
        )));
    }
    if query.iter().any(|q| !q.is_finite()) {
        return Err(Error::invalid("query has a non-finite coordinate"));
    }
    let extrapolated = query.iter().any(|q| !(0.0..=1.0).contains(q));
    let values = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|row| (-params.weighted_lag(row, query)).exp()),
    );
    Ok(CrossCorrelation { values, extrapolated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> DMatrix<f64> {
        let k = rows[0].len();
        DMatrix::from_row_iterator(rows.len(), k, rows.iter().flat_map(|r| r.iter().copied()))
    }

    fn theta(t: &[f64]) -> KernelParams {
        KernelParams::new(t.to_vec()).unwrap()
    }

    #[test]
    fn correlate_examples() {
        let h = LagVector::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(correlate(&h, &theta(&[1.0, 1.0])).unwrap(), 1.0);

        let h = LagVector::new(vec![1.0, 0.0]).unwrap();
        let v = correlate(&h, &theta(&[1.0, 1.0])).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);

        // one-line oracle: exp(-(2*0.5^2 + 4*0.5^2))
        let oracle = (-(2.0f64 * 0.5f64.powi(2) + 4.0 * 0.5f64.powi(2))).exp();
        let h = LagVector::new(vec![0.5, 0.5]).unwrap();
        let v = correlate(&h, &theta(&[2.0, 4.0])).unwrap();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(LagVector::new(vec![f64::NAN]).is_err());
        assert!(LagVector::new(vec![-0.1]).is_err());
        assert!(KernelParams::new(vec![0.0, 1.0]).is_err());
        assert!(KernelParams::new(vec![f64::INFINITY]).is_err());
        assert!(KernelParams::new(vec![]).is_err());
        assert!(KernelParams::with_exponents(vec![1.0], vec![2.5]).is_err());
        let h = LagVector::new(vec![0.1]).unwrap();
        assert!(correlate(&h, &theta(&[1.0, 1.0])).is_err());
        let p = pts(&[&[0.1, 0.2]]);
        assert!(build_cross_correlation(&p, &[f64::NAN, 0.0], &theta(&[1.0, 1.0])).is_err());
        assert!(build_self_correlation(&pts(&[&[0.1, 1.5]]), &theta(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn single_point_system() {
        let sys = build_self_correlation(&pts(&[&[0.3, 0.7]]), &theta(&[1.0, 1.0])).unwrap();
        assert_eq!(sys.matrix()[(0, 0)], 1.0);
        assert_eq!(sys.kappa(), 1.0);
        assert_eq!(sys.factorization(), FactorizationKind::Cholesky);
    }

    #[test]
    fn two_point_system_matches_eigen_oracle() {
        let p = pts(&[&[0.1, 0.2], &[0.4, 0.6]]);
        let params = theta(&[1.5, 3.0]);
        let rho = correlate(&LagVector::between(&[0.1, 0.2], &[0.4, 0.6]).unwrap(), &params).unwrap();
        let sys = build_self_correlation(&p, &params).unwrap();
        assert_eq!(sys.matrix()[(0, 1)], rho);
        assert_eq!(sys.matrix()[(1, 0)], rho);
        // eigenvalues of [[1, r], [r, 1]] are 1 +- r
        let (l1, l2) = (1.0 + rho, 1.0 - rho);
        let expected = l1 / l2;
        assert!((sys.kappa() - expected).abs() <= 1e-12 * expected);
        assert!((sys.kappa() - (1.0 + rho) / (1.0 - rho)).abs() <= 1e-12 * expected);
    }

    #[test]
    fn huge_theta_gives_identity() {
        let p = pts(&[&[0.1, 0.2], &[0.4, 0.6], &[0.9, 0.1], &[0.5, 0.5]]);
        let sys = build_self_correlation(&p, &theta(&[1e6, 1e6])).unwrap();
        assert_eq!(sys.matrix(), &DMatrix::<f64>::identity(4, 4));
        assert_eq!(sys.kappa(), 1.0);
    }

    #[test]
    fn cross_correlation_examples() {
        let p = pts(&[&[0.1, 0.2], &[0.4, 0.6], &[0.9, 0.1]]);
        let params = theta(&[2.0, 0.5]);
        let sys = build_self_correlation(&p, &params).unwrap();
        let cc = build_cross_correlation(&p, &[0.4, 0.6], &params).unwrap();
        assert_eq!(cc.values, sys.matrix().column(1).into_owned());
        assert!(!cc.extrapolated);

        let single = pts(&[&[0.25, 0.75]]);
        let cc = build_cross_correlation(&single, &[0.25, 0.75], &params).unwrap();
        assert_eq!(cc.values.as_slice(), &[1.0]);

        let pair = pts(&[&[0.2, 0.2], &[0.6, 0.8]]);
        let cc = build_cross_correlation(&pair, &[0.4, 0.5], &params).unwrap();
        assert!((cc.values[0] - cc.values[1]).abs() < 1e-15);

        let cc = build_cross_correlation(&pair, &[1.2, 0.5], &params).unwrap();
        assert!(cc.extrapolated);
    }

    #[test]
    fn condition_number_examples() {
        assert_eq!(condition_number(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert!((condition_number(&d).unwrap() - 4.0).abs() < 1e-14);
        // eigenvalues 1.5 and 0.5
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((condition_number(&m).unwrap() - 1.5 / 0.5).abs() < 1e-14);
    }

    #[test]
    fn condition_number_rejects_asymmetry_and_flags_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(condition_number(&m), Err(Error::InvalidArgument(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(condition_number(&m).unwrap(), KAPPA_SENTINEL);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(condition_number(&m).unwrap(), KAPPA_SENTINEL);
    }

    #[test]
    fn duplicate_points_fail_to_factorize() {
        let p = pts(&[&[0.1, 0.2], &[0.5, 0.5], &[0.1, 0.2]]);
        match build_self_correlation(&p, &theta(&[1.0, 1.0])) {
            Err(Error::Factorization { index, value }) => {
                assert_eq!(index, 2);
                assert_eq!(value, 0.0);
            }
            other => panic!("expected factorization failure, got {other:?}"),
        }
    }

    #[test]
    fn ill_conditioned_falls_back_to_eigen() {
        // Dense cluster with a tiny theta: Cholesky breaks down numerically.
        let n = 30;
        let p = DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 / n as f64;
            if j == 0 { t } else { (7.0 * t).fract() }
        });
        let sys = build_self_correlation(&p, &theta(&[0.05, 0.05])).unwrap();
        assert_eq!(sys.factorization(), FactorizationKind::Eigen);
        assert_eq!(sys.kappa(), KAPPA_SENTINEL);
    }

    #[test]
    fn cholesky_solve_matches_dense_solve() {
        let p = pts(&[&[0.1, 0.2], &[0.4, 0.6], &[0.9, 0.1], &[0.7, 0.8]]);
        let sys = build_self_correlation(&p, &theta(&[3.0, 2.0])).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let x = sys.solve(&b);
        let back = sys.matrix() * &x;
        assert!((back - b).amax() < 1e-12);
    }

    fn unit_points(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(0.0f64..=1.0, n * 2).prop_map(move |v| DMatrix::from_row_slice(n, 2, &v))
        })
    }

    proptest! {
        #[test]
        fn correlation_decreases_with_theta(
            h in prop::collection::vec(0.0f64..1.0, 2),
            t in prop::collection::vec(0.01f64..50.0, 2),
            bump in 1.01f64..10.0,
            j in 0usize..2,
        ) {
            prop_assume!(h[j] > 1e-3);
            let lag = LagVector::new(h.clone()).unwrap();
            let base = correlate(&lag, &theta(&t)).unwrap();
            let mut t2 = t.clone();
            t2[j] *= bump;
            let bigger = correlate(&lag, &theta(&t2)).unwrap();
            prop_assert!(bigger < base);
            prop_assert!(base > 0.0 && base <= 1.0);
        }

        #[test]
        fn matrix_structure(p in unit_points(8), t in prop::collection::vec(0.1f64..20.0, 2)) {
            let r = self_correlation_matrix(&p, &theta(&t)).unwrap();
            for i in 0..r.nrows() {
                prop_assert_eq!(r[(i, i)], 1.0);
                for j in 0..r.ncols() {
                    prop_assert_eq!(r[(i, j)], r[(j, i)]);
                    prop_assert!(r[(i, j)] > 0.0 && r[(i, j)] <= 1.0);
                }
            }
        }

        #[test]
        fn kappa_is_scale_invariant(p in unit_points(6), t in prop::collection::vec(5.0f64..50.0, 2), c in 1e-6f64..1e6) {
            let r = self_correlation_matrix(&p, &theta(&t)).unwrap();
            let k = condition_number(&r).unwrap();
            prop_assume!(k < 1e8);
            let kc = condition_number(&(r * c)).unwrap();
            prop_assert!((k - kc).abs() <= 1e-10 * k);
        }

        #[test]
        fn kappa_matches_svd_oracle(p in unit_points(4), t in prop::collection::vec(5.0f64..50.0, 2)) {
            let r = self_correlation_matrix(&p, &theta(&t)).unwrap();
            let k = condition_number(&r).unwrap();
            let sv = r.clone().svd(false, false).singular_values;
            let oracle = sv.max() / sv.min();
            prop_assume!(oracle < 1e4);
            prop_assert!((k - oracle).abs() <= 1e-10 * oracle, "eig {} svd {}", k, oracle);
        }
    }
}
