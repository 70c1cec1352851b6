//! Ordinary kriging predictor.
//!
//! For a query `d` the weights are
//!
//! ```text
//! lambda = R^-1 [ r + 1 (1 - 1' R^-1 r) / (1' R^-1 1) ]
//! ```
//!
//! and the estimate is `lambda' w`. `R` is the unit-variance correlation
//! matrix; the process variance cancels out of the weights so it is never
//! stored. All solves go through the factorization held by
//! [`CorrelationSystem`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correlation::{self, CorrelationSystem, FactorizationKind, KernelParams, CONDITION_NORM};
use crate::error::{Error, Result};

/// Normalized-space distance below which two locations count as the same point.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Axis-aligned box the raw coordinates live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("domain needs at least one dimension"));
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("domain bounds for dimension {j} are invalid: [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds })
    }

    pub fn unit(dim: usize) -> Self {
        Self { bounds: vec![(0.0, 1.0); dim] }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Sample locations, observed values and the domain used to normalize them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    locations: DMatrix<f64>,
    normalized: DMatrix<f64>,
    values: DVector<f64>,
    domain: Domain,
}

impl TrainingSet {
    /// Builds a training set from raw coordinates (one row per sample).
    pub fn new(locations: DMatrix<f64>, values: DVector<f64>, domain: Domain) -> Result<Self> {
        check_shapes(&locations, &values, &domain)?;
        for (i, row) in locations.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("location {i} is not finite")));
            }
            if !domain.contains(&x) {
                return Err(Error::invalid(format!("location {i} {x:?} lies outside the domain")));
            }
        }
        let normalized = DMatrix::from_fn(locations.nrows(), locations.ncols(), |i, j| {
            let (lo, hi) = domain.bounds[j];
            ((locations[(i, j)] - lo) / (hi - lo)).clamp(0.0, 1.0)
        });
        Self::finish(locations, normalized, values, domain)
    }

    /// Builds a training set from unit-box coordinates. The normalized
    /// coordinates are kept bit-for-bit, so two sets built from the same
    /// unit points share the same kernel geometry whatever their domains.
    pub fn from_normalized(unit: DMatrix<f64>, values: DVector<f64>, domain: Domain) -> Result<Self> {
        check_shapes(&unit, &values, &domain)?;
        if let Some(v) = unit.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("normalized coordinate {v} is outside [0, 1]")));
        }
        let locations = DMatrix::from_fn(unit.nrows(), unit.ncols(), |i, j| {
            let (lo, hi) = domain.bounds[j];
            (lo + unit[(i, j)] * (hi - lo)).clamp(lo, hi)
        });
        Self::finish(locations, unit, values, domain)
    }

    fn finish(locations: DMatrix<f64>, normalized: DMatrix<f64>, values: DVector<f64>, domain: Domain) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("value {i} is not finite")));
        }
        if let Some((i, j)) = find_duplicate(&normalized) {
            return Err(Error::invalid(format!("locations {i} and {j} coincide")));
        }
        Ok(Self { locations, normalized, values, domain })
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn normalized(&self) -> &DMatrix<f64> {
        &self.normalized
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Same locations, different observed values.
    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!("expected {} values, got {}", self.len(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("value {i} is not finite")));
        }
        Ok(Self { values, ..self.clone() })
    }

    pub fn location(&self, i: usize) -> Vec<f64> {
        self.locations.row(i).iter().copied().collect()
    }
}

fn check_shapes(locations: &DMatrix<f64>, values: &DVector<f64>, domain: &Domain) -> Result<()> {
    if locations.nrows() == 0 {
        return Err(Error::invalid("training set needs at least one location"));
    }
    if locations.ncols() != domain.dim() {
        return Err(Error::invalid(format!(
            "locations have {} columns but the domain has {} dimensions",
            locations.ncols(),
            domain.dim()
        )));
    }
    if values.len() != locations.nrows() {
        return Err(Error::invalid(format!(
            "{} locations but {} values",
            locations.nrows(),
            values.len()
        )));
    }
    Ok(())
}

fn find_duplicate(normalized: &DMatrix<f64>) -> Option<(usize, usize)> {
    let n = normalized.nrows();
    for j in 1..n {
        for i in 0..j {
            let d2: f64 = (0..normalized.ncols()).map(|c| (normalized[(i, c)] - normalized[(j, c)]).powi(2)).sum();
            if d2.sqrt() <= DUPLICATE_TOL {
                return Some((i, j));
            }
        }
    }
    None
}

/// Result of a single kriging evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub weights: DVector<f64>,
    /// The query left the domain box.
    pub extrapolated: bool,
}

/// Fitted ordinary kriging predictor. Immutable once built.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    training: TrainingSet,
    params: KernelParams,
    system: CorrelationSystem,
    rows: Vec<Vec<f64>>,
    r_inv_ones: DVector<f64>,
    ones_rinv_ones: f64,
}

impl KrigingModel {
    pub fn fit(training: TrainingSet, params: KernelParams) -> Result<Self> {
        if params.dim() != training.dim() {
            return Err(Error::invalid(format!(
                "kernel has dimension {} but training set has {}",
                params.dim(),
                training.dim()
            )));
        }
        let system = match correlation::build_self_correlation(training.normalized(), &params) {
            Ok(system) => system,
            Err(Error::Factorization { index, value }) => {
                let kappa = correlation::kappa_for(training.normalized(), &params).unwrap_or(correlation::KAPPA_SENTINEL);
                return Err(Error::ModelSingular {
                    kappa,
                    reason: format!("factorization failed at index {index} (value {value:e})"),
                });
            }
            Err(e) => return Err(e),
        };
        let n = training.len();
        let r_inv_ones = system.solve(&DVector::from_element(n, 1.0));
        let ones_rinv_ones = r_inv_ones.sum();
        if ones_rinv_ones == 0.0 || !ones_rinv_ones.is_finite() {
            return Err(Error::ModelSingular {
                kappa: system.kappa(),
                reason: format!("1' R^-1 1 = {ones_rinv_ones}"),
            });
        }
        let rows = training.normalized().row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(Self { training, params, system, rows, r_inv_ones, ones_rinv_ones })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn system(&self) -> &CorrelationSystem {
        &self.system
    }

    pub fn kappa(&self) -> f64 {
        self.system.kappa()
    }

    pub fn r_inv_ones(&self) -> &DVector<f64> {
        &self.r_inv_ones
    }

    pub fn ones_rinv_ones(&self) -> f64 {
        self.ones_rinv_ones
    }

    fn weights_with_flag(&self, query: &[f64]) -> Result<(DVector<f64>, bool)> {
        if query.len() != self.training.dim() {
            return Err(Error::invalid(format!(
                "query has dimension {} but model has {}",
                query.len(),
                self.training.dim()
            )));
        }
        if query.iter().any(|q| !q.is_finite()) {
            return Err(Error::invalid("query has a non-finite coordinate"));
        }
        let unit = self.training.domain().normalize(query);
        let cross = correlation::cross_from_rows(&self.rows, &unit, &self.params)?;
        let rinv_r = self.system.solve(&cross.values);
        let correction = (1.0 - rinv_r.sum()) / self.ones_rinv_ones;
        let weights = rinv_r + &self.r_inv_ones * correction;
        Ok((weights, cross.extrapolated))
    }

    /// Kriging weights for a raw-coordinate query.
    pub fn weights(&self, query: &[f64]) -> Result<DVector<f64>> {
        Ok(self.weights_with_flag(query)?.0)
    }

    pub fn predict(&self, query: &[f64]) -> Result<Prediction> {
        let (weights, extrapolated) = self.weights_with_flag(query)?;
        let value = weights.dot(self.training.values());
        Ok(Prediction { value, weights, extrapolated })
    }

    pub fn to_document(&self) -> ModelDocument {
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            domain: self.training.domain().bounds().to_vec(),
            locations: rows(self.training.locations()),
            normalized: rows(self.training.normalized()),
            values: self.training.values().iter().copied().collect(),
            theta: self.params.theta().to_vec(),
            p: self.params.exponents().to_vec(),
            kappa: self.kappa(),
            condition_norm: CONDITION_NORM.to_string(),
            factorization: self.system.factorization(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        ModelDocument::from_json(text)?.into_model()
    }
}

pub const MODEL_FORMAT: &str = "krigreg-model-v1";

/// On-disk form of a fitted model. The fit is recomputed on load; the
/// normalized coordinates are stored so the reloaded system is bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub domain: Vec<(f64, f64)>,
    pub locations: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub kappa: f64,
    pub condition_norm: String,
    pub factorization: FactorizationKind,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("field `format`: expected {MODEL_FORMAT:?}, got {:?}", doc.format)));
        }
        Ok(doc)
    }

    pub fn into_model(self) -> Result<KrigingModel> {
        let field = |name: &str, e: Error| Error::Parse(format!("field `{name}`: {e}"));
        let domain = Domain::new(self.domain).map_err(|e| field("domain", e))?;
        let k = domain.dim();
        let n = self.locations.len();
        if self.normalized.len() != n {
            return Err(Error::Parse(format!("field `normalized`: expected {n} rows, got {}", self.normalized.len())));
        }
        let matrix = |name: &str, rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if let Some(i) = rows.iter().position(|r| r.len() != k) {
                return Err(Error::Parse(format!("field `{name}`: row {i} does not have {k} coordinates")));
            }
            Ok(DMatrix::from_row_iterator(rows.len(), k, rows.iter().flatten().copied()))
        };
        let raw = matrix("locations", &self.locations)?;
        let unit = matrix("normalized", &self.normalized)?;
        for i in 0..n {
            let expected = domain.normalize(&self.locations[i]);
            if expected.iter().zip(&self.normalized[i]).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(Error::Parse(format!("field `normalized`: row {i} disagrees with `locations`")));
            }
        }
        let values = DVector::from_vec(self.values);
        let training = TrainingSet::from_normalized(unit, values, domain).map_err(|e| field("locations", e))?;
        let training = TrainingSet { locations: raw, ..training };
        let params = KernelParams::with_exponents(self.theta, self.p).map_err(|e| field("theta", e))?;
        KrigingModel::fit(training, params)
    }
}
