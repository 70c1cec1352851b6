//! Analytic 2D test functions, seeded sampling, lattice fields and error metrics.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kriging::{Domain, KrigingModel, TrainingSet, DUPLICATE_TOL};

/// Default lattice used for reconstructions and error fields.
pub const DEFAULT_RESOLUTION: (usize, usize) = (101, 101);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    Griewank,
    Sasena,
    Franke,
    GFunction,
    Irregular,
    Cosin2,
}

impl TestFunction {
    pub const ALL: [TestFunction; 6] = [
        TestFunction::Griewank,
        TestFunction::Sasena,
        TestFunction::Franke,
        TestFunction::GFunction,
        TestFunction::Irregular,
        TestFunction::Cosin2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Griewank => "griewank",
            TestFunction::Sasena => "sasena",
            TestFunction::Franke => "franke",
            TestFunction::GFunction => "gfunction",
            TestFunction::Irregular => "irregular",
            TestFunction::Cosin2 => "cosin2",
        }
    }

    pub fn bounds(self) -> (f64, f64) {
        match self {
            TestFunction::Griewank => (-5.0, 5.0),
            TestFunction::Sasena => (0.0, 5.0),
            TestFunction::Irregular => (-1.0, 1.0),
            TestFunction::Franke | TestFunction::GFunction | TestFunction::Cosin2 => (0.0, 1.0),
        }
    }

    pub fn domain(self) -> Domain {
        let b = self.bounds();
        Domain::new(vec![b, b]).expect("static bounds are valid")
    }

    /// Formula value without the domain check.
    pub fn value(self, x1: f64, x2: f64) -> f64 {
        match self {
            TestFunction::Griewank => {
                let sum = (x1 * x1 + x2 * x2) / 4000.0;
                let prod = x1.cos() * (x2 / 2f64.sqrt()).cos();
                sum - prod + 1.0
            }
            TestFunction::Sasena => {
                2.0 + 0.01 * (x2 - x1 * x1).powi(2)
                    + (1.0 - x1).powi(2)
                    + 2.0 * (2.0 - x2).powi(2)
                    + 7.0 * (0.5 * x1).sin() * (0.7 * x1 * x2).sin()
            }
            TestFunction::Franke => {
                let (a, b) = (9.0 * x1, 9.0 * x2);
                0.75 * (-(a - 2.0).powi(2) / 4.0 - (b - 2.0).powi(2) / 4.0).exp()
                    + 0.75 * (-(a + 1.0).powi(2) / 49.0 - (b + 1.0) / 10.0).exp()
                    + 0.5 * (-(a - 7.0).powi(2) / 4.0 - (b - 3.0).powi(2) / 4.0).exp()
                    - 0.2 * (-(a - 4.0).powi(2) - (b - 7.0).powi(2)).exp()
            }
            TestFunction::GFunction => {
                // a_i = (i - 2) / 2 for i = 1, 2
                let term = |x: f64, a: f64| ((4.0 * x - 2.0).abs() + a) / (1.0 + a);
                term(x1, -0.5) * term(x2, 0.0)
            }
            TestFunction::Irregular => {
                x1.exp() / 5.0 - x2 / 5.0 + x2.powi(6) / 3.0 + 4.0 * x2.powi(4) - 4.0 * x2 * x2
                    + 0.7 * x1 * x1
                    + x1.powi(4)
                    + 3.0 / (4.0 * x1 * x1 + 4.0 * x2 * x2 + 1.0)
            }
            TestFunction::Cosin2 => (10.0 * x1).cos() + (10.0 * x2).sin() + x1 * x2,
        }
    }

    /// Evaluates the function at a point of its closed domain.
    pub fn evaluate(self, x: &[f64]) -> Result<f64> {
        if x.len() != 2 {
            return Err(Error::invalid(format!("{} takes 2 coordinates, got {}", self.name(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coordinates must be finite"));
        }
        if !self.domain().contains(x) {
            return Err(Error::invalid(format!("{x:?} lies outside the domain of {}", self.name())));
        }
        Ok(self.value(x[0], x[1]))
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown test function {s:?}")))
    }
}

/// Draws `n` distinct points uniformly in the open unit square.
pub fn random_unit_points(n: usize, rng_seed: u64) -> DMatrix<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(rng_seed);
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut draw = || loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            return v;
        }
    };
    while pts.len() < n {
        let p = [draw(), draw()];
        let clash = pts.iter().any(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= DUPLICATE_TOL);
        if !clash {
            pts.push(p);
        }
    }
    DMatrix::from_row_iterator(n, 2, pts.into_iter().flatten())
}

fn training_from_unit(function: TestFunction, unit: DMatrix<f64>) -> Result<TrainingSet> {
    let n = unit.nrows();
    let ts = TrainingSet::from_normalized(unit, DVector::zeros(n), function.domain())?;
    let values = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let x = ts.location(i);
            function.value(x[0], x[1])
        }),
    );
    ts.with_values(values)
}

/// `n` uniformly random samples of `function`, deterministic for a seed.
///
/// The unit-box draws depend on `n` and the seed only, so every function
/// receives the same normalized locations for the same seed.
pub fn sample_random(function: TestFunction, n: usize, rng_seed: u64) -> Result<TrainingSet> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    training_from_unit(function, random_unit_points(n, rng_seed))
}

/// Samples on an `m x m` lattice that includes the domain corners.
pub fn sample_lattice(function: TestFunction, m: usize) -> Result<TrainingSet> {
    if m < 2 {
        return Err(Error::invalid("lattice needs at least 2 nodes per axis"));
    }
    let unit = DMatrix::from_fn(m * m, 2, |r, c| {
        let idx = if c == 0 { r / m } else { r % m };
        idx as f64 / (m - 1) as f64
    });
    training_from_unit(function, unit)
}

/// Anything that can be evaluated over a 2D domain.
pub trait Surface: Sync {
    fn domain(&self) -> Domain;
    fn value_at(&self, x: &[f64]) -> Result<f64>;
}

impl Surface for TestFunction {
    fn domain(&self) -> Domain {
        TestFunction::domain(*self)
    }

    fn value_at(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x)
    }
}

impl Surface for KrigingModel {
    fn domain(&self) -> Domain {
        self.training().domain().clone()
    }

    fn value_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict(x)?.value)
    }
}

/// Scalar values on a uniform lattice over a 2D box, stored row-major with
/// the first coordinate as the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    domain: Domain,
    resolution: (usize, usize),
    values: Vec<f64>,
}

fn lattice_coord(lo: f64, hi: f64, i: usize, m: usize) -> f64 {
    if i + 1 == m {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / (m - 1) as f64)
    }
}

impl GridField {
    pub fn new(domain: Domain, resolution: (usize, usize), values: Vec<f64>) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::invalid("grid fields are two dimensional"));
        }
        if resolution.0 < 2 || resolution.1 < 2 {
            return Err(Error::invalid(format!("resolution must be at least 2 per axis, got {resolution:?}")));
        }
        if values.len() != resolution.0 * resolution.1 {
            return Err(Error::invalid(format!(
                "expected {} values for resolution {resolution:?}, got {}",
                resolution.0 * resolution.1,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("grid value {i} is not finite")));
        }
        Ok(Self { domain, resolution, values })
    }

    /// Evaluates `f` at every lattice node. Cells are computed in parallel;
    /// the output order is fixed.
    pub fn from_fn<F>(domain: Domain, resolution: (usize, usize), f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        if domain.dim() != 2 {
            return Err(Error::invalid("grid fields are two dimensional"));
        }
        if resolution.0 < 2 || resolution.1 < 2 {
            return Err(Error::invalid(format!("resolution must be at least 2 per axis, got {resolution:?}")));
        }
        let (m1, m2) = resolution;
        let b = domain.bounds().to_vec();
        let values = (0..m1 * m2)
            .into_par_iter()
            .map(|idx| {
                let x = [lattice_coord(b[0].0, b[0].1, idx / m2, m1), lattice_coord(b[1].0, b[1].1, idx % m2, m2)];
                f(&x)
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::new(domain, resolution, values)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.values[i1 * self.resolution.1 + i2]
    }

    pub fn coordinate(&self, i1: usize, i2: usize) -> [f64; 2] {
        let b = self.domain.bounds();
        [
            lattice_coord(b[0].0, b[0].1, i1, self.resolution.0),
            lattice_coord(b[1].0, b[1].1, i2, self.resolution.1),
        ]
    }

    fn check_compatible(&self, other: &GridField) -> Result<()> {
        if self.resolution != other.resolution || self.domain != other.domain {
            return Err(Error::invalid(format!(
                "grid mismatch: {:?} over {:?} vs {:?} over {:?}",
                self.resolution,
                self.domain.bounds(),
                other.resolution,
                other.domain.bounds()
            )));
        }
        Ok(())
    }

    /// Cellwise `self - other`.
    pub fn difference(&self, other: &GridField) -> Result<GridField> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        GridField::new(self.domain.clone(), self.resolution, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridField> {
        GridField::new(self.domain.clone(), self.resolution, self.values.iter().map(|v| f(*v)).collect())
    }

    /// Mean squared discrete second difference along both axes.
    pub fn roughness(&self) -> f64 {
        let (m1, m2) = self.resolution;
        let mut acc = 0.0;
        let mut count = 0usize;
        for i1 in 1..m1.saturating_sub(1) {
            for i2 in 0..m2 {
                let d = self.get(i1 + 1, i2) - 2.0 * self.get(i1, i2) + self.get(i1 - 1, i2);
                acc += d * d;
                count += 1;
            }
        }
        for i1 in 0..m1 {
            for i2 in 1..m2.saturating_sub(1) {
                let d = self.get(i1, i2 + 1) - 2.0 * self.get(i1, i2) + self.get(i1, i2 - 1);
                acc += d * d;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            acc / count as f64
        }
    }

    /// CSV with columns `x1,x2,value`, row-major over the lattice.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 40);
        out.push_str("x1,x2,value\n");
        let (m1, m2) = self.resolution;
        for i1 in 0..m1 {
            for i2 in 0..m2 {
                let [x1, x2] = self.coordinate(i1, i2);
                let _ = writeln!(out, "{x1},{x2},{}", self.get(i1, i2));
            }
        }
        out
    }

    /// JSON sidecar describing the lattice plus caller metadata.
    pub fn sidecar(&self, metadata: serde_json::Value) -> GridSidecar {
        GridSidecar { domain: self.domain.bounds().to_vec(), resolution: self.resolution, metadata }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub domain: Vec<(f64, f64)>,
    pub resolution: (usize, usize),
    pub metadata: serde_json::Value,
}

/// Values of a function or fitted model on the lattice over its domain.
pub fn evaluate_grid<S: Surface + ?Sized>(surface: &S, resolution: (usize, usize)) -> Result<GridField> {
    GridField::from_fn(surface.domain(), resolution, |x| surface.value_at(x))
}

/// Difference statistics between a reference field and an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rmse: f64,
    pub max_abs: f64,
    /// Roughness of the estimate field.
    pub roughness: f64,
    /// Signed `estimate - truth` per cell.
    pub field: GridField,
}

pub fn error_report(truth: &GridField, estimate: &GridField) -> Result<ErrorReport> {
    let field = estimate.difference(truth)?;
    let n = field.values.len() as f64;
    let rmse = (field.values.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let max_abs = field.values.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(ErrorReport { rmse, max_abs, roughness: estimate.roughness(), field })
}
