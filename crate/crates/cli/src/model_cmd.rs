//! `fit` and `predict`: build a model from a points file, query a saved one.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use krigreg::{regularize, Domain, KernelParams, KrigingModel, TrainingSet, CONDITION_NORM};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{base_metadata, extend, points_hash, sidecar_path, write_atomic, write_json};

/// Parsed points file: one row per point, last column is the value.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub header: Vec<String>,
    pub locations: DMatrix<f64>,
    pub values: DVector<f64>,
}

/// Reads a headed CSV whose last column holds values and the rest coordinates.
pub fn read_points(text: &str) -> Result<Points> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().context("line 1: reading header")?.iter().map(String::from).collect();
    if header.len() < 2 {
        bail!("line 1: need at least one coordinate column and a value column, got {} columns", header.len());
    }
    let mut flat = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.context("malformed CSV record")?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("line {line}, field {} ({}): cannot parse {field:?} as a number", j + 1, header[j]))?;
            if !v.is_finite() {
                bail!("line {line}, field {} ({}): value is not finite", j + 1, header[j]);
            }
            if j + 1 == header.len() {
                values.push(v);
            } else {
                flat.push(v);
            }
        }
    }
    if values.is_empty() {
        bail!("points file has no data rows");
    }
    let dim = header.len() - 1;
    Ok(Points {
        locations: DMatrix::from_row_slice(values.len(), dim, &flat),
        values: DVector::from_vec(values),
        header,
    })
}

/// Parses `lo:hi,lo:hi,...`.
pub fn parse_domain(spec: &str) -> Result<Domain> {
    let bounds = spec
        .split(',')
        .map(|part| {
            let (lo, hi) = part.split_once(':').with_context(|| format!("domain entry {part:?} is not lo:hi"))?;
            let lo: f64 = lo.trim().parse().with_context(|| format!("domain lower bound {lo:?}"))?;
            let hi: f64 = hi.trim().parse().with_context(|| format!("domain upper bound {hi:?}"))?;
            Ok((lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Domain::new(bounds)?)
}

fn bounding_box(locations: &DMatrix<f64>) -> Result<Domain> {
    let bounds = locations
        .column_iter()
        .map(|c| (c.min(), c.max()))
        .collect::<Vec<_>>();
    Domain::new(bounds).context("points span an empty box in some coordinate; pass --domain")
}

pub struct FitRequest<'a> {
    pub points: &'a Path,
    pub domain: Option<Domain>,
    pub regularize: bool,
    pub out: &'a Path,
}

pub fn fit(req: &FitRequest, config: &ExperimentConfig) -> Result<()> {
    let text = std::fs::read_to_string(req.points).with_context(|| format!("reading {}", req.points.display()))?;
    let points = read_points(&text).with_context(|| format!("parsing {}", req.points.display()))?;
    let domain = match &req.domain {
        Some(d) => d.clone(),
        None => bounding_box(&points.locations)?,
    };
    if domain.dim() != points.locations.ncols() {
        bail!("domain has {} dimensions but points have {}", domain.dim(), points.locations.ncols());
    }
    if let Some(i) = points.locations.row_iter().position(|r| !domain.contains(&r.iter().copied().collect::<Vec<_>>())) {
        bail!("point on data row {} lies outside the domain", i + 1);
    }
    let training = TrainingSet::new(points.locations, points.values, domain)?;
    let theta0 = config.regularizer.resolve_theta0(training.dim())?;
    let (params, trace) = if req.regularize {
        let (p, t) = regularize(&training, &config.regularizer)?;
        (p, Some(t))
    } else {
        (KernelParams::new(theta0.clone())?, None)
    };
    let hash = points_hash(&training);
    let model = KrigingModel::fit(training, params)?;
    write_atomic(req.out, format!("{}\n", model.to_json()).as_bytes())?;
    let meta = extend(
        base_metadata(config),
        json!({
            "command": "fit",
            "points_hash": hash,
            "regularized": req.regularize,
            "theta0": theta0,
            "theta": model.params().theta(),
            "kappa": model.kappa(),
            "kappa0": trace.as_ref().map(|t| t.kappa0),
        }),
    );
    write_json(&sidecar_path(req.out), &meta)?;
    println!("wrote {} (kappa {:e}, theta {:?})", req.out.display(), model.kappa(), model.params().theta());
    Ok(())
}

/// Parses a query `x1,x2,...`.
pub fn parse_query(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .enumerate()
        .map(|(j, s)| {
            let v: f64 = s.trim().parse().with_context(|| format!("query {spec:?}, coordinate {}: cannot parse {s:?}", j + 1))?;
            if !v.is_finite() {
                bail!("query {spec:?}, coordinate {}: not finite", j + 1);
            }
            Ok(v)
        })
        .collect()
}

/// Writes the prediction records for `queries`. Nothing at all is written
/// for an empty query list.
pub fn predict(model_path: &Path, queries: &[String], out: &mut impl Write) -> Result<()> {
    let text = std::fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = KrigingModel::from_json(&text).with_context(|| format!("loading {}", model_path.display()))?;
    let parsed = queries.iter().map(|q| parse_query(q)).collect::<Result<Vec<_>>>()?;
    if parsed.is_empty() {
        return Ok(());
    }
    let dim = model.training().dim();
    let mut body = String::new();
    for q in &parsed {
        if q.len() != dim {
            bail!("query has {} coordinates but the model has {dim}", q.len());
        }
        let p = model.predict(q)?;
        for v in q {
            body.push_str(&format!("{v},"));
        }
        body.push_str(&format!("{},{}\n", p.value, p.extrapolated));
    }
    writeln!(out, "# kappa={},norm={CONDITION_NORM}", model.kappa())?;
    let cols: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    writeln!(out, "{},value,extrapolated", cols.join(","))?;
    out.write_all(body.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        let p = read_points("x1,x2,value\n0,0,1\n1,0.5,2\n").unwrap();
        assert_eq!(p.locations.shape(), (2, 2));
        assert_eq!(p.values.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn points_errors_carry_position() {
        let e = format!("{:#}", read_points("x1,x2,value\n0,0,1\n1,abc,2\n").unwrap_err());
        assert!(e.contains("line 3") && e.contains("field 2") && e.contains("x2"), "{e}");
        let e = format!("{:#}", read_points("x1,x2,value\n0,0,1\n1,2\n").unwrap_err());
        assert!(e.contains("line 3") || e.contains("fields"), "{e}");
        assert!(read_points("value\n1\n").is_err());
        assert!(read_points("x1,value\n").is_err());
        assert!(read_points("x1,value\n0,inf\n").is_err());
    }

    #[test]
    fn domain_and_query_parsing() {
        let d = parse_domain("-600:600, 0:1").unwrap();
        assert_eq!(d.bounds(), &[(-600.0, 600.0), (0.0, 1.0)]);
        assert!(parse_domain("0-1").is_err());
        assert!(parse_domain("1:0").is_err());
        assert_eq!(parse_query("0.5, -2").unwrap(), vec![0.5, -2.0]);
        assert!(parse_query("1,nan").is_err());
        assert!(parse_query("1,x").is_err());
    }
}
