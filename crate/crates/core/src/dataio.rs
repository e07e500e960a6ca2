//! Observed-data records for static and two-stage designs: validation,
//! CSV ingestion/emission, and the artificial-censoring transform.
//!
//! CSV conventions: UTF-8, header row required, '.' decimal separator.
//! Static schema `x1,...,xp,a,y,delta[,pscore]`; dynamic schema
//! `x1_1,...,x1_p1,d1,z,x2_1,...,x2_q,d2,y,delta` where the `x2_*` and `d2`
//! cells may be blank only when `z = 0`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One observation from a one-stage design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRecord {
    /// Covariate vector; the first coordinate is the identifiability
    /// covariate whose rule coefficient is sign-normalized.
    pub x: Vec<f64>,
    /// Treatment received (0 or 1).
    pub a: u8,
    /// Observed time, min of event and censoring time.
    pub y: f64,
    /// 1 if the event was observed, 0 if censored.
    pub delta: u8,
    /// Per-record propensity P(A=1|X), overrides the dataset default.
    pub pscore: Option<f64>,
}

/// Validated collection of static records with uniform covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticDataset {
    records: Vec<StaticRecord>,
    default_pscore: Option<f64>,
    p: usize,
}

fn check_prob_open(v: f64, what: &str, row: usize) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::validation(format!(
            "row {row}: {what} must lie strictly in (0,1), got {v}"
        )));
    }
    Ok(())
}

impl StaticDataset {
    pub fn new(records: Vec<StaticRecord>, default_pscore: Option<f64>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::validation("dataset is empty"));
        }
        if let Some(ps) = default_pscore {
            check_prob_open(ps, "default pscore", 0)?;
        }
        let p = records[0].x.len();
        if p == 0 {
            return Err(Error::validation("row 1: covariate vector is empty"));
        }
        let mut any_event = false;
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.x.len() != p {
                return Err(Error::validation(format!(
                    "row {row}: covariate dimension {} differs from {}",
                    r.x.len(),
                    p
                )));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("row {row}: non-finite covariate")));
            }
            if !(r.y > 0.0 && r.y.is_finite()) {
                return Err(Error::validation(format!("row {row}: y must be positive")));
            }
            if r.a > 1 {
                return Err(Error::validation(format!("row {row}: a must be 0 or 1")));
            }
            if r.delta > 1 {
                return Err(Error::validation(format!("row {row}: delta must be 0 or 1")));
            }
            if let Some(ps) = r.pscore {
                check_prob_open(ps, "pscore", row)?;
            } else if default_pscore.is_none() {
                return Err(Error::validation(format!(
                    "row {row}: no pscore and no default propensity given"
                )));
            }
            any_event |= r.delta == 1;
        }
        if !any_event {
            return Err(Error::validation("no uncensored events"));
        }
        Ok(StaticDataset {
            records,
            default_pscore,
            p,
        })
    }

    pub fn records(&self) -> &[StaticRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Covariate dimension p.
    pub fn covariate_dim(&self) -> usize {
        self.p
    }

    pub fn default_pscore(&self) -> Option<f64> {
        self.default_pscore
    }

    /// Resolved propensity for record `i`: its own pscore, else the default.
    pub fn propensity(&self, i: usize) -> f64 {
        self.records[i]
            .pscore
            .or(self.default_pscore)
            .expect("validated: every record resolves to a propensity")
    }

    /// Fraction of records with delta = 0.
    pub fn censoring_rate(&self) -> f64 {
        let c = self.records.iter().filter(|r| r.delta == 0).count();
        c as f64 / self.records.len() as f64
    }
}

/// Column mapping for the static CSV schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticSchema {
    /// Covariate column names, in rule order (first = identifiability covariate).
    pub x: Vec<String>,
    pub a: String,
    pub y: String,
    pub delta: String,
    pub pscore: Option<String>,
}

impl StaticSchema {
    /// Default names `x1..xp, a, y, delta` with optional `pscore`.
    pub fn default_names(p: usize, with_pscore: bool) -> Self {
        StaticSchema {
            x: (1..=p).map(|i| format!("x{i}")).collect(),
            a: "a".into(),
            y: "y".into(),
            delta: "delta".into(),
            pscore: with_pscore.then(|| "pscore".into()),
        }
    }
}

fn col_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(format!("missing column '{name}'")))
}

fn parse_cell(rec: &csv::StringRecord, idx: usize, row: usize, col: &str) -> Result<f64> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::parse(format!("row {row}: missing cell in column '{col}'")))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(format!("row {row}: non-numeric value '{raw}' in column '{col}'")))
}

fn parse_indicator(rec: &csv::StringRecord, idx: usize, row: usize, col: &str) -> Result<u8> {
    let v = parse_cell(rec, idx, row, col)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::parse(format!(
            "row {row}: column '{col}' must be 0 or 1, got {v}"
        )))
    }
}

/// Read a static dataset from CSV using an explicit column mapping.
pub fn read_static_csv(
    path: impl AsRef<Path>,
    schema: &StaticSchema,
    default_pscore: Option<f64>,
) -> Result<StaticDataset> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let xi: Vec<usize> = schema
        .x
        .iter()
        .map(|n| col_index(&headers, n))
        .collect::<Result<_>>()?;
    let ai = col_index(&headers, &schema.a)?;
    let yi = col_index(&headers, &schema.y)?;
    let di = col_index(&headers, &schema.delta)?;
    let pi = schema
        .pscore
        .as_ref()
        .map(|n| col_index(&headers, n))
        .transpose()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let x = xi
            .iter()
            .enumerate()
            .map(|(k, &idx)| parse_cell(&rec, idx, row, &schema.x[k]))
            .collect::<Result<Vec<f64>>>()?;
        let a = parse_indicator(&rec, ai, row, &schema.a)?;
        let y = parse_cell(&rec, yi, row, &schema.y)?;
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::parse(format!("row {row}: y must be positive")));
        }
        let delta = parse_indicator(&rec, di, row, &schema.delta)?;
        let pscore = match pi {
            Some(idx) => {
                let raw = rec.get(idx).unwrap_or("").trim();
                if raw.is_empty() {
                    None
                } else {
                    Some(parse_cell(&rec, idx, row, schema.pscore.as_ref().unwrap())?)
                }
            }
            None => None,
        };
        records.push(StaticRecord {
            x,
            a,
            y,
            delta,
            pscore,
        });
    }
    StaticDataset::new(records, default_pscore)
}

/// Write a static dataset as CSV; float formatting is shortest-roundtrip,
/// so write→read is the identity.
pub fn write_static_csv(path: impl AsRef<Path>, ds: &StaticDataset, schema: &StaticSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = schema.x.clone();
    header.push(schema.a.clone());
    header.push(schema.y.clone());
    header.push(schema.delta.clone());
    if let Some(p) = &schema.pscore {
        header.push(p.clone());
    }
    wtr.write_record(&header)?;
    for r in ds.records() {
        let mut row: Vec<String> = r.x.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", r.a));
        row.push(format!("{}", r.y));
        row.push(format!("{}", r.delta));
        if schema.pscore.is_some() {
            row.push(r.pscore.map(|v| format!("{v}")).unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Artificial-censoring transform: y ↦ min(y, M) and
/// delta ↦ delta + (1−delta)·I(y ≥ M). Idempotent; never decreases delta,
/// never increases y.
pub fn apply_artificial_censoring(ds: &StaticDataset, m: f64) -> Result<StaticDataset> {
    if !(m > 0.0) {
        return Err(Error::parameter(format!("cutoff M must be positive, got {m}")));
    }
    let records = ds
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.y >= m {
                r.delta = 1;
                r.y = m;
            }
            r
        })
        .collect();
    StaticDataset::new(records, ds.default_pscore())
}

/// One observation from a two-stage design. `x2`/`d2` are meaningful only
/// when `z = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicRecord {
    pub x1: Vec<f64>,
    pub d1: u8,
    /// Stage-2 eligibility: survived past s and uncensored at s.
    pub z: u8,
    pub x2: Vec<f64>,
    pub d2: u8,
    pub y: f64,
    pub delta: u8,
}

/// Validated two-stage dataset with design constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicDataset {
    records: Vec<DynamicRecord>,
    /// Stage-split time.
    s: f64,
    /// Stage-1 randomization probability P(D1 = 1).
    pi1: f64,
    /// Stage-2 randomization probability P(D2 = 1 | eligible).
    pi2: f64,
    p1: usize,
    p2x: usize,
}

impl DynamicDataset {
    pub fn new(records: Vec<DynamicRecord>, s: f64, pi1: f64, pi2: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::validation("dataset is empty"));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::validation(format!("stage-split time s must be positive, got {s}")));
        }
        check_prob_open(pi1, "pi1", 0)?;
        check_prob_open(pi2, "pi2", 0)?;
        let p1 = records[0].x1.len();
        if p1 == 0 {
            return Err(Error::validation("row 1: stage-1 covariate vector is empty"));
        }
        let p2x = records
            .iter()
            .find(|r| r.z == 1)
            .map(|r| r.x2.len())
            .unwrap_or(0);
        let mut any_event = false;
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.x1.len() != p1 {
                return Err(Error::validation(format!(
                    "row {row}: stage-1 covariate dimension {} differs from {}",
                    r.x1.len(),
                    p1
                )));
            }
            if !(r.y > 0.0 && r.y.is_finite()) {
                return Err(Error::validation(format!("row {row}: y must be positive")));
            }
            if r.d1 > 1 || r.z > 1 || r.delta > 1 {
                return Err(Error::validation(format!(
                    "row {row}: d1, z, delta must be 0 or 1"
                )));
            }
            if r.z == 0 && r.y > s {
                return Err(Error::validation(format!(
                    "row {row}: y > s with z=0 (stage-2 data required past s)"
                )));
            }
            if r.z == 1 {
                if r.y <= s {
                    return Err(Error::validation(format!("row {row}: y ≤ s with z=1")));
                }
                if r.x2.len() != p2x || p2x == 0 {
                    return Err(Error::validation(format!(
                        "row {row}: stage-2 covariates missing or wrong dimension on z=1 row"
                    )));
                }
                if r.x2.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!("row {row}: non-finite stage-2 covariate")));
                }
                if r.d2 > 1 {
                    return Err(Error::validation(format!("row {row}: d2 must be 0 or 1")));
                }
            }
            any_event |= r.delta == 1;
        }
        if !any_event {
            return Err(Error::validation("no uncensored events"));
        }
        Ok(DynamicDataset {
            records,
            s,
            pi1,
            pi2,
            p1,
            p2x,
        })
    }

    pub fn records(&self) -> &[DynamicRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stage_split(&self) -> f64 {
        self.s
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn pi2(&self) -> f64 {
        self.pi2
    }

    pub fn stage1_dim(&self) -> usize {
        self.p1
    }

    /// Dimension of the stage-2 covariate block x2.
    pub fn stage2_cov_dim(&self) -> usize {
        self.p2x
    }

    /// Dimension of the full stage-2 history vector (x1, d1, x2).
    pub fn history_dim(&self) -> usize {
        self.p1 + 1 + self.p2x
    }

    /// Stage-2 history vector (x1 coords, d1, x2 coords) for record `i`.
    /// Only meaningful when the record has z = 1.
    pub fn history(&self, i: usize) -> Vec<f64> {
        let r = &self.records[i];
        let mut h = Vec::with_capacity(self.history_dim());
        h.extend_from_slice(&r.x1);
        h.push(r.d1 as f64);
        h.extend_from_slice(&r.x2);
        h
    }

    pub fn censoring_rate(&self) -> f64 {
        let c = self.records.iter().filter(|r| r.delta == 0).count();
        c as f64 / self.records.len() as f64
    }
}

/// Column mapping for the dynamic CSV schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicSchema {
    pub x1: Vec<String>,
    pub d1: String,
    pub z: String,
    pub x2: Vec<String>,
    pub d2: String,
    pub y: String,
    pub delta: String,
}

impl DynamicSchema {
    pub fn default_names(p1: usize, p2x: usize) -> Self {
        DynamicSchema {
            x1: (1..=p1).map(|i| format!("x1_{i}")).collect(),
            d1: "d1".into(),
            z: "z".into(),
            x2: (1..=p2x).map(|i| format!("x2_{i}")).collect(),
            d2: "d2".into(),
            y: "y".into(),
            delta: "delta".into(),
        }
    }
}

/// Read a two-stage dataset from CSV. Blank `x2_*`/`d2` cells are accepted
/// only on z=0 rows.
pub fn read_dynamic_csv(
    path: impl AsRef<Path>,
    s: f64,
    pi1: f64,
    pi2: f64,
    schema: &DynamicSchema,
) -> Result<DynamicDataset> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let x1i: Vec<usize> = schema
        .x1
        .iter()
        .map(|n| col_index(&headers, n))
        .collect::<Result<_>>()?;
    let d1i = col_index(&headers, &schema.d1)?;
    let zi = col_index(&headers, &schema.z)?;
    let x2i: Vec<usize> = schema
        .x2
        .iter()
        .map(|n| col_index(&headers, n))
        .collect::<Result<_>>()?;
    let d2i = col_index(&headers, &schema.d2)?;
    let yi = col_index(&headers, &schema.y)?;
    let di = col_index(&headers, &schema.delta)?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let x1 = x1i
            .iter()
            .enumerate()
            .map(|(k, &idx)| parse_cell(&rec, idx, row, &schema.x1[k]))
            .collect::<Result<Vec<f64>>>()?;
        let d1 = parse_indicator(&rec, d1i, row, &schema.d1)?;
        let z = parse_indicator(&rec, zi, row, &schema.z)?;
        let y = parse_cell(&rec, yi, row, &schema.y)?;
        let delta = parse_indicator(&rec, di, row, &schema.delta)?;
        let (x2, d2) = if z == 1 {
            let x2 = x2i
                .iter()
                .enumerate()
                .map(|(k, &idx)| {
                    let raw = rec.get(idx).unwrap_or("").trim();
                    if raw.is_empty() {
                        Err(Error::parse(format!(
                            "row {row}: empty stage-2 covariate '{}' on z=1 row",
                            schema.x2[k]
                        )))
                    } else {
                        parse_cell(&rec, idx, row, &schema.x2[k])
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let d2 = parse_indicator(&rec, d2i, row, &schema.d2)?;
            (x2, d2)
        } else {
            (Vec::new(), 0)
        };
        records.push(DynamicRecord {
            x1,
            d1,
            z,
            x2,
            d2,
            y,
            delta,
        });
    }
    DynamicDataset::new(records, s, pi1, pi2)
}

pub fn write_dynamic_csv(
    path: impl AsRef<Path>,
    ds: &DynamicDataset,
    schema: &DynamicSchema,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = schema.x1.clone();
    header.push(schema.d1.clone());
    header.push(schema.z.clone());
    header.extend(schema.x2.iter().cloned());
    header.push(schema.d2.clone());
    header.push(schema.y.clone());
    header.push(schema.delta.clone());
    wtr.write_record(&header)?;
    for r in ds.records() {
        let mut row: Vec<String> = r.x1.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", r.d1));
        row.push(format!("{}", r.z));
        if r.z == 1 {
            row.extend(r.x2.iter().map(|v| format!("{v}")));
            row.push(format!("{}", r.d2));
        } else {
            row.extend(std::iter::repeat(String::new()).take(schema.x2.len()));
            row.push(String::new());
        }
        row.push(format!("{}", r.y));
        row.push(format!("{}", r.delta));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Artificial censoring on a dynamic dataset; requires M > s so stage-2
/// eligibility semantics are preserved.
pub fn apply_artificial_censoring_dynamic(ds: &DynamicDataset, m: f64) -> Result<DynamicDataset> {
    if !(m > ds.stage_split()) {
        return Err(Error::parameter(format!(
            "cutoff M must exceed the stage-split time s = {}, got {m}",
            ds.stage_split()
        )));
    }
    let records = ds
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.y >= m {
                r.delta = 1;
                r.y = m;
            }
            r
        })
        .collect();
    DynamicDataset::new(records, ds.stage_split(), ds.pi1(), ds.pi2())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64, a: u8, y: f64, delta: u8) -> StaticRecord {
        StaticRecord {
            x: vec![x],
            a,
            y,
            delta,
            pscore: None,
        }
    }

    #[test]
    fn valid_dataset_builds() {
        let ds = StaticDataset::new(
            vec![rec(0.1, 1, 1.0, 1), rec(0.2, 0, 2.0, 0), rec(0.3, 1, 3.0, 1)],
            Some(0.5),
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.covariate_dim(), 1);
        assert_eq!(ds.propensity(0), 0.5);
    }

    #[test]
    fn negative_y_rejected() {
        let err = StaticDataset::new(vec![rec(0.1, 1, 1.0, 1), rec(0.2, 0, -1.0, 1)], Some(0.5))
            .unwrap_err();
        assert!(err.to_string().contains("row 2: y must be positive"), "{err}");
    }

    #[test]
    fn all_censored_rejected() {
        let err =
            StaticDataset::new(vec![rec(0.1, 1, 1.0, 0), rec(0.2, 0, 2.0, 0)], Some(0.5)).unwrap_err();
        assert!(err.to_string().contains("no uncensored events"), "{err}");
    }

    #[test]
    fn missing_propensity_rejected() {
        let err = StaticDataset::new(vec![rec(0.1, 1, 1.0, 1)], None).unwrap_err();
        assert!(err.to_string().contains("no pscore"), "{err}");
    }

    #[test]
    fn pscore_overrides_default() {
        let mut r = rec(0.1, 1, 1.0, 1);
        r.pscore = Some(0.3);
        let ds = StaticDataset::new(vec![r, rec(0.2, 0, 2.0, 1)], Some(0.5)).unwrap();
        assert_eq!(ds.propensity(0), 0.3);
        assert_eq!(ds.propensity(1), 0.5);
    }

    #[test]
    fn artificial_censoring_cases() {
        let ds = StaticDataset::new(
            vec![rec(0.0, 1, 3.0, 0), rec(0.0, 1, 1.0, 1), rec(0.0, 0, 2.0, 0)],
            Some(0.5),
        )
        .unwrap();
        let out = apply_artificial_censoring(&ds, 2.0).unwrap();
        // (y=3, delta=0) -> (2, 1); (1, 1) unchanged; boundary (2, 0) -> (2, 1)
        assert_eq!((out.records()[0].y, out.records()[0].delta), (2.0, 1));
        assert_eq!((out.records()[1].y, out.records()[1].delta), (1.0, 1));
        assert_eq!((out.records()[2].y, out.records()[2].delta), (2.0, 1));
        // idempotent
        let again = apply_artificial_censoring(&out, 2.0).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn artificial_censoring_bad_cutoff() {
        let ds = StaticDataset::new(vec![rec(0.0, 1, 1.0, 1)], Some(0.5)).unwrap();
        assert!(apply_artificial_censoring(&ds, 0.0).is_err());
        assert!(apply_artificial_censoring(&ds, -1.0).is_err());
    }

    #[test]
    fn dynamic_z1_requires_y_above_s() {
        let r = DynamicRecord {
            x1: vec![1.0],
            d1: 1,
            z: 1,
            x2: vec![0.5],
            d2: 0,
            y: 0.5,
            delta: 1,
        };
        let err = DynamicDataset::new(vec![r], 1.0, 0.5, 0.5).unwrap_err();
        assert!(err.to_string().contains("y ≤ s with z=1"), "{err}");
    }

    #[test]
    fn dynamic_z0_blank_stage2_ok() {
        let r0 = DynamicRecord {
            x1: vec![1.0],
            d1: 0,
            z: 0,
            x2: vec![],
            d2: 0,
            y: 0.4,
            delta: 1,
        };
        let r1 = DynamicRecord {
            x1: vec![2.0],
            d1: 1,
            z: 1,
            x2: vec![0.5],
            d2: 1,
            y: 2.0,
            delta: 0,
        };
        let ds = DynamicDataset::new(vec![r0, r1], 1.0, 0.5, 0.5).unwrap();
        assert_eq!(ds.stage2_cov_dim(), 1);
        assert_eq!(ds.history(1), vec![2.0, 1.0, 0.5]);
    }
}
