use std::collections::BTreeSet;
use std::path::Path;

use super::{Dataset, DatasetError, Feature, FeatureKind, FeatureSchema};

/// Column roles for [`load_csv`].
///
/// Every column not named here is a feature. When `auto_detect` is set and
/// the roles are not given explicitly, columns `y1, y2, ...` are read as
/// counterfactuals and a column named `q` as the true propensity, which is
/// the layout [`write_csv`] produces.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub treatment_col: String,
    pub outcome_col: String,
    pub cf_cols: Option<Vec<String>>,
    pub q_col: Option<String>,
    /// Feature columns forced to be categorical. Other feature columns are
    /// categorical when their first cell is not a number.
    pub categorical: Vec<String>,
    pub auto_detect: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            treatment_col: "treatment".into(),
            outcome_col: "outcome".into(),
            cf_cols: None,
            q_col: None,
            categorical: Vec::new(),
            auto_detect: true,
        }
    }
}

fn parse_f64(raw: &str, row: usize, column: &str) -> Result<f64, DatasetError> {
    raw.trim().parse::<f64>().map_err(|_| DatasetError::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a dataset from a UTF-8 CSV file with a header row.
///
/// Categorical features are one-hot encoded with every level kept, levels in
/// sorted order. `m` is the largest treatment label (or the number of
/// counterfactual columns, if larger). Row numbers in errors count data rows
/// from 1.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let t_col = find(&opts.treatment_col)?;
    let y_col = find(&opts.outcome_col)?;

    let cf_idx: Vec<usize> = match &opts.cf_cols {
        Some(names) => names.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        None if opts.auto_detect => (1..)
            .map(|t| header.iter().position(|h| *h == format!("y{t}")))
            .take_while(Option::is_some)
            .flatten()
            .collect(),
        None => Vec::new(),
    };
    let q_idx = match &opts.q_col {
        Some(name) => Some(find(name)?),
        None if opts.auto_detect => header.iter().position(|h| h == "q"),
        None => None,
    };
    for c in &opts.categorical {
        find(c)?;
    }

    let reserved: BTreeSet<usize> = [t_col, y_col]
        .into_iter()
        .chain(cf_idx.iter().copied())
        .chain(q_idx)
        .collect();
    let feature_cols: Vec<usize> = (0..header.len()).filter(|c| !reserved.contains(c)).collect();

    // Column kinds: forced categorical, or decided by the first data cell.
    let mut features = Vec::with_capacity(feature_cols.len());
    for &c in &feature_cols {
        let name = &header[c];
        let first_numeric = records
            .first()
            .is_none_or(|r| r.get(c).unwrap_or("").trim().parse::<f64>().is_ok());
        let kind = if opts.categorical.contains(name) || !first_numeric {
            let levels: BTreeSet<String> = records
                .iter()
                .map(|r| r.get(c).unwrap_or("").trim().to_string())
                .collect();
            FeatureKind::Categorical {
                levels: levels.into_iter().collect(),
            }
        } else {
            FeatureKind::Numeric
        };
        features.push(Feature {
            name: name.clone(),
            kind,
        });
    }
    let schema = FeatureSchema::new(features)?;
    let d = schema.encoded_dim();

    let n = records.len();
    let mut x = Vec::with_capacity(n * d);
    let mut treatments = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut cf_rows: Vec<Vec<f64>> = Vec::new();
    let mut q = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        for (f, &c) in schema.features().iter().zip(&feature_cols) {
            match &f.kind {
                FeatureKind::Numeric => x.push(parse_f64(cell(c), row, &header[c])?),
                FeatureKind::Categorical { levels } => {
                    let v = cell(c).trim();
                    x.extend(levels.iter().map(|l| if l == v { 1.0 } else { 0.0 }));
                }
            }
        }
        let raw_t = cell(t_col);
        let label: i64 = raw_t.trim().parse().map_err(|_| DatasetError::Parse {
            row,
            column: header[t_col].clone(),
            value: raw_t.to_string(),
        })?;
        if label < 1 {
            return Err(DatasetError::TreatmentDomain { row, label });
        }
        treatments.push(label as usize);
        outcomes.push(parse_f64(cell(y_col), row, &header[y_col])?);
        if !cf_idx.is_empty() {
            cf_rows.push(
                cf_idx
                    .iter()
                    .map(|&c| parse_f64(cell(c), row, &header[c]))
                    .collect::<Result<_, _>>()?,
            );
        }
        if let Some(c) = q_idx {
            q.push(parse_f64(cell(c), row, &header[c])?);
        }
    }

    let max_label = treatments.iter().copied().max().unwrap_or(1);
    let m = max_label.max(cf_idx.len());
    if !cf_idx.is_empty() && cf_idx.len() != m {
        return Err(DatasetError::Invariant(format!(
            "{} counterfactual columns but treatment labels reach {}",
            cf_idx.len(),
            m
        )));
    }

    let mut ds = Dataset::from_flat(x, d, treatments, outcomes, m)?.with_schema(schema)?;
    if !cf_idx.is_empty() {
        ds = ds.with_counterfactuals(cf_rows)?;
    }
    if q_idx.is_some() {
        ds = ds.with_propensities(q)?;
    }
    Ok(ds)
}

/// Writes `ds` in the layout [`load_csv`] reads back with default options:
/// encoded feature columns, `treatment`, `outcome`, then `y1..ym` and `q`
/// when present.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.schema().encoded_names();
    header.push("treatment".into());
    header.push("outcome".into());
    if ds.has_counterfactuals() {
        header.extend((1..=ds.m()).map(|t| format!("y{t}")));
    }
    if ds.propensities().is_some() {
        header.push("q".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.row(i).iter().map(f64::to_string).collect();
        rec.push(ds.treatment(i).to_string());
        rec.push(ds.outcome(i).to_string());
        if let Some(cf) = ds.counterfactual(i) {
            rec.extend(cf.iter().map(f64::to_string));
        }
        if let Some(q) = ds.propensities() {
            rec.push(q[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
