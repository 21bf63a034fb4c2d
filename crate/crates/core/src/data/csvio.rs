use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, SampleRecord};
use crate::error::{Error, Result};

/// Reads `sample_id,f1,...,fd[,label]`. An empty label cell means unlabeled.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();

    let header = match rows.next() {
        Some(row) => row.map_err(|e| csv_err(&e, 1))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "missing header row".into(),
            })
        }
    };
    if header.get(0) != Some("sample_id") {
        return Err(Error::Parse {
            line: 1,
            reason: "first header column must be `sample_id`".into(),
        });
    }
    let has_label = header.iter().last() == Some("label");
    let n_cols = header.len();
    let feature_end = if has_label { n_cols - 1 } else { n_cols };
    let feature_names: Vec<String> = header.iter().take(feature_end).skip(1).map(str::to_owned).collect();
    if feature_names.is_empty() {
        return Err(Error::Parse {
            line: 1,
            reason: "header declares no feature columns".into(),
        });
    }

    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in rows {
        let row = row.map_err(|e| csv_err(&e, 0))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() != n_cols {
            return Err(Error::Parse {
                line,
                reason: format!("expected {n_cols} fields, found {}", row.len()),
            });
        }
        let sample_id = row[0].to_owned();
        if sample_id.is_empty() {
            return Err(Error::Parse {
                line,
                reason: "empty sample_id".into(),
            });
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate sample_id `{sample_id}`"),
            });
        }
        let mut features = Vec::with_capacity(feature_names.len());
        for (j, cell) in row.iter().take(feature_end).skip(1).enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                Ok(_) => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("column `{}` is not finite: {cell}", feature_names[j]),
                    })
                }
                Err(_) => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("column `{}` is not numeric: {cell:?}", feature_names[j]),
                    })
                }
            }
        }
        let label = if has_label {
            Some(row[n_cols - 1].to_owned()).filter(|l| !l.is_empty())
        } else {
            None
        };
        records.push(SampleRecord {
            sample_id,
            features,
            label,
        });
    }
    Ok(Dataset {
        feature_names,
        records,
    })
}

fn csv_err(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        reason: e.to_string(),
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

/// Writes the dataset with a trailing `label` column. Reals use the shortest
/// representation that parses back to the same value.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let map = |e: csv::Error| Error::data(format!("csv write failed: {e}"));
    let mut header = vec!["sample_id".to_owned()];
    header.extend(ds.feature_names.iter().cloned());
    header.push("label".into());
    w.write_record(&header).map_err(map)?;
    for r in &ds.records {
        let mut row = Vec::with_capacity(r.features.len() + 2);
        row.push(r.sample_id.clone());
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.push(r.label.clone().unwrap_or_default());
        w.write_record(&row).map_err(map)?;
    }
    w.flush().map_err(|e| Error::data(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}
