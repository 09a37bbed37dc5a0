//! On-disk dataset formats.
//!
//! CSV: one row per item with columns `id`, `label` (empty when unlabeled),
//! an optional `split`, one column per sensitive attribute, and class
//! probabilities `p_0 .. p_{K-1}`. The probability columns may instead live
//! in a separate `id,p_0,..` file joined by id.
//!
//! JSON: `{"num_classes": K, "attributes": [..], "items": [{"id", "label",
//! "split", "groups": {attr: value}, "probs": [..]}]}`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_probability_row, Dataset, GroupAssignment, Item, ProbabilityMatrix, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guess from the file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}


fn prob_column(name: &str) -> Option<usize> {
    name.strip_prefix("p_").and_then(|s| s.parse().ok())
}

struct RawRow {
    id: String,
    label: Option<usize>,
    split: Option<Split>,
    groups: Vec<String>,
    probs: Option<Vec<f64>>,
}

struct RawTable {
    attributes: Vec<String>,
    num_classes: Option<usize>,
    rows: Vec<RawRow>,
}

fn parse_label(s: &str, row: usize) -> Result<Option<usize>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("null") || s == "-1" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse {
        row,
        message: format!("invalid label '{s}'"),
    })
}

fn parse_split(s: &str, row: usize) -> Result<Option<Split>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    Split::parse(s).map(Some).ok_or_else(|| Error::Parse {
        row,
        message: format!("invalid split '{s}'"),
    })
}

fn parse_f64(s: &str, row: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("invalid number '{s}'"),
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn read_csv_table(path: &Path) -> Result<RawTable> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers()?.clone();
    let mut id_col = None;
    let mut label_col = None;
    let mut split_col = None;
    let mut attr_cols = Vec::new();
    let mut prob_cols: Vec<(usize, usize)> = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        match h {
            "id" => id_col = Some(c),
            "label" => label_col = Some(c),
            "split" => split_col = Some(c),
            _ => match prob_column(h) {
                Some(k) => prob_cols.push((k, c)),
                None => attr_cols.push((h.to_string(), c)),
            },
        }
    }
    let id_col = id_col.ok_or(Error::Parse { row: 0, message: "missing 'id' column".into() })?;
    let label_col =
        label_col.ok_or(Error::Parse { row: 0, message: "missing 'label' column".into() })?;
    prob_cols.sort_unstable();
    if prob_cols.iter().enumerate().any(|(k, (kk, _))| k != *kk) {
        return Err(Error::Parse {
            row: 0,
            message: "probability columns must be p_0 .. p_{K-1} without gaps".into(),
        });
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row: r, message: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let probs = if prob_cols.is_empty() {
            None
        } else {
            Some(
                prob_cols
                    .iter()
                    .map(|&(_, c)| parse_f64(field(c), r))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        rows.push(RawRow {
            id: field(id_col).to_string(),
            label: parse_label(field(label_col), r)?,
            split: match split_col {
                Some(c) => parse_split(field(c), r)?,
                None => None,
            },
            groups: attr_cols.iter().map(|(_, c)| field(*c).to_string()).collect(),
            probs,
        });
    }
    Ok(RawTable {
        attributes: attr_cols.into_iter().map(|(n, _)| n).collect(),
        num_classes: (!prob_cols.is_empty()).then_some(prob_cols.len()),
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonItem {
    id: String,
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    groups: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    num_classes: usize,
    attributes: Vec<String>,
    items: Vec<JsonItem>,
}

fn read_json_table(path: &Path) -> Result<RawTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: JsonDataset = serde_json::from_str(&text)?;
    let mut rows = Vec::with_capacity(doc.items.len());
    for (r, it) in doc.items.into_iter().enumerate() {
        let groups = doc
            .attributes
            .iter()
            .map(|a| {
                it.groups.get(a).cloned().ok_or_else(|| Error::Parse {
                    row: r,
                    message: format!("item '{}' missing attribute '{a}'", it.id),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(RawRow {
            id: it.id,
            label: it.label,
            split: it.split,
            groups,
            probs: it.probs,
        });
    }
    Ok(RawTable {
        attributes: doc.attributes,
        num_classes: Some(doc.num_classes),
        rows,
    })
}

fn read_table(path: &Path, format: Format) -> Result<RawTable> {
    match format {
        Format::Csv => read_csv_table(path),
        Format::Json => read_json_table(path),
    }
}

fn assemble(table: RawTable, probs: Vec<Vec<f64>>) -> Result<Dataset> {
    let declared = table.num_classes;
    for (row, p) in table.rows.iter().zip(&probs) {
        if let Some(k) = declared {
            if p.len() != k {
                return Err(Error::Validation(format!(
                    "item '{}' has {} probabilities, expected {k}",
                    row.id,
                    p.len()
                )));
            }
        }
        check_probability_row(p).map_err(|m| Error::Validation(format!("item '{}': {m}", row.id)))?;
    }
    let mut items = Vec::with_capacity(table.rows.len());
    let mut raw_groups = Vec::with_capacity(table.rows.len());
    for row in table.rows {
        items.push(Item { id: row.id, label: row.label, split: row.split });
        raw_groups.push(row.groups);
    }
    let groups = GroupAssignment::from_values(table.attributes, &raw_groups)?;
    if probs.is_empty() {
        return Err(Error::Validation("dataset has no items".into()));
    }
    let matrix = ProbabilityMatrix::from_rows(&probs)?;
    Dataset::new(items, groups, matrix)
}

/// Load a dataset whose probability columns are inline.
pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let mut table = read_table(path.as_ref(), format)?;
    let probs = table
        .rows
        .iter_mut()
        .enumerate()
        .map(|(r, row)| {
            row.probs.take().ok_or_else(|| Error::Parse {
                row: r,
                message: format!("item '{}' has no probabilities", row.id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(table, probs)
}

/// Load items from one file and the probability matrix from another
/// (`id,p_0,..,p_{K-1}` CSV or `{"id": [..]}` JSON), joined by id.
pub fn load_dataset_with_probs(
    items_path: impl AsRef<Path>,
    probs_path: impl AsRef<Path>,
    format: Format,
) -> Result<Dataset> {
    let table = read_table(items_path.as_ref(), format)?;
    let by_id = load_probability_rows(probs_path.as_ref())?;
    let probs = table
        .rows
        .iter()
        .map(|row| {
            by_id
                .get(&row.id)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("no probabilities for item '{}'", row.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(table, probs)
}

fn load_probability_rows(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    match Format::from_path(path) {
        Format::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&text)?)
        }
        Format::Csv => {
            let mut rdr = open_csv(path)?;
            let headers = rdr.headers()?.clone();
            if headers.get(0) != Some("id") {
                return Err(Error::Parse { row: 0, message: "first column must be 'id'".into() });
            }
            let mut out = HashMap::new();
            for (r, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| Error::Parse { row: r, message: e.to_string() })?;
                let id = rec.get(0).unwrap_or("").to_string();
                let row = rec.iter().skip(1).map(|v| parse_f64(v, r)).collect::<Result<Vec<_>>>()?;
                if out.insert(id.clone(), row).is_some() {
                    return Err(Error::Validation(format!("duplicate item id '{id}'")));
                }
            }
            Ok(out)
        }
    }
}

/// Write a dataset with inline probabilities. Values are written with
/// shortest round-trip formatting, so reloading yields an equal dataset.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let groups = dataset.groups();
    let k = dataset.num_classes();
    match format {
        Format::Csv => {
            let mut wtr = csv::Writer::from_path(path)?;
            let mut header = vec!["id".to_string(), "label".to_string(), "split".to_string()];
            header.extend(groups.attribute_names().iter().cloned());
            header.extend((0..k).map(|c| format!("p_{c}")));
            wtr.write_record(&header)?;
            for (i, item) in dataset.items().iter().enumerate() {
                let mut rec = vec![
                    item.id.clone(),
                    item.label.map(|y| y.to_string()).unwrap_or_default(),
                    item.split.map(|s| s.to_string()).unwrap_or_default(),
                ];
                rec.extend((0..groups.attribute_names().len()).map(|a| groups.value_name(i, a).to_string()));
                rec.extend(dataset.probs().row(i).iter().map(|p| p.to_string()));
                wtr.write_record(&rec)?;
            }
            wtr.flush().map_err(|e| Error::io(path, e))?;
        }
        Format::Json => {
            let doc = JsonDataset {
                num_classes: k,
                attributes: groups.attribute_names().to_vec(),
                items: dataset
                    .items()
                    .iter()
                    .enumerate()
                    .map(|(i, item)| JsonItem {
                        id: item.id.clone(),
                        label: item.label,
                        split: item.split,
                        groups: groups
                            .attribute_names()
                            .iter()
                            .enumerate()
                            .map(|(a, name)| (name.clone(), groups.value_name(i, a).to_string()))
                            .collect(),
                        probs: Some(dataset.probs().row(i).to_vec()),
                    })
                    .collect(),
            };
            let text = serde_json::to_string_pretty(&doc)?;
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_item_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            "id,label,gender,p_0,p_1\na,0,F,0.7,0.3\nb,1,M,0.4,0.6\nc,,F,0.5,0.5\n",
        );
        let ds = load_dataset(&p, Format::Csv).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.probs().row(1), &[0.4, 0.6]);
        assert_eq!(ds.label(2), None);
        assert_eq!(ds.groups().attribute_names(), &["gender".to_string()]);
    }

    #[test]
    fn row_sum_violation_names_item() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "id,label,g,p_0,p_1\nok,0,a,0.5,0.5\nbad,1,a,0.7,0.4\n");
        let err = load_dataset(&p, Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("'bad'"), "{err}");
    }

    #[test]
    fn malformed_row_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "id,label,g,p_0,p_1\nok,0,a,0.5,0.5\nx,zz,a,0.5,0.5\n");
        match load_dataset(&p, Format::Csv).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn json_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.json",
            r#"{"num_classes":2,"attributes":["g"],"items":[
                {"id":"dup","label":0,"groups":{"g":"a"},"probs":[1.0,0.0]},
                {"id":"dup","label":1,"groups":{"g":"b"},"probs":[0.0,1.0]}]}"#,
        );
        let err = load_dataset(&p, Format::Json).unwrap_err();
        assert!(err.to_string().contains("'dup'"), "{err}");
    }

    #[test]
    fn separate_probability_file() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.csv", "id,label,g\na,0,x\nb,1,y\n");
        let probs = write(dir.path(), "probs.csv", "id,p_0,p_1\nb,0.1,0.9\na,0.8,0.2\n");
        let ds = load_dataset_with_probs(&items, &probs, Format::Csv).unwrap();
        assert_eq!(ds.probs().row(0), &[0.8, 0.2]);
        assert_eq!(ds.probs().row(1), &[0.1, 0.9]);
    }

    #[test]
    fn roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(
            dir.path(),
            "d.csv",
            "id,label,split,sex,region,p_0,p_1,p_2\n\
             n0,2,calib,F,north,0.1,0.2,0.7\n\
             n1,0,test,M,south,0.3333333333333333,0.3333333333333333,0.33333333333333337\n\
             n2,,,M,north,0.5,0.25,0.25\n",
        );
        let ds = load_dataset(&src, Format::Csv).unwrap();
        for (name, fmt) in [("o.csv", Format::Csv), ("o.json", Format::Json)] {
            let out = dir.path().join(name);
            save_dataset(&ds, &out, fmt).unwrap();
            let back = load_dataset(&out, fmt).unwrap();
            assert_eq!(back, ds);
            save_dataset(&back, &out, fmt).unwrap();
            assert_eq!(load_dataset(&out, fmt).unwrap(), ds);
        }
    }
}
