//! One-hot and z-score encoding into the model-ready feature matrix.
//!
//! Normalization parameters are fitted on the training rows only and
//! reapplied verbatim to everything else.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnData, HarmonizeError, RawTable};
use crate::tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Raw-table column this one derives from.
    pub source: String,
    /// One-hot level, when applicable.
    pub category: Option<String>,
}

/// Dense row-major design matrix with labels and row identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnMeta>,
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
    pub row_ids: Vec<String>,
    /// Grouping key for leakage-safe splits (patient id).
    pub group_ids: Vec<String>,
    /// True for rows duplicated by oversampling.
    pub oversampled: Vec<bool>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols()..(i + 1) * self.n_cols()]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Take the given rows into a new matrix, preserving column metadata.
    pub fn subset(&self, rows: &[usize]) -> FeatureMatrix {
        let cols = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            values,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            group_ids: rows.iter().map(|&r| self.group_ids[r].clone()).collect(),
            oversampled: rows.iter().map(|&r| self.oversampled[r]).collect(),
        }
    }

    /// Check that every one-hot group sums to exactly one on every row.
    pub fn check_one_hot_groups(&self) -> Result<(), HarmonizeError> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (j, c) in self.columns.iter().enumerate() {
            if c.kind == ColumnKind::OneHot {
                groups.entry(c.source.as_str()).or_default().push(j);
            }
        }
        for i in 0..self.n_rows() {
            for (source, cols) in &groups {
                let sum: f64 = cols.iter().map(|&j| self.value(i, j)).sum();
                if sum != 1.0 {
                    return Err(HarmonizeError::InvalidArgument(format!(
                        "one-hot group {source} sums to {sum} on row {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Recover the category of a one-hot group on a row (argmax).
    pub fn decode_category(&self, i: usize, source: &str) -> Option<&str> {
        let mut best: Option<(f64, &str)> = None;
        for (j, c) in self.columns.iter().enumerate() {
            if c.kind == ColumnKind::OneHot && c.source == source {
                let v = self.value(i, j);
                if best.map(|(b, _)| v > b).unwrap_or(true) {
                    best = Some((v, c.category.as_deref().unwrap_or("")));
                }
            }
        }
        best.map(|(_, cat)| cat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

/// Fitted encoding: per-continuous-column normalization and per-categorical
/// level sets. Normalization is statistical and comes from the fitting rows
/// only; level sets are structural and come from the whole table so every
/// in-table row encodes to unit one-hot groups. Immutable after fitting;
/// transform is reentrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub continuous: Vec<(String, Normalization)>,
    pub categorical: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone)]
pub struct EncodeOutcome {
    pub matrix: FeatureMatrix,
    /// Unseen-category events observed during transform.
    pub warnings: Vec<String>,
}

impl Encoder {
    /// Fit normalization and level sets on `fit_rows` of the table.
    ///
    /// Requires the table to be fully imputed / filled.
    pub fn fit(table: &RawTable, fit_rows: &[usize]) -> Result<Encoder, HarmonizeError> {
        if fit_rows.is_empty() {
            return Err(HarmonizeError::InvalidArgument(
                "encoder needs at least one fitting row".into(),
            ));
        }
        let mut continuous = Vec::new();
        let mut categorical = Vec::new();
        for col in &table.columns {
            match &col.data {
                ColumnData::Continuous(values) => {
                    check_no_missing(&col.name, values.iter().filter(|v| v.is_none()).count())?;
                    let xs: Vec<f64> = fit_rows.iter().map(|&i| values[i].unwrap()).collect();
                    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                    continuous.push((
                        col.name.clone(),
                        Normalization { mean, std: var.sqrt() },
                    ));
                }
                ColumnData::Categorical(values) => {
                    check_no_missing(&col.name, values.iter().filter(|v| v.is_none()).count())?;
                    let mut levels: Vec<String> =
                        values.iter().map(|v| v.clone().unwrap()).collect();
                    levels.push(tables::UNKNOWN.to_string());
                    levels.sort_unstable();
                    levels.dedup();
                    categorical.push((col.name.clone(), levels));
                }
            }
        }
        Ok(Encoder {
            continuous,
            categorical,
        })
    }

    pub fn output_columns(&self) -> Vec<ColumnMeta> {
        let mut out = Vec::new();
        for (name, _) in &self.continuous {
            out.push(ColumnMeta {
                name: name.clone(),
                kind: ColumnKind::Continuous,
                source: name.clone(),
                category: None,
            });
        }
        for (name, levels) in &self.categorical {
            for level in levels {
                out.push(ColumnMeta {
                    name: format!("{name}={level}"),
                    kind: ColumnKind::OneHot,
                    source: name.clone(),
                    category: Some(level.clone()),
                });
            }
        }
        out
    }

    /// Encode the whole table with parameters fitted earlier.
    pub fn transform(
        &self,
        table: &RawTable,
        labels: &[bool],
        row_ids: &[String],
        group_ids: &[String],
    ) -> Result<EncodeOutcome, HarmonizeError> {
        let n = table.n_rows();
        if labels.len() != n || row_ids.len() != n || group_ids.len() != n {
            return Err(HarmonizeError::InvalidArgument(
                "labels/ids length mismatch with table rows".into(),
            ));
        }
        let columns = self.output_columns();
        let width = columns.len();
        let mut values = vec![0.0; n * width];
        let mut warnings = Vec::new();

        let mut j = 0usize;
        for (name, norm) in &self.continuous {
            let col = table
                .column(name)
                .ok_or_else(|| HarmonizeError::UnknownColumn(name.clone()))?;
            let ColumnData::Continuous(data) = &col.data else {
                return Err(HarmonizeError::InvalidArgument(format!(
                    "{name} changed type since fitting"
                )));
            };
            for (i, v) in data.iter().enumerate() {
                let x = v.ok_or_else(|| HarmonizeError::MissingResidual {
                    column: name.clone(),
                    count: 1,
                })?;
                values[i * width + j] = if norm.std > 0.0 {
                    (x - norm.mean) / norm.std
                } else {
                    0.0
                };
            }
            j += 1;
        }
        for (name, levels) in &self.categorical {
            let col = table
                .column(name)
                .ok_or_else(|| HarmonizeError::UnknownColumn(name.clone()))?;
            let ColumnData::Categorical(data) = &col.data else {
                return Err(HarmonizeError::InvalidArgument(format!(
                    "{name} changed type since fitting"
                )));
            };
            for (i, v) in data.iter().enumerate() {
                let v = v.as_ref().ok_or_else(|| HarmonizeError::MissingResidual {
                    column: name.clone(),
                    count: 1,
                })?;
                match levels.iter().position(|l| l == v) {
                    Some(offset) => values[i * width + j + offset] = 1.0,
                    None => warnings.push(format!(
                        "unseen category {v:?} in column {name} on row {i}; encoded as all-zero"
                    )),
                }
            }
            j += levels.len();
        }

        Ok(EncodeOutcome {
            matrix: FeatureMatrix {
                columns,
                values,
                labels: labels.to_vec(),
                row_ids: row_ids.to_vec(),
                group_ids: group_ids.to_vec(),
                oversampled: vec![false; n],
            },
            warnings,
        })
    }
}

fn check_no_missing(column: &str, count: usize) -> Result<(), HarmonizeError> {
    if count > 0 {
        return Err(HarmonizeError::MissingResidual {
            column: column.to_string(),
            count,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct MatrixMeta {
    columns: Vec<ColumnMeta>,
    normalization: BTreeMap<String, Normalization>,
}

/// Persist a matrix as `<stem>.csv` (values) and `<stem>.meta.json`.
pub fn write_matrix(
    dir: &Path,
    stem: &str,
    matrix: &FeatureMatrix,
    encoder: &Encoder,
) -> Result<(), HarmonizeError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    let mut header = vec!["row_id".to_string(), "group_id".to_string(), "label".to_string()];
    header.extend(matrix.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..matrix.n_rows() {
        let mut record = vec![
            matrix.row_ids[i].clone(),
            matrix.group_ids[i].clone(),
            u8::from(matrix.labels[i]).to_string(),
        ];
        record.extend(matrix.row(i).iter().map(|v| format!("{v:.12}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    let meta = MatrixMeta {
        columns: matrix.columns.clone(),
        normalization: encoder
            .continuous
            .iter()
            .map(|(name, n)| (name.clone(), n.clone()))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(dir.join(format!("{stem}.meta.json")), json)?;
    Ok(())
}

/// Read back a matrix written by [`write_matrix`].
pub fn read_matrix(dir: &Path, stem: &str) -> Result<FeatureMatrix, HarmonizeError> {
    let meta: MatrixMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.meta.json")))?)?;
    let mut reader = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut row_ids = Vec::new();
    let mut group_ids = Vec::new();
    for record in reader.records() {
        let r = record?;
        row_ids.push(r[0].to_string());
        group_ids.push(r[1].to_string());
        labels.push(&r[2] == "1");
        for j in 0..meta.columns.len() {
            values.push(r[3 + j].parse::<f64>().map_err(|e| {
                HarmonizeError::InvalidArgument(format!("bad value in matrix csv: {e}"))
            })?);
        }
    }
    let n = labels.len();
    Ok(FeatureMatrix {
        columns: meta.columns,
        values,
        labels,
        row_ids,
        group_ids,
        oversampled: vec![false; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonize::RawColumn;

    fn table() -> RawTable {
        RawTable {
            columns: vec![
                RawColumn {
                    name: "x".into(),
                    data: ColumnData::Continuous(vec![Some(1.0), Some(2.0), Some(3.0), Some(2.0)]),
                },
                RawColumn {
                    name: "color".into(),
                    data: ColumnData::Categorical(vec![
                        Some("red".into()),
                        Some("green".into()),
                        Some("blue".into()),
                        Some("red".into()),
                    ]),
                },
            ],
        }
    }

    fn ids(n: usize) -> (Vec<bool>, Vec<String>, Vec<String>) {
        (
            vec![false; n],
            (0..n).map(|i| format!("v{i}")).collect(),
            (0..n).map(|i| format!("p{i}")).collect(),
        )
    }

    #[test]
    fn z_scores_match_hand_arithmetic() {
        let t = RawTable {
            columns: vec![RawColumn {
                name: "x".into(),
                data: ColumnData::Continuous(vec![Some(1.0), Some(2.0), Some(3.0)]),
            }],
        };
        let enc = Encoder::fit(&t, &[0, 1, 2]).unwrap();
        let (labels, rid, gid) = ids(3);
        let out = enc.transform(&t, &labels, &rid, &gid).unwrap();
        let z: Vec<f64> = (0..3).map(|i| out.matrix.value(i, 0)).collect();
        assert!((z[0] + 1.224744871391589).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn test_rows_use_training_parameters() {
        let t = RawTable {
            columns: vec![RawColumn {
                name: "x".into(),
                data: ColumnData::Continuous(vec![Some(0.0), Some(2.0), Some(2.0)]),
            }],
        };
        // Fit on rows 0 and 1: mean 1, population std 1. Row 2 is "test".
        let enc = Encoder::fit(&t, &[0, 1]).unwrap();
        let (labels, rid, gid) = ids(3);
        let out = enc.transform(&t, &labels, &rid, &gid).unwrap();
        assert!((out.matrix.value(2, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fitting_split_is_standardized_exactly() {
        let spec = crate::cohort::CohortSpec::new(300, 8);
        let cohort = crate::cohort::generate_cohort(&spec).unwrap();
        let config = crate::harmonize::HarmonizeConfig::default();
        let mut assembled = crate::harmonize::assemble(&cohort.visits, None, &config).unwrap();
        crate::harmonize::recode_unknown(&mut assembled.table);
        crate::harmonize::drop_sparse_categoricals(&mut assembled.table, 0.20);
        crate::harmonize::knn_impute(&mut assembled.table, 5).unwrap();
        let fit_rows: Vec<usize> = (0..200).collect();
        let enc = Encoder::fit(&assembled.table, &fit_rows).unwrap();
        let labels = vec![false; 300];
        let out = enc
            .transform(&assembled.table, &labels, &assembled.visit_ids, &assembled.patient_ids)
            .unwrap();
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
        for (j, c) in out.matrix.columns.iter().enumerate() {
            if c.kind != ColumnKind::Continuous {
                continue;
            }
            let xs: Vec<f64> = fit_rows.iter().map(|&i| out.matrix.value(i, j)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let std =
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!(mean.abs() < 1e-9, "{} mean {mean}", c.name);
            assert!((std - 1.0).abs() < 1e-9, "{} std {std}", c.name);
        }
        out.matrix.check_one_hot_groups().unwrap();
    }

    #[test]
    fn one_hot_blocks_sum_to_one_and_decode() {
        let t = table();
        let enc = Encoder::fit(&t, &[0, 1, 2, 3]).unwrap();
        let (labels, rid, gid) = ids(4);
        let out = enc.transform(&t, &labels, &rid, &gid).unwrap();
        out.matrix.check_one_hot_groups().unwrap();
        // 4 levels: blue, green, red plus the always-present Unknown.
        let hot_cols = out
            .matrix
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::OneHot)
            .count();
        assert_eq!(hot_cols, 4);
        assert_eq!(out.matrix.decode_category(0, "color"), Some("red"));
        assert_eq!(out.matrix.decode_category(2, "color"), Some("blue"));
    }

    #[test]
    fn unseen_category_encodes_all_zero_with_warning() {
        let t = table();
        let enc = Encoder::fit(&t, &[0, 1, 2, 3]).unwrap();
        // New data at transform time carries a category never seen before.
        let novel = RawTable {
            columns: vec![
                RawColumn {
                    name: "x".into(),
                    data: ColumnData::Continuous(vec![Some(1.5)]),
                },
                RawColumn {
                    name: "color".into(),
                    data: ColumnData::Categorical(vec![Some("chartreuse".into())]),
                },
            ],
        };
        let (labels, rid, gid) = ids(1);
        let out = enc.transform(&novel, &labels, &rid, &gid).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("chartreuse"));
        let group_sum: f64 = out
            .matrix
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.source == "color")
            .map(|(j, _)| out.matrix.value(0, j))
            .sum();
        assert_eq!(group_sum, 0.0);
    }

    #[test]
    fn residual_missing_is_an_error() {
        let t = RawTable {
            columns: vec![RawColumn {
                name: "x".into(),
                data: ColumnData::Continuous(vec![Some(1.0), None]),
            }],
        };
        assert!(matches!(
            Encoder::fit(&t, &[0, 1]),
            Err(HarmonizeError::MissingResidual { .. })
        ));
    }

    #[test]
    fn matrix_round_trips_through_files() {
        let t = table();
        let enc = Encoder::fit(&t, &[0, 1, 2, 3]).unwrap();
        let (labels, rid, gid) = ids(4);
        let out = enc.transform(&t, &labels, &rid, &gid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_matrix(dir.path(), "features", &out.matrix, &enc).unwrap();
        let back = read_matrix(dir.path(), "features").unwrap();
        assert_eq!(back.columns, out.matrix.columns);
        assert_eq!(back.labels, out.matrix.labels);
        for i in 0..4 {
            for j in 0..back.n_cols() {
                assert!((back.value(i, j) - out.matrix.value(i, j)).abs() < 1e-9);
            }
        }
    }
}
