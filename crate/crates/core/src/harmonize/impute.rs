//! K-nearest-neighbor imputation over the continuous columns of a raw
//! table. Distances are Euclidean over the dimensions observed in both
//! rows, scaled by sqrt(d_total / d_observed); ties break by row index.

use super::{ColumnData, HarmonizeError, RawTable};

/// Outcome bookkeeping: rows that had to fall back to column means.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ImputeReport {
    pub imputed_cells: usize,
    /// Rows with no observed continuous values, filled from column means.
    pub mean_filled_rows: Vec<usize>,
}

/// Fill every missing continuous cell in place. Neighbor distances are
/// computed on the original observed values only, so results do not depend
/// on fill order.
pub fn knn_impute(table: &mut RawTable, k: usize) -> Result<ImputeReport, HarmonizeError> {
    if k == 0 {
        return Err(HarmonizeError::InvalidArgument("k must be at least 1".into()));
    }
    let names: Vec<String> = table
        .columns
        .iter()
        .filter(|c| matches!(c.data, ColumnData::Continuous(_)))
        .map(|c| c.name.clone())
        .collect();
    let d_total = names.len();
    if d_total == 0 {
        return Ok(ImputeReport::default());
    }
    let n = table.n_rows();

    // Row-major snapshot of the continuous block.
    let mut snapshot: Vec<Option<f64>> = vec![None; n * d_total];
    for (j, name) in names.iter().enumerate() {
        if let ColumnData::Continuous(values) = &table.column(name).unwrap().data {
            for (i, v) in values.iter().enumerate() {
                snapshot[i * d_total + j] = *v;
            }
        }
    }
    let observed = |i: usize, j: usize| snapshot[i * d_total + j];

    let col_means: Vec<Option<f64>> = (0..d_total)
        .map(|j| {
            let (mut s, mut c) = (0.0, 0usize);
            for i in 0..n {
                if let Some(v) = observed(i, j) {
                    s += v;
                    c += 1;
                }
            }
            (c > 0).then(|| s / c as f64)
        })
        .collect();

    let mut report = ImputeReport::default();
    let mut fills: Vec<(usize, usize, f64)> = Vec::new();

    for i in 0..n {
        let obs_dims: Vec<usize> = (0..d_total).filter(|&j| observed(i, j).is_some()).collect();
        let missing_dims: Vec<usize> =
            (0..d_total).filter(|&j| observed(i, j).is_none()).collect();
        if missing_dims.is_empty() {
            continue;
        }
        if obs_dims.is_empty() {
            report.mean_filled_rows.push(i);
            for &j in &missing_dims {
                if let Some(m) = col_means[j] {
                    fills.push((i, j, m));
                }
            }
            continue;
        }

        // One distance pass per row covers all of its gaps.
        let mut dist: Vec<f64> = Vec::with_capacity(n);
        for r in 0..n {
            if r == i {
                dist.push(f64::INFINITY);
                continue;
            }
            let mut sum = 0.0;
            let mut shared = 0usize;
            for &j in &obs_dims {
                if let (Some(a), Some(b)) = (observed(i, j), observed(r, j)) {
                    let d = a - b;
                    sum += d * d;
                    shared += 1;
                }
            }
            dist.push(if shared == 0 {
                f64::INFINITY
            } else {
                (sum * d_total as f64 / shared as f64).sqrt()
            });
        }

        for &j in &missing_dims {
            let mut candidates: Vec<usize> = (0..n)
                .filter(|&r| r != i && observed(r, j).is_some())
                .collect();
            if candidates.is_empty() {
                if let Some(m) = col_means[j] {
                    fills.push((i, j, m));
                }
                continue;
            }
            candidates.sort_by(|&a, &b| {
                dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b))
            });
            let take = k.min(candidates.len());
            let mean = candidates[..take]
                .iter()
                .map(|&r| observed(r, j).unwrap())
                .sum::<f64>()
                / take as f64;
            fills.push((i, j, mean));
        }
    }

    report.imputed_cells = fills.len();
    for (i, j, v) in fills {
        if let ColumnData::Continuous(values) =
            &mut table.column_mut(&names[j]).unwrap().data
        {
            values[i] = Some(v);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonize::RawColumn;

    fn table(cols: Vec<(&str, Vec<Option<f64>>)>) -> RawTable {
        RawTable {
            columns: cols
                .into_iter()
                .map(|(name, data)| RawColumn {
                    name: name.into(),
                    data: ColumnData::Continuous(data),
                })
                .collect(),
        }
    }

    fn col(t: &RawTable, name: &str) -> Vec<f64> {
        match &t.column(name).unwrap().data {
            ColumnData::Continuous(v) => v.iter().map(|x| x.unwrap()).collect(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn k1_copies_the_nearest_neighbor() {
        let mut t = table(vec![
            ("x", vec![Some(0.0), Some(0.1), Some(10.0)]),
            ("y", vec![None, Some(5.0), Some(99.0)]),
        ]);
        knn_impute(&mut t, 1).unwrap();
        assert_eq!(col(&t, "y")[0], 5.0);
    }

    #[test]
    fn six_by_two_matches_hand_computed_distance_table() {
        // Row 0 misses y. Observed x: 0. Distances on shared dim x with
        // d_total/d_obs = 2 scaling: to rows (1..5) at x = 1,2,3,4,10:
        // sqrt(2)*|dx| = 1.41, 2.83, 4.24, 5.66, 14.14. Two nearest are rows
        // 1 and 2 with y = 10 and 20, so the fill is 15.
        let mut t = table(vec![
            ("x", vec![Some(0.0), Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(10.0)]),
            ("y", vec![None, Some(10.0), Some(20.0), Some(30.0), Some(40.0), Some(100.0)]),
        ]);
        knn_impute(&mut t, 2).unwrap();
        assert_eq!(col(&t, "y")[0], 15.0);
    }

    #[test]
    fn identical_rows_impute_the_common_value() {
        let mut t = table(vec![
            ("x", vec![Some(7.0), Some(7.0), Some(7.0), Some(7.0)]),
            ("y", vec![Some(3.0), Some(3.0), None, Some(3.0)]),
        ]);
        knn_impute(&mut t, 2).unwrap();
        assert_eq!(col(&t, "y")[2], 3.0);
    }

    #[test]
    fn k_equal_n_minus_one_gives_column_mean() {
        let mut t = table(vec![
            ("x", vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)]),
            ("y", vec![Some(2.0), Some(4.0), None, Some(8.0), Some(10.0)]),
        ]);
        knn_impute(&mut t, 4).unwrap();
        assert_eq!(col(&t, "y")[2], 6.0);
    }

    #[test]
    fn fully_missing_row_mean_fills_and_flags() {
        let mut t = table(vec![
            ("x", vec![Some(1.0), Some(3.0), None]),
            ("y", vec![Some(10.0), Some(30.0), None]),
        ]);
        let report = knn_impute(&mut t, 1).unwrap();
        assert_eq!(report.mean_filled_rows, vec![2]);
        assert_eq!(col(&t, "x")[2], 2.0);
        assert_eq!(col(&t, "y")[2], 20.0);
    }

    #[test]
    fn tie_break_uses_row_index() {
        // Rows 1 and 2 are equidistant from row 0; k=1 must take row 1.
        let mut t = table(vec![
            ("x", vec![Some(0.0), Some(1.0), Some(-1.0)]),
            ("y", vec![None, Some(100.0), Some(200.0)]),
        ]);
        knn_impute(&mut t, 1).unwrap();
        assert_eq!(col(&t, "y")[0], 100.0);
    }

    #[test]
    fn zero_k_is_rejected() {
        let mut t = table(vec![("x", vec![Some(1.0)])]);
        assert!(knn_impute(&mut t, 0).is_err());
    }
}
