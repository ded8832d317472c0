use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{Estimator, RiskEstimate};
use crate::error::{Error, Result};
use crate::net::Dataset;
use crate::rng::substream;

/// Numeric table read from CSV: every non-outcome column is a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub feature_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Reads a headed CSV file. Every cell must parse as a finite number.
pub fn load_csv(path: &Path, outcome: &str) -> Result<CsvTable> {
    let csv_err = |row: usize, column: &str, message: String| Error::Csv {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(0, "", e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(1, "", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let y_col = headers
        .iter()
        .position(|h| h == outcome)
        .ok_or_else(|| csv_err(1, outcome, "outcome column not found in header".into()))?;

    let mut feats = Vec::new();
    let mut ys = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = r + 2;
        let rec = rec.map_err(|e| csv_err(row, "", e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(csv_err(
                row,
                "",
                format!("expected {} cells, found {}", headers.len(), rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| csv_err(row, &headers[c], format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(csv_err(row, &headers[c], format!("non-finite value {cell:?}")));
            }
            if c == y_col {
                ys.push(v);
            } else {
                feats.push(v);
            }
        }
    }
    let n = ys.len();
    let p = headers.len() - 1;
    Ok(CsvTable {
        feature_names: headers
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y_col)
            .map(|(_, h)| h.clone())
            .collect(),
        x: DMatrix::from_row_slice(n, p, &feats),
        y: DVector::from_vec(ys),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarnessConfig {
    /// Real features kept per replication.
    pub s: usize,
    /// Total features after adding Gaussian noise columns.
    pub p_total: usize,
    pub n_train: usize,
    pub reps: usize,
    pub seed: u64,
}

impl HarnessConfig {
    pub fn new(s: usize, seed: u64) -> Self {
        HarnessConfig {
            s,
            p_total: 10,
            n_train: 100,
            reps: 200,
            seed,
        }
    }
}

/// One replication: which real features and rows were used, and the raw
/// test MSE of every estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub rep: usize,
    pub features: Vec<usize>,
    pub train_rows: Vec<usize>,
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HarnessResult {
    pub estimators: Vec<String>,
    pub replications: Vec<Replication>,
    pub summaries: Vec<RiskEstimate>,
}

/// Keeps `s` random real features, pads with `p_total - s` standard normal
/// columns, trains on `n_train` random rows and tests on the rest.
pub fn feature_noising_harness(
    table: &CsvTable,
    estimators: &[&dyn Estimator],
    cfg: HarnessConfig,
) -> Result<HarnessResult> {
    let (rows, real) = table.x.shape();
    if cfg.s == 0 || cfg.s > real || cfg.s > cfg.p_total {
        return Err(Error::invalid(format!(
            "need 1 <= s <= min(real features {real}, p_total {}), got s={}",
            cfg.p_total, cfg.s
        )));
    }
    if rows < cfg.n_train + 20 {
        return Err(Error::invalid(format!(
            "need at least {} rows, file has {rows}",
            cfg.n_train + 20
        )));
    }
    let replications: Vec<Replication> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(cfg.seed, &[rep as u64]);
            let mut features = index::sample(&mut rng, real, cfg.s).into_vec();
            features.sort_unstable();
            let noise_cols = cfg.p_total - cfg.s;
            let noise: Vec<f64> = (0..rows * noise_cols).map(|_| rng.sample(StandardNormal)).collect();
            let x = DMatrix::from_fn(rows, cfg.p_total, |i, j| {
                if j < cfg.s {
                    table.x[(i, features[j])]
                } else {
                    noise[i * noise_cols + (j - cfg.s)]
                }
            });
            let mut order: Vec<usize> = (0..rows).collect();
            order.shuffle(&mut rng);
            let (train_rows, test_rows) = order.split_at(cfg.n_train);
            let train = Dataset::new(
                x.select_rows(train_rows),
                DVector::from_iterator(cfg.n_train, train_rows.iter().map(|&i| table.y[i])),
            )?;
            let x_test = x.select_rows(test_rows);
            let mse = estimators
                .iter()
                .map(|est| {
                    let pred = est.predict(&train, &x_test)?;
                    Ok(test_rows
                        .iter()
                        .zip(&pred)
                        .map(|(&i, p)| (table.y[i] - p).powi(2))
                        .sum::<f64>()
                        / test_rows.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Replication {
                rep,
                features,
                train_rows: train_rows.to_vec(),
                mse,
            })
        })
        .collect::<Result<_>>()?;

    let names: Vec<String> = estimators.iter().map(|e| e.name()).collect();
    let summaries = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<f64> = replications.iter().map(|r| r.mse[k]).collect();
            RiskEstimate::from_values(&vals, 0, format!("{name}|csv|s={}", cfg.s))
        })
        .collect::<Result<_>>()?;
    Ok(HarnessResult {
        estimators: names,
        replications,
        summaries,
    })
}
