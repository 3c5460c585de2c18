//! Accuracy matrix `R` and the ACC / BWT / FWT summaries.
//!
//! `R[i][j]` is the test accuracy (percent) on task `j` after finishing task
//! `i`; `b_bar[j]` is the accuracy of the untrained network on task `j`.
//! Indices here are 0-based.

use serde::{Deserialize, Serialize, Serializer};

use crate::data::PreparedDataset;
use crate::error::{Error, Result};
use crate::nn::Network;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    pub r: Vec<Vec<f64>>,
    pub b_bar: Vec<f64>,
}

impl ResultMatrix {
    pub fn new(tasks: usize) -> Self {
        Self { r: vec![vec![0.0; tasks]; tasks], b_bar: vec![0.0; tasks] }
    }

    pub fn tasks(&self) -> usize {
        self.b_bar.len()
    }

    pub fn set_row(&mut self, i: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.tasks() || i >= self.tasks() {
            return Err(Error::Dimension(format!("row {i} of length {} for {} tasks", row.len(), self.tasks())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::Numeric(format!("accuracy {v} outside [0, 100]")));
        }
        self.r[i] = row;
        Ok(())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.tasks()).map(|i| self.r[i][i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let t = self.tasks();
        let mut out = String::from("after_task");
        (0..t).for_each(|j| out.push_str(&format!(",task{j}")));
        out.push('\n');
        let mut line = |label: String, row: &[f64]| {
            out.push_str(&label);
            row.iter().for_each(|v| out.push_str(&format!(",{v:.4}")));
            out.push('\n');
        };
        line("init".into(), &self.b_bar);
        for (i, row) in self.r.iter().enumerate() {
            line(i.to_string(), row);
        }
        out
    }
}

/// Mean of the last row.
pub fn compute_acc(m: &ResultMatrix) -> f64 {
    let last = &m.r[m.tasks() - 1];
    last.iter().sum::<f64>() / last.len() as f64
}

/// Mean change on earlier tasks between learning them and the end. `None` for `T < 2`.
pub fn compute_bwt(m: &ResultMatrix) -> Option<f64> {
    let t = m.tasks();
    if t < 2 {
        return None;
    }
    let sum: f64 = (0..t - 1).map(|i| m.r[t - 1][i] - m.r[i][i]).sum();
    Some(sum / (t - 1) as f64)
}

/// Mean zero-shot gain over random init on each next task. `None` for `T < 2`.
///
/// With `skip_last` the last task is left out of the sum (the divisor
/// stays `T − 1`).
pub fn compute_fwt(m: &ResultMatrix, skip_last: bool) -> Option<f64> {
    let t = m.tasks();
    if t < 2 {
        return None;
    }
    let end = if skip_last { t - 1 } else { t };
    let sum: f64 = (1..end).map(|j| m.r[j - 1][j] - m.b_bar[j]).sum();
    Some(sum / (t - 1) as f64)
}

/// Percentage of argmax predictions that match the labels.
pub fn accuracy(net: &Network, ds: &PreparedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Input(format!("{}: cannot score an empty dataset", ds.name)));
    }
    let ranges: Vec<_> = ds.chunks(EVAL_CHUNK).collect();
    let per_chunk = net.exec.map(ranges.len(), |c| -> Result<usize> {
        let idx: Vec<usize> = ranges[c].clone().collect();
        let (x, y) = ds.batch(&idx)?;
        let pred = net.predict(&x)?;
        Ok(pred.iter().zip(&y).filter(|(p, l)| p == l).count())
    });
    let mut correct = 0;
    for c in per_chunk {
        correct += c?;
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

fn two_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 100.0).round() / 100.0)
}

fn two_decimals_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => two_decimals(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "two_decimals")]
    pub acc: f64,
    #[serde(serialize_with = "two_decimals_opt")]
    pub bwt: Option<f64>,
    #[serde(serialize_with = "two_decimals_opt")]
    pub fwt: Option<f64>,
    pub used_params: usize,
    pub method: String,
    pub sequence: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn from_matrix(
        m: &ResultMatrix,
        used_params: usize,
        method: &str,
        sequence: &str,
        seed: u64,
        fwt_skip_last: bool,
    ) -> Self {
        Self {
            acc: compute_acc(m),
            bwt: compute_bwt(m),
            fwt: compute_fwt(m, fwt_skip_last),
            used_params,
            method: method.into(),
            sequence: sequence.into(),
            seed,
        }
    }
}
