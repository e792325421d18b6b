use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("baseline has {baseline} entries, method has {method}")]
    LengthMismatch { baseline: usize, method: usize },
    #[error("{0} pairs; at least 2 are needed")]
    TooFewPairs(usize),
}

/// One-tailed paired t-test of `method > baseline`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    /// `None` when the statistic is not finite (constant nonzero differences).
    pub t_statistic: Option<f64>,
    pub p_value: f64,
    /// Set when a convention replaced the formula (zero variance).
    pub flagged: bool,
}

/// `t = mean(d)·√N / sd(d)` on `d = method − baseline`, upper-tail p with
/// `N − 1` degrees of freedom. All-zero differences give `t = 0, p = 0.5`.
pub fn paired_t_test(baseline: &[bool], method: &[bool]) -> Result<PairedTest, StatsError> {
    if baseline.len() != method.len() {
        return Err(StatsError::LengthMismatch { baseline: baseline.len(), method: method.len() });
    }
    let n = baseline.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let d: Vec<f64> = baseline.iter().zip(method).map(|(&b, &m)| m as u8 as f64 - b as u8 as f64).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTest { t_statistic: Some(0.0), p_value: 0.5, flagged: true }
        } else if mean > 0.0 {
            PairedTest { t_statistic: None, p_value: 0.0, flagged: true }
        } else {
            PairedTest { t_statistic: None, p_value: 1.0, flagged: true }
        });
    }
    let t = mean * (n as f64).sqrt() / var.sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    Ok(PairedTest { t_statistic: Some(t), p_value: dist.sf(t), flagged: false })
}

/// `*` below 10%, `**` below 5%, `***` below 1%.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}
