use crate::error::{CraneError, Result};

/// Average absolute and relative error of a query set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMetrics {
    pub aae: f64,
    /// Mean of `|f̂ − f| / f` over queries with non-zero truth, zero when
    /// there are none.
    pub are: f64,
    pub queries: usize,
    /// Queries that entered the ARE mean.
    pub relative_queries: usize,
}

pub fn metrics(estimates: &[f64], truths: &[f64]) -> Result<ErrorMetrics> {
    if estimates.len() != truths.len() {
        return Err(CraneError::Dimension(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(CraneError::Parameter("empty query set".into()));
    }
    let mut abs = 0.0;
    let mut rel = 0.0;
    let mut counted = 0;
    for (e, t) in estimates.iter().zip(truths) {
        let err = (e - t).abs();
        abs += err;
        if *t != 0.0 {
            rel += err / t.abs();
            counted += 1;
        }
    }
    Ok(ErrorMetrics {
        aae: abs / truths.len() as f64,
        are: if counted > 0 { rel / counted as f64 } else { 0.0 },
        queries: truths.len(),
        relative_queries: counted,
    })
}
