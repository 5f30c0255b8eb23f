use crate::error::{Error, Result};

fn mean_measurement(measured: &[f64]) -> Result<f64> {
    if measured.is_empty() {
        return Err(Error::DeadNetwork);
    }
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    if mean > 0.0 && mean.is_finite() {
        Ok(mean)
    } else {
        Err(Error::DeadNetwork)
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} measurements",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// TorFlow-P with `K_p = 1`: `C_{t+1} = C_t · m_t / m̄_t`. No normalization,
/// so the total is free to drift.
pub fn torflow_p_update(previous: &[f64], measured: &[f64]) -> Result<Vec<f64>> {
    check_len(previous, measured)?;
    let mean = mean_measurement(measured)?;
    Ok(previous
        .iter()
        .zip(measured)
        .map(|(c, m)| c * m / mean)
        .collect())
}

/// sbws: observed bandwidth scaled by the relay's measured-to-mean ratio.
pub fn sbws_update(observed: &[f64], measured: &[f64]) -> Result<Vec<f64>> {
    check_len(observed, measured)?;
    let mean = mean_measurement(measured)?;
    Ok(observed
        .iter()
        .zip(measured)
        .map(|(b, m)| b * m / mean)
        .collect())
}
