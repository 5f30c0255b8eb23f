use super::{classify_case, lambert_w0, Case, EstimatorConfig};
use crate::allocator::MeasurementPair;
use crate::error::{Error, Result};

/// DiProber-O: maximizer of the latest round's likelihood.
///
/// Unsaturated relays: expected client usage plus the unused capacity
/// (`λw·C_avg + 2·m2`). Bottlenecked relays: the equal share times the
/// expected flow count including both probes (`m2·(λw + 2)`). The result is
/// clamped to the grid's center range.
pub fn diprober_o_estimate(m: MeasurementPair, w: f64, cfg: &EstimatorConfig) -> f64 {
    let expected_clients = cfg.lambda_s * w;
    let raw = match classify_case(m, cfg.case_tolerance) {
        Case::Unsaturated => expected_clients * cfg.c_avg_client + 2.0 * m.m2,
        Case::Bottlenecked => m.m2 * (expected_clients + 2.0),
    };
    let (lo, hi) = cfg.grid.center_range();
    raw.clamp(lo, hi)
}

/// Closed-form full-history maximizer for a relay bottlenecked in every
/// round (Stirling approximation, solved through Lambert W):
///
/// `κ = A / W0(A·e^{−B})`, with `A = 2(t+1) / Σ 1/m_i` and
/// `B = Σ (1/m_i)·ln(m_i·λ·w_i) / Σ 1/m_i`.
pub fn diprober_wh_analytic_case2(
    history: &[MeasurementPair],
    weights: &[f64],
    lambda_s: f64,
    case_tolerance: f64,
) -> Result<f64> {
    if history.is_empty() || history.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "need matching nonempty histories, got {} measurements and {} weights",
            history.len(),
            weights.len()
        )));
    }
    if let Some(i) = history
        .iter()
        .position(|&m| classify_case(m, case_tolerance) == Case::Unsaturated)
    {
        return Err(Error::NotBottlenecked(i));
    }
    let inv_sum: f64 = history.iter().map(|m| 1.0 / m.m2).sum();
    let weighted_log: f64 = history
        .iter()
        .zip(weights)
        .map(|(m, &w)| (m.m2 * lambda_s * w).ln() / m.m2)
        .sum();
    let a = 2.0 * history.len() as f64 / inv_sum;
    let b = weighted_log / inv_sum;
    let z = lambert_w0(a * (-b).exp())?;
    Ok(a / z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::QuantizationGrid;

    fn cfg(lambda: f64, c_avg: f64) -> EstimatorConfig {
        EstimatorConfig::new(lambda, c_avg, QuantizationGrid::new(1.1, 1.0, 2e5).unwrap())
    }

    fn pair(m1: f64, m2: f64) -> MeasurementPair {
        MeasurementPair { m1, m2 }
    }

    #[test]
    fn one_step_values() {
        assert_eq!(diprober_o_estimate(pair(40.0, 20.0), 1.0, &cfg(10.0, 5.0)), 90.0);
        assert_eq!(diprober_o_estimate(pair(30.0, 10.0), 1.0, &cfg(8.0, 5.0)), 100.0);
        assert_eq!(diprober_o_estimate(pair(150.0, 50.0), 0.0, &cfg(8.0, 5.0)), 100.0);
    }

    #[test]
    fn one_step_is_clamped() {
        let c = cfg(1e6, 5.0);
        let (_, hi) = c.grid.center_range();
        assert_eq!(diprober_o_estimate(pair(30.0, 10.0), 1.0, &c), hi);
    }

    #[test]
    fn analytic_single_round_near_one_step() {
        for mu in [50.0, 80.0, 200.0, 1000.0] {
            let m = pair(40.0, 10.0);
            let analytic = diprober_wh_analytic_case2(&[m], &[mu / 100.0], 100.0, 0.05).unwrap();
            let one_step = 10.0 * (mu + 2.0);
            assert!((analytic / one_step - 1.0).abs() < 0.02, "mu={mu}: {analytic} vs {one_step}");
        }
    }

    #[test]
    fn analytic_constant_history_independent_of_length() {
        let m = pair(50.0, 20.0);
        let single = diprober_wh_analytic_case2(&[m], &[0.4], 500.0, 0.05).unwrap();
        for t in [2, 5, 30] {
            let v = diprober_wh_analytic_case2(&vec![m; t], &vec![0.4; t], 500.0, 0.05).unwrap();
            assert!((v / single - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_refuses_unsaturated_rounds() {
        let err = diprober_wh_analytic_case2(&[pair(30.0, 10.0), pair(20.0, 10.0)], &[0.1, 0.1], 100.0, 0.05)
            .unwrap_err();
        assert!(matches!(err, Error::NotBottlenecked(1)));
    }
}
