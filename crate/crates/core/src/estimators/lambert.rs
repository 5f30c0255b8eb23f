//! Principal branch of the Lambert W function.

use std::f64::consts::E;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 64;

/// `W0(x)`: the `w ≥ −1` solving `w·e^w = x`, by Halley iteration.
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch - 1e-15 {
        return Err(Error::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x <= branch {
        return Ok(-1.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }

    let mut w = if x >= 0.0 {
        x.ln_1p()
    } else {
        // Branch-point series in p = sqrt(2(e·x + 1)).
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    };

    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
        assert!(lambert_w0(-0.5).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn omega_constant() {
        // W0(1) is the omega constant, the fixed point of w = e^{-w}; found
        // here by plain fixed-point iteration.
        let mut w = 0.5f64;
        for _ in 0..200 {
            w = (-w).exp();
        }
        assert!((w - 0.567_143_290_4).abs() < 1e-10);
        assert!((lambert_w0(1.0).unwrap() - w).abs() <= 1e-12 * w);
    }
}
