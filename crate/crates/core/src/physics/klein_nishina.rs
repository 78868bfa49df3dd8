//! Total Compton cross-section per electron.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Classical electron radius in metres.
pub const ELECTRON_RADIUS_M: f64 = 2.817_940_326_2e-15;

/// Electron rest energy in keV.
pub const ELECTRON_REST_KEV: f64 = 510.998_95;

/// Below this reduced energy the closed form loses too many digits to
/// cancellation and the first-order series is used instead.
const SERIES_THRESHOLD: f64 = 1e-4;

/// Total Klein-Nishina cross-section for reduced photon energy
/// `eps = E / (m_e c^2)`, in units of `r_e^2` (the caller's area unit).
///
/// ```text
/// sigma = 2 pi r_e^2 [ (1+e)/e^3 (2e(1+e)/(1+2e) - ln(1+2e))
///                      + ln(1+2e)/(2e) - (1+3e)/(1+2e)^2 ]
/// ```
pub fn klein_nishina_sigma(eps: f64, r_e: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("reduced energy must be positive, got {eps}")));
    }
    if eps < SERIES_THRESHOLD {
        return Ok(thomson(r_e) * (1.0 - 2.0 * eps));
    }
    let l = (2.0 * eps).ln_1p();
    let a = (1.0 + eps) / eps.powi(3) * (2.0 * eps * (1.0 + eps) / (1.0 + 2.0 * eps) - l);
    let b = l / (2.0 * eps);
    let c = (1.0 + 3.0 * eps) / (1.0 + 2.0 * eps).powi(2);
    Ok(2.0 * PI * r_e * r_e * (a + b - c))
}

/// Low-energy limit `8 pi r_e^2 / 3`.
pub fn thomson(r_e: f64) -> f64 {
    8.0 * PI * r_e * r_e / 3.0
}

pub fn reduced_energy(kev: f64) -> f64 {
    kev / ELECTRON_REST_KEV
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomson_limit_value() {
        let t = thomson(ELECTRON_RADIUS_M);
        assert!((t - 6.6525e-29).abs() / 6.6525e-29 < 1e-4);
        let s = klein_nishina_sigma(1e-4, ELECTRON_RADIUS_M).unwrap();
        assert!((s - t).abs() / t < 3e-4);
    }

    #[test]
    fn closed_form_and_series_agree_at_switch() {
        let below = klein_nishina_sigma(SERIES_THRESHOLD * 0.999_999, 1.0).unwrap();
        let above = klein_nishina_sigma(SERIES_THRESHOLD, 1.0).unwrap();
        assert!((below - above).abs() / above < 1e-6);
    }

    #[test]
    fn decreasing_in_energy() {
        let s = |e| klein_nishina_sigma(e, 1.0).unwrap();
        assert!(s(0.1) > s(0.5));
        assert!(s(0.5) > s(1.0));
    }

    #[test]
    fn rejects_nonpositive_energy() {
        assert!(matches!(klein_nishina_sigma(0.0, 1.0), Err(Error::Domain(_))));
        assert!(klein_nishina_sigma(-1.0, 1.0).is_err());
    }
}
