use crate::sysid::PressureModel;

use super::MpcConfig;

/// Exponents above this are continued linearly to keep the barrier finite.
pub const EXPONENT_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierValue {
    pub value: f64,
    /// Some exponent exceeded [`EXPONENT_CAP`] and was linearised.
    pub saturated: bool,
}

/// `e^z` for `z ≤ cap`, its first-order continuation beyond; returns (value, slope).
fn capped_exp(z: f64) -> (f64, f64, bool) {
    if z <= EXPONENT_CAP {
        let e = z.exp();
        (e, e, false)
    } else {
        let e = EXPONENT_CAP.exp();
        (e * (1.0 + (z - EXPONENT_CAP)), e, true)
    }
}

/// Adds the barrier gradient to `grad` and returns the barrier value.
pub(crate) fn barrier_with_gradient(h: &[f64], config: &MpcConfig, grad: Option<&mut [f64]>) -> BarrierValue {
    if !config.barrier_enabled {
        return BarrierValue { value: 0.0, saturated: false };
    }
    let mut value = 0.0;
    let mut saturated = false;
    let mut grad = grad;
    for (s, &hs) in h.iter().enumerate() {
        let (al, bl) = (config.barrier_a[2 * s], config.barrier_b[2 * s]);
        let (au, bu) = (config.barrier_a[2 * s + 1], config.barrier_b[2 * s + 1]);
        let (vl, dl, sl) = capped_exp(al * (config.lower[s] - hs + bl));
        let (vu, du, su) = capped_exp(au * (hs - config.upper[s] + bu));
        value += vl + vu;
        saturated |= sl | su;
        if let Some(g) = grad.as_deref_mut() {
            g[s] += au * du - al * dl;
        }
    }
    BarrierValue { value, saturated }
}

/// `Σ_i e^{a_i (C_i(h) + b_i)}` over the lower (`h̃ − h`) and upper (`h − h̄`) bound functions.
pub fn barrier_cost(h: &[f64], config: &MpcConfig) -> BarrierValue {
    barrier_with_gradient(h, config, None)
}

/// Electricity expense `c·uᵀ(A_p h + B_p u − p_in)` plus the barrier at `h`.
pub fn stage_cost(h: &[f64], u: &[f64], price: f64, pressure: &PressureModel, config: &MpcConfig) -> f64 {
    let p_out = pressure.outlet(h, u);
    let power: f64 = u.iter().zip(&p_out).zip(&pressure.p_in).map(|((q, po), pi)| q * (po - pi)).sum();
    price * power + barrier_cost(h, config).value
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;

    fn single(lower: f64, upper: f64) -> MpcConfig {
        MpcConfig::new(vec![lower], vec![upper], vec![10.0])
    }

    #[test]
    fn barrier_examples() {
        let mut cfg = single(1.5, 3.0);
        // b inside the lower bound: lower term is exactly 1.
        cfg.barrier_b = vec![0.25, 0.25];
        let v = barrier_cost(&[1.75], &cfg).value;
        let upper_term = (80.0f64 * (1.75 - 3.0 + 0.25)).exp();
        assert!((v - 1.0 - upper_term).abs() <= 1e-15);
        let cfg = single(1.5, 3.0);
        // On the bound: e^24.
        let v = barrier_cost(&[1.5], &cfg).value;
        assert!((v / 2.648_912_212_984_347e10 - 1.0).abs() <= 1e-12);
        // Midpoint of a 1.5 m band: both terms e^{-36}.
        let v = barrier_cost(&[2.25], &cfg).value;
        assert!((v - 2.0 * (-36.0f64).exp()).abs() <= 1e-28);
        assert!(((-36.0f64).exp() - 2.319_522_830_243_569e-16).abs() <= 1e-28);
    }

    #[test]
    fn far_violation_saturates_but_stays_finite() {
        let cfg = single(1.5, 3.0);
        let deep = barrier_cost(&[-8.0], &cfg);
        assert!(deep.saturated && deep.value.is_finite());
        let deeper = barrier_cost(&[-9.0], &cfg);
        assert!(deeper.value > deep.value);
        assert!(!barrier_cost(&[2.0], &cfg).saturated);
    }

    #[test]
    fn disabled_barrier_is_zero() {
        let mut cfg = single(1.5, 3.0);
        cfg.barrier_enabled = false;
        assert_eq!(barrier_cost(&[1.5], &cfg).value, 0.0);
    }

    #[test]
    fn stage_cost_example() {
        let mut cfg = single(5.0, 20.0);
        let pm = PressureModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 0.5), vec![10.0])
            .unwrap();
        let barrier = barrier_cost(&[12.0], &cfg).value;
        assert!((stage_cost(&[12.0], &[4.0], 2.0, &pm, &cfg) - (32.0 + barrier)).abs() <= 1e-12);
        assert_eq!(stage_cost(&[12.0], &[0.0], 2.0, &pm, &cfg), barrier);
        assert_eq!(stage_cost(&[12.0], &[4.0], 0.0, &pm, &cfg), barrier);
        cfg.barrier_enabled = false;
        assert_eq!(stage_cost(&[12.0], &[4.0], 2.0, &pm, &cfg), 32.0);
    }
}
