use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of daily harmonics in the forecast deviation.
const HARMONICS: usize = 3;

/// Realized demand and the controller's forecast of it for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfiles {
    pub realized: Vec<f64>,
    pub forecast: Vec<f64>,
}

fn deviation(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let coeffs: Vec<(f64, f64)> =
        (1..=HARMONICS).map(|j| (rng.gen_range(-1.0..1.0) / j as f64, rng.gen_range(-1.0..1.0) / j as f64)).collect();
    let raw: Vec<f64> = (0..len)
        .map(|k| {
            let phase = std::f64::consts::TAU * k as f64 / len as f64;
            coeffs.iter().enumerate().map(|(j, (a, b))| {
                let w = (j + 1) as f64 * phase;
                a * w.cos() + b * w.sin()
            })
            .sum()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        raw
    }
}

/// The base profile as realized demand and a smoothly perturbed forecast.
///
/// The forecast is `base·(1 + amplitude·δ)` with `δ` a random low-order
/// Fourier series scaled to a peak of one, so it stays non-negative for
/// amplitudes up to one half.
pub fn synth_demand(base: &[f64], seed: u64, amplitude: f64) -> DemandProfiles {
    synth_days(base, seed, amplitude, 1).remove(0)
}

/// One profile pair per day, all drawn from the same seeded stream.
pub fn synth_days(base: &[f64], seed: u64, amplitude: f64, days: usize) -> Vec<DemandProfiles> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..days)
        .map(|_| {
            let delta = deviation(&mut rng, base.len());
            let forecast = if amplitude == 0.0 {
                base.to_vec()
            } else {
                base.iter().zip(&delta).map(|(b, d)| (b * (1.0 + amplitude * d)).max(0.0)).collect()
            };
            DemandProfiles { realized: base.to_vec(), forecast }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: [f64; 6] = [60.0, 80.0, 150.0, 160.0, 120.0, 90.0];

    #[test]
    fn zero_amplitude_is_exact() {
        let p = synth_demand(&BASE, 3, 0.0);
        assert_eq!(p.forecast, p.realized);
        assert_eq!(p.realized, BASE.to_vec());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_demand(&BASE, 11, 0.05), synth_demand(&BASE, 11, 0.05));
        assert_ne!(synth_demand(&BASE, 11, 0.05).forecast, synth_demand(&BASE, 12, 0.05).forecast);
    }

    #[test]
    fn deviation_bounded_by_amplitude() {
        let peak = BASE.iter().cloned().fold(0.0, f64::max);
        for seed in 0..100 {
            let p = synth_demand(&BASE, seed, 0.05);
            let worst = p.forecast.iter().zip(&BASE).map(|(f, b)| (f - b).abs() / peak).fold(0.0, f64::max);
            assert!(worst <= 0.05 + 1e-15);
            assert!(p.forecast.iter().all(|f| *f >= 0.0));
        }
    }
}
