use crate::sysid::{LinearDiscreteModel, PressureModel};

use super::cost::barrier_with_gradient;
use super::{EmpcError, MpcConfig};

/// States `h_0..h_N` of the discrete model driven by `u_seq` and `d_seq`.
pub fn rollout(
    model: &LinearDiscreteModel,
    h0: &[f64],
    u_seq: &[Vec<f64>],
    d_seq: &[f64],
) -> Result<Vec<Vec<f64>>, EmpcError> {
    if h0.len() != model.n {
        return Err(EmpcError::Dimension(format!("initial state has {} entries, model has {}", h0.len(), model.n)));
    }
    if u_seq.len() != d_seq.len() {
        return Err(EmpcError::Dimension(format!("{} inputs vs {} demands", u_seq.len(), d_seq.len())));
    }
    if let Some(u) = u_seq.iter().find(|u| u.len() != model.m) {
        return Err(EmpcError::Dimension(format!("input has {} entries, model has {}", u.len(), model.m)));
    }
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    states.push(h0.to_vec());
    for (u, d) in u_seq.iter().zip(d_seq) {
        let next = model.step(states.last().expect("non-empty"), u, *d);
        states.push(next);
    }
    Ok(states)
}

/// Pulls per-state seeds `∂/∂h_j` (for `j = 0..=N`) back through the dynamics.
///
/// Returns the total derivative with respect to `h_0` and adds
/// `B_d1ᵀ λ_{j+1}` to each `grad_u[j]`.
pub(crate) fn backpropagate(model: &LinearDiscreteModel, seeds: &[Vec<f64>], grad_u: &mut [Vec<f64>]) -> Vec<f64> {
    let n = model.n;
    let steps = seeds.len() - 1;
    let mut lambda = seeds[steps].clone();
    for j in (0..steps).rev() {
        for (i, g) in grad_u[j].iter_mut().enumerate() {
            *g += (0..n).map(|r| model.b_d1[(r, i)] * lambda[r]).sum::<f64>();
        }
        let mut next = seeds[j].clone();
        for (c, v) in next.iter_mut().enumerate() {
            *v += (0..n).map(|r| model.a_d[(r, c)] * lambda[r]).sum::<f64>();
        }
        lambda = next;
    }
    lambda
}

/// Objective value, its gradients, and the predicted states.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities {
    pub value: f64,
    /// `∂J/∂u_j`, one vector per step.
    pub grad_u: Vec<Vec<f64>>,
    pub grad_h0: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Some barrier exponent was linearised.
    pub saturated: bool,
}

/// `Σ_{j<N} J(h_j, u_j, c_j)` with gradients by reverse accumulation through the rollout.
pub fn objective_with_sensitivities(
    model: &LinearDiscreteModel,
    pressure: &PressureModel,
    h0: &[f64],
    u_seq: &[Vec<f64>],
    d_seq: &[f64],
    c_seq: &[f64],
    config: &MpcConfig,
) -> Result<Sensitivities, EmpcError> {
    if c_seq.len() != u_seq.len() {
        return Err(EmpcError::Dimension(format!("{} prices for {} steps", c_seq.len(), u_seq.len())));
    }
    if pressure.p_in.len() != model.m || pressure.a_p.ncols() != model.n {
        return Err(EmpcError::Dimension("pressure model does not match the state model".into()));
    }
    let states = rollout(model, h0, u_seq, d_seq)?;
    let (n, m) = (model.n, model.m);
    let mut value = 0.0;
    let mut saturated = false;
    let mut seeds = vec![vec![0.0; n]; u_seq.len() + 1];
    let mut grad_u = vec![vec![0.0; m]; u_seq.len()];
    for (j, (u, &c)) in u_seq.iter().zip(c_seq).enumerate() {
        let h = &states[j];
        let p_out = pressure.outlet(h, u);
        let head: Vec<f64> = p_out.iter().zip(&pressure.p_in).map(|(po, pi)| po - pi).collect();
        value += c * u.iter().zip(&head).map(|(q, dp)| q * dp).sum::<f64>();
        // ∂/∂u: c (Δp + B_pᵀ u);  ∂/∂h: c A_pᵀ u.
        for i in 0..m {
            grad_u[j][i] = c * (head[i] + (0..m).map(|r| pressure.b_p[(r, i)] * u[r]).sum::<f64>());
        }
        for s in 0..n {
            seeds[j][s] = c * (0..m).map(|r| pressure.a_p[(r, s)] * u[r]).sum::<f64>();
        }
        let b = barrier_with_gradient(h, config, Some(&mut seeds[j]));
        value += b.value;
        saturated |= b.saturated;
    }
    let grad_h0 = backpropagate(model, &seeds, &mut grad_u);
    Ok(Sensitivities { value, grad_u, grad_h0, states, saturated })
}

/// Objective and its gradient with respect to the inputs, flattened step-major (`u_flat[j·m + i]`).
#[allow(clippy::too_many_arguments)]
pub fn objective_and_gradient(
    model: &LinearDiscreteModel,
    pressure: &PressureModel,
    h0: &[f64],
    u_flat: &[f64],
    d_seq: &[f64],
    c_seq: &[f64],
    config: &MpcConfig,
) -> Result<(f64, Vec<f64>), EmpcError> {
    if model.m == 0 || u_flat.len() != model.m * d_seq.len() {
        return Err(EmpcError::Dimension(format!(
            "{} inputs for {} steps of {} pumps",
            u_flat.len(),
            d_seq.len(),
            model.m
        )));
    }
    let u_seq: Vec<Vec<f64>> = u_flat.chunks(model.m).map(<[f64]>::to_vec).collect();
    let s = objective_with_sensitivities(model, pressure, h0, &u_seq, d_seq, c_seq, config)?;
    Ok((s.value, s.grad_u.concat()))
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;

    #[test]
    fn pure_accumulation() {
        let model = LinearDiscreteModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
        )
        .unwrap();
        let u = vec![vec![50.0, 50.0]; 5];
        let h = rollout(&model, &[0.0, 0.0], &u, &[0.0; 5]).unwrap();
        for (k, hk) in h.iter().enumerate() {
            assert_eq!(hk, &vec![50.0 * k as f64; 2]);
        }
    }

    #[test]
    fn free_response_is_matrix_power() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.05, 0.92]);
        let model = LinearDiscreteModel::new(a.clone(), DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        let h = rollout(&model, &[1.0, 2.0], &vec![vec![0.0; 2]; 4], &[0.0; 4]).unwrap();
        let mut p = DVector::from_vec(vec![1.0, 2.0]);
        for hk in &h {
            assert!((DVector::from_vec(hk.clone()) - &p).amax() <= 1e-15);
            p = &a * p;
        }
    }

    #[test]
    fn rollout_rejects_mismatch() {
        let model =
            LinearDiscreteModel::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        assert!(rollout(&model, &[0.0], &[], &[]).is_err());
        assert!(rollout(&model, &[0.0, 0.0], &[vec![1.0, 1.0]], &[]).is_err());
        assert!(rollout(&model, &[0.0, 0.0], &[vec![1.0]], &[0.0]).is_err());
    }
}
