use nalgebra::{DMatrix, DVector};

use crate::hydronet::Network;

use super::{Dataset, IdentError, LinearDiscreteModel, PressureModel, Record};

/// Largest admissible spectral radius of a fitted `A_d`.
pub const MAX_SPECTRAL_RADIUS: f64 = 1.0 + 1e-6;

/// Relative singular-value cutoff for the numerical rank.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    /// Coefficients, one column per target.
    pub theta: DMatrix<f64>,
    pub rank: usize,
    /// Residual RMS per target column.
    pub residual_rms: Vec<f64>,
}

/// Solves `min ‖X Θ − Y‖²_F (+ λ‖Θ_s‖²)` through an SVD of the column-scaled regressors.
///
/// `ridge` acts on the scaled problem; with `ridge = 0` this is ordinary least
/// squares. Fails with `RankDeficient` when the scaled regressors have
/// numerical rank below their column count.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<LeastSquares, IdentError> {
    let (rows, p) = x.shape();
    if y.nrows() != rows {
        return Err(IdentError::Dimension(format!("{rows} regressor rows vs {} target rows", y.nrows())));
    }
    if rows < p {
        return Err(IdentError::RankDeficient { rank: rows, required: p });
    }
    let scales: Vec<f64> = (0..p).map(|j| (x.column(j).norm_squared() / rows as f64).sqrt()).collect();
    if scales.iter().any(|&s| s == 0.0) {
        let rank = scales.iter().filter(|&&s| s > 0.0).count();
        return Err(IdentError::RankDeficient { rank, required: p });
    }
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = xs.svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let rank = sigma.iter().filter(|&&s| s > smax * RANK_RTOL).count();
    if rank < p {
        return Err(IdentError::RankDeficient { rank, required: p });
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let uty = u.transpose() * y;
    let mut inner = DMatrix::zeros(p, y.ncols());
    for i in 0..p {
        let s = sigma[i];
        let w = s / (s * s + ridge);
        for c in 0..y.ncols() {
            inner[(i, c)] = w * uty[(i, c)];
        }
    }
    let mut theta = vt.transpose() * inner;
    for (j, s) in scales.iter().enumerate() {
        theta.row_mut(j).scale_mut(1.0 / s);
    }
    let resid = x * &theta - y;
    let residual_rms = (0..y.ncols())
        .map(|c| (resid.column(c).norm_squared() / rows as f64).sqrt())
        .collect();
    Ok(LeastSquares { theta, rank, residual_rms })
}

fn check_excitation(dataset: &Dataset, with_demand: bool) -> Result<(), IdentError> {
    let varies = |col: &dyn Fn(&Record) -> f64| {
        let first = col(&dataset.records[0]);
        dataset.records.iter().any(|r| col(r) != first)
    };
    for i in 0..dataset.m {
        if !varies(&|r: &Record| r.u[i]) {
            return Err(IdentError::RankDeficient { rank: dataset.n + dataset.m - 1, required: dataset.n + dataset.m });
        }
    }
    if with_demand && !varies(&|r: &Record| r.d_a) {
        return Err(IdentError::RankDeficient { rank: dataset.n + dataset.m, required: dataset.n + dataset.m + 1 });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateFit {
    pub model: LinearDiscreteModel,
    /// One-step residual RMS per state on the training data (m).
    pub residual_rms: Vec<f64>,
}

/// Least-squares fit of `h⁺ ≈ A_d h + B_d1 u + B_d2 d_a`.
pub fn fit_state_model(dataset: &Dataset, ridge: f64) -> Result<StateFit, IdentError> {
    dataset.validate()?;
    check_excitation(dataset, true)?;
    let (n, m) = (dataset.n, dataset.m);
    let rows = dataset.records.len();
    let x = DMatrix::from_fn(rows, n + m + 1, |k, j| {
        let r = &dataset.records[k];
        if j < n {
            r.h[j]
        } else if j < n + m {
            r.u[j - n]
        } else {
            r.d_a
        }
    });
    let y = DMatrix::from_fn(rows, n, |k, j| dataset.records[k].h_next[j]);
    let ls = least_squares(&x, &y, ridge)?;
    let theta_t = ls.theta.transpose();
    let a_d = theta_t.columns(0, n).into_owned();
    let b_d1 = theta_t.columns(n, m).into_owned();
    let b_d2 = DVector::from_iterator(n, theta_t.column(n + m).iter().copied());
    let model = LinearDiscreteModel::new(a_d, b_d1, b_d2, dataset.dt)?;
    let radius = model.spectral_radius();
    if radius > MAX_SPECTRAL_RADIUS {
        return Err(IdentError::Unstable { spectral_radius: radius });
    }
    Ok(StateFit { model, residual_rms: ls.residual_rms })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureFit {
    pub model: PressureModel,
    pub residual_rms: Vec<f64>,
}

/// Least-squares fit of `p_out ≈ A_p h + B_p u` with `p_in` from the reservoir heads.
pub fn fit_pressure_model(dataset: &Dataset, net: &Network) -> Result<PressureFit, IdentError> {
    fit_pressure_model_with_inlet(dataset, net.inlet_heads())
}

pub fn fit_pressure_model_with_inlet(dataset: &Dataset, p_in: Vec<f64>) -> Result<PressureFit, IdentError> {
    dataset.validate()?;
    check_excitation(dataset, false)?;
    let (n, m) = (dataset.n, dataset.m);
    let rows = dataset.records.len();
    let x = DMatrix::from_fn(rows, n + m, |k, j| {
        let r = &dataset.records[k];
        if j < n {
            r.h[j]
        } else {
            r.u[j - n]
        }
    });
    let y = DMatrix::from_fn(rows, m, |k, j| dataset.records[k].p_out[j]);
    let ls = least_squares(&x, &y, 0.0)?;
    let theta_t = ls.theta.transpose();
    let model = PressureModel::new(theta_t.columns(0, n).into_owned(), theta_t.columns(n, m).into_owned(), p_in)?;
    Ok(PressureFit { model, residual_rms: ls.residual_rms })
}

/// One-step prediction RMS per state.
pub fn one_step_rms(model: &LinearDiscreteModel, dataset: &Dataset) -> Vec<f64> {
    let mut sq = vec![0.0; model.n];
    for r in &dataset.records {
        let pred = model.step(&r.h, &r.u, r.d_a);
        for i in 0..model.n {
            sq[i] += (pred[i] - r.h_next[i]).powi(2);
        }
    }
    let count = dataset.records.len().max(1) as f64;
    sq.into_iter().map(|s| (s / count).sqrt()).collect()
}

/// Outlet-head prediction RMS per pump.
pub fn pressure_rms(model: &PressureModel, dataset: &Dataset) -> Vec<f64> {
    let m = model.p_in.len();
    let mut sq = vec![0.0; m];
    for r in &dataset.records {
        let pred = model.outlet(&r.h, &r.u);
        for i in 0..m {
            sq[i] += (pred[i] - r.p_out[i]).powi(2);
        }
    }
    let count = dataset.records.len().max(1) as f64;
    sq.into_iter().map(|s| (s / count).sqrt()).collect()
}

/// Largest per-state deviation when the model is run open loop along a
/// contiguous run of records, starting from the first record's state.
pub fn open_loop_max_error(model: &LinearDiscreteModel, records: &[Record]) -> Vec<f64> {
    let mut err = vec![0.0f64; model.n];
    let Some(first) = records.first() else { return err };
    let mut h = first.h.clone();
    for r in records {
        h = model.step(&h, &r.u, r.d_a);
        for i in 0..model.n {
            err[i] = err[i].max((h[i] - r.h_next[i]).abs());
        }
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dynamics_recovered_from_states_only() {
        let rows = 40;
        let x = DMatrix::from_fn(rows, 2, |k, j| ((k * 7 + j * 3) % 11) as f64 * 0.1 + j as f64);
        let ls = least_squares(&x, &x, 0.0).unwrap();
        assert!((ls.theta.clone() - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!(ls.residual_rms.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn residual_is_orthogonal_to_regressors() {
        let rows = 60;
        let x = DMatrix::from_fn(rows, 3, |k, j| ((k * (j + 2)) as f64 * 0.37).sin() + j as f64);
        let y = DMatrix::from_fn(rows, 2, |k, j| ((k + j) as f64 * 0.91).cos() * 3.0);
        let ls = least_squares(&x, &y, 0.0).unwrap();
        let r = &x * &ls.theta - &y;
        let proj = x.transpose() * &r;
        assert!(proj.norm() <= 1e-10 * x.norm() * r.norm().max(1.0));
    }

    #[test]
    fn collinear_columns_are_rank_deficient() {
        let x = DMatrix::from_fn(20, 2, |k, _| k as f64);
        let y = DMatrix::from_fn(20, 1, |k, _| k as f64);
        assert!(matches!(least_squares(&x, &y, 0.0), Err(IdentError::RankDeficient { rank: 1, required: 2 })));
        let zero = DMatrix::from_fn(20, 2, |k, j| if j == 0 { k as f64 } else { 0.0 });
        assert!(matches!(least_squares(&zero, &y, 0.0), Err(IdentError::RankDeficient { .. })));
    }

    #[test]
    fn ridge_shrinks_coefficients() {
        let x = DMatrix::from_fn(30, 2, |k, j| ((k * (j + 1)) as f64 * 0.3).sin() + 0.5);
        let y = DMatrix::from_fn(30, 1, |k, _| 2.0 * (k as f64 * 0.3).sin() + 1.0);
        let plain = least_squares(&x, &y, 0.0).unwrap();
        let ridged = least_squares(&x, &y, 10.0).unwrap();
        assert!(ridged.theta.norm() < plain.theta.norm());
    }
}
