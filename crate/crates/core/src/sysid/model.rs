use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::IdentError;

/// Serializes a matrix as `{rows, cols, data}` with `data` in row-major order.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Repr { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

mod column {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Discrete tank model `h⁺ = A_d h + B_d1 u + B_d2 d_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDiscreteModel {
    #[serde(with = "row_major")]
    pub a_d: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub b_d1: DMatrix<f64>,
    #[serde(with = "column")]
    pub b_d2: DVector<f64>,
    /// Sampling time in hours.
    pub dt: f64,
    pub n: usize,
    pub m: usize,
}

impl LinearDiscreteModel {
    pub fn new(a_d: DMatrix<f64>, b_d1: DMatrix<f64>, b_d2: DVector<f64>, dt: f64) -> Result<Self, IdentError> {
        let n = a_d.nrows();
        let m = b_d1.ncols();
        if a_d.ncols() != n || b_d1.nrows() != n || b_d2.len() != n {
            return Err(IdentError::Dimension(format!(
                "A_d {}x{}, B_d1 {}x{}, B_d2 {}",
                a_d.nrows(),
                a_d.ncols(),
                b_d1.nrows(),
                b_d1.ncols(),
                b_d2.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(IdentError::Dimension(format!("sampling time {dt} must be positive")));
        }
        if a_d.iter().chain(b_d1.iter()).chain(b_d2.iter()).any(|x| !x.is_finite()) {
            return Err(IdentError::Dimension("model entries must be finite".into()));
        }
        Ok(Self { a_d, b_d1, b_d2, dt, n, m })
    }

    /// One model step.
    pub fn step(&self, h: &[f64], u: &[f64], d: f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut x = self.b_d2[i] * d;
                for j in 0..self.n {
                    x += self.a_d[(i, j)] * h[j];
                }
                for j in 0..self.m {
                    x += self.b_d1[(i, j)] * u[j];
                }
                x
            })
            .collect()
    }

    /// Largest eigenvalue modulus of `A_d`.
    pub fn spectral_radius(&self) -> f64 {
        self.a_d
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Pump outlet head model `p_out = A_p h + B_p u`, with constant inlet heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureModel {
    #[serde(with = "row_major")]
    pub a_p: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub b_p: DMatrix<f64>,
    pub p_in: Vec<f64>,
}

impl PressureModel {
    pub fn new(a_p: DMatrix<f64>, b_p: DMatrix<f64>, p_in: Vec<f64>) -> Result<Self, IdentError> {
        let m = b_p.nrows();
        if b_p.ncols() != m || a_p.nrows() != m || p_in.len() != m {
            return Err(IdentError::Dimension(format!(
                "A_p {}x{}, B_p {}x{}, p_in {}",
                a_p.nrows(),
                a_p.ncols(),
                b_p.nrows(),
                b_p.ncols(),
                p_in.len()
            )));
        }
        if a_p.iter().chain(b_p.iter()).chain(p_in.iter()).any(|x| !x.is_finite()) {
            return Err(IdentError::Dimension("pressure model entries must be finite".into()));
        }
        Ok(Self { a_p, b_p, p_in })
    }

    pub fn outlet(&self, h: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.b_p.nrows())
            .map(|i| {
                let mut p = 0.0;
                for j in 0..self.a_p.ncols() {
                    p += self.a_p[(i, j)] * h[j];
                }
                for j in 0..self.b_p.ncols() {
                    p += self.b_p[(i, j)] * u[j];
                }
                p
            })
            .collect()
    }
}

/// Both identified models, as persisted by the `identify` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModels {
    pub state: LinearDiscreteModel,
    pub pressure: PressureModel,
}

impl IdentifiedModels {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models are always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, IdentError> {
        let models: Self = serde_json::from_str(text)
            .map_err(|e| IdentError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        // Re-run the constructors so dimension checks apply to loaded data.
        let s = &models.state;
        LinearDiscreteModel::new(s.a_d.clone(), s.b_d1.clone(), s.b_d2.clone(), s.dt)?;
        let p = &models.pressure;
        PressureModel::new(p.a_p.clone(), p.b_p.clone(), p.p_in.clone())?;
        if p.a_p.ncols() != s.n || p.b_p.nrows() != s.m {
            return Err(IdentError::Dimension("pressure model does not match state model".into()));
        }
        Ok(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_row_major() {
        let model = LinearDiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 1, &[5.0, 6.0]),
            DVector::from_vec(vec![7.0, 8.0]),
            1.0,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&model).unwrap();
        assert_eq!(v["a_d"]["data"], serde_json::json!([1.0, 2.0, 3.0, 4.0]));
        assert_eq!(v["a_d"]["rows"], 2);
        let back: LinearDiscreteModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn spectral_radius_of_rotation_and_integrator() {
        let rot = LinearDiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            1.0,
        )
        .unwrap();
        assert!((rot.spectral_radius() - 0.5).abs() < 1e-12);
        let integ = LinearDiscreteModel::new(DMatrix::identity(3, 3), DMatrix::zeros(3, 1), DVector::zeros(3), 1.0).unwrap();
        assert!((integ.spectral_radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let err = LinearDiscreteModel::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 1), DVector::zeros(2), 1.0);
        assert!(matches!(err, Err(IdentError::Dimension(_))));
        let bad = r#"{"state":{"a_d":{"rows":1,"cols":1,"data":[1.0,2.0]},"b_d1":{"rows":1,"cols":1,"data":[1.0]},"b_d2":[0.0],"dt":1.0,"n":1,"m":1},"pressure":{"a_p":{"rows":1,"cols":1,"data":[1.0]},"b_p":{"rows":1,"cols":1,"data":[1.0]},"p_in":[0.0]}}"#;
        assert!(IdentifiedModels::from_json(bad).is_err());
    }
}
