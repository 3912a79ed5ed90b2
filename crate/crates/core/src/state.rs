use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Maximum phase-space dimension supported by the systems in this crate.
pub const MAX_DIM: usize = 3;

/// A point in a 1-, 2- or 3-dimensional phase space.
#[derive(Clone, Copy, PartialEq)]
pub struct StateVector {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl StateVector {
    pub fn new(values: &[f64]) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&values.len()),
            "state dimension must be 1..={MAX_DIM}, got {}",
            values.len()
        );
        let mut coords = [0.0; MAX_DIM];
        coords[..values.len()].copy_from_slice(values);
        Self {
            coords,
            dim: values.len(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(&[0.0; MAX_DIM][..dim])
    }

    pub fn x(v: f64) -> Self {
        Self::new(&[v])
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Self::new(&[x, y])
    }

    pub fn xyz(x: f64, y: f64, z: f64) -> Self {
        Self::new(&[x, y, z])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords[..self.dim]
    }

    pub fn norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = *self;
        out.as_mut_slice().iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }
}

impl Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for StateVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.as_mut_slice()[i]
    }
}

impl Add for StateVector {
    type Output = StateVector;
    fn add(self, rhs: StateVector) -> StateVector {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut out = self;
        for (a, b) in out.as_mut_slice().iter_mut().zip(rhs.as_slice()) {
            *a += b;
        }
        out
    }
}

impl Sub for StateVector {
    type Output = StateVector;
    fn sub(self, rhs: StateVector) -> StateVector {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut out = self;
        for (a, b) in out.as_mut_slice().iter_mut().zip(rhs.as_slice()) {
            *a -= b;
        }
        out
    }
}

impl Mul<f64> for StateVector {
    type Output = StateVector;
    fn mul(self, c: f64) -> StateVector {
        self.scale(c)
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl Serialize for StateVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "state dimension must be 1..={MAX_DIM}, got {}",
                v.len()
            )));
        }
        Ok(StateVector::new(&v))
    }
}
