use super::NnError;
use crate::scalar::Scalar;

/// Fixed affine input normalization `(x - shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prescaler<T> {
    shift: Vec<T>,
    scale: Vec<T>,
}

impl<T: Scalar> Prescaler<T> {
    pub fn new(shift: Vec<T>, scale: Vec<T>) -> Result<Self, NnError> {
        if shift.len() != scale.len() {
            return Err(NnError::DimensionMismatch {
                expected: shift.len(),
                got: scale.len(),
            });
        }
        if let Some(bad) = scale.iter().find(|s| !(**s > T::zero()) || !s.is_finite()) {
            return Err(NnError::InvalidPrescaler(format!(
                "scale entries must be finite and strictly positive, got {bad}"
            )));
        }
        Ok(Self { shift, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![T::zero(); dim],
            scale: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[T] {
        &self.shift
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }

    /// Scales a single coordinate.
    #[inline]
    pub fn apply_at(&self, i: usize, x: T) -> T {
        (x - self.shift[i]) / self.scale[i]
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        self.check(x)?;
        Ok(x.iter().enumerate().map(|(i, &v)| self.apply_at(i, v)).collect())
    }

    pub fn invert(&self, z: &[T]) -> Result<Vec<T>, NnError> {
        self.check(z)?;
        Ok(z
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&s, &k))| v * k + s)
            .collect())
    }

    fn check(&self, x: &[T]) -> Result<(), NnError> {
        if x.len() != self.dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

pub fn prescale<T: Scalar>(x: &[T], p: &Prescaler<T>) -> Result<Vec<T>, NnError> {
    p.apply(x)
}
