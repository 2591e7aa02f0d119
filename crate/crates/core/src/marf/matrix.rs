use std::borrow::Cow;
use std::ops::Deref;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
}

impl Matrix {
    /// Panics if `re.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, re: Vec<f64>) -> Self {
        assert_eq!(
            re.len(),
            rows * cols,
            "matrix data does not match its shape"
        );
        Self { rows, cols, re }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            re: values,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn into_re(self) -> Vec<f64> {
        self.re
    }
}

/// A matrix with an imaginary plane of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    real: Matrix,
    im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn new(real: Matrix, im: Vec<f64>) -> Self {
        assert_eq!(
            im.len(),
            real.re.len(),
            "imaginary plane does not match shape"
        );
        Self { real, im }
    }

    /// Real values with a zero imaginary plane.
    pub fn from_real(real: Matrix) -> Self {
        let im = vec![0.0; real.re.len()];
        Self { real, im }
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.real.re, &mut self.im)
    }

    pub fn into_planes(self) -> (Vec<f64>, Vec<f64>) {
        (self.real.re, self.im)
    }
}

impl Deref for ComplexMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.real
    }
}

/// Promotion to complex form. Complex matrices return themselves; real
/// ones are copied into a complex matrix with a zero imaginary plane.
pub trait ToComplex {
    fn to_complex(&self) -> Cow<'_, ComplexMatrix>;
}

impl ToComplex for Matrix {
    fn to_complex(&self) -> Cow<'_, ComplexMatrix> {
        Cow::Owned(ComplexMatrix::from_real(self.clone()))
    }
}

impl ToComplex for ComplexMatrix {
    fn to_complex(&self) -> Cow<'_, ComplexMatrix> {
        Cow::Borrowed(self)
    }
}

pub fn to_complex(m: &dyn ToComplex) -> Cow<'_, ComplexMatrix> {
    m.to_complex()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_matrix_gains_zero_imaginary_plane() {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let c = to_complex(&m);
        assert_eq!(c.re(), m.re());
        assert_eq!((c.rows(), c.cols()), (2, 2));
        assert!(c.im().iter().all(|x| *x == 0.0));
        assert!(matches!(c, Cow::Owned(_)));
    }

    #[test]
    fn complex_matrix_is_returned_as_is() {
        let c = ComplexMatrix::new(Matrix::row(vec![1.0, 2.0]), vec![3.0, 4.0]);
        let promoted = to_complex(&c);
        assert!(std::ptr::eq(&*promoted, &c));
    }

    #[test]
    fn empty_matrix() {
        let m = Matrix::zeros(0, 0);
        let c = to_complex(&m);
        assert_eq!((c.rows(), c.cols()), (0, 0));
        assert!(c.im().is_empty());
    }

    #[test]
    fn promotion_is_idempotent() {
        let m = Matrix::new(1, 3, vec![0.5, -1.0, 2.0]);
        let once = to_complex(&m).into_owned();
        let twice = to_complex(&once).into_owned();
        assert_eq!(once, twice);
    }
}
