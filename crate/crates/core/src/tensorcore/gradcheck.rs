use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

/// Central finite differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    point: &Tensor<T>,
    step: T,
) -> Tensor<T> {
    assert!(step > T::zero(), "finite-difference step must be positive");
    let mut probe = point.clone();
    let two_h = step + step;
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + step;
        let up = f(&probe);
        probe.data_mut()[i] = x0 - step;
        let down = f(&probe);
        probe.data_mut()[i] = x0;
        grad.push((up - down) / two_h);
    }
    Tensor::new(point.shape(), grad).expect("same length as point")
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error<T: Scalar>(a: T, b: T, floor: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::<f64>::new(&[3], vec![0.3, -1.0, 7.0]).unwrap();
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
