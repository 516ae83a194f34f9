use super::tensor::{Scalar, Tensor};

/// Central finite differences: `(f(x + h*e_i) - f(x - h*e_i)) / (2h)` per
/// coordinate. The oracle that every analytic gradient in this crate is
/// checked against; run it in `f64`.
pub fn finite_diff_grad<T: Scalar>(f: impl Fn(&Tensor<T>) -> T, x: &Tensor<T>, h: f64) -> Tensor<T> {
    let step = T::from_f64_c(h);
    let two = T::from_f64_c(2.0);
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (two * step);
    }
    grad
}
