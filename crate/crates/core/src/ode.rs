//! Fixed-step explicit integrators.

use crate::error::Result;
use nalgebra::DVector;

/// One classical Runge-Kutta 4 step of `x' = f(t, x)` from `t` to `t + dt`.
pub fn rk4_step<F>(f: &F, t: f64, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_matches_exponential_decay() {
        let f = |_t: f64, x: &DVector<f64>| Ok(-x.clone());
        let mut x = DVector::from_element(1, 1.0);
        let dt = 0.01;
        for _ in 0..100 {
            x = rk4_step(&f, 0.0, &x, dt).unwrap();
        }
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order_on_smooth_rhs() {
        // x' = cos(t) x, exact solution x0 * exp(sin(t))
        let f = |t: f64, x: &DVector<f64>| Ok(x * t.cos());
        let exact = (1.0f64.sin()).exp();
        let mut errs = Vec::new();
        for &n in &[10usize, 20, 40] {
            let dt = 1.0 / n as f64;
            let mut x = DVector::from_element(1, 1.0);
            for k in 0..n {
                x = rk4_step(&f, k as f64 * dt, &x, dt).unwrap();
            }
            errs.push((x[0] - exact).abs());
        }
        let slope = (errs[0] / errs[1]).log2();
        assert!((slope - 4.0).abs() < 0.3, "slope = {slope}");
    }
}
