use crate::error::Result;
use crate::numjet::Vector;

/// One classical Runge-Kutta step of `y' = f(t, y)`.
pub fn rk4_step<F>(f: &F, t: f64, y: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(f64, &Vector) -> Result<Vector>,
{
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Number of fixed steps covering a parameter interval of length `span`.
pub fn step_count(steps_per_unit: usize, span: f64) -> usize {
    ((steps_per_unit as f64) * span.abs()).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &Vector| Ok(-y);
        let mut y = Vector::from_element(1, 1.0);
        let h = 1.0 / 64.0;
        for i in 0..64 {
            y = rk4_step(&f, i as f64 * h, &y, h).unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }
}
