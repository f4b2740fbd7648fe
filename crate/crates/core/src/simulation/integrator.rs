use crate::linalg::Vector;

/// Classical fixed-step fourth-order Runge–Kutta with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vector,
    k2: Vector,
    k3: Vector,
    k4: Vector,
    stage: Vector,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: Vector::zeros(dim),
            k2: Vector::zeros(dim),
            k3: Vector::zeros(dim),
            k4: Vector::zeros(dim),
            stage: Vector::zeros(dim),
        }
    }

    /// Advances `y` from `t` to `t + dt`. `f(t, y, dy)` writes the derivative
    /// into `dy`; an error from any stage leaves `y` untouched.
    pub fn step<F, E>(&mut self, mut f: F, t: f64, dt: f64, y: &mut Vector) -> Result<(), E>
    where
        F: FnMut(f64, &Vector, &mut Vector) -> Result<(), E>,
    {
        let half = 0.5 * dt;
        f(t, y, &mut self.k1)?;

        self.stage.copy_from(y);
        self.stage.axpy(half, &self.k1, 1.0);
        f(t + half, &self.stage, &mut self.k2)?;

        self.stage.copy_from(y);
        self.stage.axpy(half, &self.k2, 1.0);
        f(t + half, &self.stage, &mut self.k3)?;

        self.stage.copy_from(y);
        self.stage.axpy(dt, &self.k3, 1.0);
        f(t + dt, &self.stage, &mut self.k4)?;

        let w = dt / 6.0;
        y.axpy(w, &self.k1, 1.0);
        y.axpy(2.0 * w, &self.k2, 1.0);
        y.axpy(2.0 * w, &self.k3, 1.0);
        y.axpy(w, &self.k4, 1.0);
        Ok(())
    }
}
