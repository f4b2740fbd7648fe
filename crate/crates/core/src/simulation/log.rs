use std::fmt;
use std::io::{self, Write};

use crate::controller::ControllerOutput;
use crate::fmt_real;
use crate::linalg::{Matrix, Vector};

use super::{ClosedLoopState, Scenario};

/// Per-sample record of a closed-loop run. Every series has one entry per
/// logged grid point.
#[derive(Clone, PartialEq, Default)]
pub struct SimLog {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub x_r: Vec<Vector>,
    pub e: Vec<Vector>,
    pub u: Vec<Vector>,
    pub v: Vec<Vector>,
    pub delta_u: Vec<Vector>,
    pub k_hat_x: Vec<Matrix>,
    pub v_e: Vec<f64>,
    /// Only filled when the true ideal gain is available.
    pub lyapunov_total: Option<Vec<f64>>,
    pub margin_h: Vec<f64>,
    pub sat_flags: Vec<bool>,
    pub phi_e: Vec<f64>,
    pub phi_u: Vec<f64>,
    pub phi_x: Vec<f64>,
}

impl fmt::Debug for SimLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimLog")
            .field("samples", &self.len())
            .field("last_t", &self.times.last())
            .finish_non_exhaustive()
    }
}

impl SimLog {
    pub(crate) fn with_capacity(cap: usize, oracle: bool) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            x: Vec::with_capacity(cap),
            x_r: Vec::with_capacity(cap),
            e: Vec::with_capacity(cap),
            u: Vec::with_capacity(cap),
            v: Vec::with_capacity(cap),
            delta_u: Vec::with_capacity(cap),
            k_hat_x: Vec::with_capacity(cap),
            v_e: Vec::with_capacity(cap),
            lyapunov_total: oracle.then(|| Vec::with_capacity(cap)),
            margin_h: Vec::with_capacity(cap),
            sat_flags: Vec::with_capacity(cap),
            phi_e: Vec::with_capacity(cap),
            phi_u: Vec::with_capacity(cap),
            phi_x: Vec::with_capacity(cap),
        }
    }

    pub(crate) fn push(
        &mut self,
        t: f64,
        state: &ClosedLoopState,
        out: ControllerOutput,
        margin: f64,
        lyapunov: Option<f64>,
        scenario: &Scenario,
    ) {
        let c = &scenario.constraints;
        self.times.push(t);
        self.e.push(&state.x - &state.x_r);
        self.x.push(state.x.clone());
        self.x_r.push(state.x_r.clone());
        self.k_hat_x.push(state.k_hat_x.clone());
        self.u.push(out.u);
        self.v.push(out.v);
        self.delta_u.push(out.delta_u);
        self.sat_flags.push(out.saturated);
        self.v_e.push(out.v_e);
        if let (Some(series), Some(val)) = (self.lyapunov_total.as_mut(), lyapunov) {
            series.push(val);
        }
        self.margin_h.push(margin);
        self.phi_e.push(c.phi_e.value(t));
        self.phi_u.push(c.phi_u.value(t));
        self.phi_x.push(c.phi_x.value(t));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max_k ‖e(t_k)‖/φ_e(t_k)`
    pub fn max_error_ratio(&self) -> f64 {
        self.e
            .iter()
            .zip(&self.phi_e)
            .map(|(e, p)| e.norm() / p)
            .fold(0.0, f64::max)
    }

    /// `max_k ‖u(t_k)‖/φ_u(t_k)`
    pub fn max_input_ratio(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.phi_u)
            .map(|(u, p)| u.norm() / p)
            .fold(0.0, f64::max)
    }

    /// `max_k ‖x(t_k)‖/φ_x(t_k)`
    pub fn max_state_ratio(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.phi_x)
            .map(|(x, p)| x.norm() / p)
            .fold(0.0, f64::max)
    }

    pub fn max_gain_norm(&self) -> f64 {
        self.k_hat_x.iter().map(|k| k.norm()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.x.first().map_or(0, |x| x.len());
        let m = self.u.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=n).map(|i| format!("xr_{i}")));
        header.push("e_norm".into());
        header.push("phi_e".into());
        header.extend((1..=m).map(|i| format!("u_{i}")));
        for col in ["u_norm", "phi_u", "sat", "V_e", "h_m", "k_hat_fro"] {
            header.push(col.into());
        }
        writeln!(w, "{}", header.join(","))?;

        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(fmt_real(self.times[k]));
            row.extend(self.x[k].iter().map(|&v| fmt_real(v)));
            row.extend(self.x_r[k].iter().map(|&v| fmt_real(v)));
            row.push(fmt_real(self.e[k].norm()));
            row.push(fmt_real(self.phi_e[k]));
            row.extend(self.u[k].iter().map(|&v| fmt_real(v)));
            row.push(fmt_real(self.u[k].norm()));
            row.push(fmt_real(self.phi_u[k]));
            row.push(u8::from(self.sat_flags[k]).to_string());
            row.push(fmt_real(self.v_e[k]));
            row.push(fmt_real(self.margin_h[k]));
            row.push(fmt_real(self.k_hat_x[k].norm()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
