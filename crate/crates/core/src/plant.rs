//! Ground-truth AUV dynamics.
//!
//! Twelve states: inertial position, pitch and yaw, body-frame surge/heave
//! velocities and pitch/yaw rates, and three first-order-lag actuator states
//! that track the commanded thrust, elevator and rudder.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singularity guard for `psi_dot = r / cos(theta)`.
pub const COS_THETA_EPS: f64 = 1e-9;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub theta: f64,
    pub psi: f64,
    pub u: f64,
    pub w: f64,
    pub q: f64,
    pub r: f64,
    pub delta_uc: f64,
    pub delta_qc: f64,
    pub delta_rc: f64,
}

impl PlantState {
    pub const DIM: usize = 12;

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.p_x,
            self.p_y,
            self.p_z,
            self.theta,
            self.psi,
            self.u,
            self.w,
            self.q,
            self.r,
            self.delta_uc,
            self.delta_qc,
            self.delta_rc,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        Self {
            p_x: a[0],
            p_y: a[1],
            p_z: a[2],
            theta: a[3],
            psi: a[4],
            u: a[5],
            w: a[6],
            q: a[7],
            r: a[8],
            delta_uc: a[9],
            delta_qc: a[10],
            delta_rc: a[11],
        }
    }

    /// Places a measured output back into a state, zeros in unmeasured slots.
    pub fn lift(y: &Output) -> Self {
        Self {
            theta: y.0[Output::THETA],
            psi: y.0[Output::PSI],
            u: y.0[Output::U],
            q: y.0[Output::Q],
            r: y.0[Output::R],
            delta_uc: y.0[Output::DELTA_UC],
            delta_qc: y.0[Output::DELTA_QC],
            delta_rc: y.0[Output::DELTA_RC],
            ..Self::default()
        }
    }

    fn axpy(&self, h: f64, d: &PlantState) -> PlantState {
        let a = self.to_array();
        let b = d.to_array();
        PlantState::from_array(std::array::from_fn(|i| a[i] + h * b[i]))
    }
}

/// Normalized actuator command in `[0,1] x [-1,1] x [-1,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Input {
    pub delta_u: f64,
    pub delta_q: f64,
    pub delta_r: f64,
}

impl Input {
    pub const DIM: usize = 3;
    pub const LOWER: [f64; 3] = [0.0, -1.0, -1.0];
    pub const UPPER: [f64; 3] = [1.0, 1.0, 1.0];

    pub fn new(delta_u: f64, delta_q: f64, delta_r: f64) -> Self {
        Self {
            delta_u,
            delta_q,
            delta_r,
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.delta_u, self.delta_q, self.delta_r]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn in_box(&self) -> bool {
        self.to_array()
            .iter()
            .enumerate()
            .all(|(i, &v)| v >= Self::LOWER[i] && v <= Self::UPPER[i])
    }
}

/// Measurable output, ordered `theta, psi, u, q, r, delta_uc, delta_qc, delta_rc`.
///
/// All constraint and normalization indexing relies on this ordering.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Output(pub [f64; 8]);

impl Output {
    pub const DIM: usize = 8;
    pub const THETA: usize = 0;
    pub const PSI: usize = 1;
    pub const U: usize = 2;
    pub const Q: usize = 3;
    pub const R: usize = 4;
    pub const DELTA_UC: usize = 5;
    pub const DELTA_QC: usize = 6;
    pub const DELTA_RC: usize = 7;

    pub const NAMES: [&'static str; 8] = ["theta", "psi", "u", "q", "r", "duc", "dqc", "drc"];

    /// Membership in the admissible output set (psi unconstrained on the circle).
    pub fn in_admissible_set(&self) -> bool {
        let z = &self.0;
        z[Self::THETA].abs() <= PI / 2.0
            && (0.0..=1.0).contains(&z[Self::DELTA_UC])
            && (-1.0..=1.0).contains(&z[Self::DELTA_QC])
            && (-1.0..=1.0).contains(&z[Self::DELTA_RC])
            && z.iter().all(|v| v.is_finite())
    }
}

/// Hydrodynamic coefficients of the truth plant.
///
/// The shipped defaults are synthetic but physically signed: negative drag
/// and damping, positive control effectiveness, restoring pitch moment.
/// Delay gains use the convergent orientation `d/dt delta_c = K (delta - delta_c)`
/// with `K > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthParams {
    #[serde(rename = "X_uu")]
    pub x_uu: f64,
    pub k: f64,
    #[serde(rename = "M_uq")]
    pub m_uq: f64,
    #[serde(rename = "M_q")]
    pub m_q: f64,
    #[serde(rename = "B_zB")]
    pub bz_b: f64,
    pub b: f64,
    #[serde(rename = "N_ur")]
    pub n_ur: f64,
    pub c: f64,
    #[serde(rename = "Z_wabsw")]
    pub z_wabsw: f64,
    #[serde(rename = "WB")]
    pub wb: f64,
    #[serde(rename = "K_du")]
    pub k_du: f64,
    #[serde(rename = "K_dq")]
    pub k_dq: f64,
    #[serde(rename = "K_dr")]
    pub k_dr: f64,
}

impl Default for TruthParams {
    fn default() -> Self {
        Self {
            x_uu: -0.4,
            k: 1.0,
            m_uq: -0.6,
            m_q: -1.2,
            bz_b: 2.0,
            b: 0.25,
            n_ur: -0.8,
            c: 0.3,
            z_wabsw: -2.0,
            wb: 0.0,
            k_du: 10.0,
            k_dq: 10.0,
            k_dr: 10.0,
        }
    }
}

impl TruthParams {
    pub const MU_NAMES: [&'static str; 8] = ["X_uu", "k", "M_uq", "M_q", "B_zB", "b", "N_ur", "c"];

    /// All coefficients zero: every derivative vanishes except pure kinematics.
    pub fn zeros() -> Self {
        Self {
            x_uu: 0.0,
            k: 0.0,
            m_uq: 0.0,
            m_q: 0.0,
            bz_b: 0.0,
            b: 0.0,
            n_ur: 0.0,
            c: 0.0,
            z_wabsw: 0.0,
            wb: 0.0,
            k_du: 0.0,
            k_dq: 0.0,
            k_dr: 0.0,
        }
    }

    /// The 8 identifiable hydrodynamic coefficients, in canonical order.
    pub fn mu(&self) -> [f64; 8] {
        [
            self.x_uu, self.k, self.m_uq, self.m_q, self.bz_b, self.b, self.n_ur, self.c,
        ]
    }

    pub fn delay_gains(&self) -> [f64; 3] {
        [self.k_du, self.k_dq, self.k_dr]
    }

    /// Checks the physical-sign invariants used throughout the pipeline.
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("X_uu", self.x_uu),
            ("k", self.k),
            ("M_uq", self.m_uq),
            ("M_q", self.m_q),
            ("B_zB", self.bz_b),
            ("b", self.b),
            ("N_ur", self.n_ur),
            ("c", self.c),
            ("Z_wabsw", self.z_wabsw),
            ("WB", self.wb),
            ("K_du", self.k_du),
            ("K_dq", self.k_dq),
            ("K_dr", self.k_dr),
        ];
        for (key, v) in all {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        if self.x_uu >= 0.0 {
            return Err(Error::config("X_uu", "surge drag must be strictly negative"));
        }
        if self.z_wabsw >= 0.0 {
            return Err(Error::config("Z_wabsw", "heave drag must be strictly negative"));
        }
        if self.k <= 0.0 {
            return Err(Error::config("k", "thrust gain must be strictly positive"));
        }
        for (key, v) in [("K_du", self.k_du), ("K_dq", self.k_dq), ("K_dr", self.k_dr)] {
            if v <= 0.0 {
                return Err(Error::config(
                    key,
                    "delay gain must be positive (lag is d/dt delta_c = K (delta - delta_c))",
                ));
            }
        }
        Ok(())
    }
}

pub fn check_pitch(theta: f64) -> Result<f64> {
    let cos_theta = theta.cos();
    if cos_theta.abs() <= COS_THETA_EPS {
        return Err(Error::Singularity { theta, cos_theta });
    }
    Ok(cos_theta)
}

/// Time derivative of the 12-state truth model.
///
/// The hydrodynamic rows are driven by the delayed commands, the delay rows
/// track the raw input.
pub fn truth_rhs(x: &PlantState, u: &Input, p: &TruthParams) -> Result<PlantState> {
    let cos_theta = check_pitch(x.theta)?;
    let sin_theta = x.theta.sin();
    let (sin_psi, cos_psi) = x.psi.sin_cos();
    let uu = x.u * x.u;
    Ok(PlantState {
        p_x: x.u * cos_psi * cos_theta + x.w * cos_psi * sin_theta,
        p_y: x.u * sin_psi * cos_theta + x.w * sin_psi * sin_theta,
        p_z: x.w * cos_theta - x.u * sin_theta,
        theta: x.q,
        psi: x.r / cos_theta,
        u: p.x_uu * uu + p.k * x.delta_uc,
        w: p.z_wabsw * x.w * x.w.abs() + p.wb * cos_theta,
        q: p.m_uq * x.u * x.q + p.m_q * x.q - p.bz_b * sin_theta + p.b * uu * x.delta_qc,
        r: p.n_ur * x.u * x.r + p.c * uu * x.delta_rc,
        delta_uc: p.k_du * (u.delta_u - x.delta_uc),
        delta_qc: p.k_dq * (u.delta_q - x.delta_qc),
        delta_rc: p.k_dr * (u.delta_r - x.delta_rc),
    })
}

pub fn output_map(x: &PlantState) -> Output {
    Output([x.theta, x.psi, x.u, x.q, x.r, x.delta_uc, x.delta_qc, x.delta_rc])
}

/// Fixed-step RK4 integrator settings for the truth plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    /// Sample spacing in seconds.
    pub delta: f64,
    /// RK4 steps per sample interval.
    pub substeps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            delta: 0.01,
            substeps: 4,
        }
    }
}

fn rk4_step(x: &PlantState, u: &Input, p: &TruthParams, h: f64) -> Result<PlantState> {
    let k1 = truth_rhs(x, u, p)?;
    let k2 = truth_rhs(&x.axpy(0.5 * h, &k1), u, p)?;
    let k3 = truth_rhs(&x.axpy(0.5 * h, &k2), u, p)?;
    let k4 = truth_rhs(&x.axpy(h, &k3), u, p)?;
    let (a, d1, d2, d3, d4) = (x.to_array(), k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
    let mut next = PlantState::from_array(std::array::from_fn(|i| {
        a[i] + h / 6.0 * (d1[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i])
    }));
    next.psi = wrap_angle(next.psi);
    Ok(next)
}

/// Integrates the truth plant over `n` sample intervals.
///
/// The input is held constant over each interval (`inputs[k]` on
/// `[k delta, (k+1) delta)`); `inputs` must hold at least `n` samples.
/// Returns `n + 1` states including `x0`.
pub fn integrate_truth(
    x0: &PlantState,
    inputs: &[Input],
    p: &TruthParams,
    integ: &Integrator,
    n: usize,
) -> Result<Vec<PlantState>> {
    if !(integ.delta > 0.0) || integ.substeps == 0 {
        return Err(Error::config("delta", "sample time and substeps must be positive"));
    }
    if inputs.len() < n {
        return Err(Error::Shape(format!(
            "input trajectory has {} samples, need {n}",
            inputs.len()
        )));
    }
    let h = integ.delta / integ.substeps as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut x = *x0;
    x.psi = wrap_angle(x.psi);
    out.push(x);
    for u in &inputs[..n] {
        for _ in 0..integ.substeps {
            x = rk4_step(&x, u, p, h)?;
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
        for k in -20..20 {
            let w = wrap_angle(0.1 * k as f64 * 7.3);
            assert!(w > -PI && w <= PI);
        }
    }

    #[test]
    fn zero_state_zero_derivative() {
        let d = truth_rhs(&PlantState::default(), &Input::default(), &TruthParams::default()).unwrap();
        assert_eq!(d.to_array(), [0.0; 12]);
    }

    #[test]
    fn straight_surge_kinematics() {
        let p = TruthParams::default();
        let x = PlantState {
            u: 1.0,
            ..Default::default()
        };
        let d = truth_rhs(&x, &Input::default(), &p).unwrap();
        assert_eq!(d.p_x, 1.0);
        assert_eq!(d.p_y, 0.0);
        assert_eq!(d.p_z, 0.0);
        assert_eq!(d.u, p.x_uu * 1.0 + p.k * 0.0);
    }

    #[test]
    fn singularity_is_an_error() {
        let x = PlantState {
            theta: PI / 2.0,
            ..Default::default()
        };
        let err = truth_rhs(&x, &Input::default(), &TruthParams::default()).unwrap_err();
        assert!(matches!(err, Error::Singularity { .. }));
    }

    #[test]
    fn output_projection() {
        assert_eq!(output_map(&PlantState::default()).0, [0.0; 8]);
        let x = PlantState {
            p_x: 5.0,
            theta: 0.1,
            ..Default::default()
        };
        let y = output_map(&x);
        assert_eq!(y.0[Output::THETA], 0.1);
        assert!(!y.0.contains(&5.0));
        let y = Output([0.1, -2.0, 1.5, 0.01, -0.02, 0.5, -0.5, 0.25]);
        assert_eq!(output_map(&PlantState::lift(&y)), y);
    }

    #[test]
    fn zero_dynamics_constant_trajectory() {
        let x0 = PlantState {
            theta: 0.2,
            psi: 1.0,
            delta_uc: 0.3,
            ..Default::default()
        };
        let inputs = vec![Input::new(0.9, 0.3, -0.4); 20];
        let traj = integrate_truth(&x0, &inputs, &TruthParams::zeros(), &Integrator::default(), 20).unwrap();
        assert_eq!(traj.len(), 21);
        assert!(traj.iter().all(|s| *s == x0));
    }

    #[test]
    fn validate_rejects_divergent_delay_gain() {
        let p = TruthParams {
            k_du: -10.0,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config { key, .. }) if key == "K_du"));
        TruthParams::default().validate().unwrap();
    }

    #[test]
    fn heave_stays_zero_when_trimmed() {
        let x0 = PlantState {
            u: 1.5,
            theta: 0.3,
            q: 0.1,
            ..Default::default()
        };
        let inputs = vec![Input::new(0.7, 0.5, -0.5); 200];
        let traj = integrate_truth(&x0, &inputs, &TruthParams::default(), &Integrator::default(), 200).unwrap();
        assert!(traj.iter().all(|s| s.w == 0.0));
    }
}
