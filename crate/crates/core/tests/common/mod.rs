//! Plant measurements shared by the oracle tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::PI;

use auv_sysid::excitation::{gen_input_trajectory, ExcitationConfig};
use auv_sysid::plant::{integrate_truth, output_map, truth_rhs, wrap_angle, Integrator};
use auv_sysid::{seed, Input, PlantState, TruthParams};
use rand::Rng;

/// Straight transcription of the 12 equations, state order
/// `px py pz theta psi u w q r duc dqc drc`, params in file order.
pub fn reference_rhs(x: [f64; 12], u: [f64; 3], p: [f64; 13]) -> [f64; 12] {
    let [_, _, _, th, ps, uu, w, q, r, duc, dqc, drc] = x;
    let [xuu, k, muq, mq, bzb, b, nur, c, zww, wb, kdu, kdq, kdr] = p;
    [
        uu * ps.cos() * th.cos() + w * ps.cos() * th.sin(),
        uu * ps.sin() * th.cos() + w * ps.sin() * th.sin(),
        w * th.cos() - uu * th.sin(),
        q,
        r / th.cos(),
        xuu * uu * uu + k * duc,
        zww * w * w.abs() + wb * th.cos(),
        muq * uu * q + mq * q - bzb * th.sin() + b * uu * uu * dqc,
        nur * uu * r + c * uu * uu * drc,
        kdu * (u[0] - duc),
        kdq * (u[1] - dqc),
        kdr * (u[2] - drc),
    ]
}

pub fn params_array(p: &TruthParams) -> [f64; 13] {
    [
        p.x_uu, p.k, p.m_uq, p.m_q, p.bz_b, p.b, p.n_ur, p.c, p.z_wabsw, p.wb, p.k_du, p.k_dq, p.k_dr,
    ]
}

pub fn smooth_start() -> PlantState {
    PlantState {
        theta: 0.2,
        psi: 0.4,
        u: 1.4,
        q: 0.05,
        r: -0.1,
        delta_uc: 0.3,
        delta_qc: -0.2,
        delta_rc: 0.5,
        ..Default::default()
    }
}

pub fn distance(a: &PlantState, b: &PlantState) -> f64 {
    let (a, b) = (a.to_array(), b.to_array());
    (0..12)
        .map(|i| {
            let d = if i == 4 { wrap_angle(a[i] - b[i]) } else { a[i] - b[i] };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Worst relative deviation of `truth_rhs` from the transcription over
/// `n` random states, inputs and parameter vectors.
pub fn rhs_worst_deviation(n: usize, s: u64) -> f64 {
    let mut rng = seed::rng_from(s);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let mut x = [0.0; 12];
        for v in &mut x {
            *v = rng.random_range(-3.0..3.0);
        }
        x[3] = rng.random_range(-1.5..1.5);
        x[4] = rng.random_range(-PI..PI);
        let u = [
            rng.random_range(0.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        let pa: [f64; 13] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let p = TruthParams {
            x_uu: pa[0],
            k: pa[1],
            m_uq: pa[2],
            m_q: pa[3],
            bz_b: pa[4],
            b: pa[5],
            n_ur: pa[6],
            c: pa[7],
            z_wabsw: pa[8],
            wb: pa[9],
            k_du: pa[10],
            k_dq: pa[11],
            k_dr: pa[12],
        };
        assert_eq!(params_array(&p), pa);
        let got = truth_rhs(&PlantState::from_array(x), &Input::from_array(u), &p)
            .unwrap()
            .to_array();
        let want = reference_rhs(x, u, pa);
        for i in 0..12 {
            worst = worst.max((got[i] - want[i]).abs() / want[i].abs().max(1.0));
        }
    }
    worst
}

/// Observed RK4 orders from self-convergence over substeps 1, 2, 4, 8.
pub fn rk4_observed_orders() -> (f64, f64) {
    let p = TruthParams::default();
    let x0 = smooth_start();
    let inputs = vec![Input::new(0.7, 0.4, -0.3); 40];
    let end = |substeps| {
        let integ = Integrator { delta: 0.05, substeps };
        *integrate_truth(&x0, &inputs, &p, &integ, 40).unwrap().last().unwrap()
    };
    let (x1, x2, x4, x8) = (end(1), end(2), end(4), end(8));
    (
        (distance(&x1, &x2) / distance(&x2, &x4)).log2(),
        (distance(&x2, &x4) / distance(&x4, &x8)).log2(),
    )
}

/// Largest deviation of the simulated delay states from the exact
/// first-order response to piecewise-constant commands.
pub fn delay_worst_deviation(n: usize) -> f64 {
    let p = TruthParams::default();
    let integ = Integrator::default();
    let traj = gen_input_trajectory(n, integ.delta, &ExcitationConfig::default(), 77).unwrap();
    let x0 = smooth_start();
    let states = integrate_truth(&x0, &traj.samples, &p, &integ, n).unwrap();
    let gains = p.delay_gains();
    let mut lag = [x0.delta_uc, x0.delta_qc, x0.delta_rc];
    let mut worst = 0.0f64;
    for (k, u) in traj.samples[..n].iter().enumerate() {
        let cmd = u.to_array();
        for c in 0..3 {
            lag[c] = cmd[c] + (lag[c] - cmd[c]) * (-gains[c] * integ.delta).exp();
        }
        let y = output_map(&states[k + 1]).0;
        for c in 0..3 {
            worst = worst.max((y[5 + c] - lag[c]).abs());
        }
    }
    worst
}
