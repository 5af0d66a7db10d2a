//! Network, projection and optimizer checks against independent oracles.

use auv_sysid::ndiff::{
    project_matrix, project_spectrum, singular_values, Activation, AdamWConfig, AdamWState, Mlp, SpectralBounds,
};
use auv_sysid::seed;
use rand::Rng;

/// Scalar-by-scalar forward pass reading the flat parameter layout directly.
fn naive_forward(dims: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    let last = dims.len() - 2;
    for l in 0..dims.len() - 1 {
        let (nin, nout) = (dims[l], dims[l + 1]);
        let mut next = vec![0.0; nout];
        for o in 0..nout {
            let mut s = params[off + nout * nin + o];
            for i in 0..nin {
                s += params[off + o * nin + i] * a[i];
            }
            next[o] = if l == last { s } else { s.tanh() };
        }
        off += nout * nin + nout;
        a = next;
    }
    a
}

fn random_net(dims: &[usize], s: u64) -> Mlp {
    Mlp::init_uniform(dims, Activation::Tanh, &mut seed::rng_from(s)).unwrap()
}

#[test]
fn forward_matches_scalar_reevaluation() {
    let mut rng = seed::rng_from(5);
    for (k, dims) in [vec![11, 7, 5, 8], vec![3, 1], vec![11, 128, 128, 8]]
        .iter()
        .enumerate()
    {
        let net = random_net(dims, k as u64);
        for _ in 0..20 {
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = net.eval(&x);
            let want = naive_forward(dims, net.params(), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

#[test]
fn backward_matches_central_differences() {
    let dims = [5, 9, 6, 4];
    let net = random_net(&dims, 11);
    let mut rng = seed::rng_from(12);
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |n: &Mlp, x: &[f64]| n.eval(x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

    let mut cache = vec![0.0; net.cache_len()];
    net.forward(&x, &mut cache);
    let mut grads = vec![0.0; net.n_params()];
    let mut dx = vec![0.0; 5];
    net.backward(&cache, &w, &mut grads, &mut dx);

    let h = 1e-6;
    for i in 0..net.n_params() {
        let mut p = net.clone();
        p.params_mut()[i] += h;
        let mut m = net.clone();
        m.params_mut()[i] -= h;
        let fd = (objective(&p, &x) - objective(&m, &x)) / (2.0 * h);
        assert!(rel_err(fd, grads[i]) < 1e-6, "param {i}: fd {fd} vs {}", grads[i]);
    }
    for i in 0..5 {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
        assert!(rel_err(fd, dx[i]) < 1e-6, "input {i}: fd {fd} vs {}", dx[i]);
    }
}

/// One-sided Jacobi SVD; returns singular values in descending order.
fn jacobi_singular_values(rows: usize, cols: usize, w: &[f64]) -> Vec<f64> {
    let (m, n) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut a = vec![0.0; m * n];
    for r in 0..rows {
        for c in 0..cols {
            if rows >= cols {
                a[r * n + c] = w[r * cols + c];
            } else {
                a[c * n + r] = w[r * cols + c];
            }
        }
    }
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += a[i * n + p] * a[i * n + p];
                    beta += a[i * n + q] * a[i * n + q];
                    gamma += a[i * n + p] * a[i * n + q];
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (ap, aq) = (a[i * n + p], a[i * n + q]);
                    a[i * n + p] = c * ap - s * aq;
                    a[i * n + q] = s * ap + c * aq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| a[i * n + j].powi(2)).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

#[test]
fn jacobi_oracle_sanity() {
    // diag(3, 2) padded into a 3x2 matrix.
    let sv = jacobi_singular_values(3, 2, &[0.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
    assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);
}

#[test]
fn projection_clamps_oracle_singular_values() {
    let mut rng = seed::rng_from(99);
    let bounds = SpectralBounds::new(0.5, 1.0).unwrap();
    for &(r, c) in &[(6, 4), (4, 6), (11, 11), (8, 30), (30, 11)] {
        let mut w: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect();
        let before = jacobi_singular_values(r, c, &w);
        let changed = project_matrix(r, c, &mut w, &bounds, 0).unwrap();
        assert!(changed);
        let after = jacobi_singular_values(r, c, &w);
        for (b, a) in before.iter().zip(&after) {
            let want = b.clamp(0.5, 1.0);
            assert!((a - want).abs() < 1e-10, "{r}x{c}: {a} vs clamp({b})");
        }
    }
}

#[test]
fn projection_leaves_feasible_matrix_untouched() {
    let bounds = SpectralBounds::new(0.0, 1.0).unwrap();
    let mut w = vec![0.5, 0.0, 0.0, -0.25];
    let orig = w.clone();
    assert!(!project_matrix(2, 2, &mut w, &bounds, 0).unwrap());
    assert_eq!(w, orig);
}

#[test]
fn network_projection_matches_oracle_per_layer() {
    let dims = [11, 32, 32, 8];
    let mut net = random_net(&dims, 3);
    for v in net.params_mut() {
        *v *= 4.0;
    }
    let bounds = SpectralBounds::new(0.5, 1.0).unwrap();
    project_spectrum(&mut net, &bounds).unwrap();
    let svs = singular_values(&net).unwrap();
    for l in 0..net.n_layers() {
        let (w, _) = net.layer(l);
        let oracle = jacobi_singular_values(dims[l + 1], dims[l], w);
        for (a, b) in svs[l].iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
            assert!(bounds.contains(*b, 1e-9));
        }
    }
}

#[test]
fn adamw_first_step_closed_form() {
    let cfg = AdamWConfig {
        lr: 0.1,
        weight_decay: 0.2,
        ..Default::default()
    };
    let mut opt = AdamWState::new(cfg, 3);
    let mut p = vec![1.0, -2.0, 0.5];
    let g = [0.3, -4.0, 0.0];
    opt.step(&mut p, &g).unwrap();
    // m_hat = g and v_hat = g^2 after bias correction.
    let want: Vec<f64> = [1.0f64, -2.0, 0.5]
        .iter()
        .zip(&g)
        .map(|(p0, gi)| p0 * (1.0 - 0.1 * 0.2) - 0.1 * gi / (gi.abs() + 1e-8))
        .collect();
    for (a, b) in p.iter().zip(&want) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
}

#[test]
fn adamw_minimizes_a_quadratic() {
    let target = [3.0, -1.5, 0.25, 10.0];
    let mut opt = AdamWState::new(
        AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        },
        4,
    );
    let mut p = vec![0.0; 4];
    for _ in 0..5000 {
        let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
        opt.step(&mut p, &g).unwrap();
    }
    for (x, t) in p.iter().zip(&target) {
        assert!((x - t).abs() < 1e-3, "{x} vs {t}");
    }
}
