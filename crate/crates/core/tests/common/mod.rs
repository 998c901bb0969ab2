//! Oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use obstacle_control::stationarity::ObjectiveSpec;
use obstacle_control::structure::partially_optimal_control;
use obstacle_control::{solve_obstacle, ControlBounds, Grid, GridFn, Obstacle};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense `-Δ_h` on `(0,1)` with `n` interior nodes, built independently of the library.
pub fn dense_neg_laplacian_1d(n: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / (n as f64 + 1.0);
    let k = 1.0 / (h * h);
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 2.0 * k;
        if i > 0 {
            a[i][i - 1] = -k;
        }
        if i + 1 < n {
            a[i][i + 1] = -k;
        }
    }
    a
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Exhaustive search over all `2^n` contact sets for `y >= ψ, λ = L y - u >= 0, λ (y - ψ) = 0`
/// with zero boundary values. Returns `(y, λ)`.
pub fn brute_force_obstacle(u: &[f64], psi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = u.len();
    let l = dense_neg_laplacian_1d(n);
    let tol = 1e-10;
    for set in 0u32..(1 << n) {
        let active = |i: usize| set & (1 << i) != 0;
        let mut a = l.clone();
        let mut b = u.to_vec();
        for i in 0..n {
            if active(i) {
                a[i] = vec![0.0; n];
                a[i][i] = 1.0;
                b[i] = psi[i];
            }
        }
        let y = dense_solve(a, b);
        let lambda: Vec<f64> = (0..n)
            .map(|i| if active(i) { (0..n).map(|j| l[i][j] * y[j]).sum::<f64>() - u[i] } else { 0.0 })
            .collect();
        let feasible = (0..n).all(|i| y[i] >= psi[i] - tol && lambda[i] >= -tol * (1.0 + u[i].abs()));
        if feasible {
            return (y, lambda);
        }
    }
    panic!("no contact set satisfies the complementarity system");
}

/// A few random Fourier modes plus optional nodal noise.
pub fn smooth_random(grid: &Grid, rng: &mut ChaCha8Rng, amp: f64, noise: f64) -> GridFn {
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..6.0), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)))
        .collect();
    let f = GridFn::from_fn(grid, |p| {
        let (x, y) = (p[0], p.get(1).copied().unwrap_or(0.0));
        modes.iter().map(|&(a, k, ph, th)| a * (k * (x * th.cos() + y * th.sin()) + ph).sin()).sum::<f64>() * amp
    });
    let e: Vec<f64> = (0..grid.len()).map(|_| noise * rng.gen_range(-1.0..1.0)).collect();
    f + GridFn::from_values(grid, e).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng) -> Grid {
    match rng.gen_range(0..3) {
        0 => Grid::interval(rng.gen_range(8..200)),
        1 => Grid::square(rng.gen_range(4..24)),
        _ => Grid::radial(rng.gen_range(8..200)),
    }
}

/// Obstacle that forces contact for moderate controls: a random smooth
/// function shifted up so it crosses the Poisson solution of the control.
pub fn random_obstacle(grid: &Grid, rng: &mut ChaCha8Rng) -> Obstacle {
    let base = smooth_random(grid, rng, 0.1, 0.0);
    let lift = rng.gen_range(-0.05..0.1);
    Obstacle::new(base.map(|v| v + lift))
}

/// A strongly stationary point without control bounds, built state-first:
/// pick a contact set and slack, take the partially optimal control, then
/// choose `j` so that the adjoint equation holds with a random admissible `η̄`.
pub fn stationary_instance(rng: &mut ChaCha8Rng) -> (ObjectiveSpec, GridFn, Obstacle, ControlBounds) {
    let grid = Grid::interval(rng.gen_range(15..80));
    let n = grid.len();
    let psi = Obstacle::new(smooth_random(&grid, rng, 0.2, 0.0));
    let (a, b) = {
        let a = rng.gen_range(0..n);
        (a, (a + rng.gen_range(1..n / 2)).min(n))
    };
    let slack: Vec<f64> = (0..n).map(|i| if i >= a && i < b { 0.0 } else { rng.gen_range(0.01..0.3) }).collect();
    let y = psi.values() + &GridFn::from_values(&grid, slack).unwrap();
    let ly = GridFn::from_values(&grid, y.values().to_vec()).unwrap().laplacian().map(|v| -v);
    // u = -Δ_h y on the free nodes; the partially optimal control on contact nodes
    let u_bar = GridFn::from_values(
        &grid,
        (0..n).map(|i| if i >= a && i < b { ly.values()[i].min(0.0) } else { ly.values()[i] }).collect(),
    )
    .unwrap();
    let state = solve_obstacle(&u_bar, &psi).unwrap();
    let u_bar = partially_optimal_control(&state);
    let alpha = rng.gen_range(0.1..2.0);
    let mu = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..2.0) };
    let p = u_bar.map(|v| -alpha * v);
    let lp = p.laplacian().map(|v| -v);
    let eta: Vec<f64> = (0..n)
        .map(|i| match state.class[i] {
            obstacle_control::vi::NodeClass::Inactive => 0.0,
            obstacle_control::vi::NodeClass::Biactive => rng.gen_range(0.0..1.0),
            obstacle_control::vi::NodeClass::StrictlyActive => rng.gen_range(-1.0..1.0),
        })
        .collect();
    let y_d = smooth_random(&grid, rng, 0.1, 0.0);
    // j'(ȳ) = -Δ_h p̄ + η̄ = mu (ȳ - y_D) + g
    let jp = &lp + &GridFn::from_values(&grid, eta).unwrap();
    let g = &jp - &(mu * &(&state.y - &y_d));
    let spec = ObjectiveSpec::new(mu, y_d, g, alpha).unwrap();
    (spec, u_bar, psi, ControlBounds::unbounded(&grid))
}
