//! Generators for the synthetic chaotic benchmark series.
//!
//! Each returns the first state coordinate after discarding a transient.

/// Henon map `x' = 1 - a x^2 + y`, `y' = b x` with `a = 1.4`, `b = 0.3`.
pub fn henon(n: usize, transient: usize) -> Vec<f64> {
    let (a, b) = (1.4, 0.3);
    let (mut x, mut y) = (0.1, 0.1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n + transient {
        let nx = 1.0 - a * x * x + y;
        y = b * x;
        x = nx;
        if i >= transient {
            out.push(x);
        }
    }
    out
}

fn rk4<const N: usize>(state: &mut [f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) {
    let add = |s: &[f64; N], k: &[f64; N], h: f64| {
        let mut o = *s;
        for i in 0..N {
            o[i] += h * k[i];
        }
        o
    };
    let k1 = f(state);
    let k2 = f(&add(state, &k1, dt / 2.0));
    let k3 = f(&add(state, &k2, dt / 2.0));
    let k4 = f(&add(state, &k3, dt));
    for i in 0..N {
        state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Sample an ODE every `every` RK4 steps of size `dt`.
fn integrate<const N: usize>(
    mut state: [f64; N],
    n: usize,
    transient: usize,
    dt: f64,
    every: usize,
    f: impl Fn(&[f64; N]) -> [f64; N],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n + transient {
        for _ in 0..every {
            rk4(&mut state, dt, &f);
        }
        if i >= transient {
            out.push(state[0]);
        }
    }
    out
}

/// Lorenz system with `sigma = 10`, `rho = 28`, `beta = 8/3`, sampled every 0.02.
pub fn lorenz(n: usize, transient: usize) -> Vec<f64> {
    let (s, r, b) = (10.0, 28.0, 8.0 / 3.0);
    integrate([1.0, 1.0, 1.0], n, transient, 0.01, 2, |v| {
        [s * (v[1] - v[0]), v[0] * (r - v[2]) - v[1], v[0] * v[1] - b * v[2]]
    })
}

/// Rossler system with `a = b = 0.2`, `c = 5.7`, sampled every 0.1.
pub fn rossler(n: usize, transient: usize) -> Vec<f64> {
    let (a, b, c) = (0.2, 0.2, 5.7);
    integrate([1.0, 1.0, 1.0], n, transient, 0.01, 10, |v| [-v[1] - v[2], v[0] + a * v[1], b + v[2] * (v[0] - c)])
}

/// Mackey-Glass delay equation `dx/dt = 0.2 x(t-17) / (1 + x(t-17)^10) - 0.1 x`,
/// Euler steps of 0.1, sampled every unit of time.
pub fn mackey_glass(n: usize, transient: usize) -> Vec<f64> {
    let (beta, gamma, power, tau) = (0.2, 0.1, 10, 17.0);
    let dt = 0.1;
    let per_unit = 10;
    let delay = (tau / dt) as usize;
    let mut hist = vec![1.2; delay + 1];
    let mut out = Vec::with_capacity(n);
    for i in 0..n + transient {
        for _ in 0..per_unit {
            let x = *hist.last().expect("non-empty");
            let lagged = hist[hist.len() - 1 - delay];
            let dx = beta * lagged / (1.0 + f64::powi(lagged, power)) - gamma * x;
            hist.push(x + dt * dx);
        }
        if i >= transient {
            out.push(*hist.last().expect("non-empty"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn henon_first_iterates() {
        let s = henon(3, 0);
        assert!((s[0] - (1.0 - 1.4 * 0.01 + 0.1)).abs() < 1e-15);
        let x1 = s[0];
        assert!((s[1] - (1.0 - 1.4 * x1 * x1 + 0.03)).abs() < 1e-15);
    }

    #[test]
    fn attractors_stay_bounded() {
        assert!(henon(1000, 100).iter().all(|v| v.abs() < 1.5));
        assert!(lorenz(1000, 100).iter().all(|v| v.abs() < 25.0));
        assert!(rossler(1000, 100).iter().all(|v| v.abs() < 15.0));
        assert!(mackey_glass(1000, 100).iter().all(|v| (0.0..1.6).contains(v)));
    }

    #[test]
    fn series_are_not_constant() {
        for s in [henon(200, 10), lorenz(200, 10), rossler(200, 10), mackey_glass(200, 10)] {
            let (min, max) = s.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            assert!(max - min > 0.1);
        }
    }
}
