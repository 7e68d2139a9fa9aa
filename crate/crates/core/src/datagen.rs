//! Synthetic data sources: random stable linear systems and a classical
//! multi-machine swing-equation network, plus RK4 and snapshot-pair helpers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral;

/// PMU-style sampling period in seconds.
pub const DEFAULT_DT: f64 = 0.01;

/// Discrete-time linear system `x⁺ = A·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a_matrix: DMatrix<f64>,
    pub dt: f64,
    /// Spectrum of `A`, sorted by descending magnitude.
    pub true_eigenvalues: Vec<Complex64>,
}

impl LinearSystem {
    pub fn new(a_matrix: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        let true_eigenvalues = spectral::eigenvalues(&a_matrix)?;
        Ok(LinearSystem {
            a_matrix,
            dt,
            true_eigenvalues,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.true_eigenvalues.first().map_or(0.0, |l| l.norm())
    }
}

/// Gaussian random `n × n` matrix rescaled to the requested spectral radius.
pub fn random_stable_linear(n: usize, spectral_radius: f64, seed: u64) -> Result<LinearSystem> {
    if n == 0 {
        return Err(Error::invalid("system dimension must be at least 1"));
    }
    if !(spectral_radius > 0.0 && spectral_radius < 1.0) {
        return Err(Error::invalid(format!(
            "spectral radius must lie in (0, 1), got {spectral_radius}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // Two passes absorb the rounding of the first rescale.
    for _ in 0..2 {
        let radius = spectral::eigenvalues(&a)?[0].norm();
        if !(radius > 0.0) {
            return Err(Error::numerical("random matrix has zero spectral radius"));
        }
        a *= spectral_radius / radius;
    }
    LinearSystem::new(a, DEFAULT_DT)
}

/// Seeded initial condition with entries uniform in `[−scale, scale]`.
pub fn random_state(n: usize, scale: f64, seed: u64) -> Result<DVector<f64>> {
    if n == 0 {
        return Err(Error::invalid("state dimension must be at least 1"));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::invalid(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DVector::from_fn(n, |_, _| {
        scale * rng.random_range(-1.0..=1.0)
    }))
}

/// `x_{t+1} = A·x_t + w_t` with `w_t ~ N(0, noise_std²)`; column 0 is `x0`.
pub fn simulate_linear(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    steps: usize,
    noise_std: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::invalid(format!(
            "x0 has dimension {}, system has {n}",
            x0.len()
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid("noise_std must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut traj = DMatrix::zeros(n, steps + 1);
    traj.set_column(0, x0);
    for t in 0..steps {
        let mut next = &sys.a_matrix * traj.column(t);
        if noise_std > 0.0 {
            for v in next.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        traj.set_column(t + 1, &next);
    }
    Ok(traj)
}

/// Snapshot pairs from repeated perturbations of the steady state `x = 0`.
///
/// Each burst starts from a fresh `N(0, scale²)` offset and runs
/// `burst_len` noiseless steps; only within-burst pairs are emitted, so
/// every returned pair satisfies `y = A·x` exactly. Returns `(Xp, Xf)`.
pub fn simulate_linear_bursts(
    sys: &LinearSystem,
    bursts: usize,
    burst_len: usize,
    scale: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if burst_len == 0 {
        return Err(Error::invalid("burst length must be at least 1"));
    }
    let n = sys.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = bursts * burst_len;
    let mut xp = DMatrix::zeros(n, m);
    let mut xf = DMatrix::zeros(n, m);
    let mut col = 0;
    for _ in 0..bursts {
        let mut x = DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        for _ in 0..burst_len {
            let y = &sys.a_matrix * &x;
            xp.set_column(col, &x);
            xf.set_column(col, &y);
            x = y;
            col += 1;
        }
    }
    Ok((xp, xf))
}

/// Classical swing dynamics for `n` coupled machines, state `(δ, ω) ∈ ℝ²ⁿ`:
///
/// ```text
/// δ̇ᵢ = ωᵢ
/// Mᵢ·ω̇ᵢ = Pᵢ − Dᵢ·ωᵢ − Σⱼ kᵢⱼ·sin(δᵢ − δⱼ)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SwingNetwork {
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub coupling: DMatrix<f64>,
    pub power_injection: Vec<f64>,
}

impl SwingNetwork {
    pub fn new(
        inertia: Vec<f64>,
        damping: Vec<f64>,
        coupling: DMatrix<f64>,
        power_injection: Vec<f64>,
    ) -> Result<Self> {
        let n = inertia.len();
        if n == 0 {
            return Err(Error::invalid("network needs at least one machine"));
        }
        if damping.len() != n || power_injection.len() != n || coupling.shape() != (n, n) {
            return Err(Error::invalid("machine parameter lengths disagree"));
        }
        if inertia.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::invalid("inertia must be positive"));
        }
        if damping.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::invalid("damping must be non-negative"));
        }
        for i in 0..n {
            if coupling[(i, i)] != 0.0 {
                return Err(Error::invalid("coupling diagonal must be zero"));
            }
            for j in 0..n {
                let k = coupling[(i, j)];
                if !(k >= 0.0) || k != coupling[(j, i)] {
                    return Err(Error::invalid(
                        "coupling must be symmetric and non-negative",
                    ));
                }
            }
        }
        Ok(SwingNetwork {
            inertia,
            damping,
            coupling,
            power_injection,
        })
    }

    /// Three-machine stand-in with electromechanical modes near 1 Hz.
    pub fn three_machine() -> Self {
        let coupling =
            DMatrix::from_row_slice(3, 3, &[0.0, 1.6, 1.2, 1.6, 0.0, 1.0, 1.2, 1.0, 0.0]);
        SwingNetwork::new(
            vec![0.25, 0.08, 0.05],
            vec![0.05, 0.02, 0.01],
            coupling,
            vec![-0.85, 0.55, 0.30],
        )
        .expect("static parameters are valid")
    }

    pub fn n_machines(&self) -> usize {
        self.inertia.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_machines()
    }

    pub fn without_damping(&self) -> Self {
        SwingNetwork {
            damping: vec![0.0; self.n_machines()],
            ..self.clone()
        }
    }

    pub fn rhs(&self, state: &DVector<f64>) -> DVector<f64> {
        swing_rhs(self, state)
    }

    /// `½ΣMᵢωᵢ² − ΣPᵢδᵢ − Σ_{i<j} kᵢⱼ·cos(δᵢ − δⱼ)`, conserved when `D = 0`.
    pub fn energy(&self, state: &DVector<f64>) -> f64 {
        let n = self.n_machines();
        let (delta, omega) = (state.rows(0, n), state.rows(n, n));
        let mut e = 0.0;
        for i in 0..n {
            e += 0.5 * self.inertia[i] * omega[i] * omega[i] - self.power_injection[i] * delta[i];
            for j in (i + 1)..n {
                e -= self.coupling[(i, j)] * (delta[i] - delta[j]).cos();
            }
        }
        e
    }

    /// Synchronous equilibrium with `ω = 0` and `δ₀ = 0`, by Newton's method.
    pub fn equilibrium(&self) -> Result<DVector<f64>> {
        let n = self.n_machines();
        let total: f64 = self.power_injection.iter().sum();
        if total.abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "power injections sum to {total}, no synchronous equilibrium at ω = 0"
            )));
        }
        let mut delta = DVector::<f64>::zeros(n);
        if n == 1 {
            return Ok(DVector::zeros(2));
        }
        for _ in 0..50 {
            let mismatch = DVector::from_fn(n - 1, |r, _| {
                let i = r + 1;
                self.power_injection[i]
                    - (0..n)
                        .map(|j| self.coupling[(i, j)] * (delta[i] - delta[j]).sin())
                        .sum::<f64>()
            });
            if mismatch.amax() < 1e-14 {
                let mut state = DVector::zeros(2 * n);
                state.rows_mut(0, n).copy_from(&delta);
                return Ok(state);
            }
            let jac = DMatrix::from_fn(n - 1, n - 1, |r, c| {
                let (i, j) = (r + 1, c + 1);
                if i == j {
                    -(0..n)
                        .filter(|&l| l != i)
                        .map(|l| self.coupling[(i, l)] * (delta[i] - delta[l]).cos())
                        .sum::<f64>()
                } else {
                    self.coupling[(i, j)] * (delta[i] - delta[j]).cos()
                }
            });
            let step = jac
                .lu()
                .solve(&mismatch)
                .ok_or_else(|| Error::numerical("singular load-flow Jacobian"))?;
            for r in 0..(n - 1) {
                delta[r + 1] -= step[r];
            }
        }
        Err(Error::numerical("equilibrium search did not converge"))
    }

    /// Jacobian of [`swing_rhs`] at `state`.
    pub fn jacobian(&self, state: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n_machines();
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            jac[(i, n + i)] = 1.0;
            let m = self.inertia[i];
            let mut diag = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let c = self.coupling[(i, j)] * (state[i] - state[j]).cos();
                jac[(n + i, j)] = c / m;
                diag += c;
            }
            jac[(n + i, i)] = -diag / m;
            jac[(n + i, n + i)] = -self.damping[i] / m;
        }
        jac
    }

    /// Transition matrix of one RK4 step linearized about an equilibrium:
    /// `Σ_{p≤4} (dt·J)ᵖ/p!`.
    pub fn linearized_step(&self, equilibrium: &DVector<f64>, dt: f64) -> DMatrix<f64> {
        let hj = self.jacobian(equilibrium) * dt;
        let dim = hj.nrows();
        let mut term = DMatrix::identity(dim, dim);
        let mut sum = term.clone();
        for p in 1..=4 {
            term = &term * &hj / p as f64;
            sum += &term;
        }
        sum
    }

    /// Equilibrium plus seeded uniform offsets in `[−a, a]` on angles and
    /// `[−w, w]` on frequencies.
    pub fn perturbed_state(
        &self,
        angle_mag: f64,
        freq_mag: f64,
        seed: u64,
    ) -> Result<DVector<f64>> {
        let n = self.n_machines();
        let mut state = self.equilibrium()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n {
            state[i] += angle_mag * rng.random_range(-1.0..=1.0);
        }
        for i in 0..n {
            state[n + i] += freq_mag * rng.random_range(-1.0..=1.0);
        }
        Ok(state)
    }
}

pub fn swing_rhs(net: &SwingNetwork, state: &DVector<f64>) -> DVector<f64> {
    let n = net.n_machines();
    let mut out = DVector::zeros(2 * n);
    for i in 0..n {
        out[i] = state[n + i];
        let mut coupling = 0.0;
        for j in 0..n {
            if j != i {
                coupling += net.coupling[(i, j)] * (state[i] - state[j]).sin();
            }
        }
        out[n + i] =
            (net.power_injection[i] - net.damping[i] * state[n + i] - coupling) / net.inertia[i];
    }
    out
}

/// An integrated trajectory, cut short if the state became non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// States as columns; column 0 is the initial condition.
    pub trajectory: DMatrix<f64>,
    pub halted_at: Option<usize>,
}

/// Classical fourth-order Runge–Kutta with fixed step `dt`.
pub fn simulate_rk4<F>(rhs: F, x0: &DVector<f64>, dt: f64, steps: usize) -> Result<Integration>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut cols = Vec::with_capacity(steps + 1);
    cols.push(x0.clone());
    let mut x = x0.clone();
    let mut halted_at = None;
    for step in 1..=steps {
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &k1 * (0.5 * dt)));
        let k3 = rhs(&(&x + &k2 * (0.5 * dt)));
        let k4 = rhs(&(&x + &k3 * dt));
        let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            halted_at = Some(step);
            break;
        }
        cols.push(next.clone());
        x = next;
    }
    Ok(Integration {
        trajectory: DMatrix::from_columns(&cols),
        halted_at,
    })
}

/// Splits a trajectory into `(Xp, Xf)` with `Xf` shifted one step ahead.
pub fn to_pairs(trajectory: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let l = trajectory.ncols();
    if l < 2 {
        return Err(Error::invalid(
            "a trajectory needs at least two states to form a pair",
        ));
    }
    Ok((
        trajectory.columns(0, l - 1).into_owned(),
        trajectory.columns(1, l - 1).into_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn random_state_is_seeded_and_bounded() {
        let a = random_state(8, 0.5, 3).unwrap();
        assert_eq!(a, random_state(8, 0.5, 3).unwrap());
        assert_ne!(a, random_state(8, 0.5, 4).unwrap());
        assert!(a.iter().all(|v| v.abs() <= 0.5));
        assert!(random_state(0, 1.0, 0).is_err());
        assert!(random_state(2, 0.0, 0).is_err());
    }

    #[test]
    fn scalar_system_is_plus_minus_radius() {
        let s = random_stable_linear(1, 0.7, 3).unwrap();
        assert!((s.a_matrix[(0, 0)].abs() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn radius_is_exact_and_deterministic() {
        for seed in [0u64, 1, 2, 42] {
            let s = random_stable_linear(12, 0.95, seed).unwrap();
            assert!((s.spectral_radius() - 0.95).abs() < 1e-12);
            let again = random_stable_linear(12, 0.95, seed).unwrap();
            assert_eq!(s.a_matrix, again.a_matrix);
        }
        assert!(random_stable_linear(3, 1.0, 0).is_err());
        assert!(random_stable_linear(3, 0.0, 0).is_err());
    }

    #[test]
    fn simulate_scalar() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, 0.5), 0.01).unwrap();
        let t = simulate_linear(&sys, &DVector::from_element(1, 1.0), 3, 0.0, 0).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 0.5, 0.25, 0.125]);
        let z = simulate_linear(&sys, &DVector::zeros(1), 5, 0.0, 0).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn simulate_is_deterministic() {
        let sys = random_stable_linear(4, 0.9, 1).unwrap();
        let x0 = DVector::from_element(4, 1.0);
        assert_eq!(
            simulate_linear(&sys, &x0, 20, 0.0, 1).unwrap(),
            simulate_linear(&sys, &x0, 20, 0.0, 2).unwrap()
        );
        assert_eq!(
            simulate_linear(&sys, &x0, 20, 0.1, 5).unwrap(),
            simulate_linear(&sys, &x0, 20, 0.1, 5).unwrap()
        );
    }

    #[test]
    fn bursts_satisfy_dynamics_exactly() {
        let sys = random_stable_linear(5, 0.9, 2).unwrap();
        let (xp, xf) = simulate_linear_bursts(&sys, 4, 6, 1.0, 3).unwrap();
        assert_eq!(xp.ncols(), 24);
        assert_eq!(&sys.a_matrix * &xp, xf);
    }

    #[test]
    fn swing_equilibrium_field_vanishes() {
        let net = SwingNetwork::new(
            vec![1.0, 2.0],
            vec![0.1, 0.1],
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            vec![0.0, 0.0],
        )
        .unwrap();
        let f = swing_rhs(&net, &DVector::from_vec(vec![0.4, 0.4, 0.0, 0.0]));
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swing_quarter_turn() {
        let net = SwingNetwork::new(
            vec![2.0, 4.0],
            vec![0.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            vec![0.0, 0.0],
        )
        .unwrap();
        let f = swing_rhs(&net, &DVector::from_vec(vec![FRAC_PI_2, 0.0, 0.0, 0.0]));
        assert!((f[2] + 1.0 / 2.0).abs() < 1e-15);
        assert!((f[3] - 1.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn momentum_balance() {
        let net = SwingNetwork::three_machine();
        let state = DVector::from_vec(vec![0.3, -0.2, 1.1, 0.5, -0.7, 0.2]);
        let f = swing_rhs(&net, &state);
        let lhs: f64 = (0..3).map(|i| net.inertia[i] * f[3 + i]).sum();
        let rhs: f64 = (0..3)
            .map(|i| net.power_injection[i] - net.damping[i] * state[3 + i])
            .sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn network_validation() {
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(SwingNetwork::new(vec![1.0, 1.0], vec![0.0, 0.0], k, vec![0.0, 0.0]).is_err());
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(SwingNetwork::new(vec![0.0, 1.0], vec![0.0, 0.0], k, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn equilibrium_balances_power() {
        let net = SwingNetwork::three_machine();
        let eq = net.equilibrium().unwrap();
        assert!(swing_rhs(&net, &eq).amax() < 1e-12);
        let p = net.perturbed_state(0.2, 0.1, 9).unwrap();
        assert_eq!(p, net.perturbed_state(0.2, 0.1, 9).unwrap());
        assert!((&p - &eq).amax() <= 0.2);
    }

    #[test]
    fn linearized_step_matches_finite_difference_of_rk4() {
        let net = SwingNetwork::three_machine();
        let eq = net.equilibrium().unwrap();
        let dt = 0.01;
        let phi = net.linearized_step(&eq, dt);
        let h = 1e-6;
        for j in 0..6 {
            let mut e = DVector::zeros(6);
            e[j] = h;
            let plus = simulate_rk4(|s| swing_rhs(&net, s), &(&eq + &e), dt, 1).unwrap();
            let minus = simulate_rk4(|s| swing_rhs(&net, s), &(&eq - &e), dt, 1).unwrap();
            let col = (plus.trajectory.column(1) - minus.trajectory.column(1)) / (2.0 * h);
            assert!((col - phi.column(j)).amax() < 1e-7);
        }
    }

    #[test]
    fn rk4_constant_and_decay() {
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let run = simulate_rk4(|s| DVector::zeros(s.len()), &x0, 0.1, 10).unwrap();
        assert!(run.trajectory.column_iter().all(|c| c == x0.column(0)));

        let run = simulate_rk4(|s| -s, &DVector::from_element(1, 1.0), 0.01, 100).unwrap();
        assert!((run.trajectory[(0, 100)] - (-1.0f64).exp()).abs() < 1e-9);
        assert!(simulate_rk4(|s| -s, &x0, 0.0, 1).is_err());
    }

    #[test]
    fn rk4_step_is_taylor_polynomial_for_linear_fields() {
        let lam = DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -1.0, -0.3]);
        let dt = 0.1;
        let x0 = DVector::from_vec(vec![0.7, -0.2]);
        let run = simulate_rk4(|s| &lam * s, &x0, dt, 1).unwrap();
        let hl = &lam * dt;
        let hl2 = &hl * &hl;
        let hl3 = &hl2 * &hl;
        let hl4 = &hl3 * &hl;
        let poly = DMatrix::identity(2, 2) + &hl + hl2 / 2.0 + hl3 / 6.0 + hl4 / 24.0;
        assert!((run.trajectory.column(1) - poly * x0).amax() < 1e-15);
    }

    #[test]
    fn rk4_halts_on_blow_up() {
        let run = simulate_rk4(
            |s| s.map(|v| v * v * 1e300),
            &DVector::from_element(1, 1e10),
            1.0,
            5,
        )
        .unwrap();
        assert_eq!(run.halted_at, Some(1));
        assert_eq!(run.trajectory.ncols(), 1);
    }

    #[test]
    fn energy_is_conserved_without_damping() {
        let net = SwingNetwork::three_machine().without_damping();
        let x0 = net.perturbed_state(0.3, 0.5, 4).unwrap();
        let run = simulate_rk4(|s| swing_rhs(&net, s), &x0, 0.01, 1000).unwrap();
        let e0 = net.energy(&x0);
        let drift = run
            .trajectory
            .column_iter()
            .map(|c| (net.energy(&c.into_owned()) - e0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "energy drift {drift}");
    }

    #[test]
    fn pairs_overlap() {
        let t = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let (xp, xf) = to_pairs(&t).unwrap();
        assert_eq!(xp.as_slice(), &[1.0, 2.0]);
        assert_eq!(xf.as_slice(), &[2.0, 3.0]);
        let (a, b) = to_pairs(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        assert_eq!((a.ncols(), b.ncols()), (1, 1));
        assert!(to_pairs(&DMatrix::from_row_slice(1, 1, &[1.0])).is_err());
    }
}
