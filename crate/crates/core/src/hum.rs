//! Penalized HUM control synthesis.
//!
//! The functional
//! `J(q_T) = ½∫_{𝓑×𝒩*}|q|² + (φ(h)/2)‖q_T‖²_{𝕃²_h} + ⟨g, q(Δt/2)⟩_{𝕃²_h}`
//! is quadratic in the terminal adjoint datum. Its `𝕃²_h` gradient is
//! `y(T) + φ(h)q_T`, where `y` is driven from `g` by the control `𝟙_𝓑 q`.
//! The minimizer solves `(Λ + φ(h))q_T = -y_g(T)` with the Gramian
//! `Λ = (forward ∘ 𝟙_𝓑 ∘ adjoint)(·)(T)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::calculus::l2h_dot;
use crate::error::{Error, Result};
use crate::mesh::{region_mask, GridFunction, Region, SpaceMesh, SpaceSet, TimeMesh, TimeSet};
use crate::solver::{Potentials, Propagator, SpaceTimeField};

/// `φ(h) = exp(-C₁/h^{min(μ/4, 1)})`.
pub fn penalty_phi(h: f64, c1: f64, mu: f64) -> f64 {
    (-c1 / h.powf(penalty_exponent(mu))).exp()
}

/// `min(μ/4, 1)`.
pub fn penalty_exponent(mu: f64) -> f64 {
    (mu / 4.0).min(1.0)
}

/// How the Gramian is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramianMode {
    /// One adjoint and one forward march per application.
    Stepping,
    /// Dense matrix from the eigen-decomposition of the step operator;
    /// needs time-invariant potentials.
    Spectral,
    /// Spectral for time-invariant potentials on long horizons, else stepping.
    Auto,
}

/// Settings of the penalized problem and its solver.
#[derive(Clone, Debug, PartialEq)]
pub struct HumConfig {
    pub c1: f64,
    pub mu: f64,
    /// Observation/control region `𝓑`.
    pub region: Region,
    /// Relative gradient-norm tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub gramian: GramianMode,
    /// Time-step count above which `Auto` picks the spectral Gramian.
    pub spectral_threshold: usize,
    /// Largest `slices × nodes` kept when storing control and trajectory.
    pub field_limit: usize,
    /// Return the last iterate, flagged, instead of failing at the iteration cap.
    pub accept_unconverged: bool,
}

impl HumConfig {
    pub fn new(region: Region) -> Self {
        Self {
            c1: 1.0,
            mu: 4.0,
            region,
            tolerance: 1e-10,
            max_iterations: 500,
            gramian: GramianMode::Auto,
            spectral_threshold: 2000,
            field_limit: 4_000_000,
            accept_unconverged: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0) {
            return Err(Error::Parameter(format!("C1 = {} must be positive", self.c1)));
        }
        if !(self.mu >= 1.0) {
            return Err(Error::Parameter(format!("mu = {} must be at least 1", self.mu)));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Parameter("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn phi(&self, h: f64) -> f64 {
        penalty_phi(h, self.c1, self.mu)
    }
}

/// Indicator of the region on `𝓜̄` (boundary entries are zero).
pub fn observation_weight(space: &SpaceMesh, region: &Region) -> Vec<f64> {
    let mask = region_mask(region, space, SpaceSet::Primal).mask;
    let mut weight = vec![0.0; space.len()];
    weight[1..space.len() - 1].copy_from_slice(mask.values());
    weight
}

/// The Gramian `Λ` as an operator on `𝓜̄` vectors.
pub enum Gramian<'a> {
    Stepping {
        propagator: Propagator<'a>,
        weight: Vec<f64>,
    },
    Dense {
        h: f64,
        matrix: DMatrix<f64>,
    },
}

impl<'a> Gramian<'a> {
    pub fn stepping(propagator: Propagator<'a>, weight: Vec<f64>) -> Self {
        Gramian::Stepping { propagator, weight }
    }

    /// Assemble `Λ = Δt Σ_{m=1}^{N} P^m B P^m` with `P = (I + ΔtK)⁻¹` from the
    /// eigenpairs of the `𝕃²_h`-symmetric step operator `K`.
    pub fn spectral(
        space: &SpaceMesh,
        time: &TimeMesh,
        potentials: &Potentials,
        weight: &[f64],
    ) -> Result<Self> {
        if !potentials.is_time_invariant() {
            return Err(Error::Parameter(
                "the spectral Gramian needs time-invariant potentials".into(),
            ));
        }
        let n = space.len();
        let (h, dt) = (space.h(), time.dt());
        let kappa = potentials.diffusion();
        let c = potentials.diagonal(1);
        let w: Vec<f64> = (0..n).map(|i| if i == 0 || i == n - 1 { 1.0 } else { h }).collect();
        let (edge, inner) = (kappa / h, kappa / (h * h));
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let (left, right) = match i {
                0 => (0.0, edge),
                _ if i == n - 1 => (edge, 0.0),
                _ => (inner, inner),
            };
            k[(i, i)] = left + right + c[i];
            if i > 0 {
                k[(i, i - 1)] = -left;
            }
            if i + 1 < n {
                k[(i, i + 1)] = -right;
            }
        }
        let sym = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (k[(i, j)] * (w[i] / w[j]).sqrt() + k[(j, i)] * (w[j] / w[i]).sqrt())
        });
        let eigen = SymmetricEigen::new(sym);
        let log_r: Vec<f64> = eigen
            .eigenvalues
            .iter()
            .map(|&l| {
                if 1.0 + dt * l <= 0.0 {
                    Err(Error::Singular { step: 0 })
                } else {
                    Ok(-(dt * l).ln_1p())
                }
            })
            .collect::<Result<_>>()?;
        let v = &eigen.eigenvectors;
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(weight));
        let projected = v.transpose() * b * v;
        let steps = time.steps() as f64;
        let g = DMatrix::from_fn(n, n, |a, bb| {
            let lr = log_r[a] + log_r[bb];
            let sum = if lr == 0.0 {
                steps
            } else {
                // Σ_{m=1}^{N} ρ^m = ρ(1 - ρ^N)/(1 - ρ)
                lr.exp() * (steps * lr).exp_m1() / lr.exp_m1()
            };
            dt * projected[(a, bb)] * sum
        });
        let frame = v * g * v.transpose();
        let matrix = DMatrix::from_fn(n, n, |i, j| frame[(i, j)] * (w[j] / w[i]).sqrt());
        Ok(Gramian::Dense { h, matrix })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Gramian::Stepping { propagator, weight } => {
                let zero = vec![0.0; x.len()];
                propagator.forward_from_adjoint(&zero, x, weight, |_, _, _| {})
            }
            Gramian::Dense { matrix, .. } => {
                let v = matrix * nalgebra::DVector::from_column_slice(x);
                Ok(v.as_slice().to_vec())
            }
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Gramian::Dense { .. })
    }

    pub fn h(&self) -> f64 {
        match self {
            Gramian::Stepping { propagator, .. } => propagator.space().h(),
            Gramian::Dense { h, .. } => *h,
        }
    }
}

/// Outcome of a Krylov solve.
#[derive(Clone, Debug, PartialEq)]
pub struct KrylovSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
    /// Recomputed relative residual of `x`.
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate-residual iteration for an operator that is symmetric positive
/// definite in the `𝕃²_h` product. The residual norm is nonincreasing.
/// Convergence is confirmed on the recomputed residual; a drifted recursion
/// restarts from the current iterate. Stops unconverged at the iteration cap.
pub fn conjugate_residual(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    h: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<KrylovSolution> {
    let dot = |u: &[f64], v: &[f64]| l2h_dot(h, u, v);
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    let mut history = vec![if b_norm == 0.0 { 0.0 } else { 1.0 }];
    if b_norm == 0.0 {
        return Ok(KrylovSolution {
            x,
            iterations: 0,
            history,
            residual: 0.0,
            converged: true,
        });
    }
    let target = tolerance * b_norm;
    let mut iterations = 0;
    let mut r = b.to_vec();
    loop {
        let mut p = r.clone();
        let mut ar = apply(&r)?;
        let mut ap = ar.clone();
        let mut r_ar = dot(&r, &ar);
        let mut r_norm = dot(&r, &r).sqrt();
        while r_norm > target && iterations < max_iterations {
            let alpha = r_ar / dot(&ap, &ap);
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            r_norm = dot(&r, &r).sqrt();
            history.push(r_norm / b_norm);
            if r_norm <= target {
                break;
            }
            ar = apply(&r)?;
            let next = dot(&r, &ar);
            let beta = next / r_ar;
            r_ar = next;
            for i in 0..x.len() {
                p[i] = r[i] + beta * p[i];
                ap[i] = ar[i] + beta * ap[i];
            }
        }
        let ax = apply(&x)?;
        let true_r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let true_norm = dot(&true_r, &true_r).sqrt();
        if true_norm <= target || iterations >= max_iterations {
            return Ok(KrylovSolution {
                x,
                iterations,
                history,
                residual: true_norm / b_norm,
                converged: true_norm <= target,
            });
        }
        r = true_r;
    }
}

/// Value of `J` at `q_T`.
pub fn eval_j(
    q_t: &GridFunction,
    g: &GridFunction,
    time: &TimeMesh,
    potentials: &Potentials,
    config: &HumConfig,
) -> Result<f64> {
    q_t.expect_set(SpaceSet::PrimalClosed)?;
    g.same_layout(q_t)?;
    let space = *q_t.mesh();
    let h = space.h();
    let weight = observation_weight(&space, &config.region);
    let propagator = Propagator::new(&space, time, potentials)?;
    let mut observed = 0.0;
    let n_steps = time.steps();
    let first = propagator.backward(q_t.values(), |j, q| {
        if j <= n_steps {
            observed += weight.iter().zip(q).map(|(w, v)| w * v * v).sum::<f64>();
        }
    })?;
    let phi = config.phi(h);
    Ok(0.5 * time.dt() * h * observed
        + 0.5 * phi * l2h_dot(h, q_t.values(), q_t.values())
        + l2h_dot(h, g.values(), &first))
}

/// `𝕃²_h` gradient of `J` at `q_T`: `y_{g, 𝟙_𝓑 q}(T) + φ(h)q_T`.
pub fn grad_j(
    q_t: &GridFunction,
    g: &GridFunction,
    time: &TimeMesh,
    potentials: &Potentials,
    config: &HumConfig,
) -> Result<GridFunction> {
    q_t.expect_set(SpaceSet::PrimalClosed)?;
    g.same_layout(q_t)?;
    let space = *q_t.mesh();
    let weight = observation_weight(&space, &config.region);
    let propagator = Propagator::new(&space, time, potentials)?;
    let y_t = propagator.forward_from_adjoint(g.values(), q_t.values(), &weight, |_, _, _| {})?;
    let phi = config.phi(space.h());
    let values = y_t.iter().zip(q_t.values()).map(|(y, q)| y + phi * q).collect();
    GridFunction::new(space, SpaceSet::PrimalClosed, values)
}

/// Minimizer of `J` with the resulting control and trajectory.
#[derive(Clone, Debug)]
pub struct HumResult {
    /// Minimizer `q̃_T`.
    pub q_t: GridFunction,
    /// `v = 𝟙_𝓑 q̃` on `𝓜 × 𝒩*`, kept when small enough.
    pub control: Option<SpaceTimeField>,
    /// Controlled trajectory on `𝓜̄ × 𝒩̄`, kept when small enough.
    pub trajectory: Option<SpaceTimeField>,
    /// `y(T)` of the controlled trajectory.
    pub terminal: GridFunction,
    pub phi: f64,
    pub j_value: f64,
    /// `‖∇J(q̃_T)‖_{𝕃²_h}`, from the final forward march.
    pub gradient_norm: f64,
    /// `‖∇J(0)‖_{𝕃²_h} = ‖y_g(T)‖_{𝕃²_h}`.
    pub initial_gradient_norm: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    /// The relative tolerance was met.
    pub converged: bool,
    /// `‖v‖_{L²_h(𝓑×𝒩*)}`.
    pub control_norm: f64,
    /// `‖y(T)‖_{𝕃²_h}`.
    pub terminal_norm: f64,
    /// `‖y(T) + φ(h)q̃_T‖ / ‖q̃_T‖` (zero when `q̃_T = 0`).
    pub optimality_residual: f64,
    pub spectral: bool,
}

/// Minimize `J` for initial datum `g`.
pub fn minimize_j(
    g: &GridFunction,
    time: &TimeMesh,
    potentials: &Potentials,
    config: &HumConfig,
) -> Result<HumResult> {
    config.validate()?;
    g.expect_set(SpaceSet::PrimalClosed)?;
    let space = *g.mesh();
    let h = space.h();
    let phi = config.phi(h);
    if !(phi > f64::MIN_POSITIVE) {
        return Err(Error::Parameter(format!("penalty phi(h) = {phi} underflows")));
    }
    let weight = observation_weight(&space, &config.region);
    let propagator = Propagator::new(&space, time, potentials)?;
    let free = propagator.forward(g.values(), |_, _| {}, |_, _| {})?;
    let rhs: Vec<f64> = free.iter().map(|v| -v).collect();
    let initial_gradient_norm = l2h_dot(h, &free, &free).sqrt();

    let spectral = match config.gramian {
        GramianMode::Stepping => false,
        GramianMode::Spectral => true,
        GramianMode::Auto => {
            potentials.is_time_invariant() && time.steps() > config.spectral_threshold
        }
    };
    let gramian = if spectral {
        Gramian::spectral(&space, time, potentials, &weight)?
    } else {
        Gramian::stepping(Propagator::new(&space, time, potentials)?, weight.clone())
    };
    let solution = conjugate_residual(
        |x| {
            let mut out = gramian.apply(x)?;
            out.iter_mut().zip(x).for_each(|(o, xi)| *o += phi * xi);
            Ok(out)
        },
        &rhs,
        h,
        config.tolerance,
        config.max_iterations,
    )?;
    if !solution.converged && !config.accept_unconverged {
        return Err(Error::NotConverged {
            iterations: solution.iterations,
            residual: solution.residual,
            history: solution.history,
        });
    }

    let width = space.len();
    let n_steps = time.steps();
    let keep = (n_steps + 1) * width <= config.field_limit;
    let mut control = keep.then(|| SpaceTimeField::zeros(space, *time, SpaceSet::Primal, TimeSet::Dual));
    let mut trajectory =
        keep.then(|| SpaceTimeField::zeros(space, *time, SpaceSet::PrimalClosed, TimeSet::PrimalClosed));
    if let Some(y) = trajectory.as_mut() {
        y.slice_mut(0).copy_from_slice(g.values());
    }
    let mut observed = 0.0;
    let mut first = vec![0.0; width];
    let y_t = propagator.forward_from_adjoint(g.values(), &solution.x, &weight, |n, y, q| {
        observed += weight.iter().zip(q).map(|(w, v)| w * v * v).sum::<f64>();
        if n == 1 {
            first.copy_from_slice(q);
        }
        if let Some(v) = control.as_mut() {
            let slot = v.slice_mut(n - 1);
            for i in 0..slot.len() {
                slot[i] = weight[i + 1] * q[i + 1];
            }
        }
        if let Some(traj) = trajectory.as_mut() {
            traj.slice_mut(n).copy_from_slice(y);
        }
    })?;
    let x = &solution.x;
    let control_sq = time.dt() * h * observed;
    let x_norm = l2h_dot(h, x, x).sqrt();
    let gradient: Vec<f64> = y_t.iter().zip(x).map(|(y, q)| y + phi * q).collect();
    let gradient_norm = l2h_dot(h, &gradient, &gradient).sqrt();
    let j_value = 0.5 * control_sq + 0.5 * phi * x_norm * x_norm + l2h_dot(h, g.values(), &first);
    Ok(HumResult {
        q_t: GridFunction::new(space, SpaceSet::PrimalClosed, solution.x.clone())?,
        control,
        trajectory,
        terminal_norm: l2h_dot(h, &y_t, &y_t).sqrt(),
        terminal: GridFunction::new(space, SpaceSet::PrimalClosed, y_t)?,
        phi,
        j_value,
        gradient_norm,
        initial_gradient_norm,
        iterations: solution.iterations,
        converged: solution.converged,
        history: solution.history,
        control_norm: control_sq.sqrt(),
        optimality_residual: if x_norm == 0.0 { 0.0 } else { gradient_norm / x_norm },
        spectral: gramian.is_spectral(),
    })
}

/// Checks of the control theorem for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlReport {
    /// `‖y(T) + φ(h)q̃_T‖ / ‖q̃_T‖`.
    pub optimality_residual: f64,
    /// `|‖y(T)‖ - φ(h)‖q̃_T‖| / ‖q̃_T‖`.
    pub norm_identity_residual: f64,
    /// `‖y(T)‖ / ‖g‖`.
    pub terminal_ratio: f64,
    /// `C` in `‖y(T)‖ ≤ C√φ(h)‖g‖`.
    pub terminal_constant: f64,
    /// `‖v‖² / ‖g‖²`.
    pub control_constant: f64,
}

impl ControlReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.optimality_residual <= tolerance
    }
}

pub fn verify_control_theorem(result: &HumResult, g: &GridFunction) -> Result<ControlReport> {
    g.expect_set(SpaceSet::PrimalClosed)?;
    let h = g.mesh().h();
    let g_norm = l2h_dot(h, g.values(), g.values()).sqrt();
    let q_norm = l2h_dot(h, result.q_t.values(), result.q_t.values()).sqrt();
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let predicted = result.phi * q_norm;
    Ok(ControlReport {
        optimality_residual: result.optimality_residual,
        norm_identity_residual: ratio((result.terminal_norm - predicted).abs(), q_norm),
        terminal_ratio: ratio(result.terminal_norm, g_norm),
        terminal_constant: ratio(result.terminal_norm, result.phi.sqrt() * g_norm),
        control_constant: ratio(result.control_norm.powi(2), g_norm * g_norm),
    })
}

/// Decay of `‖y(T)‖/‖g‖` across a refinement sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub steps: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Least-squares slope of `log ratio` against `1/h^{min(μ/4,1)}`.
    pub slope: f64,
    /// Reference slope `-C₁/2`.
    pub reference: f64,
    pub strictly_decreasing: bool,
}

impl DecayReport {
    /// Strict decrease and slope within a factor 2 of the reference.
    pub fn passed(&self) -> bool {
        self.strictly_decreasing
            && self.slope <= 0.5 * self.reference
            && self.slope >= 2.0 * self.reference
    }
}

pub fn decay_report(steps: &[f64], ratios: &[f64], c1: f64, mu: f64) -> DecayReport {
    let m = penalty_exponent(mu);
    let xs: Vec<f64> = steps.iter().map(|h| h.powf(-m)).collect();
    let ys: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    DecayReport {
        steps: steps.to_vec(),
        ratios: ratios.to_vec(),
        slope: sxy / sxx,
        reference: -0.5 * c1,
        strictly_decreasing: ratios.windows(2).all(|w| w[1] < w[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::RegionRole;
    use crate::rng::Lcg64;

    fn setup(m: usize, n: usize) -> (SpaceMesh, TimeMesh, HumConfig) {
        let region = Region::new(0.3, 0.7, RegionRole::Observation).unwrap();
        (
            SpaceMesh::new(m).unwrap(),
            TimeMesh::new(n, 1.0).unwrap(),
            HumConfig::new(region),
        )
    }

    fn random(space: SpaceMesh, rng: &mut Lcg64) -> GridFunction {
        GridFunction::new(space, SpaceSet::PrimalClosed, rng.symmetric_vec(space.len())).unwrap()
    }

    #[test]
    fn phi_values() {
        assert!((penalty_phi(0.1, 1.0, 4.0) - (-10.0f64).exp()).abs() < 1e-18);
        assert!((penalty_phi(0.1, 1.0, 4.0) - 4.5400e-5).abs() < 1e-8);
        assert!((penalty_phi(0.25, 1.0, 2.0) - 0.13534).abs() < 1e-5);
        let mut last = 1.0;
        for k in 1..20 {
            let phi = penalty_phi(1.0 / k as f64, 1.0, 4.0);
            assert!(phi < last);
            last = phi;
        }
    }

    #[test]
    fn zero_terminal_datum_gives_zero_functional() {
        let (space, time, config) = setup(8, 8);
        let pot = Potentials::zero(&space);
        let g = random(space, &mut Lcg64::new(1));
        let zero = GridFunction::zeros(space, SpaceSet::PrimalClosed);
        assert_eq!(eval_j(&zero, &g, &time, &pot, &config).unwrap(), 0.0);
        let grad = grad_j(&zero, &zero, &time, &pot, &config).unwrap();
        assert!(grad.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (space, time, config) = setup(8, 8);
        let mut rng = Lcg64::new(21);
        let pot = Potentials::from_fn(&space, &time, |x, t| x + t, |_| 0.5, |t| -t);
        let q = random(space, &mut rng);
        let g = random(space, &mut rng);
        let d = random(space, &mut rng);
        let grad = grad_j(&q, &g, &time, &pot, &config).unwrap();
        let eps = 1e-5;
        let shifted = |s: f64| q.zip_with(&d, |a, b| a + s * b).unwrap();
        let fd = (eval_j(&shifted(eps), &g, &time, &pot, &config).unwrap()
            - eval_j(&shifted(-eps), &g, &time, &pot, &config).unwrap())
            / (2.0 * eps);
        let exact = l2h_dot(space.h(), grad.values(), d.values());
        assert!((fd - exact).abs() <= 1e-6 * exact.abs());
    }

    #[test]
    fn euler_relation_without_initial_datum() {
        let (space, time, config) = setup(8, 8);
        let pot = Potentials::zero(&space);
        let q = random(space, &mut Lcg64::new(5));
        let zero = GridFunction::zeros(space, SpaceSet::PrimalClosed);
        let j = eval_j(&q, &zero, &time, &pot, &config).unwrap();
        let grad = grad_j(&q, &zero, &time, &pot, &config).unwrap();
        assert!((l2h_dot(space.h(), grad.values(), q.values()) - 2.0 * j).abs() < 1e-13);
        let phi = config.phi(space.h());
        assert!(j >= 0.5 * phi * l2h_dot(space.h(), q.values(), q.values()));
    }

    #[test]
    fn spectral_gramian_matches_stepping() {
        let (space, time, config) = setup(11, 30);
        let pot = Potentials::constant(&space, 0.7, -0.4, 1.1);
        let weight = observation_weight(&space, &config.region);
        let dense = Gramian::spectral(&space, &time, &pot, &weight).unwrap();
        let stepping = Gramian::stepping(Propagator::new(&space, &time, &pot).unwrap(), weight);
        let x = Lcg64::new(8).symmetric_vec(space.len());
        let (a, b) = (dense.apply(&x).unwrap(), stepping.apply(&x).unwrap());
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn gramian_is_self_adjoint_and_nonnegative() {
        let (space, time, config) = setup(12, 20);
        let pot = Potentials::from_fn(&space, &time, |x, _| x, |t| t, |_| 0.2);
        let weight = observation_weight(&space, &config.region);
        let gram = Gramian::stepping(Propagator::new(&space, &time, &pot).unwrap(), weight);
        let mut rng = Lcg64::new(3);
        let (a, b) = (rng.symmetric_vec(space.len()), rng.symmetric_vec(space.len()));
        let (la, lb) = (gram.apply(&a).unwrap(), gram.apply(&b).unwrap());
        let h = space.h();
        assert!((l2h_dot(h, &la, &b) - l2h_dot(h, &a, &lb)).abs() < 1e-12);
        assert!(l2h_dot(h, &la, &a) >= 0.0);
    }

    #[test]
    fn zero_initial_datum_is_exact() {
        let (space, time, config) = setup(10, 12);
        let pot = Potentials::zero(&space);
        let g = GridFunction::zeros(space, SpaceSet::PrimalClosed);
        let result = minimize_j(&g, &time, &pot, &config).unwrap();
        assert_eq!(result.iterations, 0);
        assert_eq!(result.control_norm, 0.0);
        assert_eq!(result.terminal_norm, 0.0);
        assert!(result.q_t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn optimality_identity_at_minimizer() {
        let (space, time, config) = setup(20, 40);
        let pot = Potentials::zero(&space);
        let g = random(space, &mut Lcg64::new(42));
        let result = minimize_j(&g, &time, &pot, &config).unwrap();
        assert!(result.optimality_residual <= 1e-10, "{}", result.optimality_residual);
        let report = verify_control_theorem(&result, &g).unwrap();
        assert!(report.norm_identity_residual <= 1e-10);
        assert!(result.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let v = result.control.as_ref().unwrap();
        let outside: Vec<usize> = (1..=space.interior())
            .filter(|&i| !config.region.contains(space.node(i)))
            .collect();
        for k in 0..v.slices() {
            for &i in &outside {
                assert_eq!(v.slice(k)[i - 1], 0.0);
            }
        }
    }

    #[test]
    fn minimizer_is_linear_in_initial_datum() {
        let (space, time, config) = setup(10, 16);
        let pot = Potentials::constant(&space, 0.5, 0.0, 0.0);
        let g = random(space, &mut Lcg64::new(6));
        let a = minimize_j(&g, &time, &pot, &config).unwrap();
        let b = minimize_j(&g.map(|v| 2.0 * v), &time, &pot, &config).unwrap();
        for (x, y) in a.q_t.values().iter().zip(b.q_t.values()) {
            assert!((2.0 * x - y).abs() <= 1e-11 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (space, time, mut config) = setup(10, 12);
        config.max_iterations = 1;
        let pot = Potentials::zero(&space);
        let g = random(space, &mut Lcg64::new(2));
        match minimize_j(&g, &time, &pot, &config) {
            Err(Error::NotConverged { iterations, history, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        config.accept_unconverged = true;
        let result = minimize_j(&g, &time, &pot, &config).unwrap();
        assert!(!result.converged);
    }

    #[test]
    fn decay_fit_of_exact_profile() {
        let steps = [0.1, 0.05, 0.025];
        let ratios: Vec<f64> = steps.iter().map(|h: &f64| 3.0 * (-0.5 / h).exp()).collect();
        let report = decay_report(&steps, &ratios, 1.0, 4.0);
        assert!((report.slope + 0.5).abs() < 1e-10);
        assert!(report.passed());
    }
}
