//! Implicit Euler solvers for the controlled heat equation with dynamic
//! boundary conditions and for its adjoint.
//!
//! One step solves `(I/Δt + κL + diag(c)) u = rhs` on `𝓜̄`, where `L` has
//! interior rows `(-1, 2, -1)/h²` and boundary rows `(1, -1)/h`, `(-1, 1)/h`,
//! and `c` holds `b_Γ0, b(x_1..x_M), b_Γ1`. `W·L` is symmetric for the
//! `𝕃²_h` weight `W = diag(1, h, …, h, 1)`, so the adjoint steps with the
//! same matrix.

use std::borrow::Cow;

use crate::calculus::l2h_dot;
use crate::error::{Error, Result};
use crate::mesh::{GridFunction, SpaceMesh, SpaceSet, TimeMesh, TimeSet};
use crate::tridiag::{Factorization, Tridiagonal};

/// Potentials on `𝓜̄` sampled at the implicit-side times `t_n`, `n = 1..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    nodes: usize,
    steps: Option<usize>,
    values: Vec<f64>,
    diffusion: f64,
}

impl Potentials {
    /// Time-invariant potential from its diagonal on `𝓜̄`.
    pub fn from_diagonal(diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.len() < 4 {
            return Err(Error::InvalidSpec("potential needs at least 4 nodes".into()));
        }
        Ok(Self {
            nodes: diagonal.len(),
            steps: None,
            values: diagonal,
            diffusion: 1.0,
        })
    }

    pub fn zero(space: &SpaceMesh) -> Self {
        Self::constant(space, 0.0, 0.0, 0.0)
    }

    /// Constant interior potential `b` and boundary potentials `b_Γ0`, `b_Γ1`.
    pub fn constant(space: &SpaceMesh, b: f64, left: f64, right: f64) -> Self {
        let mut values = vec![b; space.len()];
        values[0] = left;
        values[space.len() - 1] = right;
        Self {
            nodes: space.len(),
            steps: None,
            values,
            diffusion: 1.0,
        }
    }

    /// Sample `b(x,t)`, `b_Γ0(t)`, `b_Γ1(t)` at `t_n`, `n = 1..=N`.
    pub fn from_fn(
        space: &SpaceMesh,
        time: &TimeMesh,
        b: impl Fn(f64, f64) -> f64,
        left: impl Fn(f64) -> f64,
        right: impl Fn(f64) -> f64,
    ) -> Self {
        let nodes = space.len();
        let mut values = Vec::with_capacity(nodes * time.steps());
        for n in 1..=time.steps() {
            let t = time.primal(n);
            values.push(left(t));
            values.extend((1..nodes - 1).map(|i| b(space.node(i), t)));
            values.push(right(t));
        }
        Self {
            nodes,
            steps: Some(time.steps()),
            values,
            diffusion: 1.0,
        }
    }

    /// Time-dependent potential from `N` consecutive diagonals.
    pub fn from_slices(nodes: usize, values: Vec<f64>) -> Result<Self> {
        if nodes < 4 || values.is_empty() || values.len() % nodes != 0 {
            return Err(Error::InvalidSpec(format!(
                "{} potential samples do not form slices of {nodes} nodes",
                values.len()
            )));
        }
        Ok(Self {
            nodes,
            steps: Some(values.len() / nodes),
            values,
            diffusion: 1.0,
        })
    }

    /// Scale of the diffusion operator (1 for the original system).
    pub fn with_diffusion(mut self, diffusion: f64) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn is_time_invariant(&self) -> bool {
        self.steps.is_none()
    }

    /// Diagonal used by the step computing the state at `t_n`.
    pub fn diagonal(&self, n: usize) -> &[f64] {
        match self.steps {
            None => &self.values,
            Some(_) => &self.values[(n - 1) * self.nodes..n * self.nodes],
        }
    }

    /// `γ = max(‖b‖_∞, ‖b_Γ0‖_∞, ‖b_Γ1‖_∞)`.
    pub fn gamma(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `Δt·γ < 1/2`, the regime of the stability estimate.
    pub fn stable_step(&self, dt: f64) -> bool {
        dt * self.gamma() < 0.5
    }

    fn check(&self, space: &SpaceMesh, time: &TimeMesh) -> Result<()> {
        if self.nodes != space.len() {
            return Err(Error::InvalidSpec(format!(
                "potential has {} nodes, mesh has {}",
                self.nodes,
                space.len()
            )));
        }
        if let Some(steps) = self.steps {
            if steps != time.steps() {
                return Err(Error::InvalidSpec(format!(
                    "potential has {steps} time slices, mesh has {}",
                    time.steps()
                )));
            }
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Implicit step matrix `I/Δt + κL + diag(c)` on `𝓜̄`.
pub fn step_matrix(h: f64, dt: f64, diffusion: f64, c: &[f64]) -> Tridiagonal {
    let n = c.len();
    let (edge, inner) = (diffusion / h, diffusion / (h * h));
    let mut lower = vec![-inner; n - 1];
    let mut upper = vec![-inner; n - 1];
    let mut diag: Vec<f64> = c.iter().map(|&ci| 1.0 / dt + 2.0 * inner + ci).collect();
    diag[0] = 1.0 / dt + edge + c[0];
    diag[n - 1] = 1.0 / dt + edge + c[n - 1];
    upper[0] = -edge;
    lower[n - 2] = -edge;
    Tridiagonal { lower, diag, upper }
}

/// Stepping engine for one mesh pair and one set of potentials.
pub struct Propagator<'a> {
    space: SpaceMesh,
    time: TimeMesh,
    potentials: &'a Potentials,
    fixed: Option<Factorization>,
}

impl<'a> Propagator<'a> {
    pub fn new(space: &SpaceMesh, time: &TimeMesh, potentials: &'a Potentials) -> Result<Self> {
        potentials.check(space, time)?;
        let mut propagator = Self {
            space: *space,
            time: *time,
            potentials,
            fixed: None,
        };
        if potentials.is_time_invariant() {
            propagator.fixed = Some(propagator.factor_step(1)?);
        }
        Ok(propagator)
    }

    pub fn space(&self) -> &SpaceMesh {
        &self.space
    }

    pub fn time(&self) -> &TimeMesh {
        &self.time
    }

    pub fn potentials(&self) -> &Potentials {
        self.potentials
    }

    pub fn step_matrix(&self, n: usize) -> Tridiagonal {
        step_matrix(
            self.space.h(),
            self.time.dt(),
            self.potentials.diffusion(),
            self.potentials.diagonal(n),
        )
    }

    fn factor_step(&self, n: usize) -> Result<Factorization> {
        self.step_matrix(n)
            .factor()
            .map_err(|_| Error::Singular { step: n })
    }

    fn factor(&self, n: usize) -> Result<Cow<'_, Factorization>> {
        match &self.fixed {
            Some(f) => Ok(Cow::Borrowed(f)),
            None => self.factor_step(n).map(Cow::Owned),
        }
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.space.len() {
            return Err(Error::SetMismatch {
                expected: format!("{} values on the closed primal mesh", self.space.len()),
                found: format!("{} values", u.len()),
            });
        }
        Ok(())
    }

    /// March `y^n` from `y^0 = g`. `source(n, f)` fills `f^n` (zeroed on entry);
    /// `observe(n, y^n)` sees every slice including `n = 0`. Returns `y^N`.
    pub fn forward(
        &self,
        g: &[f64],
        mut source: impl FnMut(usize, &mut [f64]),
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        self.check_len(g)?;
        let inv_dt = 1.0 / self.time.dt();
        let mut y = g.to_vec();
        let mut f = vec![0.0; y.len()];
        observe(0, &y);
        for n in 1..=self.time.steps() {
            f.iter_mut().for_each(|v| *v = 0.0);
            source(n, &mut f);
            for (yi, fi) in y.iter_mut().zip(&f) {
                *yi = *yi * inv_dt + fi;
            }
            self.factor(n)?.solve_in_place(&mut y);
            observe(n, &y);
        }
        Ok(y)
    }

    /// March the adjoint `q_j`, `j = N+1..=1`, from `q_{N+1} = q_T`.
    /// `observe(j, q_j)` sees every dual slice. Returns `q_1`.
    pub fn backward(&self, q_t: &[f64], mut observe: impl FnMut(usize, &[f64])) -> Result<Vec<f64>> {
        self.check_len(q_t)?;
        let inv_dt = 1.0 / self.time.dt();
        let n_steps = self.time.steps();
        let mut q = q_t.to_vec();
        observe(n_steps + 1, &q);
        for n in (1..=n_steps).rev() {
            q.iter_mut().for_each(|v| *v *= inv_dt);
            self.factor(n)?.solve_in_place(&mut q);
            observe(n, &q);
        }
        Ok(q)
    }

    /// March several adjoints in lockstep, sharing one factorization per step.
    pub fn backward_batch(
        &self,
        q_ts: &[Vec<f64>],
        mut observe: impl FnMut(usize, &[Vec<f64>]),
    ) -> Result<Vec<Vec<f64>>> {
        for q in q_ts {
            self.check_len(q)?;
        }
        let inv_dt = 1.0 / self.time.dt();
        let n_steps = self.time.steps();
        let mut qs = q_ts.to_vec();
        observe(n_steps + 1, &qs);
        for n in (1..=n_steps).rev() {
            let factor = self.factor(n)?;
            for q in qs.iter_mut() {
                q.iter_mut().for_each(|v| *v *= inv_dt);
                factor.solve_in_place(q);
            }
            observe(n, &qs);
        }
        Ok(qs)
    }

    /// Forward march from `g` driven by `f^n = weight ⊙ q_n`, where `q` is the
    /// adjoint from `q_T`. Adjoint slices are replayed from checkpoints, so
    /// memory stays `O(√N)` slices. `observe(n, y^n, q_n)` runs for `n = 1..=N`.
    pub fn forward_from_adjoint(
        &self,
        g: &[f64],
        q_t: &[f64],
        weight: &[f64],
        mut observe: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<Vec<f64>> {
        self.check_len(g)?;
        self.check_len(q_t)?;
        self.check_len(weight)?;
        let n_steps = self.time.steps();
        let block = ((n_steps as f64).sqrt().ceil() as usize).max(1);
        let blocks = n_steps.div_ceil(block);
        let block_end = |b: usize| ((b + 1) * block).min(n_steps);
        // checkpoints[b] holds q_{end_b + 1}
        let mut checkpoints: Vec<Vec<f64>> = vec![Vec::new(); blocks];
        self.backward(q_t, |j, q| {
            if j >= 2 && (j - 1 == n_steps || (j - 1) % block == 0) {
                checkpoints[(j - 2) / block] = q.to_vec();
            }
        })?;
        let inv_dt = 1.0 / self.time.dt();
        let width = g.len();
        let mut y = g.to_vec();
        let mut stored = vec![0.0; block * width];
        for (b, checkpoint) in checkpoints.iter().enumerate() {
            let start = b * block + 1;
            let end = block_end(b);
            let mut q = checkpoint.clone();
            for n in (start..=end).rev() {
                q.iter_mut().for_each(|v| *v *= inv_dt);
                self.factor(n)?.solve_in_place(&mut q);
                stored[(n - start) * width..(n - start + 1) * width].copy_from_slice(&q);
            }
            for n in start..=end {
                let qn = &stored[(n - start) * width..(n - start + 1) * width];
                for ((yi, wi), qi) in y.iter_mut().zip(weight).zip(qn) {
                    *yi = *yi * inv_dt + wi * qi;
                }
                self.factor(n)?.solve_in_place(&mut y);
                observe(n, &y, qn);
            }
        }
        Ok(y)
    }
}

/// One grid function on a space set per node of a time set, slice-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    space: SpaceMesh,
    time: TimeMesh,
    space_set: SpaceSet,
    time_set: TimeSet,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(
        space: SpaceMesh,
        time: TimeMesh,
        space_set: SpaceSet,
        time_set: TimeSet,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = space.count(space_set) * time.count(time_set);
        if values.len() != expected {
            return Err(Error::SetMismatch {
                expected: format!("{expected} values on {} x {}", space_set.name(), time_set.name()),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            space,
            time,
            space_set,
            time_set,
            values,
        })
    }

    pub fn zeros(space: SpaceMesh, time: TimeMesh, space_set: SpaceSet, time_set: TimeSet) -> Self {
        let len = space.count(space_set) * time.count(time_set);
        Self {
            space,
            time,
            space_set,
            time_set,
            values: vec![0.0; len],
        }
    }

    pub fn from_fn(
        space: SpaceMesh,
        time: TimeMesh,
        space_set: SpaceSet,
        time_set: TimeSet,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let xs = space.coords(space_set);
        let values = time
            .times(time_set)
            .iter()
            .flat_map(|&t| xs.iter().map(move |&x| (x, t)))
            .map(|(x, t)| f(x, t))
            .collect();
        Self {
            space,
            time,
            space_set,
            time_set,
            values,
        }
    }

    pub fn space(&self) -> &SpaceMesh {
        &self.space
    }

    pub fn time(&self) -> &TimeMesh {
        &self.time
    }

    pub fn space_set(&self) -> SpaceSet {
        self.space_set
    }

    pub fn time_set(&self) -> TimeSet {
        self.time_set
    }

    /// Values per slice.
    pub fn width(&self) -> usize {
        self.space.count(self.space_set)
    }

    /// Number of slices.
    pub fn slices(&self) -> usize {
        self.time.count(self.time_set)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Slice `k` in storage order (`k = 0` is the first node of the time set).
    pub fn slice(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.values[k * w..(k + 1) * w]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.values[k * w..(k + 1) * w]
    }

    pub fn slice_function(&self, k: usize) -> GridFunction {
        GridFunction::new(self.space, self.space_set, self.slice(k).to_vec())
            .expect("slice width matches its set")
    }

    /// Time of slice `k`.
    pub fn time_of(&self, k: usize) -> f64 {
        match self.time_set {
            TimeSet::Primal => self.time.primal(k + 1),
            TimeSet::PrimalClosed => self.time.primal(k),
            TimeSet::Dual | TimeSet::DualClosed => self.time.dual(k + 1),
            TimeSet::Boundary => [0.0, self.time.t_final()][k],
        }
    }

    pub fn expect_layout(&self, space_set: SpaceSet, time_set: TimeSet) -> Result<()> {
        if self.space_set != space_set || self.time_set != time_set {
            return Err(Error::SetMismatch {
                expected: format!("{} x {}", space_set.name(), time_set.name()),
                found: format!("{} x {}", self.space_set.name(), self.time_set.name()),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }
}

fn expect_closed(u: &GridFunction) -> Result<()> {
    u.expect_set(SpaceSet::PrimalClosed)
}

/// Solve the controlled system from `y(0) = g` with interior source `f` on `𝓜 × 𝒩*`.
///
/// The source slice `j` enters the step that computes `y(t_j)`. The result lives
/// on `𝓜̄ × 𝒩̄`.
pub fn forward_solve(
    g: &GridFunction,
    source: Option<&SpaceTimeField>,
    time: &TimeMesh,
    potentials: &Potentials,
) -> Result<SpaceTimeField> {
    expect_closed(g)?;
    if let Some(f) = source {
        f.expect_layout(SpaceSet::Primal, TimeSet::Dual)?;
    }
    let space = *g.mesh();
    let propagator = Propagator::new(&space, time, potentials)?;
    let mut y = SpaceTimeField::zeros(space, *time, SpaceSet::PrimalClosed, TimeSet::PrimalClosed);
    let width = space.len();
    propagator.forward(
        g.values(),
        |n, buf| {
            if let Some(f) = source {
                buf[1..width - 1].copy_from_slice(f.slice(n - 1));
            }
        },
        |n, slice| y.slice_mut(n).copy_from_slice(slice),
    )?;
    Ok(y)
}

/// Solve the adjoint backwards from `q(T + Δt/2) = q_T`; result on `𝓜̄ × 𝒩̄*`.
pub fn adjoint_solve(q_t: &GridFunction, time: &TimeMesh, potentials: &Potentials) -> Result<SpaceTimeField> {
    expect_closed(q_t)?;
    let space = *q_t.mesh();
    let propagator = Propagator::new(&space, time, potentials)?;
    let mut q = SpaceTimeField::zeros(space, *time, SpaceSet::PrimalClosed, TimeSet::DualClosed);
    propagator.backward(q_t.values(), |j, slice| q.slice_mut(j - 1).copy_from_slice(slice))?;
    Ok(q)
}

/// Exponential change of variable making the potentials nonnegative.
///
/// With `κ = 1/(1-γΔt)` and `a = κ^{1/(γΔt)}`, `q̃ = q·a^{γ(t-T)}` solves the
/// adjoint with diffusion scale `κ` and potential `κ(c+γ) ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tilt {
    pub potentials: Potentials,
    /// `a`, equal to `e` when `γ = 0`.
    pub base: f64,
    pub gamma: f64,
    /// `κ = a^{γΔt}`.
    pub growth: f64,
    dt: f64,
    t_final: f64,
}

pub fn tilt_potential(potentials: &Potentials, time: &TimeMesh) -> Result<Tilt> {
    let gamma = potentials.gamma();
    let dt = time.dt();
    if gamma * dt >= 1.0 {
        return Err(Error::Parameter(format!(
            "tilting needs gamma*dt < 1, got {}",
            gamma * dt
        )));
    }
    let log_growth = -(-gamma * dt).ln_1p();
    let base = if gamma == 0.0 {
        std::f64::consts::E
    } else {
        (log_growth / (gamma * dt)).exp()
    };
    let growth = log_growth.exp();
    let tilted = potentials
        .map(|c| growth * (c + gamma))
        .with_diffusion(growth * potentials.diffusion());
    Ok(Tilt {
        potentials: tilted,
        base,
        gamma,
        growth,
        dt,
        t_final: time.t_final(),
    })
}

impl Tilt {
    /// `a^{γ(t-T)}`.
    pub fn factor(&self, t: f64) -> f64 {
        ((t - self.t_final) / self.dt * self.growth.ln()).exp()
    }

    fn rescale(&self, q: &SpaceTimeField, sign: f64) -> Result<SpaceTimeField> {
        q.expect_layout(SpaceSet::PrimalClosed, TimeSet::DualClosed)?;
        let mut out = q.clone();
        for k in 0..q.slices() {
            let c = self.factor(q.time_of(k)).powf(sign);
            out.slice_mut(k).iter_mut().for_each(|v| *v *= c);
        }
        Ok(out)
    }

    /// `q ↦ q̃`.
    pub fn apply(&self, q: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.rescale(q, 1.0)
    }

    /// `q̃ ↦ q`.
    pub fn revert(&self, q: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.rescale(q, -1.0)
    }

    /// Tilted terminal datum `q̃_T = q_T·a^{γΔt/2}`.
    pub fn apply_terminal(&self, q_t: &GridFunction) -> GridFunction {
        let c = self.factor(self.t_final + 0.5 * self.dt);
        q_t.map(|v| v * c)
    }
}

/// Energy bound check for a forward trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// `‖y(t)‖²/(‖g‖² + ‖f‖²)` for `t ∈ 𝒩`.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `exp(T + T‖b‖_∞)`.
    pub bound: f64,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.max_ratio <= self.bound
    }
}

/// Compare `‖y(t)‖²_{𝕃²_h}` with `C(‖g‖²_{𝕃²_h} + ‖f‖²_{L²_h(𝓜×𝒩)})`.
pub fn stability_check(
    y: &SpaceTimeField,
    g: &GridFunction,
    source: Option<&SpaceTimeField>,
    potentials: &Potentials,
) -> Result<StabilityReport> {
    y.expect_layout(SpaceSet::PrimalClosed, TimeSet::PrimalClosed)?;
    expect_closed(g)?;
    let time = y.time();
    let (dt, sup) = (time.dt(), potentials.gamma());
    if dt.max(dt * sup) >= 0.5 {
        return Err(Error::Admissibility(format!(
            "stability estimate needs max(dt, dt*|b|) < 1/2, got {}",
            dt.max(dt * sup)
        )));
    }
    let h = y.space().h();
    let mut data = l2h_dot(h, g.values(), g.values());
    if let Some(f) = source {
        f.expect_layout(SpaceSet::Primal, TimeSet::Dual)?;
        data += dt * h * f.values().iter().map(|v| v * v).sum::<f64>();
    }
    let ratios: Vec<f64> = (1..y.slices())
        .map(|k| {
            let e = l2h_dot(h, y.slice(k), y.slice(k));
            if data == 0.0 {
                0.0
            } else {
                e / data
            }
        })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(StabilityReport {
        ratios,
        max_ratio,
        bound: (time.t_final() * (1.0 + sup)).exp(),
    })
}

/// Both sides of the discrete duality identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityReport {
    /// `∫_{𝓜×𝒩*} v·q`.
    pub observation: f64,
    /// `⟨y(T), q_T⟩ - ⟨y(0), q(Δt/2)⟩` in `𝕃²_h`.
    pub pairing: f64,
    pub residual: f64,
}

/// Evaluate the duality identity by brute-force summation of both sides.
pub fn duality_residual(
    g: &GridFunction,
    source: Option<&SpaceTimeField>,
    q_t: &GridFunction,
    time: &TimeMesh,
    potentials: &Potentials,
) -> Result<DualityReport> {
    let y = forward_solve(g, source, time, potentials)?;
    let q = adjoint_solve(q_t, time, potentials)?;
    let h = g.mesh().h();
    let observation = match source {
        None => 0.0,
        Some(f) => {
            let mut acc = 0.0;
            for j in 0..time.steps() {
                let qj = q.slice(j);
                acc += f.slice(j).iter().zip(&qj[1..qj.len() - 1]).map(|(a, b)| a * b).sum::<f64>();
            }
            time.dt() * h * acc
        }
    };
    let pairing = l2h_dot(h, y.slice(time.steps()), q_t.values()) - l2h_dot(h, g.values(), q.slice(0));
    Ok(DualityReport {
        observation,
        pairing,
        residual: (observation - pairing).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg64;

    fn random_closed(space: SpaceMesh, rng: &mut Lcg64) -> GridFunction {
        GridFunction::new(space, SpaceSet::PrimalClosed, rng.symmetric_vec(space.len())).unwrap()
    }

    fn lumped_mass(h: f64, y: &[f64]) -> f64 {
        let n = y.len();
        h * y[1..n - 1].iter().sum::<f64>() + y[0] + y[n - 1]
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let space = SpaceMesh::new(6).unwrap();
        let time = TimeMesh::new(5, 1.0).unwrap();
        let pot = Potentials::constant(&space, 1.0, 2.0, -0.5);
        let g = GridFunction::zeros(space, SpaceSet::PrimalClosed);
        assert!(forward_solve(&g, None, &time, &pot).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(adjoint_solve(&g, &time, &pot).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_are_equilibria() {
        let space = SpaceMesh::new(9).unwrap();
        let time = TimeMesh::new(7, 0.5).unwrap();
        let pot = Potentials::zero(&space);
        let g = GridFunction::constant(space, SpaceSet::PrimalClosed, 1.7);
        let y = forward_solve(&g, None, &time, &pot).unwrap();
        assert!(y.values().iter().all(|v| (v - 1.7).abs() < 1e-13));
        let q = adjoint_solve(&g, &time, &pot).unwrap();
        assert!(q.values().iter().all(|v| (v - 1.7).abs() < 1e-13));
    }

    #[test]
    fn lumped_mass_is_conserved() {
        let space = SpaceMesh::new(23).unwrap();
        let time = TimeMesh::new(40, 1.0).unwrap();
        let pot = Potentials::zero(&space);
        let g = random_closed(space, &mut Lcg64::new(11));
        let y = forward_solve(&g, None, &time, &pot).unwrap();
        let m0 = lumped_mass(space.h(), g.values());
        for k in 0..y.slices() {
            assert!((lumped_mass(space.h(), y.slice(k)) - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_matrix_is_self_adjoint_in_weighted_product() {
        let space = SpaceMesh::new(13).unwrap();
        let mut rng = Lcg64::new(2);
        let c = rng.symmetric_vec(space.len());
        let a = step_matrix(space.h(), 0.01, 1.3, &c);
        let (u, w) = (rng.symmetric_vec(space.len()), rng.symmetric_vec(space.len()));
        let (mut au, mut aw) = (vec![0.0; u.len()], vec![0.0; u.len()]);
        a.apply(&u, &mut au);
        a.apply(&w, &mut aw);
        let h = space.h();
        assert!((l2h_dot(h, &au, &w) - l2h_dot(h, &u, &aw)).abs() < 1e-13 * l2h_dot(h, &au, &au).sqrt() * 1e2);
    }

    #[test]
    fn duality_holds_for_random_data() {
        let mut rng = Lcg64::new(7);
        let space = SpaceMesh::new(8).unwrap();
        let time = TimeMesh::new(8, 1.0).unwrap();
        let pot = Potentials::from_fn(&space, &time, |x, t| x - t, |t| t, |t| -t);
        let g = random_closed(space, &mut rng);
        let q_t = random_closed(space, &mut rng);
        let n = space.count(SpaceSet::Primal) * time.steps();
        let v = SpaceTimeField::new(space, time, SpaceSet::Primal, TimeSet::Dual, rng.symmetric_vec(n)).unwrap();
        let report = duality_residual(&g, Some(&v), &q_t, &time, &pot).unwrap();
        assert!(report.residual <= 1e-12, "{report:?}");
        let homogeneous = duality_residual(&g, None, &q_t, &time, &pot).unwrap();
        assert!(homogeneous.residual <= 1e-12);
    }

    #[test]
    fn stability_examples() {
        let mut rng = Lcg64::new(9);
        let space = SpaceMesh::new(15).unwrap();
        let time = TimeMesh::new(20, 1.0).unwrap();
        let g = random_closed(space, &mut rng);
        for b in [0.0, 1.0] {
            let pot = Potentials::constant(&space, b, b, b);
            let y = forward_solve(&g, None, &time, &pot).unwrap();
            let report = stability_check(&y, &g, None, &pot).unwrap();
            assert!((report.bound - (1.0 + b).exp()).abs() < 1e-12);
            assert!(report.passed());
        }
        let zero = GridFunction::zeros(space, SpaceSet::PrimalClosed);
        let pot = Potentials::zero(&space);
        let y = forward_solve(&zero, None, &time, &pot).unwrap();
        assert_eq!(stability_check(&y, &zero, None, &pot).unwrap().max_ratio, 0.0);
        let coarse = TimeMesh::new(2, 1.0).unwrap();
        let y = forward_solve(&g, None, &coarse, &pot).unwrap();
        assert!(matches!(stability_check(&y, &g, None, &pot), Err(Error::Admissibility(_))));
    }

    #[test]
    fn tilt_factor_values() {
        let space = SpaceMesh::new(4).unwrap();
        let time = TimeMesh::new(10, 1.0).unwrap();
        let tilt = tilt_potential(&Potentials::constant(&space, -1.0, 0.5, 0.0), &time).unwrap();
        assert!((tilt.base - (1.0f64 / 0.9).powi(10)).abs() < 1e-13);
        assert!((tilt.base - 2.8680).abs() < 1e-4);
        let flat = tilt_potential(&Potentials::zero(&space), &time).unwrap();
        assert_eq!(flat.base, std::f64::consts::E);
        assert_eq!(flat.potentials, Potentials::zero(&space));
        let short = TimeMesh::new(2, 1.0).unwrap();
        assert!(tilt_potential(&Potentials::constant(&space, 3.0, 0.0, 0.0), &short).is_err());
    }

    #[test]
    fn tilted_adjoint_is_nondecreasing() {
        let mut rng = Lcg64::new(4);
        let space = SpaceMesh::new(12).unwrap();
        let time = TimeMesh::new(30, 1.0).unwrap();
        let pot = Potentials::from_fn(&space, &time, |x, t| -2.0 * x + t, |t| -1.5 * t, |_| 0.7);
        let tilt = tilt_potential(&pot, &time).unwrap();
        assert!(tilt.potentials.min_value() >= 0.0);
        let q_t = random_closed(space, &mut rng);
        let q = adjoint_solve(&q_t, &time, &pot).unwrap();
        let tilted = tilt.apply(&q).unwrap();
        let direct = adjoint_solve(&tilt.apply_terminal(&q_t), &time, &tilt.potentials).unwrap();
        for (a, b) in tilted.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
        let h = space.h();
        for k in 1..tilted.slices() {
            let (lo, hi) = (l2h_dot(h, tilted.slice(k - 1), tilted.slice(k - 1)), l2h_dot(h, tilted.slice(k), tilted.slice(k)));
            assert!(lo.sqrt() <= hi.sqrt() + 1e-12);
        }
        let back = tilt.revert(&tilted).unwrap();
        for (a, b) in back.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn replayed_forward_matches_stored_adjoint() {
        let mut rng = Lcg64::new(12);
        let space = SpaceMesh::new(10).unwrap();
        let time = TimeMesh::new(37, 1.0).unwrap();
        let pot = Potentials::from_fn(&space, &time, |x, t| x * t, |_| 0.3, |t| t);
        let g = random_closed(space, &mut rng);
        let q_t = random_closed(space, &mut rng);
        let weight: Vec<f64> = (0..space.len()).map(|i| if (3..8).contains(&i) { 1.0 } else { 0.0 }).collect();
        let q = adjoint_solve(&q_t, &time, &pot).unwrap();
        let propagator = Propagator::new(&space, &time, &pot).unwrap();
        let mut seen = Vec::new();
        let replayed = propagator
            .forward_from_adjoint(g.values(), q_t.values(), &weight, |n, _, qn| {
                assert_eq!(qn, q.slice(n - 1));
                seen.push(n);
            })
            .unwrap();
        assert_eq!(seen, (1..=37).collect::<Vec<_>>());
        let direct = propagator
            .forward(g.values(), |n, f| {
                for i in 0..f.len() {
                    f[i] = weight[i] * q.slice(n - 1)[i];
                }
            }, |_, _| {})
            .unwrap();
        assert_eq!(replayed, direct);
    }

    #[test]
    fn strongly_negative_potential_uses_pivoting() {
        let space = SpaceMesh::new(5).unwrap();
        let time = TimeMesh::new(2, 1.0).unwrap();
        let pot = Potentials::constant(&space, -30.0, -30.0, -30.0);
        let propagator = Propagator::new(&space, &time, &pot).unwrap();
        assert!(!propagator.step_matrix(1).strictly_diagonally_dominant());
        let g: Vec<f64> = (0..space.len()).map(|i| 1.0 + i as f64).collect();
        let mut slices = Vec::new();
        propagator.forward(&g, |_, _| {}, |_, y| slices.push(y.to_vec())).unwrap();
        let mut lhs = vec![0.0; g.len()];
        propagator.step_matrix(2).apply(&slices[2], &mut lhs);
        for (a, b) in lhs.iter().zip(&slices[1]) {
            assert!((a - b / time.dt()).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
}
