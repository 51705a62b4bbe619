//! Term-by-term evaluation of the discrete Carleman inequality, relaxed
//! observability diagnostics and parameter admissibility.
//!
//! The adjoint `q` lives on `𝓜̄ × 𝒩̄*` with slice `j` at `(j-1/2)Δt`,
//! `j = 1..=N+1`. Quantities at `t_n ∈ 𝒩` pair slices `n` and `n+1`;
//! `τ⁻` weights at `t_n` are sampled on slice `n`.
//!
//! Every integrand of the left-hand side is weighted by `r²` at its sample
//! point. All weights are reported relative to `exp(log_scale)`, the largest
//! `r²` over the sample points, so the ratio is unaffected and nothing
//! underflows.

use crate::calculus::l2h_dot;
use crate::error::{Error, Result};
use crate::hum::{observation_weight, penalty_exponent};
use crate::mesh::{GridFunction, Region, SpaceMesh, SpaceSet, TimeFunction, TimeMesh, TimeSet};
use crate::solver::{tilt_potential, Potentials, Propagator, SpaceTimeField};
use crate::weights::CarlemanParams;

/// Left-hand terms, in order.
pub const LHS_TERMS: [&str; 8] = [
    "time_derivative",
    "second_difference",
    "first_difference",
    "zeroth_order",
    "averaged_difference",
    "boundary_flux",
    "boundary_average",
    "boundary_time_derivative",
];

/// Right-hand terms, in order.
pub const RHS_TERMS: [&str; 6] = [
    "operator_residual",
    "observation",
    "left_boundary_residual",
    "right_boundary_residual",
    "terminal_boundary",
    "terminal_interior",
];

fn dual_slices(q: &SpaceTimeField) -> Result<()> {
    q.expect_layout(SpaceSet::PrimalClosed, TimeSet::DualClosed)
}

/// `𝒫q = -D_t q - D_h² τ⁻q` on `𝓜 × 𝒩`.
///
/// For an adjoint solution this equals `-b·τ⁻q`.
pub fn apply_p(q: &SpaceTimeField) -> Result<SpaceTimeField> {
    dual_slices(q)?;
    let (space, time) = (*q.space(), *q.time());
    let (h2, dt) = (space.h() * space.h(), time.dt());
    let mut out = SpaceTimeField::zeros(space, time, SpaceSet::Primal, TimeSet::Primal);
    for n in 1..=time.steps() {
        let (now, next) = (q.slice(n - 1), q.slice(n));
        let slot = out.slice_mut(n - 1);
        for i in 1..space.len() - 1 {
            let lap = (now[i + 1] - 2.0 * now[i] + now[i - 1]) / h2;
            slot[i - 1] = -(next[i] - now[i]) / dt - lap;
        }
    }
    Ok(out)
}

/// `N_Γ0 q = D_t q + D_h q(h/2)` at `x = 0` and `N_Γ1 q = D_t q - D_h q(1-h/2)`
/// at `x = 1`, both on `𝒩`.
///
/// For an adjoint solution these equal `b_Γ0·τ⁻q(0)` and `b_Γ1·τ⁻q(1)`.
pub fn apply_boundary_ops(q: &SpaceTimeField) -> Result<(TimeFunction, TimeFunction)> {
    dual_slices(q)?;
    let (space, time) = (*q.space(), *q.time());
    let (h, dt, last) = (space.h(), time.dt(), space.len() - 1);
    let mut left = Vec::with_capacity(time.steps());
    let mut right = Vec::with_capacity(time.steps());
    for n in 1..=time.steps() {
        let (now, next) = (q.slice(n - 1), q.slice(n));
        left.push((next[0] - now[0]) / dt + (now[1] - now[0]) / h);
        right.push((next[last] - now[last]) / dt - (now[last] - now[last - 1]) / h);
    }
    Ok((
        TimeFunction::new(time, TimeSet::Primal, left)?,
        TimeFunction::new(time, TimeSet::Primal, right)?,
    ))
}

/// How the weights enter the breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    Carleman,
    /// `r ≡ s ≡ 1`; reduces every term to a plain squared norm.
    Unit,
}

/// Named scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub name: &'static str,
    pub value: f64,
}

/// Every integral of the Carleman inequality, scaled by `exp(-log_scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanTermBreakdown {
    pub lhs: [Term; 8],
    pub rhs: [Term; 6],
    pub log_scale: f64,
}

impl CarlemanTermBreakdown {
    pub fn lhs_total(&self) -> f64 {
        self.lhs.iter().map(|t| t.value).sum()
    }

    pub fn rhs_total(&self) -> f64 {
        self.rhs.iter().map(|t| t.value).sum()
    }

    /// `ΣLHS / ΣRHS`, `None` for `0/0`.
    pub fn ratio(&self) -> Option<f64> {
        let (l, r) = (self.lhs_total(), self.rhs_total());
        if r == 0.0 {
            if l == 0.0 {
                None
            } else {
                Some(f64::INFINITY)
            }
        } else {
            Some(l / r)
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.lhs.iter().chain(self.rhs.iter())
    }
}

/// Weights on one dual slice.
#[derive(Clone, Debug)]
pub struct SliceWeights {
    s: f64,
    /// Normalized `r²` on `𝓜̄`.
    nodes: Vec<f64>,
    /// Normalized `r²` on `𝓜*`.
    mids: Vec<f64>,
}

/// Precomputed weight data for one mesh pair.
pub struct CarlemanEvaluator {
    space: SpaceMesh,
    time: TimeMesh,
    params: CarlemanParams,
    mode: WeightMode,
    observation: Vec<f64>,
    phi_nodes: Vec<f64>,
    phi_mids: Vec<f64>,
    log_scale: f64,
}

impl CarlemanEvaluator {
    pub fn new(
        space: &SpaceMesh,
        time: &TimeMesh,
        params: &CarlemanParams,
        observation: &Region,
        mode: WeightMode,
    ) -> Result<Self> {
        if (params.t_final() - time.t_final()).abs() > 1e-12 * time.t_final() {
            return Err(Error::Parameter(format!(
                "weight horizon {} differs from mesh horizon {}",
                params.t_final(),
                time.t_final()
            )));
        }
        let top = time.dual(time.steps() + 1);
        if mode == WeightMode::Carleman && top >= params.theta_horizon() {
            return Err(Error::Parameter(format!(
                "weights undefined at T + dt/2 = {top}: need dt/2 < delta*T"
            )));
        }
        let phi_nodes: Vec<f64> = space.coords(SpaceSet::PrimalClosed).iter().map(|&x| params.phi(x)).collect();
        let phi_mids: Vec<f64> = space.coords(SpaceSet::Dual).iter().map(|&x| params.phi(x)).collect();
        let log_scale = match mode {
            WeightMode::Unit => 0.0,
            WeightMode::Carleman => {
                let s_min = (1..=time.steps() + 1)
                    .map(|j| params.s(time.dual(j)))
                    .fold(f64::INFINITY, f64::min);
                let phi_max = phi_nodes.iter().chain(&phi_mids).cloned().fold(f64::NEG_INFINITY, f64::max);
                2.0 * s_min * phi_max
            }
        };
        Ok(Self {
            space: *space,
            time: *time,
            params: *params,
            mode,
            observation: observation_weight(space, observation),
            phi_nodes,
            phi_mids,
            log_scale,
        })
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Weights on dual slice `j`.
    pub fn slice_weights(&self, j: usize) -> SliceWeights {
        match self.mode {
            WeightMode::Unit => SliceWeights {
                s: 1.0,
                nodes: vec![1.0; self.phi_nodes.len()],
                mids: vec![1.0; self.phi_mids.len()],
            },
            WeightMode::Carleman => {
                let s = self.params.s(self.time.dual(j));
                let w = |p: &f64| (2.0 * s * p - self.log_scale).exp();
                SliceWeights {
                    s,
                    nodes: self.phi_nodes.iter().map(w).collect(),
                    mids: self.phi_mids.iter().map(w).collect(),
                }
            }
        }
    }

    pub fn accumulator(&self) -> TermAccumulator {
        TermAccumulator {
            lhs: [0.0; 8],
            rhs: [0.0; 6],
            next: None,
        }
    }

    /// Breakdown of a stored adjoint field.
    pub fn breakdown(&self, q: &SpaceTimeField) -> Result<CarlemanTermBreakdown> {
        dual_slices(q)?;
        if q.space() != &self.space || q.time() != &self.time {
            return Err(Error::SetMismatch {
                expected: "field on the evaluator meshes".into(),
                found: "field on other meshes".into(),
            });
        }
        let mut acc = self.accumulator();
        for j in (1..=self.time.steps() + 1).rev() {
            acc.push(self, j, q.slice(j - 1), &self.slice_weights(j));
        }
        Ok(acc.finish(self))
    }

    /// Breakdowns of the adjoints from several terminal data, marched in lockstep.
    pub fn breakdown_batch(
        &self,
        propagator: &Propagator<'_>,
        q_ts: &[Vec<f64>],
    ) -> Result<Vec<CarlemanTermBreakdown>> {
        let mut accs: Vec<TermAccumulator> = q_ts.iter().map(|_| self.accumulator()).collect();
        propagator.backward_batch(q_ts, |j, qs| {
            let w = self.slice_weights(j);
            for (acc, q) in accs.iter_mut().zip(qs) {
                acc.push(self, j, q, &w);
            }
        })?;
        Ok(accs.into_iter().map(|a| a.finish(self)).collect())
    }
}

/// Streaming sums of the breakdown, fed slices `j = N+1` down to `1`.
#[derive(Clone, Debug)]
pub struct TermAccumulator {
    lhs: [f64; 8],
    rhs: [f64; 6],
    next: Option<Vec<f64>>,
}

impl TermAccumulator {
    pub fn push(&mut self, ev: &CarlemanEvaluator, j: usize, q: &[f64], w: &SliceWeights) {
        let n_steps = ev.time.steps();
        let h = ev.space.h();
        let last = q.len() - 1;
        let s = w.s;
        let terminal = |q: &[f64]| {
            let boundary = w.nodes[0] * q[0] * q[0] + w.nodes[last] * q[last] * q[last];
            let interior: f64 = (1..last).map(|i| w.nodes[i] * q[i] * q[i]).sum();
            (boundary / (h * h), interior / h)
        };
        if j == n_steps + 1 || j == 1 {
            let (b, i) = terminal(q);
            self.rhs[4] += b;
            self.rhs[5] += i;
        }
        if j <= n_steps {
            self.single_slice(ev, q, w);
            if let Some(next) = &self.next {
                let dt = ev.time.dt();
                let (mut lhs0, mut rhs0) = (0.0, 0.0);
                for i in 1..last {
                    let d = (next[i] - q[i]) / dt;
                    let lap = (q[i + 1] - 2.0 * q[i] + q[i - 1]) / (h * h);
                    lhs0 += w.nodes[i] / s * d * d;
                    rhs0 += w.nodes[i] * (d + lap).powi(2);
                }
                self.lhs[0] += dt * h * lhs0;
                self.rhs[0] += dt * h * rhs0;
                let d0 = (next[0] - q[0]) / dt;
                let d1 = (next[last] - q[last]) / dt;
                self.lhs[7] += dt * (w.nodes[0] * d0 * d0 + w.nodes[last] * d1 * d1);
                let n0 = d0 + (q[1] - q[0]) / h;
                let n1 = d1 - (q[last] - q[last - 1]) / h;
                self.rhs[2] += dt * w.nodes[0] * n0 * n0;
                self.rhs[3] += dt * w.nodes[last] * n1 * n1;
            }
        }
        self.next = Some(q.to_vec());
    }

    fn single_slice(&mut self, ev: &CarlemanEvaluator, q: &[f64], w: &SliceWeights) {
        let (h, dt, s) = (ev.space.h(), ev.time.dt(), w.s);
        let last = q.len() - 1;
        let (mut second, mut zeroth, mut averaged, mut observed) = (0.0, 0.0, 0.0, 0.0);
        for i in 1..last {
            let lap = (q[i + 1] - 2.0 * q[i] + q[i - 1]) / (h * h);
            let centred = (q[i + 1] - q[i - 1]) / (2.0 * h);
            let wi = w.nodes[i];
            second += wi * lap * lap;
            zeroth += wi * q[i] * q[i];
            averaged += wi * centred * centred;
            observed += ev.observation[i] * wi * q[i] * q[i];
        }
        let first: f64 = (0..last)
            .map(|i| w.mids[i] * ((q[i + 1] - q[i]) / h).powi(2))
            .sum();
        let flux_left = ((q[1] - q[0]) / h).powi(2);
        let flux_right = ((q[last] - q[last - 1]) / h).powi(2);
        let avg_left = 0.5 * (q[0] * q[0] + q[1] * q[1]);
        let avg_right = 0.5 * (q[last] * q[last] + q[last - 1] * q[last - 1]);
        let s3 = s * s * s;
        self.lhs[1] += dt * h * second / s;
        self.lhs[2] += dt * h * s * first;
        self.lhs[3] += dt * h * s3 * zeroth;
        self.lhs[4] += dt * h * s * averaged;
        self.lhs[5] += dt * s * (w.nodes[0] * flux_left + w.nodes[last] * flux_right);
        self.lhs[6] += dt * s3 * (w.nodes[0] * avg_left + w.nodes[last] * avg_right);
        self.rhs[1] += dt * h * s3 * observed;
    }

    pub fn finish(self, ev: &CarlemanEvaluator) -> CarlemanTermBreakdown {
        let lhs = std::array::from_fn(|k| Term {
            name: LHS_TERMS[k],
            value: self.lhs[k],
        });
        let rhs = std::array::from_fn(|k| Term {
            name: RHS_TERMS[k],
            value: self.rhs[k],
        });
        CarlemanTermBreakdown {
            lhs,
            rhs,
            log_scale: ev.log_scale,
        }
    }
}

/// Breakdown of a stored adjoint with Carleman weights.
pub fn carleman_breakdown(
    q: &SpaceTimeField,
    params: &CarlemanParams,
    observation: &Region,
) -> Result<CarlemanTermBreakdown> {
    CarlemanEvaluator::new(q.space(), q.time(), params, observation, WeightMode::Carleman)?.breakdown(q)
}

/// Quantities of the relaxed observability inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservabilityReport {
    /// `‖q(Δt/2)‖²_{𝕃²_h}`.
    pub initial: f64,
    /// `∫_{ω×𝒩*}|q|²`.
    pub observed: f64,
    /// `e^{-C₁/h^{m_μ}}‖q_T‖²_{𝕃²_h}`.
    pub relaxation: f64,
    /// `min_{j ≥ 2} ‖q_j‖²_{𝕃²_h}`.
    pub min_later: f64,
    /// `e^{C(1 + 1/T + γ^{2/3} + Tγ)}` with the supplied `C`.
    pub structural: f64,
    /// Potentials were tilted before evaluation.
    pub tilted: bool,
}

impl ObservabilityReport {
    /// `L/(R₁+R₂)`, `None` for `0/0`.
    pub fn implied_constant(&self) -> Option<f64> {
        let rhs = self.observed + self.relaxation;
        if rhs == 0.0 {
            (self.initial != 0.0).then_some(f64::INFINITY)
        } else {
            Some(self.initial / rhs)
        }
    }

    /// `L ≤ ‖q_j‖²` for every later slice (relative slack `1e-12`).
    pub fn dissipative(&self) -> bool {
        self.initial <= self.min_later * (1.0 + 1e-12)
    }
}

/// Constants of the relaxed observability inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservabilitySettings {
    pub c1: f64,
    pub mu: f64,
    /// `C` in the structural form of `C_obs`.
    pub structural_c: f64,
}

impl Default for ObservabilitySettings {
    fn default() -> Self {
        Self {
            c1: 1.0,
            mu: 4.0,
            structural_c: 1.0,
        }
    }
}

/// Streaming sums of the observability quantities.
#[derive(Clone, Debug)]
pub struct ObservabilityAccumulator {
    h: f64,
    dt: f64,
    steps: usize,
    initial: f64,
    observed: f64,
    terminal: f64,
    min_later: f64,
}

impl ObservabilityAccumulator {
    pub fn new(space: &SpaceMesh, time: &TimeMesh) -> Self {
        Self {
            h: space.h(),
            dt: time.dt(),
            steps: time.steps(),
            initial: 0.0,
            observed: 0.0,
            terminal: 0.0,
            min_later: f64::INFINITY,
        }
    }

    /// Feed dual slice `j` of the (tilted) adjoint.
    pub fn push(&mut self, j: usize, q: &[f64], weight: &[f64]) {
        let norm = l2h_dot(self.h, q, q);
        if j == self.steps + 1 {
            self.terminal = norm;
        } else {
            self.observed += self.dt * self.h * weight.iter().zip(q).map(|(w, v)| w * v * v).sum::<f64>();
        }
        if j == 1 {
            self.initial = norm;
        } else {
            self.min_later = self.min_later.min(norm);
        }
    }

    pub fn finish(&self, settings: &ObservabilitySettings, t_final: f64, gamma: f64, tilted: bool) -> ObservabilityReport {
        let c = settings.structural_c;
        ObservabilityReport {
            initial: self.initial,
            observed: self.observed,
            relaxation: (-settings.c1 / self.h.powf(penalty_exponent(settings.mu))).exp() * self.terminal,
            min_later: self.min_later,
            structural: (c * (1.0 + 1.0 / t_final + gamma.powf(2.0 / 3.0) + t_final * gamma)).exp(),
            tilted,
        }
    }
}

/// Observability quantities for the adjoint from `q_T`, after tilting when
/// some potential is negative.
pub fn observability_report(
    q_t: &GridFunction,
    time: &TimeMesh,
    potentials: &Potentials,
    region: &Region,
    settings: &ObservabilitySettings,
) -> Result<ObservabilityReport> {
    q_t.expect_set(SpaceSet::PrimalClosed)?;
    let space = *q_t.mesh();
    let mut reports = observability_batch(&space, time, potentials, region, settings, &[q_t.values().to_vec()])?;
    Ok(reports.remove(0))
}

/// Observability quantities for several terminal data, marched in lockstep.
pub fn observability_batch(
    space: &SpaceMesh,
    time: &TimeMesh,
    potentials: &Potentials,
    region: &Region,
    settings: &ObservabilitySettings,
    q_ts: &[Vec<f64>],
) -> Result<Vec<ObservabilityReport>> {
    let weight = observation_weight(space, region);
    let gamma = potentials.gamma();
    let tilted = potentials.min_value() < 0.0;
    let (pot, data) = if tilted {
        let tilt = tilt_potential(potentials, time)?;
        let c = tilt.factor(time.dual(time.steps() + 1));
        let data: Vec<Vec<f64>> = q_ts.iter().map(|q| q.iter().map(|v| v * c).collect()).collect();
        (tilt.potentials, data)
    } else {
        (potentials.clone(), q_ts.to_vec())
    };
    let propagator = Propagator::new(space, time, &pot)?;
    let mut accs: Vec<ObservabilityAccumulator> = data.iter().map(|_| ObservabilityAccumulator::new(space, time)).collect();
    propagator.backward_batch(&data, |j, qs| {
        for (acc, q) in accs.iter_mut().zip(qs) {
            acc.push(j, q, &weight);
        }
    })?;
    Ok(accs
        .iter()
        .map(|a| a.finish(settings, time.t_final(), gamma, tilted))
        .collect())
}

/// Constants of the parameter couplings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissibilitySettings {
    pub epsilon0: f64,
    pub tau0: f64,
    pub tau2: f64,
    pub delta1: f64,
    pub mu: f64,
}

impl Default for AdmissibilitySettings {
    fn default() -> Self {
        Self {
            epsilon0: 0.5,
            tau0: 1.0,
            tau2: 1.0,
            delta1: 0.45,
            mu: 4.0,
        }
    }
}

impl AdmissibilitySettings {
    /// `M_μ = max(1, 4/μ)`.
    pub fn upper_exponent(&self) -> f64 {
        (4.0 / self.mu).max(1.0)
    }

    /// `m_μ = min(μ/4, 1)`.
    pub fn lower_exponent(&self) -> f64 {
        penalty_exponent(self.mu)
    }

    /// `τ = τ₂(T + T² + T²γ^{2/3})`.
    pub fn tau(&self, t_final: f64, gamma: f64) -> f64 {
        self.tau2 * (t_final + t_final * t_final * (1.0 + gamma.powf(2.0 / 3.0)))
    }

    /// `h₁ = ε₀((δ₁/τ₂)(1 + 1/T + γ^{2/3})⁻¹)^{M_μ}`.
    pub fn h1(&self, t_final: f64, gamma: f64) -> f64 {
        let base = self.delta1 / self.tau2 / (1.0 + 1.0 / t_final + gamma.powf(2.0 / 3.0));
        self.epsilon0 * base.powf(self.upper_exponent())
    }

    /// `δ = (h/h₁)^{m_μ}·δ₁`.
    pub fn delta(&self, h: f64, t_final: f64, gamma: f64) -> f64 {
        (h / self.h1(t_final, gamma)).powf(self.lower_exponent()) * self.delta1
    }

    /// `min(T⁻²h^μ, 1/(4γ))`.
    pub fn dt_cap(&self, h: f64, t_final: f64, gamma: f64) -> f64 {
        let coupled = h.powf(self.mu) / (t_final * t_final);
        if gamma > 0.0 {
            coupled.min(0.25 / gamma)
        } else {
            coupled
        }
    }

    /// Smallest step count whose `Δt` respects the cap.
    pub fn coupled_steps(&self, h: f64, t_final: f64, gamma: f64) -> usize {
        let ratio = t_final / self.dt_cap(h, t_final, gamma);
        let rounded = ratio.round();
        let n = if (ratio - rounded).abs() <= 1e-9 * ratio { rounded } else { ratio.ceil() };
        (n as usize).max(2)
    }
}

/// Admissibility of one `(h, Δt, δ, τ)` choice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissibilityReport {
    /// `τh/(δT²)`.
    pub space_ratio: f64,
    /// `τ⁴Δt/(δ⁴T⁶)`.
    pub time_ratio: f64,
    pub epsilon0: f64,
    pub h1: f64,
    /// `Δt̃ = h₁^μ`.
    pub dt_tilde: f64,
    /// `δ` from the coupling.
    pub coupled_delta: f64,
    pub upper_exponent: f64,
    pub lower_exponent: f64,
    pub dt_cap: f64,
    pub dt_within_cap: bool,
    pub h_within_h1: bool,
}

impl AdmissibilityReport {
    /// Both ratios `≤ ε₀` (relative slack `1e-12` for rounding).
    pub fn passed(&self) -> bool {
        let limit = self.epsilon0 * (1.0 + 1e-12);
        self.space_ratio <= limit && self.time_ratio <= limit
    }
}

pub fn admissibility(
    params: &CarlemanParams,
    h: f64,
    dt: f64,
    gamma: f64,
    settings: &AdmissibilitySettings,
) -> AdmissibilityReport {
    let (t, tau, delta) = (params.t_final(), params.tau(), params.delta());
    let h1 = settings.h1(t, gamma);
    let dt_cap = settings.dt_cap(h, t, gamma);
    AdmissibilityReport {
        space_ratio: tau * h / (delta * t * t),
        time_ratio: tau.powi(4) * dt / (delta.powi(4) * t.powi(6)),
        epsilon0: settings.epsilon0,
        h1,
        dt_tilde: h1.powf(settings.mu),
        coupled_delta: settings.delta(h, t, gamma),
        upper_exponent: settings.upper_exponent(),
        lower_exponent: settings.lower_exponent(),
        dt_cap,
        dt_within_cap: dt <= dt_cap * (1.0 + 1e-12),
        h_within_h1: h <= h1,
    }
}

/// Settings of a refinement sweep with coupled `(h, Δt, δ, τ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSettings {
    pub admissibility: AdmissibilitySettings,
    pub observability: ObservabilitySettings,
    pub lambda: f64,
    /// `K - ‖ψ‖_∞`.
    pub k_offset: f64,
    pub weight_core: Region,
    pub observation: Region,
    pub t_final: f64,
    /// Cosine modes of each seeded terminal datum.
    pub modes: usize,
    /// Step count used at every level instead of the coupled one.
    pub fixed_steps: Option<usize>,
}

impl SweepSettings {
    pub fn new(weight_core: Region, observation: Region) -> Self {
        Self {
            admissibility: AdmissibilitySettings::default(),
            observability: ObservabilitySettings::default(),
            lambda: 2.0,
            k_offset: 0.1,
            weight_core,
            observation,
            t_final: 1.0,
            modes: 8,
            fixed_steps: None,
        }
    }
}

/// Results of one refinement level.
#[derive(Clone, Debug)]
pub struct LevelResult {
    pub h: f64,
    pub steps: usize,
    pub params: CarlemanParams,
    pub admissibility: AdmissibilityReport,
    pub breakdowns: Vec<CarlemanTermBreakdown>,
    pub observability: Vec<ObservabilityReport>,
}

/// Terminal datum of run `index` under `seed`.
pub fn seeded_terminal(space: &SpaceMesh, seed: u64, index: u64, modes: usize) -> Vec<f64> {
    crate::rng::Lcg64::new(seed)
        .fork(index)
        .cosine_profile(modes)
        .sample(&space.coords(SpaceSet::PrimalClosed))
}

/// Carleman breakdowns and observability quantities for `runs` seeded
/// adjoints on the level with `m` interior nodes.
pub fn sweep_level(
    m: usize,
    potentials: impl Fn(&SpaceMesh, &TimeMesh) -> Potentials,
    seed: u64,
    runs: usize,
    settings: &SweepSettings,
) -> Result<LevelResult> {
    let space = SpaceMesh::new(m)?;
    let (h, t) = (space.h(), settings.t_final);
    let adm = &settings.admissibility;
    let probe = TimeMesh::new(2, t)?;
    let gamma = potentials(&space, &probe).gamma();
    let h1 = adm.h1(t, gamma);
    if h > h1 {
        return Err(Error::Admissibility(format!("h = {h} exceeds h1 = {h1}")));
    }
    let steps = settings.fixed_steps.unwrap_or_else(|| adm.coupled_steps(h, t, gamma));
    let time = TimeMesh::new(steps, t)?;
    let pot = potentials(&space, &time);
    let psi = crate::weights::build_psi(settings.weight_core)?;
    let params = CarlemanParams::new(
        psi,
        settings.lambda,
        adm.tau(t, gamma),
        adm.delta(h, t, gamma),
        psi.sup_norm() + settings.k_offset,
        t,
    )?;
    let admissibility = admissibility(&params, h, time.dt(), gamma, adm);
    let q_ts: Vec<Vec<f64>> = (0..runs as u64)
        .map(|k| seeded_terminal(&space, seed, k, settings.modes))
        .collect();
    let ev = CarlemanEvaluator::new(&space, &time, &params, &settings.observation, WeightMode::Carleman)?;
    let propagator = Propagator::new(&space, &time, &pot)?;
    let (breakdowns, observability) = if pot.min_value() < 0.0 {
        let b = ev.breakdown_batch(&propagator, &q_ts)?;
        let o = observability_batch(&space, &time, &pot, &settings.observation, &settings.observability, &q_ts)?;
        (b, o)
    } else {
        let weight = observation_weight(&space, &settings.observation);
        let mut terms: Vec<TermAccumulator> = q_ts.iter().map(|_| ev.accumulator()).collect();
        let mut obs: Vec<ObservabilityAccumulator> =
            q_ts.iter().map(|_| ObservabilityAccumulator::new(&space, &time)).collect();
        propagator.backward_batch(&q_ts, |j, qs| {
            let w = ev.slice_weights(j);
            for ((acc, o), q) in terms.iter_mut().zip(obs.iter_mut()).zip(qs) {
                acc.push(&ev, j, q, &w);
                o.push(j, q, &weight);
            }
        })?;
        (
            terms.into_iter().map(|a| a.finish(&ev)).collect(),
            obs.iter()
                .map(|o| o.finish(&settings.observability, t, gamma, false))
                .collect(),
        )
    };
    Ok(LevelResult {
        h,
        steps,
        params,
        admissibility,
        breakdowns,
        observability,
    })
}

/// Largest over runs of `max/min` across levels of a per-run quantity;
/// `None` when some value is missing or nonpositive.
pub fn per_run_spread(levels: &[Vec<Option<f64>>]) -> Option<f64> {
    let runs = levels.first()?.len();
    let mut worst: f64 = 1.0;
    for k in 0..runs {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for level in levels {
            let v = (*level.get(k)?)?;
            if !(v > 0.0 && v.is_finite()) {
                return None;
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        worst = worst.max(hi / lo);
    }
    Some(worst)
}
