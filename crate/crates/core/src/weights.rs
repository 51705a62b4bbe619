//! Carleman weight ingredients and convergence probes for discrete
//! operators applied to the weights.
//!
//! `ψ` is the downward parabola `A - (x-c₀)²` centred in the core region,
//! `φ = e^{λψ} - e^{λK}`, `θ(t) = 1/((t+δT)(T+δT-t))`, `s = τθ`,
//! `r = e^{sφ}` and `ρ = 1/r`.

use crate::error::{Error, Result};
use crate::mesh::{Region, SpaceMesh, SpaceSet, TimeMesh, TimeSet};

const AUDIT_POINTS: usize = 10_000;

/// Certified weight profile `ψ(x) = A - (x - c₀)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiFunction {
    core: Region,
    center: f64,
    amplitude: f64,
    floor: f64,
}

impl PsiFunction {
    pub fn value(&self, x: f64) -> f64 {
        let d = x - self.center;
        self.amplitude - d * d
    }

    pub fn derivative(&self, x: f64) -> f64 {
        -2.0 * (x - self.center)
    }

    pub fn second_derivative(&self) -> f64 {
        -2.0
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Lower bound of `|ψ'|` outside the closed core.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn core(&self) -> Region {
        self.core
    }

    /// `‖ψ‖_{C([0,1])}`, attained at the centre.
    pub fn sup_norm(&self) -> f64 {
        self.amplitude
    }
}

/// Build `ψ` for a core region and verify its certificate on an audit grid.
pub fn build_psi(core: Region) -> Result<PsiFunction> {
    let (a0, b0) = core.bounds();
    if !(0.0 < a0 && b0 < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "weight core ({a0}, {b0}) must lie strictly inside (0,1)"
        )));
    }
    let center = 0.5 * (a0 + b0);
    let amplitude = 1.0 + center.powi(2).max((1.0 - center).powi(2));
    let floor = 2.0 * (a0 - center).abs().min((b0 - center).abs());
    let psi = PsiFunction {
        core,
        center,
        amplitude,
        floor,
    };
    if psi.derivative(0.0) <= 0.0 || psi.derivative(1.0) >= 0.0 {
        return Err(Error::InvalidSpec("weight profile has wrong end slopes".into()));
    }
    for i in 0..=AUDIT_POINTS {
        let x = i as f64 / AUDIT_POINTS as f64;
        if psi.value(x) <= 0.0 {
            return Err(Error::InvalidSpec(format!("weight profile not positive at {x}")));
        }
        let outside = x <= a0 || x >= b0;
        if outside && psi.derivative(x).abs() < floor * (1.0 - 1e-12) {
            return Err(Error::InvalidSpec(format!(
                "weight profile slope below floor at {x}"
            )));
        }
    }
    Ok(psi)
}

/// Time dependence of the weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaMode {
    Standard,
    /// `θ ≡ 1`; only used to build degenerate reference cases.
    Frozen,
}

/// Parameters of the Carleman weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarlemanParams {
    psi: PsiFunction,
    lambda: f64,
    tau: f64,
    delta: f64,
    k: f64,
    t_final: f64,
    mode: ThetaMode,
}

impl CarlemanParams {
    pub fn new(
        psi: PsiFunction,
        lambda: f64,
        tau: f64,
        delta: f64,
        k: f64,
        t_final: f64,
    ) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::Parameter(format!("lambda = {lambda} must be at least 1")));
        }
        if !(tau >= 1.0) {
            return Err(Error::Parameter(format!("tau = {tau} must be at least 1")));
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::Parameter(format!("delta = {delta} must lie in (0, 1/2]")));
        }
        if !(k > psi.sup_norm()) {
            return Err(Error::Parameter(format!(
                "K = {k} must exceed sup psi = {}",
                psi.sup_norm()
            )));
        }
        if !(t_final > 0.0) {
            return Err(Error::Parameter(format!("T = {t_final} must be positive")));
        }
        Ok(Self {
            psi,
            lambda,
            tau,
            delta,
            k,
            t_final,
            mode: ThetaMode::Standard,
        })
    }

    pub fn with_mode(mut self, mode: ThetaMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Self::new(self.psi, self.lambda, tau, self.delta, self.k, self.t_final)
            .map(|p| p.with_mode(self.mode))
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(self.psi, self.lambda, self.tau, delta, self.k, self.t_final)
            .map(|p| p.with_mode(self.mode))
    }

    pub fn psi(&self) -> &PsiFunction {
        &self.psi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn mode(&self) -> ThetaMode {
        self.mode
    }

    /// Upper end of the interval where `θ` is defined, `T + δT`.
    pub fn theta_horizon(&self) -> f64 {
        self.t_final * (1.0 + self.delta)
    }

    pub fn theta(&self, t: f64) -> f64 {
        match self.mode {
            ThetaMode::Frozen => 1.0,
            ThetaMode::Standard => {
                let dt = self.delta * self.t_final;
                1.0 / ((t + dt) * (self.t_final + dt - t))
            }
        }
    }

    /// `θ'(t) = (2t - T)·θ(t)²`.
    pub fn theta_prime(&self, t: f64) -> f64 {
        match self.mode {
            ThetaMode::Frozen => 0.0,
            ThetaMode::Standard => (2.0 * t - self.t_final) * self.theta(t).powi(2),
        }
    }

    pub fn s(&self, t: f64) -> f64 {
        self.tau * self.theta(t)
    }

    pub fn s_prime(&self, t: f64) -> f64 {
        self.tau * self.theta_prime(t)
    }

    /// `ϕ(x) = e^{λψ(x)}`.
    pub fn exp_psi(&self, x: f64) -> f64 {
        (self.lambda * self.psi.value(x)).exp()
    }

    /// `φ(x) = e^{λψ(x)} - e^{λK}`, negative on `[0,1]`.
    pub fn phi(&self, x: f64) -> f64 {
        self.exp_psi(x) - (self.lambda * self.k).exp()
    }

    /// `φ(y) - φ(x)` without cancellation.
    pub fn phi_increment(&self, x: f64, y: f64) -> f64 {
        self.exp_psi(x) * (self.lambda * (self.psi.value(y) - self.psi.value(x))).exp_m1()
    }

    pub fn r(&self, x: f64, t: f64) -> f64 {
        (self.s(t) * self.phi(x)).exp()
    }

    pub fn rho(&self, x: f64, t: f64) -> f64 {
        (-self.s(t) * self.phi(x)).exp()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if self.mode == ThetaMode::Standard && !(t > -self.delta * self.t_final && t < self.theta_horizon()) {
            return Err(Error::Parameter(format!(
                "weight time {t} outside (-δT, T+δT)"
            )));
        }
        Ok(())
    }

    /// Taylor data of `r·∂_x^k ρ` at `x` for `k = 0..=order`.
    ///
    /// Returns `(Q_k, dQ_k/ds)` where `Q_k = r ∂_x^k ρ` is a polynomial in `s`.
    pub fn conjugated_derivatives(&self, x: f64, s: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
        // φ(x+ε) - φ(x) = e^{λψ(x)}·(exp(λ(ψ'(x)ε - ε²)) - 1)
        let lambda = self.lambda;
        let mut u = vec![0.0; order + 1];
        if order >= 1 {
            u[1] = lambda * self.psi.derivative(x);
        }
        if order >= 2 {
            u[2] = 0.5 * lambda * self.psi.second_derivative();
        }
        let e = exp_series(&u);
        let base = self.exp_psi(x);
        let increment: Vec<f64> = e
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 { 0.0 } else { base * c })
            .collect();
        // r(x)ρ(x+ε) = exp(-s·increment(ε)); differentiate the recursion in s.
        let mut g = vec![0.0; order + 1];
        let mut dg = vec![0.0; order + 1];
        g[0] = 1.0;
        for k in 1..=order {
            let (mut acc, mut dacc) = (0.0, 0.0);
            for j in 1..=k {
                let w = j as f64 * increment[j];
                acc += -s * w * g[k - j];
                dacc += -w * g[k - j] - s * w * dg[k - j];
            }
            g[k] = acc / k as f64;
            dg[k] = dacc / k as f64;
        }
        let mut factorial = 1.0;
        for k in 0..=order {
            if k > 0 {
                factorial *= k as f64;
            }
            g[k] *= factorial;
            dg[k] *= factorial;
        }
        (g, dg)
    }
}

/// Coefficients of `exp(u(ε))` for a series with `u₀ = 0`.
fn exp_series(u: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; u.len()];
    e[0] = 1.0;
    for k in 1..u.len() {
        let acc: f64 = (1..=k).map(|j| j as f64 * u[j] * e[k - j]).sum();
        e[k] = acc / k as f64;
    }
    e
}

/// Weights sampled on a space set × time set product.
#[derive(Clone, Debug)]
pub struct WeightSamples {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub exp_psi: Vec<f64>,
    /// `r` in time-major order, `r[j * x.len() + i]`.
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
}

pub fn eval_weights(
    params: &CarlemanParams,
    space: &SpaceMesh,
    space_set: SpaceSet,
    time: &TimeMesh,
    time_set: TimeSet,
) -> Result<WeightSamples> {
    let x = space.coords(space_set);
    let t = time.times(time_set);
    for &tj in &t {
        params.check_time(tj)?;
    }
    let theta: Vec<f64> = t.iter().map(|&tj| params.theta(tj)).collect();
    let s: Vec<f64> = theta.iter().map(|th| params.tau * th).collect();
    let phi: Vec<f64> = x.iter().map(|&xi| params.phi(xi)).collect();
    let exp_psi = x.iter().map(|&xi| params.exp_psi(xi)).collect();
    let mut r = Vec::with_capacity(t.len() * x.len());
    let mut rho = Vec::with_capacity(t.len() * x.len());
    for &sj in &s {
        for &p in &phi {
            r.push((sj * p).exp());
            rho.push((-sj * p).exp());
        }
    }
    Ok(WeightSamples {
        x,
        t,
        theta,
        s,
        phi,
        exp_psi,
        r,
        rho,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Observed convergence order of a probe.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderProbeReport {
    pub label: String,
    /// Refinement parameter per level (`h` or `Δt`).
    pub steps: Vec<f64>,
    /// Scaled error per level.
    pub errors: Vec<f64>,
    /// Fitted slope, `NaN` when every error vanishes.
    pub slope: f64,
    pub expected: f64,
    pub tolerance: f64,
    /// Admissibility ratio per level (must be ≤ its limit).
    pub admissibility: Vec<f64>,
}

impl OrderProbeReport {
    fn new(
        label: String,
        steps: Vec<f64>,
        errors: Vec<f64>,
        expected: f64,
        tolerance: f64,
        admissibility: Vec<f64>,
    ) -> Self {
        let slope = if errors.iter().all(|&e| e == 0.0) {
            f64::NAN
        } else {
            loglog_slope(&steps, &errors)
        };
        Self {
            label,
            steps,
            errors,
            slope,
            expected,
            tolerance,
            admissibility,
        }
    }

    /// Every error vanishes (the probed operator is exact).
    pub fn exact(&self) -> bool {
        self.errors.iter().all(|&e| e == 0.0)
    }

    pub fn passed(&self) -> bool {
        self.exact() || (self.slope - self.expected).abs() <= self.tolerance
    }
}

/// Laurent coefficients of `A_h^m D_h^n` in half-step translations.
///
/// Entry `k` multiplies `f(x + (k - (m+n))·h/2)`.
pub fn stencil(m: usize, n: usize, h: f64) -> Vec<f64> {
    let mut c = vec![1.0];
    let factors = std::iter::repeat([0.5, 0.5])
        .take(m)
        .chain(std::iter::repeat([-1.0 / h, 1.0 / h]).take(n));
    for [lo, hi] in factors {
        let mut next = vec![0.0; c.len() + 2];
        for (i, &v) in c.iter().enumerate() {
            next[i] += lo * v;
            next[i + 2] += hi * v;
        }
        c = next;
    }
    c
}

/// Audit nodes of the probes.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditGrid {
    pub x: Vec<f64>,
    /// Fractions of `T` at which the weights are probed.
    pub t_fractions: Vec<f64>,
}

impl Default for AuditGrid {
    fn default() -> Self {
        Self {
            x: (0..=20).map(|i| i as f64 / 20.0).collect(),
            t_fractions: (0..=10).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

/// `r(x)·A_h^m D_h^n(∂^α ρ)(x)` at weight parameter `s`.
fn discrete_conjugated(
    params: &CarlemanParams,
    coeffs: &[f64],
    x: f64,
    s: f64,
    h: f64,
    alpha: usize,
) -> f64 {
    let half = (coeffs.len() / 2) as f64;
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(k, &c)| {
            let y = x + (k as f64 - half) * 0.5 * h;
            let (q, _) = params.conjugated_derivatives(y, s, alpha);
            c * (-s * params.phi_increment(x, y)).exp() * q[alpha]
        })
        .sum()
}

/// Probe `r·A_h^m D_h^n ∂^α ρ = r·∂^{n+α}ρ + s^{n+α}·O((sh)²)`.
pub fn probe_space_estimate(
    m: usize,
    n: usize,
    alpha: usize,
    params: &CarlemanParams,
    h_levels: &[f64],
    audit: &AuditGrid,
    tolerance: f64,
) -> Result<OrderProbeReport> {
    if h_levels.len() < 3 {
        return Err(Error::Parameter("an order probe needs at least 3 levels".into()));
    }
    let t_final = params.t_final();
    let ratios: Vec<f64> = h_levels
        .iter()
        .map(|h| params.tau() * h / (params.delta() * t_final * t_final))
        .collect();
    if let Some((i, r)) = ratios.iter().enumerate().find(|(_, &r)| r > 1.0) {
        return Err(Error::Admissibility(format!(
            "level {i} (h = {}) has tau*h/(delta*T^2) = {r} > 1",
            h_levels[i]
        )));
    }
    let order = n + alpha;
    let mut errors = Vec::with_capacity(h_levels.len());
    for &h in h_levels {
        let coeffs = stencil(m, n, h);
        let mut worst: f64 = 0.0;
        for &frac in &audit.t_fractions {
            let s = params.s(frac * t_final);
            for &x in &audit.x {
                let exact = params.conjugated_derivatives(x, s, order).0[order];
                let approx = discrete_conjugated(params, &coeffs, x, s, h, alpha);
                worst = worst.max((approx - exact).abs() / s.powi(order as i32));
            }
        }
        errors.push(worst);
    }
    Ok(OrderProbeReport::new(
        format!("space estimate (m={m}, n={n}, alpha={alpha})"),
        h_levels.to_vec(),
        errors,
        2.0,
        tolerance,
        ratios,
    ))
}

/// Levels of the time-estimate probe.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeProbeLevels {
    /// `h` levels, run at `fine_dt`.
    pub h_levels: Vec<f64>,
    pub fine_dt: f64,
    /// `Δt` levels, run at `fine_h`.
    pub dt_levels: Vec<f64>,
    pub fine_h: f64,
}

impl Default for TimeProbeLevels {
    fn default() -> Self {
        Self {
            h_levels: vec![1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            fine_dt: 1e-5,
            dt_levels: vec![1.0 / 100.0, 1.0 / 200.0, 1.0 / 400.0],
            fine_h: 1.0 / 256.0,
        }
    }
}

/// Both fits of the time-estimate probe.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeProbeReport {
    pub space: OrderProbeReport,
    pub time: OrderProbeReport,
}

impl TimeProbeReport {
    pub fn passed(&self) -> bool {
        self.space.passed() && self.time.passed()
    }
}

fn time_residual(
    m: usize,
    n: usize,
    alpha: usize,
    params: &CarlemanParams,
    h: f64,
    dt: f64,
    audit: &AuditGrid,
) -> f64 {
    let coeffs = stencil(m, n, h);
    let order = n + alpha;
    let t_final = params.t_final();
    let mut worst: f64 = 0.0;
    for &frac in &audit.t_fractions {
        // The difference quotient over [t, t+Δt] is compared with ∂_t at t.
        let t = frac * (t_final - dt);
        let (s0, s1) = (params.s(t), params.s(t + dt));
        let scale = s0.powi(order as i32) * params.theta(t);
        for &x in &audit.x {
            let f0 = discrete_conjugated(params, &coeffs, x, s0, h, alpha);
            let f1 = discrete_conjugated(params, &coeffs, x, s1, h, alpha);
            let exact = params.s_prime(t) * params.conjugated_derivatives(x, s0, order).1[order];
            worst = worst.max(((f1 - f0) / dt - exact).abs() / scale);
        }
    }
    worst
}

/// Probe `D_t(r·A_h^m D_h^n ∂^α ρ) = ∂_t(r·∂^{n+α}ρ) + s^{n+α}θ·O((sh)² + ΔtT²θ)`.
pub fn probe_time_estimate(
    m: usize,
    n: usize,
    alpha: usize,
    params: &CarlemanParams,
    levels: &TimeProbeLevels,
    audit: &AuditGrid,
    tolerance: f64,
) -> Result<TimeProbeReport> {
    if levels.h_levels.len() < 3 || levels.dt_levels.len() < 3 {
        return Err(Error::Parameter("an order probe needs at least 3 levels".into()));
    }
    let t = params.t_final();
    let space_ratio = |h: f64| params.tau() * h / (params.delta() * t * t);
    let time_ratio = |dt: f64| params.tau() * dt / (t.powi(3) * params.delta().powi(2));
    let hs = levels.h_levels.iter().chain([&levels.fine_h]);
    for &h in hs {
        if space_ratio(h) > 1.0 {
            return Err(Error::Admissibility(format!(
                "h = {h} has tau*h/(delta*T^2) = {} > 1",
                space_ratio(h)
            )));
        }
    }
    for &dt in levels.dt_levels.iter().chain([&levels.fine_dt]) {
        if time_ratio(dt) > 0.5 {
            return Err(Error::Admissibility(format!(
                "dt = {dt} has tau*dt/(T^3*delta^2) = {} > 1/2",
                time_ratio(dt)
            )));
        }
    }
    let label = format!("time estimate (m={m}, n={n}, alpha={alpha})");
    let h_errors = levels
        .h_levels
        .iter()
        .map(|&h| time_residual(m, n, alpha, params, h, levels.fine_dt, audit))
        .collect();
    let dt_errors = levels
        .dt_levels
        .iter()
        .map(|&dt| time_residual(m, n, alpha, params, levels.fine_h, dt, audit))
        .collect();
    Ok(TimeProbeReport {
        space: OrderProbeReport::new(
            format!("{label}, h refinement"),
            levels.h_levels.clone(),
            h_errors,
            2.0,
            tolerance,
            levels.h_levels.iter().map(|&h| space_ratio(h)).collect(),
        ),
        time: OrderProbeReport::new(
            format!("{label}, dt refinement"),
            levels.dt_levels.clone(),
            dt_errors,
            1.0,
            tolerance,
            levels.dt_levels.iter().map(|&dt| time_ratio(dt)).collect(),
        ),
    })
}

/// Smallest constants in the discrete `θ` derivative bounds for one `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaBoundRow {
    pub steps: usize,
    pub ell: u32,
    /// Smallest `C` with `|D_t θ^ℓ| ≤ ℓTτ⁻θ^{ℓ+1} + CΔt/(δ^{ℓ+2}T^{2ℓ+2})` on `𝒩*`.
    pub power_constant: f64,
    /// Smallest `C` with `D_t θ' ≤ C(T²τ⁻θ³ + Δt/(δ⁴T⁵))` on `𝒩*`.
    pub derivative_constant: f64,
    /// `Δtτ/(T³δ²)`.
    pub admissibility: f64,
}

/// Constants per `(ℓ, N)` and their spread across `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaBoundReport {
    pub rows: Vec<ThetaBoundRow>,
    /// Allowed max/min ratio of a constant across `N`.
    pub spread_limit: f64,
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

impl ThetaBoundReport {
    /// Max/min ratio of the power constant across `N` for one `ℓ`.
    pub fn power_spread(&self, ell: u32) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.ell == ell)
            .map(|r| r.power_constant)
            .collect();
        spread(&v)
    }

    pub fn derivative_spread(&self) -> f64 {
        let first = self.rows.first().map(|r| r.ell);
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| Some(r.ell) == first)
            .map(|r| r.derivative_constant)
            .collect();
        spread(&v)
    }

    pub fn passed(&self) -> bool {
        let mut ells: Vec<u32> = self.rows.iter().map(|r| r.ell).collect();
        ells.dedup();
        ells.iter().all(|&l| self.power_spread(l) <= self.spread_limit)
            && self.derivative_spread() <= self.spread_limit
            && self.rows.iter().all(|r| r.admissibility <= 1.0)
    }
}

/// Evaluate the discrete `θ` bounds on `𝒩*` for each `ℓ` and `N`.
pub fn probe_theta_bounds(
    params: &CarlemanParams,
    ells: &[u32],
    steps: &[usize],
    spread_limit: f64,
) -> Result<ThetaBoundReport> {
    let t = params.t_final();
    let delta = params.delta();
    let mut rows = Vec::new();
    for &ell in ells {
        for &n in steps {
            let mesh = TimeMesh::new(n, t)?;
            let dt = mesh.dt();
            let times = mesh.times(TimeSet::PrimalClosed);
            let theta: Vec<f64> = times.iter().map(|&s| params.theta(s)).collect();
            let prime: Vec<f64> = times.iter().map(|&s| params.theta_prime(s)).collect();
            let e = ell as i32;
            let remainder = dt / (delta.powi(e + 2) * t.powi(2 * e + 2));
            let mut power_constant: f64 = 0.0;
            let mut derivative_constant: f64 = 0.0;
            for j in 1..=n {
                let (before, after) = (theta[j - 1], theta[j]);
                let d = (after.powi(e) - before.powi(e)) / dt;
                let excess = d.abs() - ell as f64 * t * before.powi(e + 1);
                power_constant = power_constant.max(excess / remainder);
                let dd = (prime[j] - prime[j - 1]) / dt;
                let bound = t * t * before.powi(3) + dt / (delta.powi(4) * t.powi(5));
                derivative_constant = derivative_constant.max(dd / bound);
            }
            rows.push(ThetaBoundRow {
                steps: n,
                ell,
                power_constant,
                derivative_constant,
                admissibility: dt * params.tau() / (t.powi(3) * delta * delta),
            });
        }
    }
    Ok(ThetaBoundReport { rows, spread_limit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::RegionRole;

    fn core() -> Region {
        Region::new(0.4, 0.6, RegionRole::WeightCore).unwrap()
    }

    fn params(lambda: f64, tau: f64, delta: f64) -> CarlemanParams {
        let psi = build_psi(core()).unwrap();
        CarlemanParams::new(psi, lambda, tau, delta, psi.sup_norm() + 0.1, 1.0).unwrap()
    }

    #[test]
    fn psi_closed_form() {
        let psi = build_psi(core()).unwrap();
        assert_eq!(psi.center(), 0.5);
        assert_eq!(psi.amplitude(), 1.25);
        assert!((psi.value(0.0) - 1.0).abs() < 1e-15);
        assert!((psi.derivative(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(psi.derivative(psi.center()), 0.0);
        assert!((psi.floor() - 0.2).abs() < 1e-15);
        let lopsided = build_psi(Region::new(0.1, 0.2, RegionRole::WeightCore).unwrap()).unwrap();
        assert_eq!(lopsided.derivative(lopsided.center()), 0.0);
        assert!(build_psi(Region::new(0.0, 0.2, RegionRole::WeightCore).unwrap()).is_err());
    }

    #[test]
    fn parameter_validation() {
        let psi = build_psi(core()).unwrap();
        assert!(CarlemanParams::new(psi, 0.5, 1.0, 0.4, 2.0, 1.0).is_err());
        assert!(CarlemanParams::new(psi, 1.0, 1.0, 0.6, 2.0, 1.0).is_err());
        assert!(CarlemanParams::new(psi, 1.0, 1.0, 0.0, 2.0, 1.0).is_err());
        assert!(CarlemanParams::new(psi, 1.0, 1.0, 0.5, 1.25, 1.0).is_err());
        assert!(CarlemanParams::new(psi, 1.0, 1.0, 0.5, 1.3, 1.0).is_ok());
    }

    #[test]
    fn theta_values() {
        let p = params(1.0, 1.0, 0.5);
        assert!((p.theta(0.0) - 4.0 / 3.0).abs() < 1e-15);
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert!((p.theta(t) - p.theta(1.0 - t)).abs() < 1e-13);
            assert!(p.theta(t) >= 1.0 - 1e-15);
            assert!(p.theta(t) <= 1.0 / p.delta());
        }
    }

    #[test]
    fn weights_are_reciprocal_and_bounded() {
        let p = params(2.0, 3.0, 0.3);
        let space = SpaceMesh::new(15).unwrap();
        let time = TimeMesh::new(12, 1.0).unwrap();
        let w = eval_weights(&p, &space, SpaceSet::Dual, &time, TimeSet::DualClosed).unwrap();
        assert_eq!(w.t.len(), 13);
        for (r, rho) in w.r.iter().zip(&w.rho) {
            assert!((r * rho - 1.0).abs() <= 4.0 * f64::EPSILON);
            assert!(*r > 0.0 && *r <= 1.0);
        }
        assert!(w.phi.iter().all(|&v| v < 0.0));
        assert!(w.exp_psi.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn theta_outside_horizon_is_rejected() {
        let p = params(1.0, 1.0, 0.1);
        let space = SpaceMesh::new(4).unwrap();
        let coarse = TimeMesh::new(4, 1.0).unwrap();
        assert!(eval_weights(&p, &space, SpaceSet::Dual, &coarse, TimeSet::DualClosed).is_err());
        assert!(eval_weights(&p, &space, SpaceSet::Dual, &coarse, TimeSet::PrimalClosed).is_ok());
    }

    #[test]
    fn increasing_k_lowers_phi() {
        let psi = build_psi(core()).unwrap();
        let a = CarlemanParams::new(psi, 2.0, 1.0, 0.4, 1.5, 1.0).unwrap();
        let b = CarlemanParams::new(psi, 2.0, 1.0, 0.4, 1.6, 1.0).unwrap();
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            assert!(b.phi(x) < a.phi(x));
        }
    }

    #[test]
    fn conjugated_derivatives_match_finite_differences() {
        let p = params(2.0, 1.0, 0.4);
        let (x, s, eps) = (0.27, 1.7, 1e-4);
        let rho = |y: f64| (-s * p.phi(y)).exp();
        let r = (s * p.phi(x)).exp();
        let (q, dq) = p.conjugated_derivatives(x, s, 2);
        assert!((q[0] - 1.0).abs() < 1e-15);
        let d1 = r * (rho(x + eps) - rho(x - eps)) / (2.0 * eps);
        assert!((q[1] - d1).abs() < 1e-6 * d1.abs());
        let d2 = r * (rho(x + eps) - 2.0 * rho(x) + rho(x - eps)) / (eps * eps);
        assert!((q[2] - d2).abs() < 1e-5 * d2.abs());
        let (qp, _) = p.conjugated_derivatives(x, s + eps, 2);
        let (qm, _) = p.conjugated_derivatives(x, s - eps, 2);
        for k in 0..=2 {
            let fd = (qp[k] - qm[k]) / (2.0 * eps);
            assert!((dq[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn stencil_coefficients() {
        assert_eq!(stencil(0, 0, 0.1), vec![1.0]);
        assert_eq!(stencil(1, 0, 0.1), vec![0.5, 0.0, 0.5]);
        let d = stencil(0, 1, 0.5);
        assert_eq!(d, vec![-2.0, 0.0, 2.0]);
        let dd = stencil(0, 2, 1.0);
        assert_eq!(dd, vec![1.0, 0.0, -2.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_operator_has_zero_error() {
        let p = params(1.0, 1.0, 0.4);
        let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let report = probe_space_estimate(0, 0, 0, &p, &hs, &AuditGrid::default(), 0.25).unwrap();
        assert!(report.exact());
        assert!(report.passed());
    }

    #[test]
    fn average_probe_is_second_order() {
        let p = params(1.0, 1.0, 0.4);
        let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let report = probe_space_estimate(1, 0, 0, &p, &hs, &AuditGrid::default(), 0.25).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn inadmissible_level_is_reported() {
        let p = params(1.0, 1.0, 0.1);
        let hs = [0.2, 0.1, 0.05];
        let err = probe_space_estimate(1, 1, 0, &p, &hs, &AuditGrid::default(), 0.25);
        assert!(matches!(err, Err(Error::Admissibility(_))));
    }

    #[test]
    fn frozen_theta_time_probe_is_exact() {
        let p = params(1.0, 1.0, 0.4).with_mode(ThetaMode::Frozen);
        let levels = TimeProbeLevels::default();
        let report =
            probe_time_estimate(1, 1, 0, &p, &levels, &AuditGrid::default(), 0.3).unwrap();
        assert!(report.space.exact() && report.time.exact());
        let bounds = probe_theta_bounds(&p, &[1], &[50, 100], 2.0).unwrap();
        assert!(bounds.rows.iter().all(|r| r.power_constant <= 0.0));
        assert!(bounds.passed());
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
