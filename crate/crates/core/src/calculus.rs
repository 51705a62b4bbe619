//! Discrete difference and average operators, integrals, norms, the
//! summation-by-parts identities and the discrete Gronwall bound.

use crate::error::{Error, Result};
use crate::mesh::{GridFunction, Side, SpaceSet, TimeFunction, TimeSet};

/// Default absolute tolerance for identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Direction of a half-step translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shift {
    Plus,
    Minus,
}

fn space_target(u: &GridFunction) -> Result<SpaceSet> {
    u.set().stencil_target().ok_or_else(|| {
        Error::Domain(format!(
            "no translate set for functions on {}",
            u.set().name()
        ))
    })
}

fn space_stencil(u: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
    let target = space_target(u)?;
    let values = u.values().windows(2).map(|w| f(w[0], w[1])).collect();
    GridFunction::new(*u.mesh(), target, values)
}

/// `τ₊u` or `τ₋u`, declared on the set between consecutive nodes of `u`.
pub fn shift_space(u: &GridFunction, shift: Shift) -> Result<GridFunction> {
    match shift {
        Shift::Plus => space_stencil(u, |_, right| right),
        Shift::Minus => space_stencil(u, |left, _| left),
    }
}

/// `D_h u = (τ₊u - τ₋u)/h`.
pub fn diff_space(u: &GridFunction) -> Result<GridFunction> {
    let h = u.mesh().h();
    space_stencil(u, |l, r| (r - l) / h)
}

/// `A_h u = (τ₊u + τ₋u)/2`.
pub fn avg_space(u: &GridFunction) -> Result<GridFunction> {
    space_stencil(u, |l, r| 0.5 * (l + r))
}

fn time_target(f: &TimeFunction) -> Result<TimeSet> {
    f.set().shift_target().ok_or_else(|| {
        Error::Domain(format!(
            "no translate set for functions on {}",
            f.set().name()
        ))
    })
}

fn time_stencil(f: &TimeFunction, op: impl Fn(f64, f64) -> f64) -> Result<TimeFunction> {
    let target = time_target(f)?;
    let values = f.values().windows(2).map(|w| op(w[0], w[1])).collect();
    TimeFunction::new(*f.mesh(), target, values)
}

/// `τ⁺f` or `τ⁻f` on the interleaved time set.
pub fn shift_time(f: &TimeFunction, shift: Shift) -> Result<TimeFunction> {
    match shift {
        Shift::Plus => time_stencil(f, |_, later| later),
        Shift::Minus => time_stencil(f, |earlier, _| earlier),
    }
}

/// `D_t f = (τ⁺f - τ⁻f)/Δt`: from `𝒩̄` to `𝒩*`, or from `𝒩̄*` to `𝒩`.
pub fn diff_time(f: &TimeFunction) -> Result<TimeFunction> {
    let dt = f.mesh().dt();
    time_stencil(f, |a, b| (b - a) / dt)
}

/// `h·Σ u` over the set of `u`; boundary sets carry unit weight.
pub fn integrate(u: &GridFunction) -> f64 {
    let sum: f64 = u.values().iter().sum();
    match u.set() {
        SpaceSet::Boundary => sum,
        _ => u.mesh().h() * sum,
    }
}

/// `Δt·Σ f` over the set of `f`; `∂𝒩` carries unit weight.
pub fn integrate_time(f: &TimeFunction) -> f64 {
    let sum: f64 = f.values().iter().sum();
    match f.set() {
        TimeSet::Boundary => sum,
        _ => f.mesh().dt() * sum,
    }
}

/// `𝕃²_h` inner product of two closed-mesh vectors: interior weight `h`, boundary weight 1.
pub fn l2h_dot(h: f64, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let interior: f64 = a[1..n - 1]
        .iter()
        .zip(&b[1..n - 1])
        .map(|(x, y)| x * y)
        .sum();
    h * interior + a[0] * b[0] + a[n - 1] * b[n - 1]
}

pub fn l2h_norm_sq(h: f64, a: &[f64]) -> f64 {
    l2h_dot(h, a, a)
}

/// `𝕃²_h` inner product of two functions on `𝓜̄`.
pub fn inner_l2h(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    u.expect_set(SpaceSet::PrimalClosed)?;
    u.same_layout(v)?;
    Ok(l2h_dot(u.mesh().h(), u.values(), v.values()))
}

/// Norms of a function on `𝓜̄`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    /// `‖u‖_{L²_h(𝓜)}`.
    pub interior: f64,
    /// `‖u‖_{L²_h(∂𝓜)}`.
    pub boundary: f64,
    /// `‖u‖_{𝕃²_h}`.
    pub full: f64,
    /// `‖u‖_{L∞_h}` over `𝓜̄`.
    pub sup: f64,
}

pub fn norms(u: &GridFunction) -> Result<Norms> {
    u.expect_set(SpaceSet::PrimalClosed)?;
    let v = u.values();
    let n = v.len();
    let interior_sq = u.mesh().h() * v[1..n - 1].iter().map(|x| x * x).sum::<f64>();
    let boundary_sq = v[0] * v[0] + v[n - 1] * v[n - 1];
    Ok(Norms {
        interior: interior_sq.sqrt(),
        boundary: boundary_sq.sqrt(),
        full: (interior_sq + boundary_sq).sqrt(),
        sup: v.iter().fold(0.0, |m, x| m.max(x.abs())),
    })
}

/// Outcome of one identity check.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub name: String,
    /// Left side (at the worst node for nodewise identities).
    pub left: f64,
    pub right: f64,
    pub residual: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    fn scalar(name: &str, left: f64, right: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            left,
            right,
            residual: (left - right).abs(),
            tolerance,
        }
    }

    fn nodewise(name: &str, left: &[f64], right: &[f64], tolerance: f64) -> Self {
        let mut worst = Self::scalar(name, 0.0, 0.0, tolerance);
        for (&l, &r) in left.iter().zip(right) {
            let res = (l - r).abs();
            if res > worst.residual || res.is_nan() {
                worst = Self::scalar(name, l, r, tolerance);
            }
        }
        worst
    }

    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

fn product(a: &GridFunction, b: &GridFunction) -> Result<GridFunction> {
    a.zip_with(b, |x, y| x * y)
}

/// Discrete product rules for `D_h` and `A_h`, checked nodewise on `𝓜*`.
pub fn verify_product_rules(
    u: &GridFunction,
    v: &GridFunction,
    tolerance: f64,
) -> Result<[IdentityReport; 2]> {
    u.expect_set(SpaceSet::PrimalClosed)?;
    u.same_layout(v)?;
    let h = u.mesh().h();
    let uv = product(u, v)?;
    let (du, dv, au, av) = (diff_space(u)?, diff_space(v)?, avg_space(u)?, avg_space(v)?);

    let lhs = diff_space(&uv)?;
    let rhs: Vec<f64> = (0..lhs.len())
        .map(|i| du.values()[i] * av.values()[i] + au.values()[i] * dv.values()[i])
        .collect();
    let diff_rule = IdentityReport::nodewise("product rule D_h", lhs.values(), &rhs, tolerance);

    let lhs = avg_space(&uv)?;
    let rhs: Vec<f64> = (0..lhs.len())
        .map(|i| {
            au.values()[i] * av.values()[i] + 0.25 * h * h * du.values()[i] * dv.values()[i]
        })
        .collect();
    let avg_rule = IdentityReport::nodewise("product rule A_h", lhs.values(), &rhs, tolerance);
    Ok([diff_rule, avg_rule])
}

/// Spatial summation by parts for `D_h` and `A_h` with `u` on `𝓜̄`, `v` on `𝓜*`.
pub fn verify_sbp_space(
    u: &GridFunction,
    v: &GridFunction,
    tolerance: f64,
) -> Result<[IdentityReport; 2]> {
    u.expect_set(SpaceSet::PrimalClosed)?;
    v.expect_set(SpaceSet::Dual)?;
    let h = u.mesh().h();
    let inner = u.restrict(SpaceSet::Primal)?;
    let uv = u.values();
    let (u0, u1) = (uv[0], uv[uv.len() - 1]);
    let (t0, t1) = (v.values()[0], v.values()[v.len() - 1]);

    let lhs = integrate(&product(&inner, &diff_space(v)?)?);
    let flux = u0 * t0 * Side::Left.normal() + u1 * t1 * Side::Right.normal();
    let rhs = -integrate(&product(v, &diff_space(u)?)?) + flux;
    let diff_sbp = IdentityReport::scalar("summation by parts D_h", lhs, rhs, tolerance);

    let lhs = integrate(&product(&inner, &avg_space(v)?)?);
    let rhs = integrate(&product(v, &avg_space(u)?)?) - 0.5 * h * (u0 * t0 + u1 * t1);
    let avg_sbp = IdentityReport::scalar("summation by parts A_h", lhs, rhs, tolerance);
    Ok([diff_sbp, avg_sbp])
}

fn time_product(a: &TimeFunction, b: &TimeFunction) -> Result<TimeFunction> {
    a.zip_with(b, |x, y| x * y)
}

fn time_ends(f: &TimeFunction) -> (f64, f64) {
    let v = f.values();
    (v[0], v[v.len() - 1])
}

/// Time summation-by-parts identities.
///
/// `f` holds two functions on `𝒩̄`, `g` two functions on `𝒩̄*`. The shift and
/// mixed identities pair `f[0]` with `g[0]`; the dual-dual variant pairs the
/// two `g`, the primal-primal variant the two `f`.
pub fn verify_sbp_time(
    f: [&TimeFunction; 2],
    g: [&TimeFunction; 2],
    tolerance: f64,
) -> Result<[IdentityReport; 4]> {
    for p in f {
        p.expect_set(TimeSet::PrimalClosed)?;
    }
    for d in g {
        d.expect_set(TimeSet::DualClosed)?;
    }
    f[0].same_layout(f[1])?;
    g[0].same_layout(g[1])?;
    let (f0, f1, g0, g1) = (f[0], f[1], g[0], g[1]);
    let restrict = |p: &TimeFunction, set: TimeSet| -> Result<TimeFunction> {
        // 𝒩̄ → 𝒩 drops t = 0; 𝒩̄* → 𝒩* drops T + Δt/2.
        let v = p.values();
        let values = match set {
            TimeSet::Primal => v[1..].to_vec(),
            TimeSet::Dual => v[..v.len() - 1].to_vec(),
            _ => unreachable!(),
        };
        TimeFunction::new(*p.mesh(), set, values)
    };

    let lhs = integrate_time(&time_product(
        &restrict(f0, TimeSet::Primal)?,
        &shift_time(g0, Shift::Minus)?,
    )?);
    let rhs = integrate_time(&time_product(
        &shift_time(f0, Shift::Plus)?,
        &restrict(g0, TimeSet::Dual)?,
    )?);
    let shift = IdentityReport::scalar("time shift pairing", lhs, rhs, tolerance);

    let lhs = integrate_time(&time_product(&restrict(f0, TimeSet::Primal)?, &diff_time(g0)?)?);
    let (fa, fb) = time_ends(f0);
    // τ⁺g at t = 0 and t = T: the first and last values on 𝒩̄*.
    let (ga, gb) = time_ends(g0);
    let rhs = -integrate_time(&time_product(&restrict(g0, TimeSet::Dual)?, &diff_time(f0)?)?)
        + fb * gb
        - fa * ga;
    let mixed = IdentityReport::scalar("time summation by parts", lhs, rhs, tolerance);

    let lhs = integrate_time(&time_product(&shift_time(g0, Shift::Minus)?, &diff_time(g1)?)?);
    let (pa, pb) = time_ends(&time_product(g0, g1)?);
    let rhs = -integrate_time(&time_product(&diff_time(g0)?, &shift_time(g1, Shift::Plus)?)?)
        + pb
        - pa;
    let dual = IdentityReport::scalar("time summation by parts (dual)", lhs, rhs, tolerance);

    let lhs = integrate_time(&time_product(&shift_time(f0, Shift::Plus)?, &diff_time(f1)?)?);
    let (pa, pb) = time_ends(&time_product(f0, f1)?);
    let rhs = -integrate_time(&time_product(&shift_time(f1, Shift::Minus)?, &diff_time(f0)?)?)
        + pb
        - pa;
    let primal = IdentityReport::scalar("time summation by parts (primal)", lhs, rhs, tolerance);
    Ok([shift, mixed, dual, primal])
}

/// `τ±f·D_t f = ½D_t(f²) ± ½Δt|D_t f|²`, checked nodewise.
pub fn verify_square_identities(f: &TimeFunction, tolerance: f64) -> Result<[IdentityReport; 2]> {
    let dt = f.mesh().dt();
    let df = diff_time(f)?;
    let half_dsq = diff_time(&f.map(|x| x * x))?.map(|x| 0.5 * x);
    let correction = df.map(|x| 0.5 * dt * x * x);
    let mut reports = Vec::with_capacity(2);
    for (shift, sign, name) in [
        (Shift::Plus, 1.0, "square identity forward"),
        (Shift::Minus, -1.0, "square identity backward"),
    ] {
        let lhs = time_product(&shift_time(f, shift)?, &df)?;
        let rhs = half_dsq.zip_with(&correction, |a, b| a + sign * b)?;
        reports.push(IdentityReport::nodewise(
            name,
            lhs.values(),
            rhs.values(),
            tolerance,
        ));
    }
    Ok([reports[0].clone(), reports[1].clone()])
}

/// Discrete Gronwall bound `e^{2γT}(η₀ + ∫_𝒩 g)` at every `t ∈ 𝒩`.
///
/// Valid for nonnegative `η` with `D_t η ≤ γ·τ⁺η + τ⁺g`, provided `γΔt < 1/2`.
/// The growth factor of one step is `1/(1-γΔt) < e^{2γΔt}`; a sequence
/// meeting the hypothesis with equality grows like `(1-γΔt)^{-N}`, which
/// exceeds `e^{γT}`, so the exponent carries the factor 2.
pub fn gronwall_bound(eta0: f64, gamma: f64, g: &TimeFunction) -> Result<TimeFunction> {
    g.expect_set(TimeSet::Primal)?;
    let mesh = g.mesh();
    if gamma * mesh.dt() >= 0.5 {
        return Err(Error::StepSize(format!(
            "gamma*dt = {} must be below 1/2",
            gamma * mesh.dt()
        )));
    }
    let bound = (2.0 * gamma * mesh.t_final()).exp() * (eta0 + integrate_time(g));
    TimeFunction::new(*mesh, TimeSet::Primal, vec![bound; mesh.steps()])
}
