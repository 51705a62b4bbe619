//! Uniform primal and dual meshes in space and time.
//!
//! Spatial nodes are stored as integer multiples of `h/2` so that the
//! translates `τ±` and the derived sets `𝒲* = τ₋𝒲 ∪ τ₊𝒲`, `𝒲' = τ₋𝒲 ∩ τ₊𝒲`
//! are computed exactly.

use crate::error::{Error, Result};

/// Uniform spatial mesh of `(0,1)` with `m` interior nodes and `h = 1/(m+1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceMesh {
    m: usize,
    h: f64,
}

impl SpaceMesh {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidSpec(format!(
                "space mesh needs at least 2 interior nodes, got {m}"
            )));
        }
        Ok(Self {
            m,
            h: 1.0 / (m as f64 + 1.0),
        })
    }

    /// Mesh whose step is closest to `h`.
    pub fn with_step(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidSpec(format!("mesh step {h} outside (0,1)")));
        }
        let cells = (1.0 / h).round() as usize;
        Self::new(cells.saturating_sub(1))
    }

    /// Number of interior nodes `M`.
    pub fn interior(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of nodes of the closed primal mesh, `M + 2`.
    pub fn len(&self) -> usize {
        self.m + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate `i·h` of the closed-mesh node `i`.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    /// Coordinate `(i + 1/2)·h` of the dual node `i`.
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    /// Node count of a named set.
    pub fn count(&self, set: SpaceSet) -> usize {
        match set {
            SpaceSet::PrimalClosed => self.m + 2,
            SpaceSet::Primal => self.m,
            SpaceSet::Dual => self.m + 1,
            SpaceSet::DualInterior => self.m - 1,
            SpaceSet::Boundary => 2,
        }
    }

    /// Exact node set (in half-step units) of a named set.
    pub fn nodes(&self, set: SpaceSet) -> NodeSet {
        let m = self.m as i64;
        let half = match set {
            SpaceSet::PrimalClosed => (0..=m + 1).map(|i| 2 * i).collect(),
            SpaceSet::Primal => (1..=m).map(|i| 2 * i).collect(),
            SpaceSet::Dual => (0..=m).map(|i| 2 * i + 1).collect(),
            SpaceSet::DualInterior => (1..m).map(|i| 2 * i + 1).collect(),
            SpaceSet::Boundary => vec![0, 2 * (m + 1)],
        };
        NodeSet { half, h: self.h }
    }

    pub fn coords(&self, set: SpaceSet) -> Vec<f64> {
        self.nodes(set).coords()
    }


    fn locate(&self, x: f64) -> Option<i64> {
        let k = (2.0 * x / self.h).round();
        if (k * 0.5 * self.h - x).abs() <= 1e-9 * self.h {
            Some(k as i64)
        } else {
            None
        }
    }
}

/// Named spatial node sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceSet {
    /// `𝓜̄`: nodes `i·h`, `i = 0..=M+1`.
    PrimalClosed,
    /// `𝓜`: interior nodes `i·h`, `i = 1..=M`.
    Primal,
    /// `𝓜*`: midpoints `(i+1/2)·h`, `i = 0..=M`.
    Dual,
    /// `𝓜'`: midpoints between interior nodes.
    DualInterior,
    /// `∂𝓜 = {0, 1}`.
    Boundary,
}

impl SpaceSet {
    pub fn name(&self) -> &'static str {
        match self {
            SpaceSet::PrimalClosed => "primal-closed",
            SpaceSet::Primal => "primal",
            SpaceSet::Dual => "dual",
            SpaceSet::DualInterior => "dual-interior",
            SpaceSet::Boundary => "boundary",
        }
    }

    /// Set receiving `D_h`/`A_h` applied to a function on `self`.
    pub fn stencil_target(&self) -> Option<SpaceSet> {
        match self {
            SpaceSet::PrimalClosed => Some(SpaceSet::Dual),
            SpaceSet::Dual => Some(SpaceSet::Primal),
            SpaceSet::Primal => Some(SpaceSet::DualInterior),
            SpaceSet::DualInterior | SpaceSet::Boundary => None,
        }
    }
}

/// Finite set of points on the half-step lattice `k·h/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    half: Vec<i64>,
    h: f64,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.half.len()
    }

    pub fn is_empty(&self) -> bool {
        self.half.is_empty()
    }

    pub fn half_indices(&self) -> &[i64] {
        &self.half
    }

    pub fn coords(&self) -> Vec<f64> {
        self.half
            .iter()
            .map(|&k| {
                if k % 2 == 0 {
                    (k / 2) as f64 * self.h
                } else {
                    (k as f64 * 0.5) * self.h
                }
            })
            .collect()
    }

    pub fn contains(&self, k: i64) -> bool {
        self.half.binary_search(&k).is_ok()
    }

    /// `τ₊` (`shift = 1`) or `τ₋` (`shift = -1`) applied to every node.
    pub fn translate(&self, shift: i64) -> NodeSet {
        NodeSet {
            half: self.half.iter().map(|k| k + shift).collect(),
            h: self.h,
        }
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let mut half: Vec<i64> = self.half.iter().chain(&other.half).copied().collect();
        half.sort_unstable();
        half.dedup();
        NodeSet { half, h: self.h }
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        let half = self
            .half
            .iter()
            .copied()
            .filter(|k| other.contains(*k))
            .collect();
        NodeSet { half, h: self.h }
    }

    pub fn difference(&self, other: &NodeSet) -> NodeSet {
        let half = self
            .half
            .iter()
            .copied()
            .filter(|k| !other.contains(*k))
            .collect();
        NodeSet { half, h: self.h }
    }

    /// `𝒲* = τ₋(𝒲) ∪ τ₊(𝒲)`.
    pub fn star(&self) -> NodeSet {
        self.translate(-1).union(&self.translate(1))
    }

    /// `𝒲' = τ₋(𝒲) ∩ τ₊(𝒲)`.
    pub fn prime(&self) -> NodeSet {
        self.translate(-1).intersection(&self.translate(1))
    }
}

/// All spatial sets derived from the interior mesh by translation.
#[derive(Clone, Debug)]
pub struct SpaceMeshes {
    pub closed: NodeSet,
    pub interior: NodeSet,
    pub dual: NodeSet,
    pub dual_interior: NodeSet,
    pub boundary: NodeSet,
}

/// Build `𝓜`, `𝓜* = (𝓜)*`, `𝓜̄ = (𝓜*)*`, `𝓜' ` and `∂𝓜 = 𝓜̄ ∖ 𝓜`.
pub fn build_space_meshes(mesh: &SpaceMesh) -> SpaceMeshes {
    let interior = mesh.nodes(SpaceSet::Primal);
    let dual = interior.star();
    let closed = dual.star();
    let dual_interior = interior.prime();
    let boundary = closed.difference(&interior);
    SpaceMeshes {
        closed,
        interior,
        dual,
        dual_interior,
        boundary,
    }
}

/// Outward normal at a boundary node: `+1` when only `τ₋x` lies in `𝓜*`,
/// `-1` when only `τ₊x` does.
pub fn outward_normal(mesh: &SpaceMesh, x: f64) -> Result<i32> {
    let k = mesh
        .locate(x)
        .ok_or_else(|| Error::Domain(format!("{x} is not a mesh node")))?;
    if !mesh.nodes(SpaceSet::Boundary).contains(k) {
        return Err(Error::Domain(format!("{x} is not a boundary node")));
    }
    let dual = mesh.nodes(SpaceSet::Dual);
    match (dual.contains(k - 1), dual.contains(k + 1)) {
        (true, false) => Ok(1),
        (false, true) => Ok(-1),
        _ => Ok(0),
    }
}

/// The two endpoints of the spatial interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn normal(&self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

/// `t_r(u)` at `x ∈ ∂𝓜` for `u` on `𝓜*`: `u(h/2)` at 0 and `u(1-h/2)` at 1.
pub fn trace(u: &GridFunction, x: f64) -> Result<f64> {
    u.expect_set(SpaceSet::Dual)?;
    match outward_normal(&u.mesh, x)? {
        -1 => Ok(u.values[0]),
        1 => Ok(u.values[u.values.len() - 1]),
        _ => Err(Error::Domain(format!("no trace at {x}"))),
    }
}

/// Trace at a named side.
pub fn trace_at(u: &GridFunction, side: Side) -> Result<f64> {
    u.expect_set(SpaceSet::Dual)?;
    Ok(match side {
        Side::Left => u.values[0],
        Side::Right => u.values[u.values.len() - 1],
    })
}

/// Values of a discrete function on one named spatial set.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    mesh: SpaceMesh,
    set: SpaceSet,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: SpaceMesh, set: SpaceSet, values: Vec<f64>) -> Result<Self> {
        let expected = mesh.count(set);
        if values.len() != expected {
            return Err(Error::SetMismatch {
                expected: format!("{} values on {}", expected, set.name()),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self { mesh, set, values })
    }

    pub fn zeros(mesh: SpaceMesh, set: SpaceSet) -> Self {
        Self {
            mesh,
            set,
            values: vec![0.0; mesh.count(set)],
        }
    }

    pub fn constant(mesh: SpaceMesh, set: SpaceSet, c: f64) -> Self {
        Self {
            mesh,
            set,
            values: vec![c; mesh.count(set)],
        }
    }

    pub fn from_fn(mesh: SpaceMesh, set: SpaceSet, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mesh,
            set,
            values: mesh.coords(set).into_iter().map(f).collect(),
        }
    }

    pub fn mesh(&self) -> &SpaceMesh {
        &self.mesh
    }

    pub fn set(&self) -> SpaceSet {
        self.set
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn coords(&self) -> Vec<f64> {
        self.mesh.coords(self.set)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn expect_set(&self, set: SpaceSet) -> Result<()> {
        if self.set == set {
            Ok(())
        } else {
            Err(Error::SetMismatch {
                expected: set.name().into(),
                found: self.set.name().into(),
            })
        }
    }

    pub fn same_layout(&self, other: &GridFunction) -> Result<()> {
        if self.mesh != other.mesh {
            return Err(Error::SetMismatch {
                expected: format!("mesh with M={}", self.mesh.m),
                found: format!("mesh with M={}", other.mesh.m),
            });
        }
        other.expect_set(self.set)
    }

    /// Restriction to a subset of the nodes of `self.set`.
    pub fn restrict(&self, to: SpaceSet) -> Result<GridFunction> {
        let from = self.mesh.nodes(self.set);
        let target = self.mesh.nodes(to);
        if target.difference(&from).len() > 0 {
            return Err(Error::SetMismatch {
                expected: format!("a superset of {}", to.name()),
                found: self.set.name().into(),
            });
        }
        let values = target
            .half_indices()
            .iter()
            .map(|k| self.values[from.half_indices().binary_search(k).unwrap()])
            .collect();
        Ok(GridFunction {
            mesh: self.mesh,
            set: to,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            mesh: self.mesh,
            set: self.set,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &GridFunction,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<GridFunction> {
        self.same_layout(other)?;
        Ok(GridFunction {
            mesh: self.mesh,
            set: self.set,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Uniform time mesh of `[0,T]` with `n` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeMesh {
    n: usize,
    t_final: f64,
    dt: f64,
}

impl TimeMesh {
    pub fn new(n: usize, t_final: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSpec(format!(
                "time mesh needs at least 2 steps, got {n}"
            )));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "time horizon must be positive, got {t_final}"
            )));
        }
        Ok(Self {
            n,
            t_final,
            dt: t_final / n as f64,
        })
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_j = j·Δt`.
    pub fn primal(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// `(j - 1/2)·Δt` for the dual index `j ≥ 1`.
    pub fn dual(&self, j: usize) -> f64 {
        (j as f64 - 0.5) * self.dt
    }

    pub fn count(&self, set: TimeSet) -> usize {
        match set {
            TimeSet::Primal | TimeSet::Dual => self.n,
            TimeSet::PrimalClosed | TimeSet::DualClosed => self.n + 1,
            TimeSet::Boundary => 2,
        }
    }

    pub fn times(&self, set: TimeSet) -> Vec<f64> {
        match set {
            TimeSet::Primal => (1..=self.n).map(|j| self.primal(j)).collect(),
            TimeSet::PrimalClosed => (0..=self.n).map(|j| self.primal(j)).collect(),
            TimeSet::Dual => (1..=self.n).map(|j| self.dual(j)).collect(),
            TimeSet::DualClosed => (1..=self.n + 1).map(|j| self.dual(j)).collect(),
            TimeSet::Boundary => vec![0.0, self.t_final],
        }
    }
}

/// Named time node sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimeSet {
    /// `𝒩 = {jΔt, j = 1..=N}`.
    Primal,
    /// `𝒩̄ = 𝒩 ∪ {0}`.
    PrimalClosed,
    /// `𝒩* = {(j-1/2)Δt, j = 1..=N}`.
    Dual,
    /// `𝒩̄* = 𝒩* ∪ {T + Δt/2}`.
    DualClosed,
    /// `∂𝒩 = {0, T}`.
    Boundary,
}

impl TimeSet {
    pub fn name(&self) -> &'static str {
        match self {
            TimeSet::Primal => "time-primal",
            TimeSet::PrimalClosed => "time-primal-closed",
            TimeSet::Dual => "time-dual",
            TimeSet::DualClosed => "time-dual-closed",
            TimeSet::Boundary => "time-boundary",
        }
    }

    /// Set receiving `D_t`/`τ±` applied to a function on `self`.
    pub fn shift_target(&self) -> Option<TimeSet> {
        match self {
            TimeSet::PrimalClosed => Some(TimeSet::Dual),
            TimeSet::DualClosed => Some(TimeSet::Primal),
            _ => None,
        }
    }
}

/// All time sets of a mesh.
#[derive(Clone, Debug)]
pub struct TimeMeshes {
    pub primal: Vec<f64>,
    pub primal_closed: Vec<f64>,
    pub dual: Vec<f64>,
    pub dual_closed: Vec<f64>,
}

pub fn build_time_meshes(mesh: &TimeMesh) -> TimeMeshes {
    TimeMeshes {
        primal: mesh.times(TimeSet::Primal),
        primal_closed: mesh.times(TimeSet::PrimalClosed),
        dual: mesh.times(TimeSet::Dual),
        dual_closed: mesh.times(TimeSet::DualClosed),
    }
}

/// Outward normal of `∂𝒩`: `-1` at `t = 0`, `+1` at `t = T`.
pub fn time_outward_normal(mesh: &TimeMesh, t: f64) -> Result<i32> {
    let tol = 1e-9 * mesh.dt;
    if t.abs() <= tol {
        Ok(-1)
    } else if (t - mesh.t_final).abs() <= tol {
        Ok(1)
    } else {
        Err(Error::Domain(format!("{t} is not in the time boundary")))
    }
}

/// Values of a discrete function of time on one named set.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeFunction {
    mesh: TimeMesh,
    set: TimeSet,
    values: Vec<f64>,
}

impl TimeFunction {
    pub fn new(mesh: TimeMesh, set: TimeSet, values: Vec<f64>) -> Result<Self> {
        let expected = mesh.count(set);
        if values.len() != expected {
            return Err(Error::SetMismatch {
                expected: format!("{} values on {}", expected, set.name()),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self { mesh, set, values })
    }

    pub fn from_fn(mesh: TimeMesh, set: TimeSet, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mesh,
            set,
            values: mesh.times(set).into_iter().map(f).collect(),
        }
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn set(&self) -> TimeSet {
        self.set
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> Vec<f64> {
        self.mesh.times(self.set)
    }

    pub fn expect_set(&self, set: TimeSet) -> Result<()> {
        if self.set == set {
            Ok(())
        } else {
            Err(Error::SetMismatch {
                expected: set.name().into(),
                found: self.set.name().into(),
            })
        }
    }

    pub fn same_layout(&self, other: &TimeFunction) -> Result<()> {
        if self.mesh != other.mesh {
            return Err(Error::SetMismatch {
                expected: format!("time mesh with N={}", self.mesh.n),
                found: format!("time mesh with N={}", other.mesh.n),
            });
        }
        other.expect_set(self.set)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TimeFunction {
        TimeFunction {
            mesh: self.mesh,
            set: self.set,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &TimeFunction,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<TimeFunction> {
        self.same_layout(other)?;
        Ok(TimeFunction {
            mesh: self.mesh,
            set: self.set,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Role of an interval of `(0,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionRole {
    Control,
    Observation,
    WeightCore,
}

/// Open interval `(a,b)` with `0 ≤ a < b ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    a: f64,
    b: f64,
    role: RegionRole,
}

impl Region {
    pub fn new(a: f64, b: f64, role: RegionRole) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "region ({a}, {b}) is not an interval of (0,1)"
            )));
        }
        Ok(Self { a, b, role })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn role(&self) -> RegionRole {
        self.role
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a < x && x < self.b
    }

    /// Closure of `self` lies inside `outer`.
    pub fn compactly_inside(&self, outer: &Region) -> bool {
        outer.a < self.a && self.b < outer.b
    }
}

/// Indicator of a region on a mesh set.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pub mask: GridFunction,
    /// No node of the set lies in the region.
    pub empty: bool,
}

pub fn region_mask(region: &Region, mesh: &SpaceMesh, set: SpaceSet) -> RegionMask {
    let mask = GridFunction::from_fn(*mesh, set, |x| {
        if region.contains(x) {
            1.0
        } else {
            0.0
        }
    });
    let empty = mask.values().iter().all(|&v| v == 0.0);
    RegionMask { mask, empty }
}
