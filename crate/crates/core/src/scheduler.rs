//! Virtual users, the threshold-based selection rule and temporal-share
//! accounting.
//!
//! A virtual user is a set of users that can be activated together in one
//! slot. Each slot the scheduler observes the utility of every virtual user
//! and picks the one maximizing `r_j + sum_{i in V_j} lambda_i`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::stats::CompensatedSum;

/// Ordered list of activatable user subsets with `1 <= |V_j| <= n_max`.
///
/// Canonical order: increasing subset size, then lexicographic by member
/// indices. Users are indexed from zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct VirtualUserCatalog {
    n: usize,
    n_max: usize,
    subsets: Vec<Vec<usize>>,
    membership: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    n: usize,
    n_max: usize,
    subsets: Vec<Vec<usize>>,
}

impl TryFrom<CatalogRepr> for VirtualUserCatalog {
    type Error = crate::Error;

    fn try_from(repr: CatalogRepr) -> Result<Self> {
        let catalog = enumerate_virtual_users(repr.n, repr.n_max)?;
        if catalog.subsets != repr.subsets {
            return Err(config_err("virtual user list is not in canonical order"));
        }
        Ok(catalog)
    }
}

impl From<VirtualUserCatalog> for CatalogRepr {
    fn from(c: VirtualUserCatalog) -> Self {
        CatalogRepr { n: c.n, n_max: c.n_max, subsets: c.subsets }
    }
}

impl VirtualUserCatalog {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of virtual users `m`.
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn members(&self, j: usize) -> &[usize] {
        &self.subsets[j]
    }

    #[inline]
    pub fn contains(&self, j: usize, user: usize) -> bool {
        self.membership[j * self.n + user]
    }

    /// `sum_{i in V_j} lambda_i` for every virtual user.
    pub fn threshold_bonus(&self, lambda: &ThresholdVector) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.threshold_bonus_into(lambda, &mut out);
        out
    }

    #[inline]
    pub fn threshold_bonus_into(&self, lambda: &ThresholdVector, out: &mut [f64]) {
        for (b, set) in out.iter_mut().zip(&self.subsets) {
            *b = set.iter().map(|&i| lambda.0[i]).sum();
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Builds the homogeneous catalog of all non-empty subsets of at most
/// `n_max` users, in canonical order.
pub fn enumerate_virtual_users(n: usize, n_max: usize) -> Result<VirtualUserCatalog> {
    if n == 0 {
        return Err(config_err("user count must be at least 1"));
    }
    if n_max == 0 || n_max > n {
        return Err(config_err(format!("n_max must satisfy 1 <= n_max <= n (got n_max={n_max}, n={n})")));
    }
    let mut subsets = Vec::with_capacity((1..=n_max).map(|k| binomial(n, k)).sum());
    for size in 1..=n_max {
        // lexicographic k-combinations of 0..n
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            subsets.push(comb.clone());
            let Some(pos) = (0..size).rev().find(|&p| comb[p] < n - size + p) else {
                break;
            };
            comb[pos] += 1;
            for q in pos + 1..size {
                comb[q] = comb[q - 1] + 1;
            }
        }
    }
    let mut membership = vec![false; subsets.len() * n];
    for (j, set) in subsets.iter().enumerate() {
        for &i in set {
            membership[j * n + i] = true;
        }
    }
    Ok(VirtualUserCatalog { n, n_max, subsets, membership })
}

/// One threshold per user, in the same units as the utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(pub Vec<f64>);

impl ThresholdVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(config_err("thresholds must be finite"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `max_i |self_i - other_i|`.
    pub fn sup_distance(&self, other: &ThresholdVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Consecutive differences `lambda_{i+1} - lambda_i`.
    pub fn differences(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Selects the virtual user maximizing `r_j + bonus_j`; ties go to the
/// smallest canonical index.
#[inline]
pub fn select_with_bonus(r: &[f64], bonus: &[f64]) -> usize {
    debug_assert_eq!(r.len(), bonus.len());
    let mut best = 0;
    let mut best_score = r[0] + bonus[0];
    for j in 1..r.len() {
        let score = r[j] + bonus[j];
        if score > best_score {
            best = j;
            best_score = score;
        }
    }
    best
}

/// Threshold-based selection for one slot.
pub fn tbs_select(r: &[f64], lambda: &ThresholdVector, catalog: &VirtualUserCatalog) -> usize {
    assert_eq!(r.len(), catalog.len(), "performance vector length must match the catalog");
    let bonus = catalog.threshold_bonus(lambda);
    select_with_bonus(r, &bonus)
}

/// Running activation counts and cumulative utility.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareLedger {
    t: u64,
    activations: Vec<u64>,
    cumulative_utility: CompensatedSum,
}

impl ShareLedger {
    pub fn new(n: usize) -> Self {
        Self { t: 0, activations: vec![0; n], cumulative_utility: CompensatedSum::new() }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn activations(&self) -> &[u64] {
        &self.activations
    }

    pub fn cumulative_utility(&self) -> f64 {
        self.cumulative_utility.value()
    }

    /// Applies slot outcome: virtual user `selected` was activated with utility `r[selected]`.
    #[inline]
    pub fn record(&mut self, selected: usize, r: &[f64], catalog: &VirtualUserCatalog) {
        self.t += 1;
        for &i in catalog.members(selected) {
            self.activations[i] += 1;
        }
        self.cumulative_utility.add(r[selected]);
    }

    /// Temporal shares `A_{i,t}`; all zero before the first slot.
    pub fn shares(&self) -> Vec<f64> {
        let t = self.t.max(1) as f64;
        self.activations.iter().map(|&a| a as f64 / t).collect()
    }

    /// Average utility `U_t`; zero before the first slot.
    pub fn avg_utility(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.cumulative_utility.value() / self.t as f64
        }
    }

    /// `max_i |A_{i,t} - w_i|`.
    pub fn max_share_deviation(&self, w: &[f64]) -> f64 {
        self.shares().iter().zip(w).map(|(a, w)| (a - w).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandMode {
    /// Temporal shares must equal `w`.
    Equality,
    /// Temporal shares must lie in `[w_lower, w_upper]`.
    Bounds,
}

/// Temporal demand vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandVector {
    pub w_lower: Vec<f64>,
    pub w_upper: Vec<f64>,
    pub mode: DemandMode,
}

impl DemandVector {
    pub fn equality(w: Vec<f64>) -> Result<Self> {
        Self::validated(w.clone(), w, DemandMode::Equality)
    }

    /// Lower bounds `w` with no upper bound beyond 1.
    pub fn lower_bounds(w: Vec<f64>) -> Result<Self> {
        let upper = vec![1.0; w.len()];
        Self::validated(w, upper, DemandMode::Bounds)
    }

    pub fn bounds(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::validated(lower, upper, DemandMode::Bounds)
    }

    fn validated(w_lower: Vec<f64>, w_upper: Vec<f64>, mode: DemandMode) -> Result<Self> {
        let d = Self { w_lower, w_upper, mode };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_lower.is_empty() {
            return Err(config_err("demand vector is empty"));
        }
        if self.w_lower.len() != self.w_upper.len() {
            return Err(config_err("lower and upper demand vectors differ in length"));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !self.w_lower.iter().chain(&self.w_upper).all(in_unit) {
            return Err(config_err("demands must lie in [0, 1]"));
        }
        if self.w_lower.iter().zip(&self.w_upper).any(|(l, u)| l > u) {
            return Err(config_err("w_lower must not exceed w_upper"));
        }
        if self.mode == DemandMode::Equality && self.w_lower != self.w_upper {
            return Err(config_err("equality demands need w_lower == w_upper"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.w_lower.len()
    }
}

/// Result of the demand feasibility precheck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub ok: bool,
    pub lower_sum: f64,
    pub violations: Vec<String>,
}

impl std::fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.ok {
            write!(f, "feasible (sum of lower demands {})", self.lower_sum)
        } else {
            write!(f, "infeasible: {}", self.violations.join("; "))
        }
    }
}

const SUM_TOL: f64 = 1e-9;

/// Checks `sum_i w_lower_i <= 1`, and `sum_i w_i = 1` for equality demands
/// when exactly one user is active per slot. Larger demand sums that a pair
/// scheduler could meet are not certified.
pub fn check_feasibility(demands: &DemandVector, n_max: usize) -> FeasibilityReport {
    let lower_sum: f64 = demands.w_lower.iter().sum();
    let mut violations = Vec::new();
    if lower_sum > 1.0 + SUM_TOL {
        violations.push(format!("sum of lower demands is {lower_sum}, exceeds 1"));
    }
    if demands.mode == DemandMode::Equality && n_max == 1 && (lower_sum - 1.0).abs() > SUM_TOL {
        violations.push(format!(
            "equality demands with one active user per slot must sum to 1 (sum is {lower_sum})"
        ));
    }
    FeasibilityReport { ok: violations.is_empty(), lower_sum, violations }
}
