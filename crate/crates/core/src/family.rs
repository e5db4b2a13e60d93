//! Update families, stable directions, and criticality classification.
//!
//! A threshold family `N_r^{a1,..,ad}` is described by a [`NeighborhoodSpec`]
//! (the per-axis radii) plus the infection threshold `r`; an
//! [`ExplicitFamily`] lists its update rules verbatim. Both kinds answer
//! stable-direction queries; the symbolic stable set and the predicted
//! scaling order of the critical length are available for the
//! three-dimensional anisotropic families.

use num_rational::Rational64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FamilyError {
    #[error("radii must be nonempty, positive and sorted ascending, got {0:?}")]
    InvalidRadii(Vec<u32>),
    #[error("threshold {r} outside 1..={max} for this neighbourhood")]
    InvalidThreshold { r: u32, max: u32 },
    #[error("direction vector must be nonzero")]
    ZeroDirection,
    #[error("dimension mismatch: family is {family}-dimensional, vector is {vector}-dimensional")]
    DimensionMismatch { family: usize, vector: usize },
    #[error("rule {0} is empty")]
    EmptyRule(usize),
    #[error("rule {0} contains the origin")]
    RuleContainsOrigin(usize),
    #[error("scaling order is only defined for critical families")]
    NotCritical,
    #[error("bad family literal {literal:?}: {reason}")]
    BadLiteral { literal: String, reason: String },
}

/// The anisotropic neighbourhood `N_{a1,..,ad}`: for each axis `i`, the
/// `a_i` nearest sites in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct NeighborhoodSpec {
    radii: Vec<u32>,
}

impl NeighborhoodSpec {
    /// Radii must be positive and sorted ascending (`a_1 <= .. <= a_d`).
    pub fn new(radii: Vec<u32>) -> Result<Self, FamilyError> {
        let ok = !radii.is_empty()
            && radii.iter().all(|&a| a > 0)
            && radii.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(FamilyError::InvalidRadii(radii));
        }
        Ok(Self { radii })
    }

    pub fn dims(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[u32] {
        &self.radii
    }

    /// Number of neighbourhood vectors, `2 * (a_1 + .. + a_d)`.
    pub fn vector_count(&self) -> u32 {
        2 * self.radii.iter().sum::<u32>()
    }

    /// All vectors `{ +-k e_i : 1 <= k <= a_i }`.
    pub fn vectors(&self) -> Vec<Vec<i64>> {
        let d = self.dims();
        let mut out = Vec::with_capacity(self.vector_count() as usize);
        for (axis, &a) in self.radii.iter().enumerate() {
            for k in 1..=a as i64 {
                for sign in [1i64, -1] {
                    let mut v = vec![0i64; d];
                    v[axis] = sign * k;
                    out.push(v);
                }
            }
        }
        out
    }
}

/// Set of neighbourhood vectors of an anisotropic spec.
pub fn neighborhood_vectors(spec: &NeighborhoodSpec) -> Vec<Vec<i64>> {
    spec.vectors()
}

/// The `N_r^{a1,..,ad}` model: infect once `r` neighbours are infected.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ThresholdFamily {
    spec: NeighborhoodSpec,
    r: u32,
}

impl ThresholdFamily {
    pub fn new(spec: NeighborhoodSpec, r: u32) -> Result<Self, FamilyError> {
        let max = spec.vector_count();
        if r == 0 || r > max {
            return Err(FamilyError::InvalidThreshold { r, max });
        }
        Ok(Self { spec, r })
    }

    /// Shorthand for `ThresholdFamily::new(NeighborhoodSpec::new(radii)?, r)?`.
    pub fn from_radii(radii: &[u32], r: u32) -> Result<Self, FamilyError> {
        Self::new(NeighborhoodSpec::new(radii.to_vec())?, r)
    }

    pub fn spec(&self) -> &NeighborhoodSpec {
        &self.spec
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn dims(&self) -> usize {
        self.spec.dims()
    }

    /// Threshold excess over the largest radius, `s = r - a_d`. Positive
    /// exactly when the family is not supercritical.
    pub fn excess(&self) -> i64 {
        self.r as i64 - *self.spec.radii.last().unwrap() as i64
    }

    /// Threshold of the smallest subcritical cross-section family on the
    /// first two axes, `m = a_1 + a_2 + 1`. Only meaningful for `d >= 2`.
    pub fn cross_section_threshold(&self) -> u32 {
        self.spec.radii[0] + self.spec.radii[1] + 1
    }

    /// The subcritical two-dimensional family `N_m^{a1,a2}` used to define
    /// beams for this (three-dimensional) family.
    pub fn cross_section_family(&self) -> ThresholdFamily {
        ThresholdFamily::from_radii(
            &[self.spec.radii[0], self.spec.radii[1]],
            self.cross_section_threshold(),
        )
        .expect("cross-section threshold is within range")
    }

    /// Renders as the family literal, e.g. `N[1,2,4]r=6`.
    pub fn literal(&self) -> String {
        let radii: Vec<String> = self.spec.radii.iter().map(|a| a.to_string()).collect();
        format!("N[{}]r={}", radii.join(","), self.r)
    }

    /// Materializes the equivalent explicit family: all `r`-subsets of the
    /// neighbourhood. Rule counts explode combinatorially; this is intended
    /// for small specs (test oracles), the engine itself always counts.
    pub fn materialize_rules(&self) -> ExplicitFamily {
        let vectors = self.spec.vectors();
        let mut rules = Vec::new();
        let mut subset = Vec::new();
        subsets_of_size(&vectors, self.r as usize, 0, &mut subset, &mut rules);
        ExplicitFamily::new(self.dims(), rules).expect("r-subsets are valid rules")
    }

    /// A direction is stable iff fewer than `r` neighbourhood vectors lie in
    /// the open half-space `{x : <x,u> < 0}`.
    pub fn is_stable_direction(&self, u: &RationalDirection) -> Result<bool, FamilyError> {
        if u.components.len() != self.dims() {
            return Err(FamilyError::DimensionMismatch {
                family: self.dims(),
                vector: u.components.len(),
            });
        }
        let mut count: u32 = 0;
        for (axis, &a) in self.spec.radii.iter().enumerate() {
            if u.components[axis] != 0 {
                // the a_i vectors -sign(u_axis) * k * e_axis all satisfy <x,u> < 0
                count += a;
            }
        }
        Ok(count < self.r)
    }

    /// Parses a family literal such as `N[1,2,4]r=6`.
    pub fn parse_literal(literal: &str) -> Result<Self, FamilyError> {
        let bad = |reason: &str| FamilyError::BadLiteral {
            literal: literal.to_string(),
            reason: reason.to_string(),
        };
        let rest = literal
            .trim()
            .strip_prefix("N[")
            .ok_or_else(|| bad("expected prefix \"N[\""))?;
        let (radii_part, r_part) = rest
            .split_once("]r=")
            .ok_or_else(|| bad("expected \"]r=<threshold>\""))?;
        let mut radii = Vec::new();
        for tok in radii_part.split(',') {
            let a: u32 = tok
                .trim()
                .parse()
                .map_err(|_| bad(&format!("bad radius {tok:?}")))?;
            radii.push(a);
        }
        let r: u32 = r_part
            .trim()
            .parse()
            .map_err(|_| bad(&format!("bad threshold {r_part:?}")))?;
        Self::from_radii(&radii, r).map_err(|e| bad(&e.to_string()))
    }
}

fn subsets_of_size(
    items: &[Vec<i64>],
    k: usize,
    start: usize,
    current: &mut Vec<Vec<i64>>,
    out: &mut Vec<Vec<Vec<i64>>>,
) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    let needed = k - current.len();
    for i in start..=items.len().saturating_sub(needed) {
        current.push(items[i].clone());
        subsets_of_size(items, k, i + 1, current, out);
        current.pop();
    }
}

/// An arbitrary finite update family: a vertex becomes infected when the
/// translate of some rule is fully infected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExplicitFamily {
    dims: usize,
    rules: Vec<Vec<Vec<i64>>>,
}

impl ExplicitFamily {
    pub fn new(dims: usize, rules: Vec<Vec<Vec<i64>>>) -> Result<Self, FamilyError> {
        for (i, rule) in rules.iter().enumerate() {
            if rule.is_empty() {
                return Err(FamilyError::EmptyRule(i));
            }
            for v in rule {
                if v.len() != dims {
                    return Err(FamilyError::DimensionMismatch {
                        family: dims,
                        vector: v.len(),
                    });
                }
                if v.iter().all(|&x| x == 0) {
                    return Err(FamilyError::RuleContainsOrigin(i));
                }
            }
        }
        Ok(Self { dims, rules })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn rules(&self) -> &[Vec<Vec<i64>>] {
        &self.rules
    }

    /// A direction is stable iff no rule lies entirely in the open
    /// half-space `{x : <x,u> < 0}`.
    pub fn is_stable_direction(&self, u: &RationalDirection) -> Result<bool, FamilyError> {
        if u.components.len() != self.dims {
            return Err(FamilyError::DimensionMismatch {
                family: self.dims,
                vector: u.components.len(),
            });
        }
        let inside = |rule: &[Vec<i64>]| {
            rule.iter().all(|x| {
                let dot: i128 = x
                    .iter()
                    .zip(&u.components)
                    .map(|(&a, &b)| a as i128 * b as i128)
                    .sum();
                dot < 0
            })
        };
        Ok(!self.rules.iter().any(|rule| inside(rule)))
    }

    /// Parses the rules file format: one rule per line, rule = whitespace
    /// separated vectors, vector = comma separated integers. Blank lines and
    /// `#` comments are skipped.
    pub fn parse_rules_text(dims: usize, text: &str) -> Result<Self, FamilyError> {
        let mut rules = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut rule = Vec::new();
            for tok in line.split_whitespace() {
                let mut v = Vec::new();
                for c in tok.split(',') {
                    let x: i64 = c.trim().parse().map_err(|_| FamilyError::BadLiteral {
                        literal: tok.to_string(),
                        reason: "bad integer component".to_string(),
                    })?;
                    v.push(x);
                }
                rule.push(v);
            }
            rules.push(rule);
        }
        Self::new(dims, rules)
    }
}

/// Either family kind, as accepted by the engine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum UpdateFamily {
    Threshold(ThresholdFamily),
    Explicit(ExplicitFamily),
}

impl UpdateFamily {
    pub fn dims(&self) -> usize {
        match self {
            UpdateFamily::Threshold(f) => f.dims(),
            UpdateFamily::Explicit(f) => f.dims(),
        }
    }

    pub fn is_stable_direction(&self, u: &RationalDirection) -> Result<bool, FamilyError> {
        match self {
            UpdateFamily::Threshold(f) => f.is_stable_direction(u),
            UpdateFamily::Explicit(f) => f.is_stable_direction(u),
        }
    }
}

impl From<ThresholdFamily> for UpdateFamily {
    fn from(f: ThresholdFamily) -> Self {
        UpdateFamily::Threshold(f)
    }
}

impl From<ExplicitFamily> for UpdateFamily {
    fn from(f: ExplicitFamily) -> Self {
        UpdateFamily::Explicit(f)
    }
}

/// A rational point on the sphere, i.e. a nonzero integer vector up to
/// positive scaling. Stored gcd-reduced so `v` and `k*v` compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct RationalDirection {
    components: Vec<i64>,
}

impl RationalDirection {
    pub fn new(components: Vec<i64>) -> Result<Self, FamilyError> {
        if components.iter().all(|&x| x == 0) {
            return Err(FamilyError::ZeroDirection);
        }
        let g = components
            .iter()
            .map(|&x| x.unsigned_abs())
            .fold(0u64, num_integer::gcd);
        let components = components.iter().map(|&x| x / g as i64).collect();
        Ok(Self { components })
    }

    pub fn components(&self) -> &[i64] {
        &self.components
    }
}

impl std::fmt::Display for RationalDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.components.iter().map(|x| x.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// The four symbolic shapes the stable set takes for critical
/// three-dimensional anisotropic families, plus the two degenerate shapes.
/// `S1_i` denotes the great circle orthogonal to `e_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StableSetCase {
    /// `{+-e_1, +-e_2, +-e_3}`, for `c < r <= a+b`.
    AxesOnly,
    /// `{+-e_3} U S1_3`, for `a+b < r <= a+c`.
    E3PlusCircle3,
    /// `S1_2 U S1_3`, for `a+c < r <= b+c`.
    Circles23,
    /// `S1_1 U S1_2 U S1_3`, for `b+c < r <= a+b+c`.
    Circles123,
    /// The whole sphere, for `r > a+b+c`.
    AllSphere,
    /// No stable direction among the probes.
    Empty,
}

impl StableSetCase {
    /// Textual rendering used by the CLI, e.g. `S1_2 ∪ S1_3`.
    pub fn render(&self) -> &'static str {
        match self {
            StableSetCase::AxesOnly => "{±e1, ±e2, ±e3}",
            StableSetCase::E3PlusCircle3 => "{±e3} ∪ S1_3",
            StableSetCase::Circles23 => "S1_2 ∪ S1_3",
            StableSetCase::Circles123 => "S1_1 ∪ S1_2 ∪ S1_3",
            StableSetCase::AllSphere => "S2",
            StableSetCase::Empty => "∅",
        }
    }

    /// Whether a probe direction belongs to the symbolic set.
    pub fn contains(&self, u: &RationalDirection) -> bool {
        let c = u.components();
        debug_assert_eq!(c.len(), 3);
        let axis = c.iter().filter(|&&x| x != 0).count() == 1;
        match self {
            StableSetCase::AxesOnly => axis,
            StableSetCase::E3PlusCircle3 => c[2] == 0 || (axis && c[2] != 0),
            StableSetCase::Circles23 => c[1] == 0 || c[2] == 0,
            StableSetCase::Circles123 => c.contains(&0),
            StableSetCase::AllSphere => true,
            StableSetCase::Empty => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Criticality {
    Supercritical,
    Critical,
    Subcritical,
}

impl std::fmt::Display for Criticality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criticality::Supercritical => "supercritical",
            Criticality::Critical => "critical",
            Criticality::Subcritical => "subcritical",
        };
        write!(f, "{s}")
    }
}

/// Symbolic stable set of `N_r^{a,b,c}` together with its criticality class
/// and the subset of the 18 standard probe directions found stable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableSetDescription {
    pub case: StableSetCase,
    pub class: Criticality,
    /// Stable members of the 6 axis + 12 diagonal probe directions. For the
    /// supercritical range `r <= c` this is the only reliable description;
    /// `case` is then a best-effort probe match (`Empty` when nothing fits).
    pub stable_probes: Vec<RationalDirection>,
}

/// The 6 axis directions followed by the 12 reduced diagonals.
pub fn standard_probes_3d() -> Vec<RationalDirection> {
    let mut probes = Vec::with_capacity(18);
    for axis in 0..3 {
        for sign in [1i64, -1] {
            let mut v = vec![0i64; 3];
            v[axis] = sign;
            probes.push(RationalDirection::new(v).unwrap());
        }
    }
    for zero_axis in 0..3 {
        for s1 in [1i64, -1] {
            for s2 in [1i64, -1] {
                let mut v = vec![0i64; 3];
                let others: Vec<usize> = (0..3).filter(|&i| i != zero_axis).collect();
                v[others[0]] = s1;
                v[others[1]] = s2;
                probes.push(RationalDirection::new(v).unwrap());
            }
        }
    }
    probes
}

/// Criticality class of `N_r^{a,b,c}`: critical iff `c+1 <= r <= a+b+c`.
pub fn criticality_3d(a: u32, b: u32, c: u32, r: u32) -> Criticality {
    if r <= c {
        Criticality::Supercritical
    } else if r <= a + b + c {
        Criticality::Critical
    } else {
        Criticality::Subcritical
    }
}

/// Symbolic stable set of the anisotropic family `N_r^{a,b,c}`.
///
/// For the critical range `c < r <= a+b+c` the four-case closed form
/// applies; `r > a+b+c` gives the whole sphere; for `r <= c` the stable set
/// has no tabulated closed form and the returned case is matched against
/// the probe signature instead.
pub fn stable_set_symbolic(
    a: u32,
    b: u32,
    c: u32,
    r: u32,
) -> Result<StableSetDescription, FamilyError> {
    if !(1 <= a && a <= b && b <= c) {
        return Err(FamilyError::InvalidRadii(vec![a, b, c]));
    }
    let family = ThresholdFamily::from_radii(&[a, b, c], r)?;
    let class = criticality_3d(a, b, c, r);
    let probes = standard_probes_3d();
    let stable_probes: Vec<RationalDirection> = probes
        .iter()
        .filter(|u| family.is_stable_direction(u).unwrap())
        .cloned()
        .collect();

    let case = if r <= c {
        // Supercritical: no tabulated closed form; report the case whose
        // probe signature matches exactly, if any.
        let candidates = [
            StableSetCase::Empty,
            StableSetCase::AxesOnly,
            StableSetCase::E3PlusCircle3,
            StableSetCase::Circles23,
            StableSetCase::Circles123,
            StableSetCase::AllSphere,
        ];
        candidates
            .into_iter()
            .find(|case| {
                probes
                    .iter()
                    .all(|u| case.contains(u) == stable_probes.contains(u))
            })
            .unwrap_or(StableSetCase::Empty)
    } else if r > a + b + c {
        StableSetCase::AllSphere
    } else if r > b + c {
        StableSetCase::Circles123
    } else if r > a + c {
        StableSetCase::Circles23
    } else if r > a + b {
        StableSetCase::E3PlusCircle3
    } else {
        StableSetCase::AxesOnly
    };

    Ok(StableSetDescription {
        case,
        class,
        stable_probes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScalingStatus {
    Theorem,
    UpperBoundOnly,
    Conjecture,
}

/// Predicted order of `log L_c` (or `log log L_c` at `log_level` 2) as
/// `p -> 0`: the target quantity is comparable to
/// `p^{-p_exponent} * (log 1/p)^{log_power}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScalingOrder {
    #[serde(with = "rational_as_string")]
    pub p_exponent: Rational64,
    #[serde(with = "rational_as_string")]
    pub log_power: Rational64,
    /// 1 for `log L_c`, 2 for `log log L_c`.
    pub log_level: u8,
    pub status: ScalingStatus,
}

mod rational_as_string {
    use num_rational::Rational64;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }
}

/// Growth exponent `alpha_s` (exact rational) with its step count `t_s`.
/// `t_s` is the largest `t >= 0` with `t^2 + 3t < 2s`; for `s = 1` the
/// conventional value `alpha_1 = 1/2` is used by the conjectured orders.
fn alpha_exponent(s: u32) -> Rational64 {
    if s == 1 {
        return Rational64::new(1, 2);
    }
    let t = largest_step_count(s) as i64;
    Rational64::new((t + 1) * (2 * s as i64 - t), 2 * (t + 2))
}

pub(crate) fn largest_step_count(s: u32) -> u32 {
    let mut t: u32 = 0;
    while {
        let next = (t + 1) as u64;
        next * next + 3 * next < 2 * s as u64
    } {
        t += 1;
    }
    t
}

/// Predicted scaling order of the critical length for `N_r^{a,b,c}`.
///
/// Only defined for critical families; the status distinguishes proved
/// two-sided orders, upper bounds, and conjectured orders.
pub fn predicted_log_lc_order(
    a: u32,
    b: u32,
    c: u32,
    r: u32,
) -> Result<ScalingOrder, FamilyError> {
    if !(1 <= a && a <= b && b <= c) {
        return Err(FamilyError::InvalidRadii(vec![a, b, c]));
    }
    if criticality_3d(a, b, c, r) != Criticality::Critical {
        return Err(FamilyError::NotCritical);
    }
    let (a, b, c, r) = (a as i64, b as i64, c as i64, r as i64);
    let int = |n: i64| Rational64::from_integer(n);
    let order = |e: Rational64, k: Rational64, level: u8, status: ScalingStatus| ScalingOrder {
        p_exponent: e,
        log_power: k,
        log_level: level,
        status,
    };

    if r > b + c {
        // doubly exponential regime
        let k = if b == a { int(0) } else { int(2) };
        return Ok(order(int(r - (b + c)), k, 2, ScalingStatus::Theorem));
    }

    let s = r - c; // 1 <= s <= b
    if c >= a + b {
        let k = if c == a + b { int(0) } else { int(2) };
        return Ok(order(int(s), k, 1, ScalingStatus::Theorem));
    }

    // From here on c < a+b.
    if r > a + c {
        // conjectured orders
        return if c == b {
            // c = b > a here, since c = b = a would force a+c = b+c
            let e = int(r - c - a) + alpha_exponent(a as u32);
            Ok(order(e, int(0), 1, ScalingStatus::Conjecture))
        } else {
            Ok(order(int(r - a - b), int(0), 1, ScalingStatus::Conjecture))
        };
    }

    // r <= a+c, i.e. s <= a.
    let t = largest_step_count(s as u32) as i64;
    let alpha = alpha_exponent(s as u32);
    if s <= 2 {
        if c == b && b == a {
            return Ok(order(
                Rational64::new(s, 2),
                int(0),
                1,
                ScalingStatus::Theorem,
            ));
        }
        if c == b {
            return Ok(order(
                Rational64::new(s, 2),
                Rational64::new(1, 2),
                1,
                ScalingStatus::Theorem,
            ));
        }
        if c <= a + b - s {
            return Ok(order(
                Rational64::new(s, 2),
                Rational64::new(3, 2),
                1,
                ScalingStatus::Theorem,
            ));
        }
        // a+b-s < c < a+b, possible only for s = 2, c = a+b-1; only an
        // upper bound is known.
        let e = if int(r) < int(a + b) + alpha {
            alpha
        } else {
            int(r - (a + b))
        };
        return Ok(order(e, int(2), 1, ScalingStatus::UpperBoundOnly));
    }

    // s >= 3, upper bounds only
    if c == b && b == a {
        Ok(order(alpha, int(0), 1, ScalingStatus::UpperBoundOnly))
    } else if c == b {
        Ok(order(
            alpha,
            Rational64::new(t + 1, t + 2),
            1,
            ScalingStatus::UpperBoundOnly,
        ))
    } else if c <= a + b - s {
        Ok(order(
            alpha,
            Rational64::new(t + 3, t + 2),
            1,
            ScalingStatus::UpperBoundOnly,
        ))
    } else {
        // a+b-s < c < a+b
        let e = if int(r) < int(a + b) + alpha {
            alpha
        } else {
            int(r - (a + b))
        };
        Ok(order(e, int(2), 1, ScalingStatus::UpperBoundOnly))
    }
}
