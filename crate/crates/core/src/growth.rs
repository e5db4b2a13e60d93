//! Droplet-growth exponents and experiments.
//!
//! The closed-form pair `(t_s, alpha_s)` controls the cost of supercritical
//! two-dimensional growth; an s-pattern is the staircase of `t_s + 1`
//! infected column runs (lengths `s, s-1, .., s-t`) at restricted offsets
//! that triggers it. The experiments here estimate the conditional
//! probability of a block growing by one layer, and of a fully seeded
//! droplet filling the whole box.

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::engine::{closure, percolates, Configuration, EngineError, GridBox};
use crate::family::UpdateFamily;
use crate::sampler::{
    cell_uniform, independent_key, ProbabilityEstimate, ResourceLimits, SamplerError, SamplingMode,
};

#[derive(Debug, Error, PartialEq)]
pub enum GrowthError {
    #[error("s must be at least 2, got {0}")]
    BadPatternSize(u32),
    #[error("strip must have at least {needed} columns, got {got}")]
    StripTooNarrow { needed: usize, got: usize },
    #[error("base extents {0:?} must all be at least the largest radius {1}")]
    BaseTooSmall(Vec<usize>, u32),
    #[error("droplet {droplet:?} does not fit in a box of side {side}")]
    DropletTooLarge { droplet: Vec<usize>, side: usize },
    #[error("only threshold families run growth experiments")]
    NeedsThresholdFamily,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The growth step count `t_s` and exponent `alpha_s`, both exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlphaEntry {
    pub s: u32,
    pub t: u32,
    #[serde(with = "rational_as_string")]
    pub alpha: Rational64,
}

mod rational_as_string {
    use num_rational::Rational64;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }
}

/// Computes `t_s` and `alpha_s` for `s >= 2`.
///
/// `t_s` is the largest `t` in `0..s` for which the average pattern cost
/// `(sum_{i=0..t} (s-i)) / (t+2)` stays below `s - t`; the closed ceiling
/// form is evaluated as well and the two are cross-checked.
pub fn alpha_t(s: u32) -> Result<AlphaEntry, GrowthError> {
    if s < 2 {
        return Err(GrowthError::BadPatternSize(s));
    }
    // maximality definition
    let holds = |t: u32| -> bool {
        if t >= s {
            return false;
        }
        let (s, t) = (s as i64, t as i64);
        let total = (t + 1) * s - t * (t + 1) / 2;
        // total / (t+2) < s - t
        total < (s - t) * (t + 2)
    };
    let mut t = 0u32;
    while holds(t + 1) {
        t += 1;
    }
    debug_assert!(holds(t));

    // closed form: t = ceil((sqrt(9+8s) - 5) / 2), i.e. the least t >= 0
    // with (2t+5)^2 >= 9+8s
    let mut t_closed = 0u32;
    while u64::from(2 * t_closed + 5).pow(2) < 9 + 8 * s as u64 {
        t_closed += 1;
    }
    assert_eq!(t, t_closed, "step-count definitions disagree at s = {s}");

    let (si, ti) = (s as i64, t as i64);
    let alpha = Rational64::new((ti + 1) * (2 * si - ti), 2 * (ti + 2));
    Ok(AlphaEntry { s, t, alpha })
}

/// Location of an s-pattern: the slot index `m_i` of each column run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatternHit {
    pub s: u32,
    pub column_offsets: Vec<usize>,
}

/// Scans a strip for an s-pattern.
///
/// Column `i` (0-based) must contain a fully infected run of length `s - i`
/// at one of the restricted offsets `m (s-i)`, `m = 0, 1, ..`; the hit with
/// the smallest `(m_0, .., m_t)` is returned. The strip is a 2-dimensional
/// configuration whose first axis indexes columns.
pub fn find_s_pattern(strip: &Configuration, s: u32) -> Result<Option<PatternHit>, GrowthError> {
    if s < 2 {
        return Err(GrowthError::BadPatternSize(s));
    }
    let t = alpha_t(s)?.t as usize;
    let dims = strip.grid().dims();
    debug_assert_eq!(dims.len(), 2);
    let (cols, rows) = (dims[0], dims[1]);
    if cols < t + 1 {
        return Err(GrowthError::StripTooNarrow {
            needed: t + 1,
            got: cols,
        });
    }
    let mut offsets = Vec::with_capacity(t + 1);
    for i in 0..=t {
        let run = (s as usize) - i;
        let slots = rows / run;
        let mut found = None;
        'slots: for m in 0..slots {
            for row in m * run..(m + 1) * run {
                if !strip.get(&[i, row]) {
                    continue 'slots;
                }
            }
            found = Some(m);
            break;
        }
        match found {
            Some(m) => offsets.push(m),
            None => return Ok(None),
        }
    }
    Ok(Some(PatternHit {
        s,
        column_offsets: offsets,
    }))
}

/// Exact probability that a Bernoulli(p) strip of height `k` contains an
/// s-pattern: the slots within a column are disjoint and the columns are
/// independent, so it is `prod_{i=0..t} (1 - (1 - p^{s-i})^{floor(k/(s-i))})`.
pub fn pattern_probability_exact(s: u32, k: usize, p: &BigRational) -> Result<BigRational, GrowthError> {
    let t = alpha_t(s)?.t;
    let one = BigRational::one;
    let mut prob = one();
    for i in 0..=t {
        let run = (s - i) as usize;
        let slots = k / run;
        let p_run = pow_rational(p, run as u32);
        let miss_all = pow_rational(&(one() - p_run), slots as u32);
        prob *= one() - miss_all;
        if prob.is_zero() {
            break;
        }
    }
    Ok(prob)
}

fn pow_rational(x: &BigRational, n: u32) -> BigRational {
    let mut out = BigRational::one();
    for _ in 0..n {
        out *= x;
    }
    out
}

/// Parses a decimal string (e.g. `0.35`) as an exact rational.
pub fn decimal_to_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits: String = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().ok()?;
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(BigRational::new(numer, denom))
}

/// Axis along which a block grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GrowthAxis {
    E1,
    E2,
    E3,
}

impl GrowthAxis {
    pub fn index(self) -> usize {
        match self {
            GrowthAxis::E1 => 0,
            GrowthAxis::E2 => 1,
            GrowthAxis::E3 => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "e1" | "E1" | "1" => Some(GrowthAxis::E1),
            "e2" | "E2" | "2" => Some(GrowthAxis::E2),
            "e3" | "E3" | "3" => Some(GrowthAxis::E3),
            _ => None,
        }
    }
}

impl std::fmt::Display for GrowthAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GrowthAxis::E1 => "e1",
            GrowthAxis::E2 => "e2",
            GrowthAxis::E3 => "e3",
        };
        write!(f, "{s}")
    }
}

/// Result of a one-layer growth experiment. The estimate is conditional on
/// a fully seeded base block, which over-conditions relative to internal
/// filling; the label records that convention.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub base_extents: Vec<usize>,
    pub grown_extents: Vec<usize>,
    pub direction: GrowthAxis,
    pub estimate: ProbabilityEstimate,
    pub conditioning: &'static str,
}

pub const FULLY_SEEDED_BASE: &str = "fully-seeded-base conditional";

/// Estimates the probability that the grown block is internally filled
/// when the base block starts fully infected and only the increment layers
/// carry Bernoulli(p) marks.
#[allow(clippy::too_many_arguments)]
pub fn growth_probability_experiment(
    family: &UpdateFamily,
    base: (usize, usize, usize),
    direction: GrowthAxis,
    increment: usize,
    p: f64,
    trials: u64,
    seed: u64,
    mode: SamplingMode,
    z: f64,
    limits: &ResourceLimits,
) -> Result<GrowthReport, GrowthError> {
    let max_radius = match family {
        UpdateFamily::Threshold(f) => *f.spec().radii().last().unwrap(),
        UpdateFamily::Explicit(_) => return Err(GrowthError::NeedsThresholdFamily),
    };
    let base_extents = vec![base.0, base.1, base.2];
    if base_extents.iter().any(|&e| e < max_radius as usize) {
        return Err(GrowthError::BaseTooSmall(base_extents, max_radius));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GrowthError::Sampler(SamplerError::InvalidDensity(p)));
    }
    let mut grown_extents = base_extents.clone();
    grown_extents[direction.index()] += increment;
    let grid = GridBox::new(grown_extents.clone(), crate::engine::Boundary::Closed)?;
    limits.check(&grid).map_err(GrowthError::Sampler)?;

    if increment == 0 {
        // degenerate: the grown block is the base, already filled
        return Ok(GrowthReport {
            base_extents,
            grown_extents,
            direction,
            estimate: ProbabilityEstimate::from_counts(trials, trials, z),
            conditioning: FULLY_SEEDED_BASE,
        });
    }

    let axis = direction.index();
    let base_len = base_extents[axis];
    let key = match mode {
        SamplingMode::Coupled => seed,
        SamplingMode::Independent => independent_key(seed, p),
    };
    let successes = run_trials(trials, |trial| {
        let mut config = Configuration::empty(grid.clone());
        for idx in 0..grid.volume() {
            let coords = grid.coords_of(idx);
            let in_base = coords[axis] < base_len;
            let infected = if in_base {
                true
            } else {
                cell_uniform(key, trial, idx as u64) < p
            };
            if infected {
                config.bits_mut().set(idx, true);
            }
        }
        let closed = closure(family, &config).expect("dims match");
        closed.is_full()
    });
    Ok(GrowthReport {
        base_extents,
        grown_extents,
        direction,
        estimate: ProbabilityEstimate::from_counts(successes, trials, z),
        conditioning: FULLY_SEEDED_BASE,
    })
}

fn run_trials(trials: u64, f: impl Fn(u64) -> bool + Sync) -> u64 {
    use rayon::prelude::*;
    (0..trials).into_par_iter().map(|t| f(t) as u64).sum()
}

/// Seeds a droplet block fully, Bernoulli(p) elsewhere, and estimates the
/// probability that the whole cube percolates.
#[allow(clippy::too_many_arguments)]
pub fn droplet_experiment(
    family: &UpdateFamily,
    droplet: (usize, usize, usize),
    side: usize,
    p: f64,
    trials: u64,
    seed: u64,
    mode: SamplingMode,
    z: f64,
    limits: &ResourceLimits,
) -> Result<ProbabilityEstimate, GrowthError> {
    let droplet = vec![droplet.0, droplet.1, droplet.2];
    if droplet.iter().any(|&e| e > side) {
        return Err(GrowthError::DropletTooLarge { droplet, side });
    }
    // p = 0 is a legitimate degenerate here: nothing outside the droplet
    if !(0.0..=1.0).contains(&p) {
        return Err(GrowthError::Sampler(SamplerError::InvalidDensity(p)));
    }
    let grid = GridBox::cube(3, side)?;
    limits.check(&grid).map_err(GrowthError::Sampler)?;
    let key = match mode {
        SamplingMode::Coupled => seed,
        SamplingMode::Independent => independent_key(seed, p),
    };
    let successes = run_trials(trials, |trial| {
        let mut config = Configuration::empty(grid.clone());
        for idx in 0..grid.volume() {
            let coords = grid.coords_of(idx);
            let in_droplet = coords.iter().zip(&droplet).all(|(&c, &e)| c < e);
            if in_droplet || cell_uniform(key, trial, idx as u64) < p {
                config.bits_mut().set(idx, true);
            }
        }
        percolates(family, &config).expect("dims match")
    });
    Ok(ProbabilityEstimate::from_counts(successes, trials, z))
}
