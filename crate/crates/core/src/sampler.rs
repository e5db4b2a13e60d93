//! Seeded Bernoulli initial conditions and Monte Carlo estimation.
//!
//! Randomness is counter-based: the uniform variate of a cell is a pure
//! function of `(seed, trial_index, cell_index)`, so trials regenerate
//! bit-identically regardless of execution order or worker count. By
//! default the same uniform field is shared across densities and thresholded
//! at `p` (coupled sampling), which makes the seed at `p1 < p2` an exact
//! subset of the seed at `p2`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{percolates, Boundary, Configuration, EngineError, GridBox};
use crate::family::{ThresholdFamily, UpdateFamily};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("density must satisfy 0 < p <= 1, got {0}")]
    InvalidDensity(f64),
    #[error("need at least one trial")]
    NoTrials,
    #[error("box of {volume} cells exceeds the resource limit of {limit} cells")]
    ResourceLimit { volume: u64, limit: u64 },
    #[error("p grid must be strictly decreasing")]
    UnorderedDensities,
    #[error("family is not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Coupled sampling shares one uniform field across densities; independent
/// sampling mixes the density into the field key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum SamplingMode {
    #[default]
    Coupled,
    Independent,
}

/// Bernoulli product seeding of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernoulliSeeding {
    pub p: f64,
    pub seed: u64,
    pub trial_index: u64,
    pub mode: SamplingMode,
}

impl BernoulliSeeding {
    pub fn new(p: f64, seed: u64, trial_index: u64) -> Result<Self, SamplerError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(SamplerError::InvalidDensity(p));
        }
        Ok(Self {
            p,
            seed,
            trial_index,
            mode: SamplingMode::Coupled,
        })
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform variate in `[0,1)` for one cell of one trial.
#[inline]
pub fn cell_uniform(seed: u64, trial_index: u64, cell_index: u64) -> f64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ trial_index);
    h = mix64(h ^ cell_index);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Field key for independent (non-coupled) sampling at density `p`.
pub(crate) fn independent_key(seed: u64, p: f64) -> u64 {
    mix64(seed ^ p.to_bits())
}

/// Each cell is infected independently with probability `p`.
pub fn sample_configuration(grid: &GridBox, seeding: &BernoulliSeeding) -> Configuration {
    let key = match seeding.mode {
        SamplingMode::Coupled => seeding.seed,
        SamplingMode::Independent => independent_key(seeding.seed, seeding.p),
    };
    let mut config = Configuration::empty(grid.clone());
    for i in 0..grid.volume() {
        if cell_uniform(key, seeding.trial_index, i as u64) < seeding.p {
            config.bits_mut().set(i, true);
        }
    }
    config
}

/// Monte Carlo estimate with its Wilson score interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityEstimate {
    pub successes: u64,
    pub trials: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// z-score of the interval (1.96 for 95%, 3.0 for 99.7%).
    pub z: f64,
}

impl ProbabilityEstimate {
    pub fn from_counts(successes: u64, trials: u64, z: f64) -> Self {
        assert!(trials > 0 && successes <= trials);
        let n = trials as f64;
        let phat = successes as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (phat + z2 / (2.0 * n)) / denom;
        let half = z / denom * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            successes,
            trials,
            point: phat,
            ci_low: (center - half).max(0.0),
            ci_high: (center + half).min(1.0),
            z,
        }
    }
}

pub const DEFAULT_Z: f64 = 1.96;

/// Per-run caps. `max_cells` bounds the volume of any sampled box.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResourceLimits {
    pub max_cells: u64,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self {
            max_cells: 1 << 28,
        }
    }
}

impl ResourceLimits {
    pub fn check(&self, grid: &GridBox) -> Result<(), SamplerError> {
        let volume = grid.volume() as u64;
        if volume > self.max_cells {
            return Err(SamplerError::ResourceLimit {
                volume,
                limit: self.max_cells,
            });
        }
        Ok(())
    }
}

/// Fraction of `trials` Bernoulli(p) configurations on `[L]^d` whose closure
/// is the whole box.
#[allow(clippy::too_many_arguments)]
pub fn percolation_probability(
    family: &UpdateFamily,
    l: usize,
    p: f64,
    trials: u64,
    seed: u64,
    mode: SamplingMode,
    z: f64,
    limits: &ResourceLimits,
) -> Result<ProbabilityEstimate, SamplerError> {
    if trials == 0 {
        return Err(SamplerError::NoTrials);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(SamplerError::InvalidDensity(p));
    }
    let grid = GridBox::new(vec![l; family.dims()], Boundary::Closed)?;
    limits.check(&grid)?;
    let successes = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seeding = BernoulliSeeding {
                p,
                seed,
                trial_index: trial,
                mode,
            };
            let config = sample_configuration(&grid, &seeding);
            percolates(family, &config).expect("dims already checked") as u64
        })
        .sum();
    Ok(ProbabilityEstimate::from_counts(successes, trials, z))
}

/// Bracket of the critical length: the smallest probed `L` with estimated
/// percolation probability at least the target, together with the largest
/// probed `L` below it.
#[derive(Debug, Clone, Serialize)]
pub struct LcEstimate {
    /// Largest probed length with estimate below the target (0 when the
    /// first probe already met the target).
    pub lower: usize,
    /// Smallest probed length meeting the target; `None` when `l_max` was
    /// exhausted first.
    pub upper: Option<usize>,
    /// Every probe in evaluation order.
    pub trace: Vec<(usize, ProbabilityEstimate)>,
    pub warnings: Vec<String>,
}

/// Search options for [`critical_length`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LcSearch {
    pub target: f64,
    pub trials: u64,
    pub l_max: usize,
    /// Bisection stops once `hi - lo <= max(1, rel_width * lo)`.
    pub rel_width: f64,
    pub z: f64,
}

impl Default for LcSearch {
    fn default() -> Self {
        Self {
            target: 0.5,
            trials: 1000,
            l_max: 4096,
            rel_width: 0.0,
            z: DEFAULT_Z,
        }
    }
}

fn ensure_searchable(family: &UpdateFamily) -> Result<(), SamplerError> {
    if let UpdateFamily::Threshold(f) = family {
        if f.dims() >= 2 {
            let radii = f.spec().radii();
            let sum: u32 = radii.iter().sum();
            if f.r() > sum {
                return Err(SamplerError::NotApplicable(format!(
                    "{} is subcritical (r > {}), the critical length diverges",
                    f.literal(),
                    sum
                )));
            }
        }
    }
    Ok(())
}

/// Doubling-then-bisection search for the critical length at density `p`.
pub fn critical_length(
    family: &UpdateFamily,
    p: f64,
    seed: u64,
    mode: SamplingMode,
    search: &LcSearch,
    limits: &ResourceLimits,
) -> Result<LcEstimate, SamplerError> {
    ensure_searchable(family)?;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let probe = |l: usize, trace: &mut Vec<(usize, ProbabilityEstimate)>| {
        let est = percolation_probability(
            family, l, p, search.trials, seed, mode, search.z, limits,
        )?;
        let point = est.point;
        trace.push((l, est));
        Ok::<f64, SamplerError>(point)
    };

    // exponential doubling
    let mut lo = 0usize;
    let mut hi = None;
    let mut l = 1usize;
    loop {
        if l > search.l_max {
            break;
        }
        let point = probe(l, &mut trace)?;
        if point >= search.target {
            hi = Some(l);
            break;
        }
        lo = l;
        l *= 2;
    }

    // bisection
    if let Some(mut high) = hi {
        while high - lo > ((lo as f64 * search.rel_width) as usize).max(1) {
            let mid = lo + (high - lo) / 2;
            let point = probe(mid, &mut trace)?;
            if point >= search.target {
                high = mid;
            } else {
                lo = mid;
            }
        }
        hi = Some(high);
    } else {
        warnings.push(format!(
            "no percolation probability >= {} up to l_max = {}; lower bound only",
            search.target, search.l_max
        ));
    }

    // the search assumes the estimates grow with L; report when they do not
    let mut by_l: Vec<(usize, f64)> = trace.iter().map(|(l, e)| (*l, e.point)).collect();
    by_l.sort_by_key(|&(l, _)| l);
    if by_l.windows(2).any(|w| w[0].1 > w[1].1) {
        warnings.push("probe trace is not monotone in L".to_string());
    }

    Ok(LcEstimate {
        lower: lo,
        upper: hi,
        trace,
        warnings,
    })
}

/// One row of the scaling diagnostic table.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub p: f64,
    pub lower: usize,
    pub upper: Option<usize>,
    /// `log L_c` (or `log log L_c` at level 2) divided by the predicted
    /// order `p^{-e} (log 1/p)^k`, from the bracket midpoint.
    pub ratio: Option<f64>,
    pub warnings: Vec<String>,
}

/// Diagnostic series: brackets plus the ratio of the measured magnitude to
/// the predicted order. No asymptotic claim.
pub fn scaling_probe(
    family: &ThresholdFamily,
    p_list: &[f64],
    seed: u64,
    mode: SamplingMode,
    search: &LcSearch,
    limits: &ResourceLimits,
) -> Result<Vec<ScalingRow>, SamplerError> {
    if p_list.windows(2).any(|w| w[0] <= w[1]) {
        return Err(SamplerError::UnorderedDensities);
    }
    let radii = family.spec().radii();
    if radii.len() != 3 {
        return Err(SamplerError::NotApplicable(
            "scaling orders are tabulated for three-dimensional families".to_string(),
        ));
    }
    let order = crate::family::predicted_log_lc_order(radii[0], radii[1], radii[2], family.r())
        .map_err(|e| SamplerError::NotApplicable(e.to_string()))?;
    let e = rational_to_f64(order.p_exponent);
    let k = rational_to_f64(order.log_power);

    let update: UpdateFamily = family.clone().into();
    let mut rows = Vec::new();
    for &p in p_list {
        let est = critical_length(&update, p, seed, mode, search, limits)?;
        let ratio = est.upper.map(|hi| {
            let mid = (est.lower.max(1) + hi) as f64 / 2.0;
            let mut measured = mid.ln();
            if order.log_level == 2 {
                measured = measured.ln();
            }
            let predicted = p.powf(-e) * (1.0 / p).ln().powf(k);
            measured / predicted
        });
        rows.push(ScalingRow {
            p,
            lower: est.lower,
            upper: est.upper,
            ratio,
            warnings: est.warnings,
        });
    }
    Ok(rows)
}

fn rational_to_f64(r: num_rational::Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ThresholdFamily;

    fn nn2d(r: u32) -> UpdateFamily {
        ThresholdFamily::from_radii(&[1, 1], r).unwrap().into()
    }

    #[test]
    fn seeding_is_deterministic() {
        let grid = GridBox::cube(2, 16).unwrap();
        let seeding = BernoulliSeeding::new(0.5, 42, 7).unwrap();
        let a = sample_configuration(&grid, &seeding);
        let b = sample_configuration(&grid, &seeding);
        assert_eq!(a, b);

        let other = BernoulliSeeding::new(0.5, 42, 8).unwrap();
        let c = sample_configuration(&grid, &other);
        assert_ne!(a, c, "distinct trial indices should differ");
    }

    #[test]
    fn density_concentrates() {
        // binomial concentration: density within 4 sigma of p
        let grid = GridBox::new(vec![1000, 1000], Boundary::Closed).unwrap();
        let n = grid.volume() as f64;
        let p = 0.1;
        let seeding = BernoulliSeeding::new(p, 90125, 0).unwrap();
        let config = sample_configuration(&grid, &seeding);
        let density = config.infected_count() as f64 / n;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(
            (density - p).abs() < 4.0 * sigma,
            "density {density} too far from {p}"
        );
    }

    #[test]
    fn coupled_seeds_nest() {
        let grid = GridBox::cube(2, 24).unwrap();
        let lo = sample_configuration(&grid, &BernoulliSeeding::new(0.15, 5, 3).unwrap());
        let hi = sample_configuration(&grid, &BernoulliSeeding::new(0.3, 5, 3).unwrap());
        assert!(lo.bits().is_subset_of(hi.bits()));
        assert!(lo.infected_count() < hi.infected_count());
    }

    #[test]
    fn invalid_densities_rejected() {
        assert!(BernoulliSeeding::new(0.0, 1, 0).is_err());
        assert!(BernoulliSeeding::new(-0.5, 1, 0).is_err());
        assert!(BernoulliSeeding::new(1.5, 1, 0).is_err());
        assert!(BernoulliSeeding::new(1.0, 1, 0).is_ok());
        let f = nn2d(2);
        assert!(matches!(
            percolation_probability(&f, 3, 0.0, 10, 1, SamplingMode::Coupled, 1.96,
                &ResourceLimits::default()),
            Err(SamplerError::InvalidDensity(_))
        ));
    }

    #[test]
    fn full_density_percolates_exactly() {
        let f = nn2d(2);
        let est = percolation_probability(
            &f, 4, 1.0, 50, 9, SamplingMode::Coupled, 1.96,
            &ResourceLimits::default(),
        )
        .unwrap();
        assert_eq!(est.successes, 50);
        assert_eq!(est.point, 1.0);
    }

    #[test]
    fn estimates_reproduce_bitwise() {
        let f = nn2d(2);
        let run = || {
            percolation_probability(
                &f, 6, 0.25, 400, 1234, SamplingMode::Coupled, 1.96,
                &ResourceLimits::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn resource_limit_enforced() {
        let f = nn2d(2);
        let limits = ResourceLimits { max_cells: 100 };
        assert!(matches!(
            percolation_probability(&f, 11, 0.5, 1, 1, SamplingMode::Coupled, 1.96, &limits),
            Err(SamplerError::ResourceLimit { .. })
        ));
    }

    #[test]
    fn wilson_interval_sane() {
        let e = ProbabilityEstimate::from_counts(50, 100, 1.96);
        assert!(e.ci_low < 0.5 && 0.5 < e.ci_high);
        assert!(e.ci_low <= e.point && e.point <= e.ci_high);
        let e = ProbabilityEstimate::from_counts(0, 10, 1.96);
        assert_eq!(e.ci_low, 0.0);
        assert!(e.ci_high > 0.0);
        let e = ProbabilityEstimate::from_counts(10, 10, 1.96);
        assert_eq!(e.ci_high, 1.0);
        assert!(e.ci_low < 1.0);
    }

    #[test]
    fn lc_small_at_high_density() {
        let f = nn2d(2);
        let search = LcSearch {
            trials: 200,
            ..LcSearch::default()
        };
        let est = critical_length(
            &f, 0.99, 77, SamplingMode::Coupled, &search,
            &ResourceLimits::default(),
        )
        .unwrap();
        let hi = est.upper.expect("bracketed");
        assert!(hi < 10, "expected a small critical length, got {hi}");
        for (_, e) in &est.trace {
            assert!(e.trials == 200);
        }
    }

    #[test]
    fn lc_ordering_in_p() {
        let f = nn2d(2);
        let search = LcSearch {
            trials: 400,
            ..LcSearch::default()
        };
        let limits = ResourceLimits::default();
        let coarse = critical_length(&f, 0.3, 11, SamplingMode::Coupled, &search, &limits)
            .unwrap();
        let fine = critical_length(&f, 0.15, 11, SamplingMode::Coupled, &search, &limits)
            .unwrap();
        assert!(fine.upper.unwrap() > coarse.upper.unwrap());
    }

    #[test]
    fn lc_rejects_subcritical() {
        let f: UpdateFamily = ThresholdFamily::from_radii(&[1, 1], 3).unwrap().into();
        assert!(matches!(
            critical_length(
                &f, 0.5, 1, SamplingMode::Coupled, &LcSearch::default(),
                &ResourceLimits::default()
            ),
            Err(SamplerError::NotApplicable(_))
        ));
    }

    #[test]
    fn lc_reports_lower_bound_when_capped() {
        let f = nn2d(2);
        let search = LcSearch {
            trials: 50,
            l_max: 4,
            ..LcSearch::default()
        };
        let est = critical_length(
            &f, 0.01, 3, SamplingMode::Coupled, &search,
            &ResourceLimits::default(),
        )
        .unwrap();
        assert!(est.upper.is_none());
        assert!(!est.warnings.is_empty());
        assert_eq!(est.lower, 4);
    }

    #[test]
    fn scaling_probe_rows() {
        let f = ThresholdFamily::from_radii(&[1, 1, 2], 3).unwrap();
        let search = LcSearch {
            trials: 100,
            l_max: 256,
            ..LcSearch::default()
        };
        let rows = scaling_probe(
            &f,
            &[0.35, 0.3],
            21,
            SamplingMode::Coupled,
            &search,
            &ResourceLimits::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            let ratio = row.ratio.expect("bracketed");
            assert!(ratio.is_finite() && ratio > 0.0);
        }

        // empty list gives an empty table
        assert!(scaling_probe(
            &f,
            &[],
            21,
            SamplingMode::Coupled,
            &search,
            &ResourceLimits::default()
        )
        .unwrap()
        .is_empty());

        // non-critical family is refused
        let sub = ThresholdFamily::from_radii(&[1, 1, 1], 4).unwrap();
        assert!(matches!(
            scaling_probe(
                &sub,
                &[0.3],
                21,
                SamplingMode::Coupled,
                &search,
                &ResourceLimits::default()
            ),
            Err(SamplerError::NotApplicable(_))
        ));
    }
}
