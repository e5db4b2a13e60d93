//! Property-based invariants of the engine, sampler, family and growth
//! modules, plus the recorded-seed percolation oracle checks.

use proptest::prelude::*;

use bootperc_core::engine::{
    closure, percolates, read_snapshot, write_snapshot, Boundary, Configuration, GridBox,
};
use bootperc_core::family::{RationalDirection, ThresholdFamily, UpdateFamily};
use bootperc_core::growth::{alpha_t, find_s_pattern};
use bootperc_core::sampler::{
    percolation_probability, sample_configuration, BernoulliSeeding, ProbabilityEstimate,
    ResourceLimits, SamplingMode,
};

fn small_family_2d() -> impl Strategy<Value = ThresholdFamily> {
    (1u32..=2, 1u32..=2, 1u32..=4).prop_filter_map("valid threshold", |(a, db, r)| {
        let b = a + db - 1;
        ThresholdFamily::from_radii(&[a, b], r.min(2 * (a + b))).ok()
    })
}

fn config_for(grid: &GridBox, mask: &[bool]) -> Configuration {
    let mut c = Configuration::empty(grid.clone());
    for (i, &bit) in mask.iter().enumerate() {
        if bit {
            c.bits_mut().set(i, true);
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closure_contains_monotone_idempotent(
        family in small_family_2d(),
        side in 3usize..=7,
        seed_bits in proptest::collection::vec(any::<bool>(), 49),
        extra_bits in proptest::collection::vec(any::<bool>(), 49),
    ) {
        let grid = GridBox::cube(2, side).unwrap();
        let n = grid.volume();
        let family: UpdateFamily = family.into();
        let a = config_for(&grid, &seed_bits[..n]);
        // b is a superset of a
        let sup_mask: Vec<bool> = (0..n).map(|i| seed_bits[i] || extra_bits[i]).collect();
        let b = config_for(&grid, &sup_mask);

        let ka = closure(&family, &a).unwrap();
        let kb = closure(&family, &b).unwrap();
        prop_assert!(a.bits().is_subset_of(ka.bits()), "containment");
        prop_assert!(ka.bits().is_subset_of(kb.bits()), "monotonicity");
        prop_assert_eq!(&closure(&family, &ka).unwrap(), &ka, "idempotence");
    }

    #[test]
    fn stable_direction_scale_invariant(
        radii_r in (1u32..=3, 1u32..=3, 1u32..=3, 1u32..=10),
        dir in proptest::collection::vec(-5i64..=5, 3),
        k in 1i64..=7,
    ) {
        let (a, db, dc, r) = radii_r;
        let (b, c) = (a + db - 1, a + db - 1 + dc - 1);
        let family = ThresholdFamily::from_radii(&[a, b, c], r.min(2 * (a + b + c))).unwrap();
        prop_assume!(dir.iter().any(|&x| x != 0));
        let u = RationalDirection::new(dir.clone()).unwrap();
        let scaled = RationalDirection::new(dir.iter().map(|&x| x * k).collect()).unwrap();
        prop_assert_eq!(&u, &scaled, "gcd reduction identifies positive multiples");
        prop_assert_eq!(
            family.is_stable_direction(&u).unwrap(),
            family.is_stable_direction(&scaled).unwrap()
        );
    }

    #[test]
    fn threshold_stability_matches_explicit_rules(
        r in 1u32..=6,
        dir in proptest::collection::vec(-4i64..=4, 3),
    ) {
        // N_r^{1,1,1} materializes to at most C(6,3) = 20 rules
        prop_assume!(dir.iter().any(|&x| x != 0));
        let family = ThresholdFamily::from_radii(&[1, 1, 1], r).unwrap();
        let explicit = family.materialize_rules();
        let u = RationalDirection::new(dir).unwrap();
        prop_assert_eq!(
            family.is_stable_direction(&u).unwrap(),
            explicit.is_stable_direction(&u).unwrap()
        );
    }

    #[test]
    fn coupled_seeds_nest_in_density(
        p1 in 0.05f64..0.9,
        dp in 0.01f64..0.1,
        seed in any::<u64>(),
        trial in 0u64..100,
    ) {
        let p2 = (p1 + dp).min(1.0);
        let grid = GridBox::cube(2, 12).unwrap();
        let lo = sample_configuration(&grid, &BernoulliSeeding::new(p1, seed, trial).unwrap());
        let hi = sample_configuration(&grid, &BernoulliSeeding::new(p2, seed, trial).unwrap());
        prop_assert!(lo.bits().is_subset_of(hi.bits()));
    }

    #[test]
    fn snapshot_round_trips(
        side1 in 1usize..=6,
        side2 in 1usize..=6,
        torus in any::<bool>(),
        bits in proptest::collection::vec(any::<bool>(), 36),
    ) {
        let boundary = if torus { Boundary::Torus } else { Boundary::Closed };
        let grid = GridBox::new(vec![side1, side2], boundary).unwrap();
        let n = grid.volume();
        let config = config_for(&grid, &bits[..n]);
        let mut buf = Vec::new();
        write_snapshot(&config, &mut buf).unwrap();
        let back = read_snapshot(&buf[..]).unwrap();
        prop_assert_eq!(back, config);
    }

    #[test]
    fn pattern_hit_matches_indicator(
        k in 3usize..=9,
        bits in proptest::collection::vec(any::<bool>(), 18),
    ) {
        // the hit indicator is exactly "every column has a run in a slot"
        let s = 3u32;
        let t = alpha_t(s).unwrap().t as usize;
        let grid = GridBox::new(vec![t + 1, k], Boundary::Closed).unwrap();
        let strip = config_for(&grid, &bits[..grid.volume()]);
        let hit = find_s_pattern(&strip, s).unwrap();
        let mut expected = true;
        for col in 0..=t {
            let run = s as usize - col;
            let slots = k / run;
            let mut found = false;
            for m in 0..slots {
                if (m * run..(m + 1) * run).all(|row| strip.get(&[col, row])) {
                    found = true;
                    break;
                }
            }
            expected &= found;
        }
        prop_assert_eq!(hit.is_some(), expected);
        if let Some(h) = hit {
            // offsets point at fully infected runs
            for (col, &m) in h.column_offsets.iter().enumerate() {
                let run = s as usize - col;
                for row in m * run..(m + 1) * run {
                    prop_assert!(strip.get(&[col, row]));
                }
            }
        }
    }
}

/// Recorded seeds on [4]^2 under N_3^{1,2}, frozen from the exhaustive
/// sweep oracle: the 8-cell seed fills the box, dropping (3,3) does not.
#[test]
fn recorded_seed_percolation_oracle() {
    let family = ThresholdFamily::from_radii(&[1, 2], 3).unwrap();
    let rules = family.materialize_rules();
    let update: UpdateFamily = family.into();
    let grid = GridBox::cube(2, 4).unwrap();

    let filling: &[(usize, usize)] = &[
        (0, 0),
        (0, 2),
        (1, 1),
        (1, 3),
        (2, 0),
        (2, 2),
        (3, 1),
        (3, 3),
    ];
    let stuck = &filling[..filling.len() - 1];

    for (cells, expected) in [(filling, true), (stuck, false)] {
        let config = Configuration::from_cells(
            grid.clone(),
            &cells.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
        );
        assert_eq!(percolates(&update, &config).unwrap(), expected);
        // independent route: one synchronous sweep at a time over the
        // materialized rules
        let explicit: UpdateFamily = rules.clone().into();
        let mut current = config.clone();
        loop {
            let next = bootperc_core::engine::step(&explicit, &current).unwrap();
            if next == current {
                break;
            }
            current = next;
        }
        assert_eq!(current.is_full(), expected);
    }
}

/// Exact [3]^2 percolation probability by subset enumeration.
fn exact_prob_3x3(p: f64) -> f64 {
    let family: UpdateFamily = ThresholdFamily::from_radii(&[1, 1], 2).unwrap().into();
    let grid = GridBox::cube(2, 3).unwrap();
    let mut total = 0.0;
    for mask in 0u32..512 {
        let mut config = Configuration::empty(grid.clone());
        for bit in 0..9 {
            if mask >> bit & 1 == 1 {
                config.bits_mut().set(bit, true);
            }
        }
        if percolates(&family, &config).unwrap() {
            let ones = mask.count_ones() as i32;
            total += p.powi(ones) * (1.0 - p).powi(9 - ones);
        }
    }
    total
}

/// Wilson interval coverage: over 100 independent estimation runs against
/// the exact [3]^2 value, at least 95 of the 95% intervals must contain it.
/// Deterministic under the pinned seed.
#[test]
fn wilson_interval_coverage() {
    let family: UpdateFamily = ThresholdFamily::from_radii(&[1, 1], 2).unwrap().into();
    let limits = ResourceLimits::default();
    let p = 0.3;
    let exact = exact_prob_3x3(p);
    let mut covered = 0;
    for rep in 0..100u64 {
        let est: ProbabilityEstimate = percolation_probability(
            &family,
            3,
            p,
            2000,
            0xC0FFEE ^ (rep * 0x9E37_79B9),
            SamplingMode::Coupled,
            1.96,
            &limits,
        )
        .unwrap();
        if est.ci_low <= exact && exact <= est.ci_high {
            covered += 1;
        }
    }
    assert!(
        covered >= 95,
        "Wilson 95% interval covered the exact value only {covered}/100 times"
    );
}
