//! Cross-checks the one-shot and cache-backed decode paths over the whole
//! verification matrix, plus the corruption control that proves the check
//! has teeth.

use stackdelay::decoder::{
    corrupted_mask_deviation, equivalence_report, DecoderConfig, WeightBundle,
    EQUIVALENCE_TOLERANCE, NEGATIVE_CONTROL_MIN,
};
use stackdelay::pattern::{build_layout, PatternKind, PatternSpec};

fn weights_for(layout_levels: usize, max_positions: usize, seed: u64) -> WeightBundle {
    WeightBundle::seeded(DecoderConfig::desk(layout_levels, max_positions), seed).unwrap()
}

#[test]
fn both_decode_paths_agree_across_the_matrix() {
    for kind in PatternKind::ALL {
        for &c in &[2usize, 4] {
            for &t_count in &[8usize, 16] {
                let windows: &[usize] = if kind == PatternKind::StackDelay {
                    &[1, 3]
                } else {
                    &[1]
                };
                for &k in windows {
                    let layout = build_layout(&PatternSpec::new(kind, c, t_count, k).unwrap());
                    let weights = weights_for(c, layout.total_steps(), 7);
                    let outcome = equivalence_report(&layout, &weights, 11).unwrap();
                    assert!(
                        outcome.passes(EQUIVALENCE_TOLERANCE),
                        "{kind} C={c} T={t_count} k={k}: {outcome:?}"
                    );
                    assert!(outcome.traces_match, "{kind} C={c} T={t_count} k={k}");
                    assert!(outcome.grid_round_trips, "{kind} C={c} T={t_count} k={k}");
                }
            }
        }
    }
}

#[test]
fn single_level_matrix_agrees_too() {
    for kind in PatternKind::ALL {
        for &t_count in &[8usize, 16] {
            let layout = build_layout(&PatternSpec::new(kind, 1, t_count, 1).unwrap());
            let weights = weights_for(1, layout.total_steps(), 7);
            let outcome = equivalence_report(&layout, &weights, 11).unwrap();
            assert!(
                outcome.passes(EQUIVALENCE_TOLERANCE),
                "{kind} T={t_count}: {outcome:?}"
            );
        }
    }
}

#[test]
fn one_flipped_mask_bit_is_loud_on_every_pattern() {
    for kind in PatternKind::ALL {
        let k = if kind == PatternKind::StackDelay { 3 } else { 1 };
        let layout = build_layout(&PatternSpec::new(kind, 4, 16, k).unwrap());
        let weights = weights_for(4, layout.total_steps(), 7);
        let deviation = corrupted_mask_deviation(&layout, &weights, 11).unwrap();
        assert!(
            deviation >= NEGATIVE_CONTROL_MIN,
            "{kind}: corrupted mask only moved logits by {deviation:e}"
        );
    }
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    for kind in PatternKind::ALL {
        let layout = build_layout(&PatternSpec::new(kind, 2, 8, 3).unwrap());
        let weights = weights_for(2, layout.total_steps(), 7);
        let first = equivalence_report(&layout, &weights, 11).unwrap();
        let second = equivalence_report(&layout, &weights, 11).unwrap();
        assert_eq!(
            first.max_deviation.to_bits(),
            second.max_deviation.to_bits(),
            "{kind}"
        );
        assert_eq!(first.compared, second.compared, "{kind}");
    }
}
