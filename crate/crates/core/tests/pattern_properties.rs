//! Property checks over the schedule algebra, the layouts it produces, and
//! the mask closed forms.

use proptest::prelude::*;

use stackdelay::cache::derive_policy;
use stackdelay::mask::build_mask;
use stackdelay::pattern::{
    apply_pattern, build_layout, permuted_base, revert_pattern, validate_layout, PatternKind,
    PatternSpec, TokenGrid,
};
use stackdelay::sampling::{cfg_combine, top_k_distribution};

fn any_kind() -> impl Strategy<Value = PatternKind> {
    prop_oneof![
        Just(PatternKind::Delay),
        Just(PatternKind::Flat),
        Just(PatternKind::Stack),
        Just(PatternKind::StackDelay),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn level_zero_always_decodes_first(
        kind in any_kind(),
        c in 2usize..=8,
        t_count in 1usize..=64,
        k in 1usize..=4,
    ) {
        let spec = PatternSpec::new(kind, c, t_count, k).unwrap();
        for t in 0..t_count {
            let base = spec.schedule_step(0, t).unwrap();
            for i in 1..c {
                prop_assert!(base < spec.schedule_step(i, t).unwrap());
            }
        }
    }

    #[test]
    fn higher_levels_sit_exactly_their_level_later(
        kind in any_kind(),
        c in 1usize..=8,
        t_count in 1usize..=64,
        k in 1usize..=4,
    ) {
        let spec = PatternSpec::new(kind, c, t_count, k).unwrap();
        for t in 0..t_count {
            let base = spec.schedule_step(0, t).unwrap();
            for i in 0..c {
                prop_assert_eq!(spec.schedule_step(i, t).unwrap() - base, i);
            }
        }
    }

    #[test]
    fn permuted_bases_never_collide(t_count in 1usize..=512, k in 1usize..=8) {
        let mut seen = vec![false; t_count + k * (k - 1) + 1];
        for t in 0..t_count {
            let base = permuted_base(t, k);
            prop_assert!(!seen[base], "base {} hit twice (k={})", base, k);
            seen[base] = true;
        }
    }

    #[test]
    fn unit_window_reduces_to_delay(c in 1usize..=8, t_count in 1usize..=64) {
        let sd = PatternSpec::new(PatternKind::StackDelay, c, t_count, 1).unwrap();
        let delay = PatternSpec::new(PatternKind::Delay, c, t_count, 1).unwrap();
        for t in 0..t_count {
            for i in 0..c {
                prop_assert_eq!(
                    sd.schedule_step(i, t).unwrap(),
                    delay.schedule_step(i, t).unwrap()
                );
            }
        }
        prop_assert_eq!(sd.total_steps(), delay.total_steps());
    }

    #[test]
    fn grids_survive_the_pattern_round_trip(
        kind in any_kind(),
        c in 1usize..=6,
        t_count in 1usize..=24,
        k in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let layout = build_layout(&PatternSpec::new(kind, c, t_count, k).unwrap());
        let grid = TokenGrid::random(c, t_count, 32, seed).unwrap();
        let seq = apply_pattern(&layout, &grid).unwrap();
        prop_assert_eq!(revert_pattern(&layout, &seq).unwrap(), grid);
    }

    #[test]
    fn guidance_blend_is_affine_on_integer_logits(
        cond in prop::collection::vec(-16i32..=16, 1..8),
        uncond_seed in -16i32..=16,
        scale in 0i32..=8,
    ) {
        // integer-valued f32s keep all the arithmetic exact, so the affine
        // identity holds bitwise, not just approximately
        let cond: Vec<f32> = cond.iter().map(|&v| v as f32).collect();
        let uncond: Vec<f32> = cond.iter().map(|&c| c + uncond_seed as f32).collect();
        let scale = scale as f32;
        let combined = cfg_combine(&cond, &uncond, scale).unwrap();
        for ((&out, &c), &u) in combined.iter().zip(&cond).zip(&uncond) {
            prop_assert_eq!(out - u, scale * (c - u));
        }
    }

    #[test]
    fn truncated_distributions_only_weight_the_top_k(
        logits in prop::collection::vec(-8.0f32..8.0, 1..32),
        k in 1usize..=32,
    ) {
        let dist = top_k_distribution(&logits, k, 1.0).unwrap();
        let kept = dist.iter().filter(|&&p| p > 0.0).count();
        prop_assert_eq!(kept, k.min(logits.len()));
        // every dropped index has a logit <= every kept index's logit
        let min_kept = dist
            .iter()
            .zip(&logits)
            .filter(|(&p, _)| p > 0.0)
            .map(|(_, &l)| l)
            .fold(f32::INFINITY, f32::min);
        for (&p, &l) in dist.iter().zip(&logits) {
            if p == 0.0 {
                prop_assert!(l <= min_kept);
            }
        }
    }
}

#[test]
fn every_built_in_layout_validates_cleanly() {
    // exhaustive over the supported desk range
    for kind in PatternKind::ALL {
        for &c in &[1usize, 2, 4, 8] {
            for t in 1..=64usize {
                for k in 1..=4usize {
                    let layout = build_layout(&PatternSpec::new(kind, c, t, k).unwrap());
                    let violations = validate_layout(&layout);
                    assert!(
                        violations.is_empty(),
                        "{kind} C={c} T={t} k={k}: {violations:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn stack_mask_rows_match_the_closed_form() {
    for &c in &[2usize, 4] {
        for &t_count in &[4usize, 8, 16] {
            let layout = build_layout(&PatternSpec::new(PatternKind::Stack, c, t_count, 1).unwrap());
            let mask = build_mask(&layout, &derive_policy(&layout));
            for t in 0..t_count {
                for i in 0..c {
                    let q = c * t + i;
                    // level-0 entries of every finished-or-current timestep,
                    // plus the partial stack built so far at t
                    let mut expected = vec![false; layout.flat_len()];
                    for t2 in 0..=t {
                        expected[c * t2] = true;
                    }
                    for i2 in 1..=i {
                        expected[c * t + i2] = true;
                    }
                    assert_eq!(mask.row(q), &expected[..], "C={c} T={t_count} q={q}");
                }
            }
        }
    }
}

#[test]
fn stack_delay_mask_rows_match_the_closed_form() {
    for &c in &[2usize, 4] {
        for &t_count in &[8usize, 16] {
            for &k in &[1usize, 3] {
                let layout =
                    build_layout(&PatternSpec::new(PatternKind::StackDelay, c, t_count, k).unwrap());
                let mask = build_mask(&layout, &derive_policy(&layout));
                for q_pos in layout.positions() {
                    let mut expected = vec![false; layout.flat_len()];
                    if !q_pos.is_empty() {
                        // long-term stream-0 entries up to now, plus
                        // everything decoded at this very step
                        for p_pos in layout.positions() {
                            if p_pos.is_empty() {
                                continue;
                            }
                            if (p_pos.stream == 0 && p_pos.step <= q_pos.step)
                                || p_pos.step == q_pos.step
                            {
                                expected[p_pos.flat_index] = true;
                            }
                        }
                    }
                    assert_eq!(
                        mask.row(q_pos.flat_index),
                        &expected[..],
                        "C={c} T={t_count} k={k} q={}",
                        q_pos.flat_index
                    );
                }
            }
        }
    }
}

#[test]
fn single_level_patterns_collapse_to_one_causal_mask() {
    let reference = {
        let layout = build_layout(&PatternSpec::new(PatternKind::Flat, 1, 12, 1).unwrap());
        build_mask(&layout, &derive_policy(&layout))
    };
    for kind in [PatternKind::Delay, PatternKind::Stack, PatternKind::StackDelay] {
        let layout = build_layout(&PatternSpec::new(kind, 1, 12, 1).unwrap());
        let mask = build_mask(&layout, &derive_policy(&layout));
        assert_eq!(mask, reference, "{kind}");
    }
}
