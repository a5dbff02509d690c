mod common;

use common::*;
use proptest::prelude::*;
use sparse_accel::sparse::{build_index, sparse_attention_output};
use sparse_accel::synth::random_heads;
use sparse_accel::{
    decode_step, prefill, select_pattern_windowed, AttnMatrices, AutoSelect, DecodeInput,
    HeadChoice, Matrix, ModelConfig, PatternFamily, PrefillMode, PrefillOptions, ScoreMode,
    SparsityPattern,
};

fn prefix(m: &AttnMatrices<f64>, len: usize) -> AttnMatrices<f64> {
    AttnMatrices::causal(
        m.q().slice_rows(0, len),
        m.k().slice_rows(0, len),
        m.v().slice_rows(0, len),
    )
    .unwrap()
}

fn dense() -> PrefillOptions {
    PrefillOptions::new(PrefillMode::Dense)
}

#[test]
fn fixed_full_coverage_matches_dense() {
    let cfg = ModelConfig::new(3, 8, 64).unwrap();
    for n in [1, 2, 3, 8, 33, 64] {
        let heads = random_heads::<f64>(3, n, 8, n as u64);
        let d = prefill(&[heads.clone()], &cfg, &dense()).unwrap();
        for family in PatternFamily::ALL {
            let p = SparsityPattern::full_coverage(family, n, 8);
            let s = prefill(
                &[heads.clone()],
                &cfg,
                &PrefillOptions::new(PrefillMode::Fixed(p)),
            )
            .unwrap();
            let err = max_abs_diff(&to_mat(&s.outputs[0]), &d.outputs[0]);
            assert!(err < 1e-6, "{family} n={n}: {err}");
        }
    }
}

#[test]
fn auto_matches_manual_composition() {
    let (l, h, d) = (64, 2, 8);
    let cfg = ModelConfig::new(h, d, 128).unwrap();
    let heads = random_heads::<f64>(h, l, d, 5150);
    let auto = AutoSelect::default();
    let opts = PrefillOptions::new(PrefillMode::Auto(auto));
    let p = prefill(&[heads.clone()], &cfg, &opts).unwrap();
    assert_eq!(p.plans[0].len(), h);

    let mode = ScoreMode::Estimated { q_est: 64 };
    for (i, m) in heads.iter().enumerate() {
        let cal = auto.cal_window.min(l);
        let r = select_pattern_windowed(m, &auto.space(cal, d, mode), cal).unwrap();
        let idx = build_index(m, &r.chosen, mode).unwrap();
        let y = sparse_attention_output(m, &idx, None).unwrap();
        assert_eq!(p.plans[0][i].choice, HeadChoice::Sparse(r.chosen));
        assert_eq!(p.plans[0][i].index.as_ref(), Some(&idx));
        for row in 0..l {
            assert_eq!(&p.outputs[0].row(row)[i * d..(i + 1) * d], y.row(row));
        }
    }
}

#[test]
fn auto_output_matches_mask_oracle() {
    let (l, h, d) = (48, 2, 4);
    let cfg = ModelConfig::new(h, d, 48).unwrap();
    let heads = random_heads::<f64>(h, l, d, 77);
    let p = prefill(
        &[heads.clone()],
        &cfg,
        &PrefillOptions::new(PrefillMode::Auto(AutoSelect::default())),
    )
    .unwrap();
    for (i, m) in heads.iter().enumerate() {
        let idx = p.plans[0][i].index.as_ref().unwrap();
        let (_, y) = masked_attention(m, |r, c| idx.contains(r, c));
        let got: Vec<_> = (0..l)
            .map(|r| p.outputs[0].row(r)[i * d..(i + 1) * d].to_vec())
            .collect();
        assert!(max_abs_diff(&y, &Matrix::from_rows(&got).unwrap()) < 1e-9);
    }
}

fn decode_matches_prefill(l: usize, t: usize) {
    let (h, d) = (2, 8);
    let cfg = ModelConfig::new(h, d, l + t).unwrap();
    let full = random_heads::<f64>(h, l + t, d, (l * 1000 + t) as u64);
    let head_prefix: Vec<_> = full.iter().map(|m| prefix(m, l)).collect();
    let mut p = prefill(&[head_prefix], &cfg, &dense()).unwrap();
    let reference = prefill(&[full.clone()], &cfg, &dense()).unwrap();
    let oracle: Vec<Mat> = full.iter().map(|m| naive_attention(m).1).collect();

    for step in 0..t {
        let row = l + step;
        let x: Vec<_> = full
            .iter()
            .map(|m| DecodeInput {
                q: m.q().row(row).to_vec(),
                k: m.k().row(row).to_vec(),
                v: m.v().row(row).to_vec(),
            })
            .collect();
        let out = decode_step(&[x], &mut p.caches, &cfg).unwrap();
        assert_eq!(out.outputs[0].len(), h * d);
        for (c, &got) in out.outputs[0].iter().enumerate() {
            let want = reference.outputs[0].get(row, c);
            assert!((got - want).abs() < 1e-6, "L={l} T={t} step {step}");
            assert!((got - oracle[c / d][row][c % d]).abs() < 1e-9);
        }
    }
    assert_eq!(p.caches[0].len(), l + t);
}

#[test]
fn decode_after_prefill_1_1() {
    decode_matches_prefill(1, 1);
}

#[test]
fn decode_after_prefill_7_9() {
    decode_matches_prefill(7, 9);
}

#[test]
fn decode_after_prefill_64_16() {
    decode_matches_prefill(64, 16);
}

#[test]
fn timing_covers_kernels() {
    let cfg = ModelConfig::new(4, 8, 256).unwrap();
    let heads = random_heads::<f32>(4, 256, 8, 3);
    for mode in [
        PrefillMode::Dense,
        PrefillMode::Auto(AutoSelect::default()),
        PrefillMode::Fixed(SparsityPattern::VerticalSlash { k_v: 8, k_s: 8 }),
    ] {
        let p = prefill(
            &[heads.clone(), heads.clone()],
            &cfg,
            &PrefillOptions::new(mode),
        )
        .unwrap();
        assert_eq!(p.timing.kernels.len(), 8);
        assert!(p.timing.total >= p.timing.kernel_total() + p.timing.selection);
    }
}

#[test]
fn batch_sequences_are_independent() {
    let cfg = ModelConfig::new(2, 4, 32).unwrap();
    let a = random_heads::<f64>(2, 32, 4, 1);
    let b = random_heads::<f64>(2, 20, 4, 2);
    let opts = PrefillOptions::new(PrefillMode::Auto(AutoSelect::default()));
    let both = prefill(&[a.clone(), b.clone()], &cfg, &opts).unwrap();
    let only_b = prefill(&[b], &cfg, &opts).unwrap();
    assert_eq!(both.outputs[1], only_b.outputs[0]);
    assert_eq!(both.outputs[0].rows(), 32);
    assert_eq!(both.outputs[1].rows(), 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn head_permutation_permutes_plans_and_outputs(
        seed in any::<u64>(),
        l in 1usize..48,
        rot in 1usize..4,
    ) {
        let (h, d) = (4, 4);
        let cfg = ModelConfig::new(h, d, 64).unwrap();
        let heads = random_heads::<f64>(h, l, d, seed);
        let mut moved = heads.clone();
        moved.rotate_left(rot);
        let opts = PrefillOptions::new(PrefillMode::Auto(AutoSelect { cal_window: 32, ..AutoSelect::default() }));
        let p = prefill(&[heads], &cfg, &opts).unwrap();
        let q = prefill(&[moved], &cfg, &opts).unwrap();
        for i in 0..h {
            let src = (i + rot) % h;
            prop_assert_eq!(&q.plans[0][i].choice, &p.plans[0][src].choice);
            prop_assert_eq!(q.plans[0][i].head, i);
            for r in 0..l {
                prop_assert_eq!(
                    &q.outputs[0].row(r)[i * d..(i + 1) * d],
                    &p.outputs[0].row(r)[src * d..(src + 1) * d]
                );
            }
        }
    }

    #[test]
    fn shapes_follow_input_length(l in 1usize..40, h in 1usize..4, d in 1usize..6, seed in any::<u64>()) {
        let cfg = ModelConfig::new(h, d, 40).unwrap();
        let heads = random_heads::<f64>(h, l, d, seed);
        let mut p = prefill(&[heads], &cfg, &dense()).unwrap();
        prop_assert_eq!(p.outputs[0].shape(), (l, h * d));
        prop_assert_eq!(p.plans[0].len(), h);
        for head in 0..h {
            prop_assert_eq!(p.caches[0].keys(head).len(), l * d);
            prop_assert_eq!(p.caches[0].values(head).len(), l * d);
        }
        if l < 40 {
            let x: Vec<_> = (0..h)
                .map(|_| DecodeInput { q: vec![0.5; d], k: vec![0.5; d], v: vec![1.0; d] })
                .collect();
            let out = decode_step(&[x], &mut p.caches, &cfg).unwrap();
            prop_assert_eq!(out.outputs.len(), 1);
            prop_assert_eq!(out.outputs[0].len(), h * d);
        }
    }
}
