use atyvc_core::conversion::ConditionedInput;
use atyvc_core::corpus::{
    default_inventory, generate_atypical_corpus, generate_typical_corpus, AtypicalDistortion, TextConfig,
};
use atyvc_core::dsp::F0Contour;
use atyvc_core::nn::Tensor2D;
use atyvc_core::prosody::expand_embeddings;
use proptest::prelude::*;

fn table(rows: usize, cols: usize) -> Tensor2D {
    Tensor2D::from_vec(rows, cols, (0..rows * cols).map(|i| i as f64 * 0.5 - 3.0).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_repeats_each_row_by_its_duration(
        durations in prop::collection::vec(0usize..10, 1..15),
        dim in 1usize..6,
    ) {
        let emb = table(durations.len(), dim);
        let x = expand_embeddings(&emb, &durations).unwrap();
        prop_assert_eq!(x.rows(), durations.iter().sum::<usize>());
        let mut t = 0;
        for (i, &d) in durations.iter().enumerate() {
            for _ in 0..d {
                prop_assert_eq!(x.row(t), emb.row(i));
                t += 1;
            }
        }
    }

    #[test]
    fn expansion_rejects_count_mismatch(n in 1usize..8, extra in 1usize..3) {
        let emb = table(n, 2);
        prop_assert!(expand_embeddings(&emb, &vec![1; n + extra]).is_err());
    }

    #[test]
    fn conditioned_frames_carry_identical_dse(
        durations in prop::collection::vec(1usize..6, 1..8),
        dse in prop::collection::vec(-1.0f64..1.0, 1..10),
    ) {
        let x = expand_embeddings(&table(durations.len(), 3), &durations).unwrap();
        let frames = x.rows();
        let f0 = F0Contour {
            log_f0: (0..frames).map(|t| 4.5 + t as f64 * 0.01).collect(),
            voiced: (0..frames).map(|t| t % 3 != 0).collect(),
        };
        let c = ConditionedInput::new(&x, &f0, &dse).unwrap();
        prop_assert_eq!(c.frames(), frames);
        for t in 0..frames {
            prop_assert_eq!(&c.values.row(t)[5..], &dse[..]);
        }
        let short = F0Contour { log_f0: vec![5.0; frames + 1], voiced: vec![true; frames + 1] };
        prop_assert!(ConditionedInput::new(&x, &short, &dse).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generated_records_agree_on_frame_counts(seed in any::<u64>(), stretch in 1.0f64..2.5, jitter in 0usize..3) {
        let inv = default_inventory();
        let text = TextConfig::default();
        let typical = generate_typical_corpus(2, 3, &inv, &text, seed).unwrap();
        typical.check_alignment().unwrap();
        let d = AtypicalDistortion { duration_stretch: stretch, f0_shift: 0.4, jitter, blend: 0.3 };
        let atypical = generate_atypical_corpus(&typical.profiles[0], &d, 3, &inv, &text, seed).unwrap();
        atypical.check_alignment().unwrap();
        for r in &atypical.records {
            let o = r.oracle.as_ref().unwrap();
            prop_assert_eq!(o.durations.len(), r.phones.len());
            prop_assert_eq!(o.f0.frames(), o.durations.iter().sum::<usize>());
        }
    }
}
