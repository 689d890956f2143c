use atyvc_core::eval::{cer, edit_distance, normalize_text, wer};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["the", "Cat", "sat,", "on", "a", "MAT.", "fox", "ran!"]).prop_map(str::to_string)
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..6).prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec((sentence(), sentence()), 1..5)
}

fn ref_chars(c: &[(String, String)]) -> f64 {
    c.iter().map(|(r, _)| normalize_text(r).chars().count()).sum::<usize>() as f64
}

fn ref_words(c: &[(String, String)]) -> f64 {
    c.iter().map(|(r, _)| normalize_text(r).split(' ').count()).sum::<usize>() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distance_is_a_metric(
        a in prop::collection::vec(0u8..4, 1..10),
        b in prop::collection::vec(0u8..4, 1..10),
        c in prop::collection::vec(0u8..4, 1..10),
    ) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).unwrap().distance;
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn decomposition_accounts_for_lengths(
        a in prop::collection::vec(0u8..3, 1..12),
        b in prop::collection::vec(0u8..3, 0..12),
    ) {
        let e = edit_distance(&a, &b).unwrap();
        prop_assert_eq!(e.substitutions + e.insertions + e.deletions, e.distance);
        prop_assert_eq!(a.len() + e.insertions, b.len() + e.deletions);
    }

    #[test]
    fn rates_of_a_union_are_length_weighted_means(x in corpus(), y in corpus()) {
        let joined: Vec<_> = x.iter().chain(&y).cloned().collect();
        let (cx, cy) = (ref_chars(&x), ref_chars(&y));
        let expect = (cer(&x).unwrap() * cx + cer(&y).unwrap() * cy) / (cx + cy);
        prop_assert!((cer(&joined).unwrap() - expect).abs() < 1e-9);
        let (wx, wy) = (ref_words(&x), ref_words(&y));
        let expect = (wer(&x).unwrap() * wx + wer(&y).unwrap() * wy) / (wx + wy);
        prop_assert!((wer(&joined).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn normalization_is_idempotent_and_case_blind(s in sentence()) {
        let n = normalize_text(&s);
        prop_assert_eq!(normalize_text(&n), n.clone());
        prop_assert_eq!(normalize_text(&s.to_uppercase()), n);
        let pair = vec![(s.clone(), s.to_uppercase())];
        prop_assert_eq!(cer(&pair).unwrap(), 0.0);
        prop_assert_eq!(wer(&pair).unwrap(), 0.0);
    }
}

#[test]
fn empty_reference_is_rejected() {
    assert!(edit_distance::<u8>(&[], &[1, 2]).is_err());
    assert!(cer(&[("...".to_string(), "a".to_string())]).is_err());
}
