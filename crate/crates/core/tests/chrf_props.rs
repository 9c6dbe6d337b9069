mod common;

use proptest::prelude::*;
use stepmt_core::metrics::chrf::{chrf_corpus, chrf_sentence, Averaging, ChrfParams};

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('a'), Just('b'), Just('c'), Just(' '), Just('ü')], 0..60)
        .prop_map(|cs| cs.into_iter().collect())
}

fn params(averaging: Averaging, beta: f64) -> ChrfParams {
    ChrfParams {
        beta,
        averaging,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn bounded(h in text(), r in text()) {
        for a in [Averaging::PrecisionRecall, Averaging::FScore] {
            let v = chrf_sentence(&h, &r, &params(a, 2.0));
            prop_assert!((0.0..=100.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn symmetric_at_beta_one(h in text(), r in text()) {
        let p = params(Averaging::PrecisionRecall, 1.0);
        let ab = chrf_sentence(&h, &r, &p);
        let ba = chrf_sentence(&r, &h, &p);
        prop_assert!((ab - ba).abs() < 1e-9, "{ab} vs {ba}");
    }

    #[test]
    fn whitespace_is_ignored(h in text(), r in text()) {
        let squeezed: String = h.split_whitespace().collect();
        let p = ChrfParams::default();
        prop_assert_eq!(chrf_sentence(&h, &r, &p), chrf_sentence(&squeezed, &r, &p));
    }

    #[test]
    fn single_pair_corpus_equals_sentence(h in text(), r in text()) {
        for a in [Averaging::PrecisionRecall, Averaging::FScore] {
            let p = params(a, 2.0);
            let c = chrf_corpus(&[(h.as_str(), r.as_str())], &p).unwrap();
            prop_assert_eq!(c, chrf_sentence(&h, &r, &p));
        }
    }

    #[test]
    fn matches_oracle(h in text(), r in text()) {
        let pair = [(h.clone(), r.clone())];
        let pr = chrf_sentence(&h, &r, &ChrfParams::default());
        prop_assert!((pr - common::oracle_chrf_pr(&pair)).abs() < 1e-9);
        let f = chrf_sentence(&h, &r, &params(Averaging::FScore, 2.0));
        prop_assert!((f - common::oracle_chrf_f(&pair)).abs() < 1e-9);
    }
}

#[test]
fn corpus_is_not_the_mean_of_sentences() {
    let pairs = [("abcd", "abce"), ("a", "abcdefgh")];
    let p = ChrfParams::default();
    let corpus = chrf_corpus(&pairs, &p).unwrap();
    let mean = pairs.iter().map(|(h, r)| chrf_sentence(h, r, &p)).sum::<f64>() / 2.0;
    assert!((corpus - mean).abs() > 1.0);
    let owned: Vec<(String, String)> = pairs.iter().map(|(h, r)| (h.to_string(), r.to_string())).collect();
    assert!((corpus - common::oracle_chrf_pr(&owned)).abs() < 1e-9);
}

#[test]
fn empty_corpus_is_an_error() {
    let empty: [(&str, &str); 0] = [];
    assert!(chrf_corpus(&empty, &ChrfParams::default()).is_err());
}
