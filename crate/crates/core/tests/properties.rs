use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qcompat::algebra::FdAlgebra;
use qcompat::channel::{compose, random_channel, Channel};
use qcompat::cli::schema::{channel_from_json, channel_to_json, povm_from_json, povm_to_json, ChannelJson};
use qcompat::compat::{jointly_measurable, left_embedding, right_embedding};
use qcompat::dilation::{minimal_stinespring, naimark_dilation};
use qcompat::order::{channel_leq, povm_leq, Verdict};
use qcompat::povmtools::{canonicalize, random_povm};

fn algebra() -> impl Strategy<Value = FdAlgebra> {
    prop_oneof![
        Just(FdAlgebra::full(1)),
        Just(FdAlgebra::full(2)),
        Just(FdAlgebra::new(vec![1, 1]).unwrap()),
        Just(FdAlgebra::new(vec![2, 1]).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stinespring_reconstructs(a in algebra(), n in 1usize..=3, seed in any::<u64>()) {
        let ch = random_channel(&a, &FdAlgebra::full(n), seed);
        let st = minimal_stinespring(&ch).unwrap();
        prop_assert!(st.isometry_error() < 1e-9);
        prop_assert!(st.reconstruction_error().unwrap() < 1e-9);
        prop_assert!(st.is_minimal().unwrap());
    }

    #[test]
    fn identity_is_neutral(a in algebra(), b in algebra(), seed in any::<u64>()) {
        let ch = random_channel(&a, &b, seed);
        let left = compose(&Channel::identity(&b), &ch).unwrap();
        let right = compose(&ch, &Channel::identity(&a)).unwrap();
        prop_assert!(left.action_distance(&ch).unwrap() < 1e-12);
        prop_assert!(right.action_distance(&ch).unwrap() < 1e-12);
    }

    #[test]
    fn channel_json_round_trip(a in algebra(), b in algebra(), seed in any::<u64>()) {
        let ch = random_channel(&a, &b, seed);
        let text = serde_json::to_string(&channel_to_json(&ch)).unwrap();
        let parsed: ChannelJson = serde_json::from_str(&text).unwrap();
        let back = channel_from_json(&parsed).unwrap();
        prop_assert!(back.action_distance(&ch).unwrap() < 1e-12);
    }

    #[test]
    fn naimark_and_canonical_form(d in 1usize..=3, k in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_povm(d, k, &mut rng);
        let nd = naimark_dilation(&m).unwrap();
        prop_assert!(nd.isometry_error() < 1e-9);
        prop_assert!(nd.reconstruction_error() < 1e-9);
        let back = povm_from_json(&povm_to_json(&m)).unwrap();
        prop_assert_eq!(back.len(), m.len());
        let c = canonicalize(&m).unwrap();
        prop_assert!(c.povm.len() <= m.len());
        prop_assert!(c.merge_map.stochasticity_error() < 1e-12);
        prop_assert!(c.split_map.stochasticity_error() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // A post-processed channel always sits below the original.
    #[test]
    fn concatenation_is_below(a in algebra(), b in algebra(), c in algebra(), seed in any::<u64>()) {
        let lam = random_channel(&a, &b, seed);
        let psi = random_channel(&c, &a, seed ^ 0x5bd1);
        let v = channel_leq(&compose(&lam, &psi).unwrap(), &lam).unwrap();
        prop_assert!(v.verdict != Verdict::No);
        if let Some(w) = &v.witness {
            prop_assert!(w.is_channel());
        }
    }

    #[test]
    fn povm_is_jointly_measurable_with_coarsening(d in 2usize..=3, k in 2usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_povm(d, k, &mut rng);
        let c = canonicalize(&m).unwrap();
        prop_assert_eq!(jointly_measurable(&m, &c.povm).unwrap().verdict, Verdict::Yes);
        prop_assert_eq!(povm_leq(&c.povm, &m).unwrap().verdict, Verdict::Yes);
    }
}

#[test]
fn embeddings_are_channels() {
    let a = FdAlgebra::new(vec![2, 1]).unwrap();
    let b = FdAlgebra::full(2);
    assert!(left_embedding(&a, &b).is_channel());
    assert!(right_embedding(&a, &b).is_channel());
}
