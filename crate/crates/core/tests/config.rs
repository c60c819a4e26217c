use docofl_core::harness::{ExperimentConfig, LearningRate, PolicyKind};
use proptest::prelude::*;

proptest! {
    #[test]
    fn text_form_is_a_fixed_point(
        clients in 1usize..500,
        frac in 0.0f64..1.0,
        rounds in 1u64..100_000,
        eta in 1e-4f64..10.0,
        k in 1u64..50,
        v in 1usize..10,
        bits in 1u32..9,
        two_tier in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = ExperimentConfig {
            clients,
            participants: ((clients as f64 * frac) as usize).max(1),
            rounds,
            learning_rate: LearningRate::Fixed(eta),
            anchor_rate: k,
            queue: v,
            anchor: format!("ecuq:{bits}").parse().unwrap(),
            correction: format!("hsq:{bits}").parse().unwrap(),
            policy: if two_tier { PolicyKind::TwoTier } else { PolicyKind::Uniform },
            seed,
            ..ExperimentConfig::default()
        };
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn invalid_combinations_are_rejected() {
    for bad in [
        "participants = 0",
        "clients = 5\nparticipants = 6",
        "learning_rate = -1",
        "skew = 1.5",
        "strong_delay = 6\nweak_delay = 5",
        "anchor_rate = 0",
        "horizon = 3",
        "rounds = 5\nrounds = 6",
    ] {
        assert!(ExperimentConfig::parse(bad).is_err(), "accepted: {bad}");
    }
}
