//! Property tests for the invariants the pipeline's bookkeeping rests on:
//! exact file round trips, invertible normalization, and the augmented-row
//! accounting inside a training batch.

use proptest::prelude::*;

use wmrl_cli::formats::orld;
use wmrl_core::agent::augment_batch;
use wmrl_core::data::{
    compute_norm_stats, sample_batch_dataset, Flavor, OfflineDataset, Transition,
    DEFAULT_NORM_EPSILON,
};
use wmrl_core::rng::{substream, Stream};
use wmrl_core::wm::{WmConfig, WorldModel};

fn finite_val() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6_f64,
        Just(0.0),
        Just(-0.0),
        Just(1e-300),
        Just(-3.5e12),
    ]
}

fn arb_dataset() -> impl Strategy<Value = OfflineDataset> {
    (1usize..=3, 1usize..=2, 1usize..=12, any::<u64>(), 0usize..5).prop_flat_map(
        |(obs_dim, act_dim, n, seed, flavor_ix)| {
            let transition = (
                prop::collection::vec(finite_val(), obs_dim),
                prop::collection::vec(finite_val(), act_dim),
                finite_val(),
                prop::collection::vec(finite_val(), obs_dim),
                any::<bool>(),
            )
                .prop_map(|(state, action, reward, next_state, done)| Transition {
                    state,
                    action,
                    reward,
                    next_state,
                    done,
                });
            prop::collection::vec(transition, n).prop_map(move |transitions| OfflineDataset {
                env_name: "pointmass".into(),
                obs_dim,
                act_dim,
                transitions,
                flavor: [
                    Flavor::Random,
                    Flavor::Medium,
                    Flavor::MediumReplay,
                    Flavor::MediumExpert,
                    Flavor::Imported,
                ][flavor_ix],
                seed,
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Serialization must preserve every field and every value bit.
    #[test]
    fn orld_round_trips_exactly(dataset in arb_dataset()) {
        let bytes = orld::encode(&dataset).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.orld");
        orld::save(&path, &dataset).unwrap();
        let loaded = orld::load(&path).unwrap();
        prop_assert_eq!(&loaded, &dataset);
        // Bit-exact, not merely equal: re-encoding reproduces the bytes.
        prop_assert_eq!(orld::encode(&loaded).unwrap(), bytes);
    }

    /// denormalize ∘ normalize is the identity up to rounding.
    #[test]
    fn normalization_round_trips(dataset in arb_dataset()) {
        let norm = compute_norm_stats(&dataset, DEFAULT_NORM_EPSILON).unwrap();
        for t in &dataset.transitions {
            let back = norm.denormalize(&norm.normalize(&t.state));
            for (d, (orig, recovered)) in t.state.iter().zip(&back).enumerate() {
                // The subtract-then-add cancellation bounds the error by the
                // dimension's overall magnitude, not the value's own.
                let scale = orig.abs() + norm.mean[d].abs() + norm.std[d] + 1.0;
                prop_assert!(
                    (orig - recovered).abs() <= 1e-12 * scale,
                    "{} round-tripped to {}", orig, recovered
                );
            }
        }
    }

    /// Replacing next states in a batch touches exactly
    /// `min(⌊fraction·B⌋, #non-terminal)` rows and nothing else.
    #[test]
    fn augmentation_accounting_is_exact(
        seed in 0u64..1000,
        fraction in 0.0f64..=1.0,
        batch_size in 1usize..=16,
    ) {
        let dataset = wmrl_core::data::generate_dataset(
            wmrl_core::envs::EnvKind::PointMass,
            Flavor::Random,
            64,
            seed,
            &Default::default(),
        ).unwrap();
        let norm = compute_norm_stats(&dataset, DEFAULT_NORM_EPSILON).unwrap();
        let cfg = WmConfig {
            hidden: vec![8],
            latent_dim: Some(2),
            seed,
            ..WmConfig::default()
        };
        let wm = WorldModel::init(dataset.obs_dim, dataset.act_dim, &cfg).unwrap();

        let mut rng = substream(seed, Stream::AgentTrain);
        let mut batch = sample_batch_dataset(&dataset, batch_size, &mut rng).unwrap();
        // Force a mix of terminal flags so `eligible` can be the binding limit.
        for (i, done) in batch.dones.iter_mut().enumerate() {
            *done = i % 3 == 0;
        }
        let before = batch.clone();

        let mut aug_rng = substream(seed, Stream::Augment);
        let replaced = augment_batch(&mut batch, &wm, &norm, fraction, &mut aug_rng).unwrap();

        let non_terminal = before.dones.iter().filter(|d| !**d).count();
        let expected = ((fraction * batch_size as f64) as usize).min(non_terminal);
        prop_assert_eq!(replaced, expected);

        // Everything except next states of non-terminal rows is untouched.
        prop_assert_eq!(&batch.states.data, &before.states.data);
        prop_assert_eq!(&batch.actions.data, &before.actions.data);
        prop_assert_eq!(&batch.rewards, &before.rewards);
        prop_assert_eq!(&batch.dones, &before.dones);
        let mut changed_rows = 0usize;
        for i in 0..batch_size {
            let row_changed = batch.next_states.row(i) != before.next_states.row(i);
            if row_changed {
                prop_assert!(!batch.dones[i], "terminal row {} was rewritten", i);
                changed_rows += 1;
            }
        }
        prop_assert!(changed_rows <= expected, "{} rows changed, expected at most {}", changed_rows, expected);
        if fraction == 0.0 {
            prop_assert_eq!(changed_rows, 0);
        }
    }
}
