mod common;

use aestylegan::checkpoint::{decode, encode};
use aestylegan::data::synthetic_blobs;
use aestylegan::nn::ParamSet;
use aestylegan::trainer::{sample_z, Net, Phase, TrainMode, Trainer};
use common::tiny_config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run_for(mode: TrainMode, e_steps: usize, iters: u64) -> Trainer {
    let mut cfg = tiny_config(16, mode);
    cfg.e_steps_per_g_step = e_steps;
    let data = synthetic_blobs(32, 16, 3);
    let mut t = Trainer::new(&cfg).unwrap();
    t.train_until(&data, iters, &mut |_, _| Ok(())).unwrap();
    t
}

/// Snapshots of (mapping, generator, encoder) before and after each inversion phase.
fn inversion_snapshots(mode: TrainMode, steps: u64) -> Vec<[(ParamSet, ParamSet, ParamSet); 2]> {
    let cfg = tiny_config(16, mode);
    let data = synthetic_blobs(32, 16, 3);
    let mut t = Trainer::new(&cfg).unwrap();
    t.attach_sampler(data.len()).unwrap();
    let mut out = Vec::new();
    for _ in 0..steps {
        let batch = t.state.sampler.as_mut().unwrap().next_batch(&data);
        let mut before = None;
        t.step_with_hook(&batch, &mut |phase, s| {
            let snap = (s.mapping.clone(), s.generator.clone(), s.encoder.clone());
            match phase {
                Phase::Discriminator => before = Some(snap),
                Phase::Inversion(_) => out.push([before.replace(snap.clone()).unwrap(), snap]),
                _ => {}
            }
        })
        .unwrap();
    }
    out
}

#[test]
fn decoupled_inversion_freezes_generator_and_mapping() {
    let snaps = inversion_snapshots(TrainMode::Decoupled, 20);
    assert_eq!(snaps.len(), 20);
    for [(f0, g0, e0), (f1, g1, e1)] in &snaps {
        assert_eq!(f0, f1);
        assert_eq!(g0, g1);
        assert_ne!(e0, e1);
    }
}

#[test]
fn joint_inversion_moves_generator() {
    let snaps = inversion_snapshots(TrainMode::Joint, 20);
    assert_eq!(snaps.len(), 20);
    for [(f0, g0, e0), (f1, g1, e1)] in &snaps {
        assert_eq!(f0, f1);
        assert_ne!(g0, g1);
        assert_ne!(e0, e1);
    }
}

#[test]
fn phase_bookkeeping() {
    let cfg = tiny_config(8, TrainMode::Decoupled);
    let data = synthetic_blobs(8, 8, 0);
    let mut t = Trainer::new(&cfg).unwrap();
    let batch = data.batch(&[0, 1, 2, 3]);
    let r = t.step(&batch).unwrap();
    assert_eq!(
        r.phases,
        vec![
            (Phase::Discriminator, vec![Net::Discriminator(0), Net::Discriminator(1)]),
            (Phase::Inversion(0), vec![Net::Encoder]),
            (Phase::Generator, vec![Net::Mapping, Net::Generator]),
            (Phase::Ema, vec![]),
        ]
    );
    let mut cfg = tiny_config(8, TrainMode::Joint);
    cfg.e_steps_per_g_step = 4;
    let mut t = Trainer::new(&cfg).unwrap();
    let r = t.step(&batch).unwrap();
    assert_eq!(r.e_updates(), 4);
    assert_eq!(r.phases[1], (Phase::Inversion(0), vec![Net::Encoder, Net::Generator]));
    assert_eq!(t.state.discriminators.len(), 1);
}

#[test]
fn ten_step_replay_is_bit_identical() {
    for mode in [TrainMode::Joint, TrainMode::Decoupled] {
        let a = run_for(mode, 2, 10);
        let b = run_for(mode, 2, 10);
        assert_eq!(encode(&a.state).unwrap(), encode(&b.state).unwrap(), "{mode}");
    }
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    for mode in [TrainMode::Joint, TrainMode::Decoupled] {
        let data = synthetic_blobs(32, 16, 3);
        let straight = run_for(mode, 1, 12);
        // 12 iterations crosses the lazy-R1 step at 0 and the sampler epoch at 8.
        let half = run_for(mode, 1, 6);
        let mut resumed = Trainer::from_state(decode(&encode(&half.state).unwrap()).unwrap()).unwrap();
        resumed.train_until(&data, 12, &mut |_, _| Ok(())).unwrap();
        assert_eq!(encode(&straight.state).unwrap(), encode(&resumed.state).unwrap(), "{mode}");
    }
}

#[test]
fn outputs_bounded_and_ema_lags() {
    let t = run_for(TrainMode::Joint, 1, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = sample_z(&mut rng, 6, 8);
    for model in [t.live_model(), t.ema_model()] {
        let x = model.sample(&z).unwrap();
        assert_eq!(x.shape(), &[6, 3, 16, 16]);
        assert!(x.data().iter().all(|v| v.abs() <= 1.0));
    }
    assert_ne!(t.state.generator, t.state.generator_ema);
    let gap = t.state.generator.max_abs_diff(&t.state.generator_ema).unwrap();
    assert!(gap > 0.0 && gap.is_finite());
}

#[test]
fn report_losses_are_finite() {
    let cfg = tiny_config(16, TrainMode::Decoupled);
    let data = synthetic_blobs(32, 16, 3);
    let mut t = Trainer::new(&cfg).unwrap();
    let mut n = 0;
    t.train_until(&data, 17, &mut |_, r| {
        assert!(r.d_loss.is_finite() && r.g_loss.is_finite() && r.e_loss.total.is_finite());
        assert!(r.beta >= 0.0 && r.beta <= cfg.objective.beta_max);
        // Lazy R1 fires on iterations 0 and 16.
        assert_eq!(r.r1.is_some(), r.iteration % 16 == 0, "iteration {}", r.iteration);
        n += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(n, 17);
}
