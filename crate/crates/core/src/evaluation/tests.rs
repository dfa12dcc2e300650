use super::*;
use crate::envs::TypingMode;
use crate::nn::SharingMode;
use crate::training::{ModelConfig, TrainConfig, Trainer};

fn fresh(id: ScenarioId, sharing: SharingMode, typing: TypingMode, seed: u64) -> Checkpoint {
    let spec = ScenarioSpec::default_for(id);
    let model = ModelConfig { sharing_mode: sharing, typing_mode: typing, width: 16, ..ModelConfig::default() };
    let cfg = TrainConfig { seed, ..TrainConfig::desk() };
    Trainer::new(&spec, &model, &cfg).unwrap().checkpoint()
}

// Mean action fixed to `bias` regardless of the observation.
fn constant_policy(ck: &mut Checkpoint, bias: f64) {
    for net in ck.params.nets.iter_mut() {
        let last = net.policy.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(bias);
    }
}

#[test]
fn zero_noise_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let o = vec![0.25, -1.0, 3.0];
    assert_eq!(inject_noise(&o, 0.0, &mut rng), o);
}

#[test]
fn noise_stays_within_magnitude() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let o = vec![0.0; 7];
    for _ in 0..1000 {
        assert!(inject_noise(&o, 0.3, &mut rng).iter().all(|x| x.abs() <= 0.3));
    }
}

#[test]
fn noise_is_centred() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let sum: f64 = (0..n).map(|_| inject_noise(&[0.0], 1.0, &mut rng)[0]).sum();
    assert!((sum / n as f64).abs() < 0.02);
}

#[test]
fn explicit_index_is_perturbed_too() {
    let ck = fresh(ScenarioId::A, SharingMode::Shared, TypingMode::ExplicitIndex, 0);
    let tr = rollout_trace(&ck, &ck.scenario, 3, 0.5).unwrap();
    let rec = &tr.records[1];
    assert_ne!(rec.noisy_observations[1][2], 1.0);
}

#[test]
fn zero_runs_give_empty_summary() {
    let ck = fresh(ScenarioId::A, SharingMode::PerAgent, TypingMode::None, 0);
    let s = evaluate(&ck, &ck.scenario, &EvalOptions::new(0, 0.0, 0)).unwrap();
    assert_eq!(s.n_runs, 0);
    assert!(s.episode_rewards.is_empty());
}

#[test]
fn evaluation_is_deterministic() {
    let ck = fresh(ScenarioId::B, SharingMode::PerAgent, TypingMode::None, 1);
    let spec = ScenarioSpec { horizon: 60, ..ck.scenario.clone() };
    let opts = EvalOptions::new(4, 0.2, 11);
    assert_eq!(evaluate(&ck, &spec, &opts).unwrap(), evaluate(&ck, &spec, &opts).unwrap());
}

#[test]
fn noise_free_evaluation_matches_trace() {
    let ck = fresh(ScenarioId::PassageSizes, SharingMode::Shared, TypingMode::None, 2);
    let spec = ScenarioSpec { horizon: 50, ..ck.scenario.clone() };
    let s = evaluate(&ck, &spec, &EvalOptions::new(1, 0.0, 9)).unwrap();
    let tr = rollout_trace(&ck, &spec, 9, 0.0).unwrap();
    let total: f64 = tr.records.iter().filter(|r| !r.rewards.is_empty()).map(|r| r.rewards[0]).sum();
    assert_eq!(s.episode_rewards[0], total);
    for r in &tr.records {
        assert_eq!(r.observations, r.noisy_observations);
    }
    let noisy = rollout_trace(&ck, &spec, 9, 0.2).unwrap();
    for r in &noisy.records[..noisy.records.len() - 1] {
        for (o, n) in r.observations.iter().flatten().zip(r.noisy_observations.iter().flatten()) {
            assert!((o - n).abs() <= 0.2 + 1e-12);
        }
    }
}

#[test]
fn scenario_mismatch_is_a_config_error() {
    let ck = fresh(ScenarioId::A, SharingMode::Shared, TypingMode::None, 0);
    let spec = ScenarioSpec::default_for(ScenarioId::B);
    assert!(matches!(evaluate(&ck, &spec, &EvalOptions::new(1, 0.0, 0)), Err(EvalError::Config(_))));
}

#[test]
fn self_normalised_single_level() {
    let mut ck = fresh(ScenarioId::A, SharingMode::PerAgent, TypingMode::None, 3);
    constant_policy(&mut ck, 0.5);
    let r = noise_sweep(&ck, &ck.scenario, &[0.0], 5, 0, None).unwrap();
    assert_eq!(r.mean, vec![1.0]);
}

#[test]
fn sweep_levels_must_increase() {
    let ck = fresh(ScenarioId::A, SharingMode::PerAgent, TypingMode::None, 3);
    assert!(noise_sweep(&ck, &ck.scenario, &[0.0, 0.5, 0.5], 1, 0, None).is_err());
    assert!(noise_sweep(&ck, &ck.scenario, &[0.3, 0.1], 1, 0, None).is_err());
}

#[test]
fn normalisation_is_scale_invariant() {
    let levels = [0.0, 0.5, 1.0];
    let raw = vec![vec![2.0, 3.0, 4.0], vec![1.0, 2.5, 0.5], vec![0.1, -0.2, 0.3]];
    let a = normalize_sweep(&levels, &raw, 3.0).unwrap();
    let scaled: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x * 7.5).collect()).collect();
    let b = normalize_sweep(&levels, &scaled, 3.0 * 7.5).unwrap();
    for i in 0..3 {
        assert!((a.mean[i] - b.mean[i]).abs() < 1e-12);
        assert!((a.std[i] - b.std[i]).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&a.mean[i]));
    }
}

#[test]
fn single_run_has_zero_std() {
    let ck = fresh(ScenarioId::A, SharingMode::PerAgent, TypingMode::None, 3);
    let r = noise_sweep(&ck, &ck.scenario, &[0.0, 0.4], 1, 0, Some(1.0)).unwrap();
    assert_eq!(r.std, vec![0.0, 0.0]);
}

#[test]
fn constant_policy_sweep_is_flat() {
    let mut ck = fresh(ScenarioId::A, SharingMode::PerAgent, TypingMode::None, 4);
    constant_policy(&mut ck, 0.7);
    let r = noise_sweep(&ck, &ck.scenario, &[0.0, 0.5, 1.0, 2.0], 6, 1, None).unwrap();
    for (m, s) in r.mean.iter().zip(&r.std) {
        assert!((m - r.mean[0]).abs() <= s.max(r.std[0]) + 1e-12);
    }
}

#[test]
fn centre_cell_for_unit_resolution() {
    let ck = fresh(ScenarioId::A, SharingMode::Shared, TypingMode::None, 0);
    let vf = vector_field(&ck, -1.0, 1.0, 1).unwrap();
    assert_eq!(vf.cells.len(), 1);
    assert_eq!((vf.cells[0].v1, vf.cells[0].v2), (0.0, 0.0));
}

#[test]
fn untrained_field_is_near_zero() {
    for sharing in [SharingMode::Shared, SharingMode::PerAgent] {
        let ck = fresh(ScenarioId::A, sharing, TypingMode::None, 5);
        let vf = vector_field(&ck, -1.0, 1.0, 21).unwrap();
        assert_eq!(vf.cells.len(), 441);
        assert!(vf.cells.iter().all(|c| c.f1.abs() < 1e-2 && c.f2.abs() < 1e-2));
    }
}

#[test]
fn shared_field_is_swap_symmetric() {
    let ck = fresh(ScenarioId::A, SharingMode::Shared, TypingMode::None, 6);
    assert!(vector_field(&ck, -1.0, 1.0, 21).unwrap().max_swap_asymmetry() < 1e-6);
}

#[test]
fn vector_field_needs_scenario_a() {
    let ck = fresh(ScenarioId::B, SharingMode::Shared, TypingMode::None, 0);
    assert!(matches!(vector_field(&ck, -1.0, 1.0, 5), Err(EvalError::Config(_))));
}

#[test]
fn csv_headers() {
    let vf = VectorFieldTable { resolution: 0, cells: Vec::new() };
    assert_eq!(vf.to_csv(), "v1,v2,f1,f2\n");
    let sw = NoiseSweepResult { levels: vec![0.0], mean: vec![1.0], std: vec![0.0], anchor: 2.0 };
    assert_eq!(sw.to_csv(), "noise,mean,std\n0,1,0\n");
}

#[test]
fn horizon_zero_trace_holds_initial_state() {
    let ck = fresh(ScenarioId::B, SharingMode::PerAgent, TypingMode::None, 0);
    let spec = ScenarioSpec { horizon: 0, ..ck.scenario.clone() };
    let tr = rollout_trace(&ck, &spec, 0, 0.0).unwrap();
    assert_eq!(tr.records.len(), 1);
    assert_eq!(tr.records[0].t, 0);
}

#[test]
fn scenario_a_trace_starts_at_rest() {
    let ck = fresh(ScenarioId::A, SharingMode::PerAgent, TypingMode::None, 0);
    let tr = rollout_trace(&ck, &ck.scenario, 4, 0.0).unwrap();
    assert!(tr.records[0].world.agents.iter().all(|a| a.velocity == Vec2::zeros()));
    assert_eq!(tr.records.len() as u64, ck.scenario.horizon + 1);
    assert!(tr.records.windows(2).all(|w| w[1].t > w[0].t));
}

#[test]
fn traces_are_reproducible() {
    let ck = fresh(ScenarioId::B, SharingMode::PerAgent, TypingMode::None, 0);
    let spec = ScenarioSpec { horizon: 30, ..ck.scenario.clone() };
    let write = || {
        let mut buf = Vec::new();
        rollout_trace(&ck, &spec, 8, 0.1).unwrap().write_jsonl(&mut buf).unwrap();
        buf
    };
    let a = write();
    assert_eq!(a, write());
    assert_eq!(a.iter().filter(|b| **b == b'\n').count(), 31);
    let tr = rollout_trace(&ck, &spec, 8, 0.1).unwrap();
    assert!((tr.records[0].task_completion.unwrap() + 1.0).abs() < 1e-12);
}
