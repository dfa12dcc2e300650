use super::*;
use crate::envs::TypingMode;
use crate::nn::SharingMode;

fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    ExperimentConfig::parse_str(text, "test.toml", &Overrides::default())
}

fn same(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.seed == b.seed && a.scenario == b.scenario && a.model == b.model && a.train == b.train && a.eval == b.eval && a.io == b.io
}

const MINIMAL: &str = "[scenario]\nscenario_id = \"A\"\n\n[model]\nsharing_mode = \"hetgppo\"\n";

#[test]
fn minimal_config_fills_defaults() {
    let c = parse(MINIMAL).unwrap();
    assert_eq!(c.scenario, ScenarioSpec::default_for(ScenarioId::A));
    assert_eq!(c.model.sharing_mode, SharingMode::PerAgent);
    assert_eq!(c.train, TrainConfig::desk());
    assert_eq!(c.eval, EvalConfig::default());
    assert_eq!(c.provenance["model.sharing_mode"], Source::File { line: 5 });
    assert_eq!(c.provenance["scenario.masses"], Source::Default("scenario A".into()));
    assert_eq!(c.provenance["train.lr"], Source::Default("desk profile".into()));
}

#[test]
fn paper_profile_hyperparameters() {
    let c = parse("[scenario]\nscenario_id = \"B\"\n[train]\nprofile = \"paper\"\n").unwrap();
    let t = &c.train;
    assert_eq!(t.gamma, 0.99);
    assert_eq!((t.batch_size, t.minibatch_size, t.sgd_iters), (60000, 4096, 40));
    assert_eq!((t.lr, t.clip_epsilon, t.gae_lambda), (5e-5, 0.2, 0.9));
    assert_eq!((t.entropy_coeff, t.kl_coeff, t.kl_target), (0.0, 0.01, 0.01));
}

#[test]
fn profile_flag_keeps_explicit_keys() {
    let text = "[scenario]\nscenario_id = \"A\"\n[train]\nprofile = \"desk\"\nsgd_iters = 3\n";
    let o = Overrides { profile: Some(Profile::Paper), ..Overrides::default() };
    let c = ExperimentConfig::parse_str(text, "t", &o).unwrap();
    assert_eq!(c.train.profile, Profile::Paper);
    assert_eq!(c.train.batch_size, 60000);
    assert_eq!(c.train.sgd_iters, 3);
    assert_eq!(c.provenance["train.profile"], Source::Flag("--profile"));
}

#[test]
fn misspelled_key_is_named_with_line() {
    let err = parse("[scenario]\nscenario_id = \"A\"\n\n[train]\ngama = 0.9\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("train.gama"), "{msg}");
    assert!(matches!(err, ConfigError::Key { line: 5, .. }), "{msg}");
    assert!(parse("[scenario]\nscenario_id = \"A\"\n[scenario.physics]\nfriction = 1.0\n")
        .unwrap_err()
        .to_string()
        .contains("scenario.physics.friction"));
    assert!(parse("sed = 1\n[scenario]\nscenario_id = \"A\"\n").unwrap_err().to_string().contains("sed"));
}

#[test]
fn type_mismatch_is_rejected() {
    let err = parse("[scenario]\nscenario_id = \"A\"\nhorizon = \"long\"\n").unwrap_err();
    assert!(matches!(err, ConfigError::Key { line: 3, ref key, .. } if key == "scenario.horizon"), "{err}");
    let err = parse("[scenario]\nscenario_id = \"A\"\n[model]\nsharing_mode = \"both\"\n").unwrap_err();
    assert!(matches!(err, ConfigError::Key { line: 4, ref key, .. } if key == "model.sharing_mode"), "{err}");
}

#[test]
fn integers_widen_to_floats() {
    let c = parse("[scenario]\nscenario_id = \"A\"\nmasses = [3, 1]\nmax_force = 2\n").unwrap();
    assert_eq!(c.scenario.masses, vec![3.0, 1.0]);
    assert_eq!(c.scenario.max_force, 2.0);
}

#[test]
fn invariant_violations_are_rejected() {
    assert!(parse("[scenario]\nscenario_id = \"A\"\n[train]\ngamma = 1.5\n").is_err());
    assert!(parse("[scenario]\nscenario_id = \"A\"\n[train]\nminibatch_size = 9000\n").is_err());
    assert!(parse("[scenario]\nscenario_id = \"A\"\n[eval]\nnoise_levels = [0.5, 0.1]\n").is_err());
    assert!(parse("[model]\nwidth = 8\n").is_err());
    assert!(parse("[scenario]\nscenario_id = \"A\"\n[train]\nseed = 3\n").is_err());
}

#[test]
fn seed_precedence() {
    let c = parse("seed = 7\n[scenario]\nscenario_id = \"A\"\n").unwrap();
    assert_eq!((c.seed, c.train.seed), (7, 7));
    let o = Overrides { seed: Some(11), ..Overrides::default() };
    let c = ExperimentConfig::parse_str("seed = 7\n[scenario]\nscenario_id = \"A\"\n", "t", &o).unwrap();
    assert_eq!((c.seed, c.train.seed), (11, 11));
}

#[test]
fn snapshot_round_trips() {
    let text = "seed = 4\n[scenario]\nscenario_id = \"passage_asym\"\nhorizon = 150\n[scenario.physics]\ndt = 0.05\n\
                [model]\nsharing_mode = \"gppo\"\ntyping_mode = \"explicit_index\"\n[train]\nprofile = \"paper\"\nlr = 1e-4\n\
                [eval]\nnoise_levels = [0, 0.5, 1]\n[io]\noutput_dir = \"out/x\"\n";
    let c = parse(text).unwrap();
    assert_eq!(c.model.typing_mode, TypingMode::ExplicitIndex);
    assert_eq!(c.scenario.physics.dt, 0.05);
    let snap = c.to_toml();
    assert!(snap.contains("# default (scenario passage_asym)"));
    let back = parse(&snap).unwrap();
    assert!(same(&c, &back));
    assert_eq!(back.to_toml().lines().count(), snap.lines().count());
    let inf = ExperimentConfig::defaults_for(ScenarioId::B);
    assert!(same(&inf, &parse(&inf.to_toml()).unwrap()));
}

#[test]
fn level_ranges() {
    assert_eq!(parse_levels("0:2:5").unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    assert_eq!(parse_levels("0.3:0.3:1").unwrap(), vec![0.3]);
    let l = parse_levels("0:2:50").unwrap();
    assert_eq!(l.len(), 50);
    assert_eq!((l[0], l[49]), (0.0, 2.0));
    assert!(parse_levels("0:2").is_err());
    assert!(parse_levels("1:0:3").is_err());
    assert!(parse_levels("0:1:0").is_err());
}
