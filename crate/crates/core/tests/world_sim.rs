//! Domain builders, simulation and penetration trials.

use robust_irl::baselines::most_likely_trajectory;
use robust_irl::maxent::Trajectory;
use robust_irl::mdp::Policy;
use robust_irl::obs::{predicted_coeffs, FitRank, ObservationKind};
use robust_irl::world::{
    build_drone_domain, build_patrol_domain, generate_observations, penetration_trial, simulate_expert, Attacker,
    Sampling, TrialOptions, TrialOutcome, World, WorldConfig,
};

/// L-shaped hallway of 12 cells.
const SHORT_HALL: &str = "
##########
#P......##
#######.G#
#######.##
######L.##
#######.##
#######.##
##########";

fn full_window(cfg: &WorldConfig) -> Sampling {
    Sampling {
        window_min_fraction: 1.0,
        ..cfg.sampling()
    }
}

#[test]
fn builders_yield_valid_domains() {
    let (drone, theta) = build_drone_domain(&WorldConfig::drone()).unwrap();
    assert_eq!(drone.mdp.n_states(), 20);
    assert_eq!(theta.as_slice(), &[1.0, -0.1]);
    let short = WorldConfig {
        layout: SHORT_HALL.into(),
        ..WorldConfig::patrol()
    };
    let (patrol, _) = build_patrol_domain(&short).unwrap();
    assert_eq!(patrol.mdp.n_states(), 48);
    assert_eq!(
        build_patrol_domain(&WorldConfig::patrol()).unwrap().0.mdp.n_states(),
        60
    );
    for hm in [&drone, &patrol] {
        for p in 0..hm.mdp.n_pairs() {
            let total: f64 = hm.mdp.pair_successors(p).iter().map(|&(_, q)| q).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
    assert!(build_drone_domain(&WorldConfig::patrol()).is_err());
}

#[test]
fn rollouts_are_seeded_and_follow_the_kernel() {
    let world = World::build(&WorldConfig::drone()).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let a = simulate_expert(world.mdp(), &pi, 30, 4);
    assert_eq!(a, simulate_expert(world.mdp(), &pi, 30, 4));
    assert_eq!(a.len(), 31);

    // Pooled over a long rollout, the intended outcome shows up as often as
    // the kernel says it should.
    let det = Policy::deterministic(3, &vec![0; world.mdp().n_states()]).unwrap();
    let long = simulate_expert(world.mdp(), &det, 100_000, 9);
    let (mut hits, mut expected) = (0.0, 0.0);
    for w in long.steps().windows(2) {
        let (s, a) = w[0];
        let intended = world
            .mdp()
            .successors(s, a)
            .iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap()
            .0;
        hits += (w[1].0 == intended) as u8 as f64;
        expected += world.mdp().transition_prob(s, a, intended);
    }
    let n = (long.len() - 1) as f64;
    assert!(
        (hits / n - expected / n).abs() < 0.01,
        "{} vs {}",
        hits / n,
        expected / n
    );
}

#[test]
fn noiseless_observations_round_trip() {
    let cfg = WorldConfig::drone();
    let world = World::build(&cfg).unwrap();
    let obs = world.observation_model(ObservationKind::SoundOnly, 0.0).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let traj = simulate_expert(world.mdp(), &pi, world.mdp().horizon(), 3);
    let omega = generate_observations(&traj, &obs, &cfg.sampling(), 0.0, 3)
        .unwrap()
        .omega;
    for (&(s, a), e) in traj.steps().iter().zip(&omega.epochs) {
        let want = predicted_coeffs(
            &world.geometry().segments[s * 3 + a],
            world.listener(),
            cfg.source_strength,
        )
        .unwrap();
        let scale = want.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (x, y) in e.sound.coeffs.iter().zip(want) {
            assert!(
                (x - y).abs() <= 1e-6 * scale.max(1.0),
                "{:?} vs {want:?}",
                e.sound.coeffs
            );
        }
    }
    assert_eq!(
        omega,
        generate_observations(&traj, &obs, &cfg.sampling(), 0.0, 3)
            .unwrap()
            .omega
    );

    let hover = Trajectory::new(vec![(4, 2); world.mdp().horizon() + 1]);
    let still = generate_observations(&hover, &obs, &cfg.sampling(), 0.0, 1)
        .unwrap()
        .omega;
    for e in &still.epochs {
        assert!(e.sound.coeffs[0].abs() < 1e-9 && e.sound.coeffs[1].abs() < 1e-9);
        assert_ne!(e.sound.rank, FitRank::Empty);
    }
}

#[test]
fn noiseless_decoding_recovers_the_truth_up_to_equal_curves() {
    let cfg = WorldConfig::drone();
    let world = World::build(&cfg).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let sound = world.hidden(ObservationKind::SoundOnly, 0.0).unwrap();
    for seed in 0..5 {
        let traj = simulate_expert(world.mdp(), &pi, world.mdp().horizon(), seed);
        let omega = generate_observations(&traj, &sound.obs, &full_window(&cfg), 0.0, seed)
            .unwrap()
            .omega;
        let decoded = most_likely_trajectory(&omega, &sound).unwrap();
        for (&(s, a), &(ds, da)) in traj.steps().iter().zip(decoded.steps()) {
            // Turning and hovering sound the same, as do both headings at rest.
            assert_eq!(sound.obs.pair_coeffs(s * 3 + a), sound.obs.pair_coeffs(ds * 3 + da));
        }
    }

    let perfect_obs = world
        .observation_model(ObservationKind::VisionOnly, 0.0)
        .unwrap()
        .with_view_region(vec![true; world.mdp().n_states()])
        .unwrap()
        .with_vision_accuracy(1.0)
        .unwrap();
    let perfect = world
        .hidden(ObservationKind::VisionOnly, 0.0)
        .unwrap()
        .with_obs(perfect_obs)
        .unwrap();
    let traj = simulate_expert(world.mdp(), &pi, world.mdp().horizon(), 8);
    let omega = generate_observations(&traj, &perfect.obs, &full_window(&cfg), 0.0, 8)
        .unwrap()
        .omega;
    assert_eq!(most_likely_trajectory(&omega, &perfect).unwrap(), traj);
}

#[test]
fn observations_are_deterministic_under_seed() {
    let cfg = WorldConfig::patrol();
    let world = World::build(&cfg).unwrap();
    let obs = world.observation_model(ObservationKind::Fused, 0.1).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let a = world.episodes(&pi, &obs, 3, 0.1, 21).unwrap();
    let b = world.episodes(&pi, &obs, 3, 0.1, 21).unwrap();
    assert_eq!(a, b);
    assert!(a[0].to_csv().lines().count() > 2 * world.mdp().horizon());
}

#[test]
fn trial_without_patroller_succeeds() {
    let world = World::build(&WorldConfig::patrol()).unwrap();
    let obs = world.observation_model(ObservationKind::Fused, 0.1).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let opts = TrialOptions {
        patroller_present: false,
        ..Default::default()
    };
    for seed in 0..5 {
        for attacker in [Attacker::Planned(&pi), Attacker::Random] {
            let r = penetration_trial(&world, attacker, &obs, &opts, seed).unwrap();
            assert_eq!(r.outcome, TrialOutcome::Success);
        }
    }
}

#[test]
fn learner_in_view_at_start_is_spotted() {
    let mut cfg = WorldConfig::patrol();
    cfg.layout = "
#######
#P.LG.#
#######"
        .into();
    cfg.learner_hidden_at_start = false;
    let world = World::build(&cfg).unwrap();
    let obs = world.observation_model(ObservationKind::Fused, 0.1).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let r = penetration_trial(&world, Attacker::Planned(&pi), &obs, &TrialOptions::default(), 0).unwrap();
    assert_eq!(r.outcome, TrialOutcome::Spotted);
    assert_eq!(r.epochs, 0);
}

#[test]
fn unreachable_goal_is_a_config_error() {
    let mut cfg = WorldConfig::patrol();
    cfg.layout = "
#########
#P......#
#L#######
#####G###
#########"
        .into();
    let world = World::build(&cfg).unwrap();
    let obs = world.observation_model(ObservationKind::Fused, 0.1).unwrap();
    assert!(penetration_trial(&world, Attacker::Random, &obs, &TrialOptions::default(), 0).is_err());
}

#[test]
fn true_policy_beats_random_timing() {
    let world = World::build(&WorldConfig::patrol()).unwrap();
    let obs = world.observation_model(ObservationKind::Fused, 0.1).unwrap();
    let pi = world.expert_policy(5.0).unwrap();
    let opts = TrialOptions::default();
    let (mut planned, mut random) = (0, 0);
    for seed in 0..100 {
        let p = penetration_trial(&world, Attacker::Planned(&pi), &obs, &opts, seed).unwrap();
        let r = penetration_trial(&world, Attacker::Random, &obs, &opts, seed).unwrap();
        planned += (p.outcome == TrialOutcome::Success) as usize;
        random += (r.outcome == TrialOutcome::Success) as usize;
        assert_eq!(
            p,
            penetration_trial(&world, Attacker::Planned(&pi), &obs, &opts, seed).unwrap()
        );
    }
    assert!(planned > random, "planned {planned} vs random {random}");
}
