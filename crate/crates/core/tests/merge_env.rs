use attn_marl_core::merge_env::*;
use attn_marl_core::{Error, Matrix, MultiAgentEnv, Rng, StepOutcome};

fn quiet(mut cfg: EnvConfig) -> EnvConfig {
    cfg.main_inflow = 0.0;
    cfg.ramp_inflow = 0.0;
    cfg.warmup_steps = 0;
    cfg
}

fn scene(cfg: &EnvConfig, cars: &[(Route, f64, f64, bool)]) -> SimState {
    let mut s = SimState::new();
    for &(route, pos, speed, controlled) in cars {
        s.insert(&cfg.geometry, route, pos, speed, controlled).unwrap();
    }
    s
}

fn idle(env: &mut MergeEnv) -> StepOutcome {
    let n = env.state().num_controlled();
    env.step(&Matrix::zeros(n, ACT_DIM), &vec![false; n]).unwrap()
}

fn sort_key(g: &Geometry, v: &Vehicle) -> (f64, u8, u64) {
    let rank = if v.route == Route::Ramp { 0 } else { 1 };
    (g.coordinate(v), rank, v.id)
}

fn ahead_of(a: (f64, u8, u64), b: (f64, u8, u64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) > (b.1, b.2))
}

/// Leader by brute force: nearest same-lane vehicle downstream; waiting ramp
/// vehicles see the stop line (gap to the merge point, speed 0) when no ramp
/// vehicle is ahead.
fn oracle_leader(g: &Geometry, vs: &[Vehicle], k: usize) -> Option<(usize, f64, f64)> {
    let me = &vs[k];
    let key = sort_key(g, me);
    let main_lane = me.route != Route::Ramp || me.merging;
    let candidate = |w: &Vehicle| {
        if main_lane {
            w.route != Route::Ramp || w.merging
        } else {
            w.route == Route::Ramp
        }
    };
    let best = (0..vs.len())
        .filter(|&j| j != k && candidate(&vs[j]) && ahead_of(sort_key(g, &vs[j]), key))
        .min_by(|&a, &b| sort_key(g, &vs[a]).partial_cmp(&sort_key(g, &vs[b])).unwrap());
    match best {
        Some(j) => Some((j, g.coordinate(&vs[j]) - g.coordinate(me) - g.vehicle_length, vs[j].speed)),
        None if !main_lane => Some((usize::MAX, -g.coordinate(me), 0.0)),
        None => None,
    }
}

fn oracle_obs(cfg: &EnvConfig, s: &SimState) -> Vec<[f64; 5]> {
    let g = &cfg.geometry;
    let vs = s.vehicles();
    let leaders: Vec<_> = (0..vs.len()).map(|k| oracle_leader(g, vs, k)).collect();
    let mut rows = Vec::new();
    for k in 0..vs.len() {
        if !vs[k].controlled {
            continue;
        }
        let (lg, ls) = match leaders[k] {
            Some((_, gap, speed)) => ((gap / cfg.gap_scale).min(1.0), speed / cfg.speed_limit),
            None => (1.0, 1.0),
        };
        let follower = (0..vs.len())
            .filter(|&j| matches!(leaders[j], Some((l, _, _)) if l == k))
            .max_by(|&a, &b| sort_key(g, &vs[a]).partial_cmp(&sort_key(g, &vs[b])).unwrap());
        let fg = follower.map_or(1.0, |j| (leaders[j].unwrap().1 / cfg.gap_scale).min(1.0));
        let dist = (-g.coordinate(&vs[k])).max(0.0) / g.main_length;
        rows.push([vs[k].speed / cfg.speed_limit, lg, ls, fg, dist]);
    }
    rows
}

#[test]
fn idm_textbook_limits() {
    let p = IdmParams::default();
    assert_eq!(idm_accel(0.0, 0.0, f64::INFINITY, &p).unwrap(), p.a_max);
    assert_eq!(idm_accel(p.v0, p.v0, f64::INFINITY, &p).unwrap(), 0.0);
    assert!(matches!(idm_accel(5.0, 5.0, 0.0, &p), Err(Error::NonPositiveGap { .. })));
}

#[test]
fn empty_road_only_advances_time() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(1)).unwrap();
    assert!(env.state().is_empty());
    for k in 1..=10 {
        let out = idle(&mut env);
        assert_eq!(out.reward, 0.0);
        assert!(env.state().is_empty());
        assert!((env.state().time - k as f64 * cfg.dt).abs() < 1e-12);
    }
}

#[test]
fn lone_human_approaches_v0_monotonically() {
    let mut cfg = quiet(EnvConfig::mini_merge_0());
    cfg.geometry.main_length = 5000.0;
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(0)).unwrap();
    env.set_state(scene(&cfg, &[(Route::Main, 0.0, 0.0, false)]));
    let mut last = 0.0;
    for _ in 0..300 {
        idle(&mut env);
        let v = env.state().vehicles()[0].speed;
        assert!(v >= last && v <= cfg.idm.v0);
        last = v;
    }
    assert!(last > 0.95 * cfg.idm.v0, "speed {last}");
}

#[test]
fn constant_command_integrates_by_hand() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(0)).unwrap();
    env.set_state(scene(&cfg, &[(Route::Main, 10.0, 0.0, true)]));
    let (mut v, mut x) = (0.0, 10.0);
    for _ in 0..5 {
        env.step(&Matrix::from_vec(1, 1, vec![1.0]).unwrap(), &[true]).unwrap();
        v += 1.0 * cfg.dt;
        x += v * cfg.dt;
    }
    let car = env.state().vehicles()[0];
    assert_eq!(car.speed, 2.5);
    assert_eq!(v, 2.5);
    assert!((car.position - x).abs() < 1e-12);
}

#[test]
fn commands_are_clipped_and_speed_floored() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(0)).unwrap();
    env.set_state(scene(&cfg, &[(Route::Main, 10.0, 1.0, true)]));
    env.step(&Matrix::from_vec(1, 1, vec![50.0]).unwrap(), &[true]).unwrap();
    assert_eq!(env.state().vehicles()[0].speed, 1.0 + cfg.action_bound * cfg.dt);
    for _ in 0..5 {
        env.step(&Matrix::from_vec(1, 1, vec![-50.0]).unwrap(), &[true]).unwrap();
    }
    assert_eq!(env.state().vehicles()[0].speed, 0.0);
}

#[test]
fn malformed_actions_are_rejected() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(0)).unwrap();
    env.set_state(scene(&cfg, &[(Route::Main, 10.0, 5.0, true)]));
    assert!(env.step(&Matrix::zeros(2, 1), &[true, true]).is_err());
    assert!(env.step(&Matrix::from_vec(1, 1, vec![f64::NAN]).unwrap(), &[true]).is_err());
}

#[test]
fn no_collisions_under_idm() {
    for preset in PRESETS {
        let mut cfg = EnvConfig::preset(preset).unwrap();
        cfg.horizon = 10_000;
        cfg.warmup_steps = 0;
        for seed in 0..20 {
            let mut env = MergeEnv::new(cfg).unwrap();
            env.reset(Rng::new(seed)).unwrap();
            for _ in 0..cfg.horizon {
                idle(&mut env);
                if let Some(g) = env.state().min_gap(&cfg.geometry) {
                    assert!(g > 0.0, "{preset} seed {seed}: gap {g}");
                }
            }
        }
    }
}

#[test]
fn vehicles_are_conserved_every_step() {
    for preset in PRESETS {
        let cfg = EnvConfig::preset(preset).unwrap();
        let mut env = MergeEnv::new(cfg).unwrap();
        env.reset(Rng::new(3)).unwrap();
        let mut noise = Rng::new(4);
        loop {
            let before = (env.state().len() as i64, env.state().entered as i64, env.state().exited as i64);
            let n = env.state().num_controlled();
            let acts: Vec<f64> = (0..n).map(|_| 2.0 * noise.normal()).collect();
            let out = env.step(&Matrix::from_vec(n, 1, acts).unwrap(), &vec![true; n]).unwrap();
            let s = env.state();
            let entered = s.entered as i64 - before.1;
            let exited = s.exited as i64 - before.2;
            assert_eq!(s.len() as i64 - before.0, entered - exited);
            if out.done {
                break;
            }
        }
    }
}

#[test]
fn warmup_population_matches_flow_estimate() {
    let mut cfg = EnvConfig::mini_merge_2();
    cfg.main_inflow = 0.2;
    cfg.ramp_inflow = 0.1;
    cfg.warmup_steps = 300;
    let g = cfg.geometry;
    let main_route = g.main_length + g.merged_length;
    let ramp_route = g.ramp_length + g.merged_length;
    // Speeds stay between the spawn speed and v0 on a lightly loaded road.
    let travel = |len: f64, v: f64| len / (0.5 * (v + cfg.idm.v0));
    let expected = cfg.main_inflow * travel(main_route, cfg.main_spawn_speed)
        + cfg.ramp_inflow * travel(ramp_route, cfg.ramp_spawn_speed);
    let seeds = 20;
    let mean = (0..seeds)
        .map(|s| {
            let mut env = MergeEnv::new(cfg).unwrap();
            env.reset(Rng::new(s)).unwrap();
            env.state().len() as f64
        })
        .sum::<f64>()
        / seeds as f64;
    assert!((mean / expected - 1.0).abs() < 0.3, "mean {mean} expected {expected}");
}

#[test]
fn reset_is_seeded() {
    let cfg = EnvConfig::mini_merge_0();
    let mut a = MergeEnv::new(cfg).unwrap();
    let mut b = MergeEnv::new(cfg).unwrap();
    a.reset(Rng::new(9)).unwrap();
    b.reset(Rng::new(9)).unwrap();
    assert!(!a.state().is_empty());
    assert_eq!(a.state(), b.state());
    b.reset(Rng::new(10)).unwrap();
    assert_ne!(a.state(), b.state());
}

#[test]
fn lone_agent_sees_sentinels() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let s = scene(&cfg, &[(Route::Main, 150.0, 12.0, true)]);
    let o = observe(&s, &cfg);
    let row = o.obs().row(0);
    assert_eq!(row, &[12.0 / cfg.speed_limit, 1.0, 1.0, 1.0, 150.0 / cfg.geometry.main_length]);
}

#[test]
fn neighbouring_agents_agree_on_their_gap() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let len = cfg.geometry.vehicle_length;
    let s = scene(&cfg, &[(Route::Main, 100.0, 10.0, true), (Route::Main, 120.0 + len, 15.0, true)]);
    let o = observe(&s, &cfg);
    let gap = 20.0 / cfg.gap_scale;
    assert!((o.obs().get(0, 1) - gap).abs() < 1e-15);
    assert!((o.obs().get(1, 3) - gap).abs() < 1e-15);
    assert_eq!(o.obs().get(0, 2), 15.0 / cfg.speed_limit);
}

#[test]
fn observations_match_direct_recomputation() {
    for preset in PRESETS {
        let cfg = EnvConfig::preset(preset).unwrap();
        let mut env = MergeEnv::new(cfg).unwrap();
        env.reset(Rng::new(21)).unwrap();
        let mut checked = 0;
        for _ in 0..150 {
            let o = env.observe().unwrap();
            let want = oracle_obs(&cfg, env.state());
            assert_eq!(o.obs.rows(), want.len());
            for (i, w) in want.iter().enumerate() {
                assert_eq!(o.obs.obs().row(i), w.as_slice());
            }
            checked += want.len();
            let n = o.obs.rows();
            env.step(&Matrix::from_vec(n, 1, vec![0.5; n]).unwrap(), &vec![true; n]).unwrap();
        }
        assert!(checked > 100, "{preset}: only {checked} rows checked");
    }
}

#[test]
fn ramp_queue_sees_the_stop_line() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let g = cfg.geometry;
    let s = scene(&cfg, &[(Route::Ramp, g.ramp_length - 30.0, 0.0, true)]);
    let row = observe(&s, &cfg).obs().row(0).to_vec();
    assert_eq!(row[1], 30.0 / cfg.gap_scale);
    assert_eq!(row[2], 0.0);
    assert_eq!(row[4], 30.0 / g.main_length);
}

#[test]
fn graph_classes_cover_and_mirror() {
    let mut cfg = quiet(EnvConfig::mini_merge_2());
    cfg.max_controlled = 17;
    let cars: Vec<_> = (0..7).map(|k| (Route::Main, 20.0 + 40.0 * k as f64, 10.0, true)).collect();
    let s = scene(&cfg, &cars);
    for p in [0usize, 1, 2, 3] {
        let g = build_graph(&s, p, 0.0, &mut Rng::new(0)).unwrap();
        assert_eq!(g.num_classes(), 2 * p + 1);
        assert_eq!(g.num_edges(), 49);
        for i in 0..7 {
            for j in 0..7 {
                let (a, b) = (g.class_of(i, j).unwrap(), g.class_of(j, i).unwrap());
                assert_eq!(a + b, 2 * p);
            }
            assert_eq!(g.class_of(i, i), Some(p));
        }
    }
    let g = build_graph(&s, 3, 0.0, &mut Rng::new(0)).unwrap();
    let mut used: Vec<usize> = (0..7).map(|j| g.class_of(3, j).unwrap()).collect();
    used.sort();
    assert_eq!(used, (0..7).collect::<Vec<_>>());
    let far = g.class_of(0, 6).unwrap();
    assert_eq!(far, g.class_of(0, 5).unwrap());
    assert_eq!(far, g.class_of(0, 3).unwrap());
}

#[test]
fn dropout_keeps_self_edges() {
    let cfg = quiet(EnvConfig::mini_merge_2());
    let cars: Vec<_> = (0..6).map(|k| (Route::Main, 20.0 + 40.0 * k as f64, 10.0, true)).collect();
    let s = scene(&cfg, &cars);
    let all = build_graph(&s, 1, 1.0, &mut Rng::new(0)).unwrap();
    assert_eq!(all.num_edges(), 6);
    let mut rng = Rng::new(5);
    let kept: usize = (0..200)
        .map(|_| build_graph(&s, 1, 0.5, &mut rng).unwrap().num_edges() - 6)
        .sum();
    let frac = kept as f64 / (200.0 * 30.0);
    assert!((frac - 0.5).abs() < 0.03, "kept {frac}");
}

#[test]
fn reward_cases() {
    let cfg = quiet(EnvConfig::mini_merge_0());
    let v0 = cfg.idm.v0;
    let cruising = scene(&cfg, &[(Route::Main, 10.0, v0, true), (Route::Main, 100.0, v0, false)]);
    assert_eq!(reward(&cruising, &cfg, &[0.0]), 1.0);
    let stopped = scene(&cfg, &[(Route::Main, 10.0, 0.0, true), (Route::Ramp, 100.0, 0.0, true)]);
    let a = [1.5, -3.0];
    let pen = cfg.accel_penalty * 0.5 * ((1.5 / cfg.action_bound).powi(2) + 1.0);
    assert!((reward(&stopped, &cfg, &a) + pen).abs() < 1e-15);
    assert_eq!(reward(&SimState::new(), &cfg, &[]), 0.0);

    let mixed = scene(
        &cfg,
        &[
            (Route::Main, 10.0, 3.0, true),
            (Route::Ramp, 40.0, 7.0, false),
            (Route::Main, 90.0, 11.0, false),
            (Route::Merged, 20.0, 29.0, true),
        ],
    );
    let acts = [0.3, -2.2];
    let direct = (3.0 + 7.0 + 11.0 + 29.0) / 4.0 / v0
        - cfg.accel_penalty * (0.3f64.powi(2) + 2.2f64.powi(2)) / 2.0 / cfg.action_bound.powi(2);
    assert!((reward(&mixed, &cfg, &acts) - direct).abs() < 1e-15);
}

#[test]
fn agent_count_varies_over_an_episode() {
    let cfg = EnvConfig::mini_merge_0();
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(2)).unwrap();
    let mut counts = std::collections::BTreeSet::new();
    loop {
        counts.insert(env.state().num_controlled());
        assert!(env.state().num_controlled() <= cfg.max_controlled);
        if idle(&mut env).done {
            break;
        }
    }
    assert!(counts.len() > 1, "{counts:?}");
}

#[test]
fn cap_limits_controlled_vehicles() {
    let mut cfg = EnvConfig::mini_merge_2();
    cfg.penetration = 1.0;
    cfg.max_controlled = 4;
    let mut env = MergeEnv::new(cfg).unwrap();
    env.reset(Rng::new(0)).unwrap();
    for _ in 0..100 {
        assert!(env.state().num_controlled() <= 4);
        idle(&mut env);
    }
    assert_eq!(env.state().num_controlled(), 4);
}

fn traced_episode(seed: u64) -> (Vec<u8>, Vec<f64>) {
    let cfg = EnvConfig::mini_merge_0();
    let mut env = MergeEnv::new(cfg).unwrap();
    env.enable_trace();
    env.reset(Rng::new(seed)).unwrap();
    let mut rewards = Vec::new();
    let mut noise = Rng::new(seed + 100);
    for _ in 0..100 {
        let n = env.state().num_controlled();
        let acts: Vec<f64> = (0..n).map(|_| noise.normal()).collect();
        rewards.push(env.step(&Matrix::from_vec(n, 1, acts).unwrap(), &vec![true; n]).unwrap().reward);
    }
    let mut buf = Vec::new();
    write_trace(&env.take_trace(), &mut buf).unwrap();
    (buf, rewards)
}

#[test]
fn episodes_are_bit_reproducible() {
    let (t1, r1) = traced_episode(6);
    let (t2, r2) = traced_episode(6);
    assert_eq!(t1, t2);
    assert_eq!(r1.iter().map(|r| r.to_bits()).collect::<Vec<_>>(), r2.iter().map(|r| r.to_bits()).collect::<Vec<_>>());
    assert_ne!(traced_episode(7).0, t1);
}

#[test]
fn trace_is_line_delimited_json() {
    let (buf, _) = traced_episode(1);
    let text = String::from_utf8(buf).unwrap();
    let mut times = Vec::new();
    for line in text.lines() {
        let rec: TraceRecord = serde_json::from_str(line).unwrap();
        assert!(rec.speed >= 0.0);
        times.push(rec.time);
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["time", "id", "route", "position", "speed", "controlled"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    assert!(times.len() > 100);
}

#[test]
fn presets_respect_their_caps() {
    assert_eq!(EnvConfig::mini_merge_0().max_controlled, 5);
    assert_eq!(EnvConfig::mini_merge_2().max_controlled, 17);
    assert_eq!(EnvConfig::mini_merge_0().num_classes(), 7);
    assert!(EnvConfig::preset("merge-9").is_err());
}

#[test]
fn config_rejects_bad_values() {
    let ok = EnvConfig::mini_merge_0();
    assert!(ok.validate().is_ok());
    let mut bad = ok;
    bad.dt = 0.0;
    assert!(MergeEnv::new(bad).is_err());
    let mut bad = ok;
    bad.main_inflow = -1.0;
    assert!(bad.validate().is_err());
    let mut bad = ok;
    bad.edge_dropout = 1.5;
    assert!(bad.validate().is_err());
    let json = r#"{"penetration": 0.2, "bogus": 1}"#;
    assert!(serde_json::from_str::<EnvConfig>(json).is_err());
    let cfg: EnvConfig = serde_json::from_str(r#"{"penetration": 0.2}"#).unwrap();
    assert_eq!(cfg.penetration, 0.2);
    assert_eq!(cfg.max_controlled, 5);
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use attn_marl_core::Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn arbitrary_commands_never_collide(seed in 0u64..1_000, scale in 0.0f64..10.0, bias in -3.0f64..3.0, big in any::<bool>()) {
            let cfg = if big { EnvConfig::mini_merge_2() } else { EnvConfig::mini_merge_0() };
            let mut env = MergeEnv::new(cfg).unwrap();
            env.reset(Rng::new(seed)).unwrap();
            let mut noise = Rng::new(seed ^ 0xabc);
            for _ in 0..cfg.horizon {
                let before = (env.state().len() as i64, env.state().entered as i64, env.state().exited as i64);
                let n = env.state().num_controlled();
                let acts: Vec<f64> = (0..n).map(|_| bias + scale * noise.normal()).collect();
                env.step(&Matrix::from_vec(n, 1, acts).unwrap(), &vec![true; n]).unwrap();
                let s = env.state();
                prop_assert!(s.min_gap(&cfg.geometry).is_none_or(|g| g > 0.0));
                prop_assert!(s.vehicles().iter().all(|v| v.speed >= 0.0 && v.speed <= cfg.speed_limit));
                prop_assert_eq!(s.len() as i64 - before.0, (s.entered as i64 - before.1) - (s.exited as i64 - before.2));
                prop_assert!(s.num_controlled() <= cfg.max_controlled);
            }
        }
    }
}
