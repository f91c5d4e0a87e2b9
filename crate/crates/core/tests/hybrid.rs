use std::f64::consts::PI;

use densenav::domain::{d_min, AgentState, Dimension, Scenario, Vector, WorldConfig};
use densenav::env::{ControllerMode, EpisodeState, SwitchReason};
use densenav::fmp::{r_fmp, DEFAULT_RHO};
use densenav::hybrid::{hybrid_action, policy_action, select_mode, HybridConfig};
use densenav::planner::Planner;
use densenav::policy::{ActionSpace, PolicyModel};

#[test]
fn high_risk_example_matches_the_radius_oracle() {
    // ∛(3·2²/(2·7.5e6)) = ∛(8e-7) ≈ 9.283e-3.
    let oracle = (3.0f64 * 4.0 / 15e6).cbrt();
    assert!((r_fmp(2.0, DEFAULT_RHO).unwrap() - oracle).abs() < 1e-15);
    assert!((oracle - 9.28e-3).abs() < 1e-5);
    let me = AgentState::new(0, Vector::new2(0.0, 0.0), Vector::new2(3.0, 0.0), 0.3, 2.0);
    let other = AgentState::new(1, Vector::new2(0.605, 0.0), Vector::new2(-3.0, 0.0), 0.3, 1.0);
    let tag = select_mode(&me, &[other.observable()], 0, &HybridConfig::default()).unwrap();
    assert_eq!(tag.reason, Some(SwitchReason::HighRisk));
}

#[test]
fn lone_agent_pursues_its_goal_in_simple_mode() {
    let world = WorldConfig::planar();
    let agent = AgentState::new(0, Vector::new2(-3.0, -3.0), Vector::new2(3.0, 2.0), 0.4, 1.5);
    let s = Scenario { world: world.clone(), agents: vec![agent], seed: 0, label: "lone".into() };
    let planner = Planner::hybrid(PolicyModel::for_dimension(Dimension::Two, 0), HybridConfig::default());
    let mut ep = EpisodeState::new(&s, false);
    while !ep.termination().done {
        let (action, tag) = planner.act(&ep, 0).unwrap();
        assert_eq!(tag.reason, Some(SwitchReason::Simple));
        assert!(action.dpsi.abs() <= PI / 6.0 + 1e-12);
        ep.step_tagged(&[Some(action)], &[tag]).unwrap();
    }
    assert!(ep.arrival_times[0].is_some());
}

#[test]
fn normal_mode_passes_the_greedy_action_through() {
    let model = PolicyModel::for_dimension(Dimension::Two, 8);
    let space = ActionSpace::planar();
    let world = WorldConfig::planar();
    let me = AgentState::new(0, Vector::new2(0.0, 0.0), Vector::new2(3.0, 0.0), 0.3, 1.2);
    let other = AgentState::new(1, Vector::new2(1.5, 0.5), Vector::new2(-3.0, 0.0), 0.3, 1.0);
    let s = Scenario { world: world.clone(), agents: vec![me.clone(), other.clone()], seed: 0, label: "pair".into() };
    let ep = EpisodeState::new(&s, false);
    let obs = ep.observe(0).unwrap();
    let (action, tag) = hybrid_action(
        &me,
        &[other.observable()],
        0,
        &model,
        &space,
        &HybridConfig::default(),
        &world,
        || obs.clone(),
    )
    .unwrap();
    assert_eq!(tag.reason, Some(SwitchReason::Normal));
    assert_eq!(action, policy_action(&model, &space, &obs, me.v_pref).unwrap());
}

#[test]
fn near_contact_pair_both_switch_and_separate() {
    let world = WorldConfig::planar();
    let rf = r_fmp(1.0, DEFAULT_RHO).unwrap();
    let gap = 0.5 * rf;
    // Heading straight at each other, just inside the activation radius.
    let mut a = AgentState::new(0, Vector::new2(-0.3 - gap / 2.0, 0.0), Vector::new2(3.0, 0.0), 0.3, 1.0);
    let mut b = AgentState::new(1, Vector::new2(0.3 + gap / 2.0, 0.0), Vector::new2(-3.0, 0.0), 0.3, 1.0);
    a.velocity = Vector::new2(0.5, 0.0);
    b.velocity = Vector::new2(-0.5, 0.0);
    let s = Scenario { world, agents: vec![a.clone(), b.clone()], seed: 0, label: "contact".into() };
    let planner = Planner::hybrid(PolicyModel::for_dimension(Dimension::Two, 0), HybridConfig::default());
    let ep = EpisodeState::new(&s, false);
    assert!(d_min(&a, &[b.observable()]) < rf);
    for (id, me) in [(0, &a), (1, &b)] {
        let (action, tag) = planner.act(&ep, id).unwrap();
        assert_eq!(tag.mode, Some(ControllerMode::Fmp));
        assert_eq!(tag.reason, Some(SwitchReason::HighRisk));
        // Radial velocity toward the other agent must drop.
        let toward = if id == 0 { Vector::new2(1.0, 0.0) } else { Vector::new2(-1.0, 0.0) };
        let new_v = me.heading.turned(action.dpsi, action.dphi).direction() * action.speed;
        assert!(new_v.dot(&toward) < me.velocity.dot(&toward), "agent {id}: {action:?}");
    }
}
