mod common;

use common::mrm_cases::{run_case, stop_ok, Outcome};
use teleodd_core::geometry::{Lane, Point, Rect};
use teleodd_core::mrm::{
    assess_capability, plan_emergency, plan_mrm, required_distance, straight_line_brake, MrmExecutor, MrmParams,
};
use teleodd_core::world::{check_collision, step_vehicle, CollisionReport, Obstacle, VehicleDims, VehicleState, World};

fn straight_world() -> World {
    World::new(Lane::new(vec![Point::new(0.0, 0.0), Point::new(1000.0, 0.0)], 3.5).unwrap())
}

fn block_at(w: &mut World, x: f64) {
    w.obstacles.push(Obstacle {
        id: "block".into(),
        rect: Rect { center: Point::new(x, 0.0), length: 1.0, width: 1.0, heading: 0.0 },
    });
}

fn ego(x: f64, speed: f64) -> VehicleState {
    VehicleState { x, y: 0.0, heading: 0.0, speed, wheelbase: 2.7 }
}

#[test]
fn required_distance_closed_form() {
    let p = MrmParams { a_max: 4.0, margin_m: 5.0, ..Default::default() };
    assert!((required_distance(20.0, &p) - 55.0).abs() < 1e-12);
}

#[test]
fn plan_uses_smallest_sufficient_deceleration() {
    let p = MrmParams { a_max: 4.0, margin_m: 5.0, ..Default::default() };
    let dims = VehicleDims::default();
    let mut w = straight_world();
    let s = ego(100.0, 20.0);
    let front = 100.0 + dims.length / 2.0;
    // obstacle rear face 105 m ahead of the front bumper
    block_at(&mut w, front + 105.0 + 0.5);
    let cap = assess_capability(&s, &dims, &w, &p);
    assert!(cap.capable);
    assert!((cap.available_distance - 105.0).abs() < 1e-9);
    let plan = plan_mrm(&s, &w, &cap, &p).unwrap();
    assert!((plan.decel_profile.segments[0].1 - 2.0).abs() < 1e-9);
    assert!((plan.target_stop_s - 100.0 - 100.0).abs() < 1e-9);
    assert!(!plan.emergency);
}

#[test]
fn stopping_distance_and_time_closed_form() {
    let p = MrmParams { a_max: 8.0, margin_m: 0.0, ..Default::default() };
    let dims = VehicleDims::default();
    let w = straight_world();
    let s = ego(50.0, 13.9);
    let cap = assess_capability(&s, &dims, &w, &p);
    let plan = plan_emergency(&s, &w, &cap, &p);
    assert!(((plan.target_stop_s - 50.0) - 12.07).abs() < 0.01);
    assert!((plan.decel_profile.duration() - 1.74).abs() < 0.01);
}

#[test]
fn not_capable_refuses_to_plan() {
    let p = MrmParams::default();
    let dims = VehicleDims::default();
    let mut w = straight_world();
    let s = ego(100.0, 20.0);
    block_at(&mut w, 100.0 + dims.length / 2.0 + 5.0 + 0.5);
    let cap = assess_capability(&s, &dims, &w, &p);
    assert!(!cap.capable);
    assert!(plan_mrm(&s, &w, &cap, &p).is_err());
    assert!(plan_emergency(&s, &w, &cap, &p).emergency);
}

#[test]
fn straight_line_brake_into_close_obstacle_collides() {
    let dims = VehicleDims::default();
    let mut w = straight_world();
    let mut s = ego(100.0, 20.0);
    block_at(&mut w, 100.0 + dims.length / 2.0 + 5.0 + 0.5);
    let mut hit = false;
    for u in straight_line_brake(&s, 8.0, 0.01) {
        s = step_vehicle(&s, &u, 0.01).unwrap();
        hit |= check_collision(&w, &s.footprint(&dims)) != CollisionReport::None;
    }
    assert!(hit);
    assert_eq!(s.speed, 0.0);
}

#[test]
fn executor_leaves_corridor_is_a_fault() {
    let p = MrmParams::default();
    let dims = VehicleDims::default();
    let w = straight_world();
    let s = ego(100.0, 10.0);
    let cap = assess_capability(&s, &dims, &w, &p);
    let mut exec = MrmExecutor::new(plan_mrm(&s, &w, &cap, &p).unwrap());
    let off = VehicleState { y: 2.0, ..s };
    assert!(exec.step(&off, 0.01).is_err());
}

#[test]
fn randomized_cases_stop_cleanly_or_refuse() {
    let (mut stopped, mut refused) = (0, 0);
    for seed in 0..500 {
        let o = run_case(seed);
        assert!(stop_ok(&o), "seed {seed}: {o:?}");
        match o {
            Outcome::Stopped { .. } => stopped += 1,
            _ => refused += 1,
        }
    }
    assert!(stopped > 100 && refused > 20, "stopped {stopped} refused {refused}");
}
