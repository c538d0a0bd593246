use vismpc_core::bench::{
    collect_random, default_suite, motion_fraction, run_bench, run_task, scenario_occlusion, scenario_rotation,
    CollectConfig, Method, TaskSuite,
};
use vismpc_core::flow::PredictorModel;
use vismpc_core::planner::PlanConfig;
use vismpc_core::sim::{Shape, Surface, WorldState};

#[test]
fn random_collection_moves_objects() {
    let ds = collect_random(&CollectConfig::default()).unwrap();
    assert_eq!(ds.episodes.len(), 200);
    assert!(ds.episodes.iter().all(|e| e.len() == 15));
    let frac = motion_fraction(&ds);
    assert!(frac >= 0.3, "motion fraction {frac}");
}

#[test]
fn servo_vector_beats_random() {
    let suite = default_suite(32).unwrap();
    let methods = [Method::Random, Method::ServoVector];
    let (report, _) = run_bench(&methods, &suite, &PredictorModel::oracle(), &PlanConfig::default()).unwrap();
    let rnd = report.method("random").unwrap().mean;
    let sv = report.method("servo-vector").unwrap().mean;
    assert!(sv < rnd, "servo-vector {sv} vs random {rnd}");
}

#[test]
fn suite_roundtrips_through_toml() {
    let suite = default_suite(32).unwrap();
    let text = suite.to_toml().unwrap();
    assert_eq!(TaskSuite::from_toml(&text).unwrap(), suite);
}

#[test]
fn scenarios_place_goals_on_objects() {
    for seed in 0..5 {
        for task in [scenario_rotation(100 + seed, 32).unwrap(), scenario_occlusion(200 + seed, 32).unwrap()] {
            let world = task.world().unwrap();
            for pair in task.goal.pairs() {
                assert!(pair.goal.in_bounds(32, 32));
                assert_ne!(world.surface_at(pair.designated.x, pair.designated.y), Surface::Background);
            }
        }
    }
}

fn square_angle(w: &WorldState) -> f64 {
    match w.objects[0].shape {
        Shape::Square { angle, .. } => angle,
        Shape::Disc { .. } => 0.0,
    }
}

#[test]
#[ignore = "not reproduced: oracle MPC turns the square by more than 15 degrees on 1 of 5 seeds"]
fn rotation_tasks_turn_the_square() {
    let mut turned = 0;
    for seed in 0..5 {
        let task = scenario_rotation(100 + seed, 32).unwrap();
        let log = run_task(Method::VisualMpc, &task, &PredictorModel::oracle(), &PlanConfig::default()).unwrap();
        let deg = (square_angle(log.final_world()) - square_angle(&log.worlds[0])).to_degrees();
        println!("rotation seed {seed}: {deg:.1} degrees");
        if deg.abs() > 15.0 {
            turned += 1;
        }
    }
    assert!(turned >= 3, "{turned}/5 turned");
}

#[test]
#[ignore = "not reproduced: the tracked pixel is never captured by the pusher under oracle MPC"]
fn occlusion_tasks_show_tracker_capture() {
    let mut captured = 0;
    for seed in 0..5 {
        let task = scenario_occlusion(200 + seed, 32).unwrap();
        let log = run_task(Method::VisualMpc, &task, &PredictorModel::oracle(), &PlanConfig::default()).unwrap();
        let hit = log
            .worlds
            .iter()
            .zip(&log.pixels)
            .any(|(w, p)| w.surface_at(p[0].x, p[0].y) == Surface::Pusher);
        if hit {
            captured += 1;
        }
    }
    assert!(captured >= 1, "{captured}/5 captured");
}
