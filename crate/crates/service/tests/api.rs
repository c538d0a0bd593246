use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;
use vismpc_core::flow::PredictorModel;
use vismpc_core::planner::{EpisodeRunner, GoalSpec, MpcController, PlanConfig};
use vismpc_core::sim::{random_scene_with, render, SimParams};
use vismpc_service::wire::decode_frame;
use vismpc_service::{router, AppState, GoalAck, Heatmap, Mode, ServerEvent, ServiceConfig, SessionView, StepEvent};

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, body: Value) -> SessionView {
    let (status, v) = call(app, "POST", "/session", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn pairs(spec: &str) -> Value {
    let goal: GoalSpec = spec.parse().unwrap();
    json!({ "pairs": goal.pairs() })
}

/// A designated pixel on the first object with a goal three pixels right.
fn goal_for(view: &SessionView) -> String {
    let world = random_scene_with(view.seed, 2, 32, 32, SimParams::default()).unwrap();
    let c = world.objects[0].center;
    let (x, y) = (c.x.round() as usize, c.y.round() as usize);
    format!("{x},{y}->{},{y}", (x + 3).min(31))
}

#[tokio::test]
async fn same_seed_gives_same_first_frame() {
    let app = app();
    let a = create(&app, json!({ "seed": 7 })).await;
    let b = create(&app, json!({ "seed": 7 })).await;
    let c = create(&app, json!({ "seed": 8 })).await;
    assert_ne!(a.id, b.id);
    assert_eq!(a.frame, b.frame);
    assert_ne!(a.frame, c.frame);
    assert_eq!(a.mode, Mode::Idle);
}

#[tokio::test]
async fn frames_round_trip_losslessly() {
    let app = app();
    let view = create(&app, json!({ "seed": 3 })).await;
    let world = random_scene_with(3, 2, 32, 32, SimParams::default()).unwrap();
    let expected = render(&world).to_u8();
    let decoded = decode_frame(view.width, view.height, &view.frame).unwrap();
    assert_eq!(decoded.to_u8(), expected);
    let (status, v) = call(&app, "GET", &format!("/session/{}/frame", view.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["frame"], json!(view.frame));
}

#[tokio::test]
async fn goal_is_echoed_and_bounds_checked() {
    let app = app();
    let view = create(&app, json!({ "seed": 3 })).await;
    let uri = format!("/session/{}/goal", view.id);
    let body = pairs("4,5->6,7;10,11->12,13");
    let (status, v) = call(&app, "POST", &uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let ack: GoalAck = serde_json::from_value(v).unwrap();
    assert_eq!(json!({ "pairs": ack.pairs }), body);
    assert_eq!(ack.applies_at_step, 0);

    let (status, v) = call(&app, "POST", &uri, Some(pairs("4,5->6,7;10,40->12,13"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "out_of_bounds");
    assert_eq!(v["pair"], json!({ "designated": { "x": 10, "y": 40 }, "goal": { "x": 12, "y": 13 } }));

    let (status, _) = call(&app, "POST", "/session/999/goal", Some(body)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stepping_without_goal_is_rejected() {
    let app = app();
    let view = create(&app, json!({ "seed": 3 })).await;
    for action in ["step", "run"] {
        let (status, v) = call(&app, "POST", &format!("/session/{}/{action}", view.id), None).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(v["error"], "no_goal");
    }
}

#[tokio::test]
async fn step_events_carry_normalized_heatmaps() {
    let app = app();
    let view = create(&app, json!({ "seed": 3 })).await;
    call(&app, "POST", &format!("/session/{}/goal", view.id), Some(pairs(&goal_for(&view)))).await;
    for expected in 0..2 {
        let (status, v) = call(&app, "POST", &format!("/session/{}/step", view.id), None).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let ev: StepEvent = serde_json::from_value(v).unwrap();
        assert_eq!(ev.step, expected);
        assert_eq!(ev.heatmaps.len(), 1);
        let probs = ev.heatmaps[0].decode().unwrap();
        // Each byte is within half a quantization level of the true value.
        let bound = probs.len() as f64 * ev.heatmaps[0].max / 510.0;
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-4 + bound, "{sum}");
    }
}

#[test]
fn heatmap_quantization_keeps_the_mass() {
    let d = vismpc_core::PixelDistribution::from_vec(8, 8, {
        let mut m = vec![0.0; 64];
        m[3] = 0.5;
        m[10] = 0.3;
        m[20] = 0.2;
        m
    })
    .unwrap();
    let h = Heatmap::encode(&d);
    let sum: f64 = h.decode().unwrap().iter().sum();
    assert!((sum - 1.0).abs() < 3.0 * 0.5 / 510.0 + 1e-4, "{sum}");
}

#[tokio::test]
async fn offline_replay_matches_session() {
    let app = app();
    let view = create(&app, json!({ "seed": 5 })).await;
    let first = goal_for(&view);
    let world = random_scene_with(5, 2, 32, 32, SimParams::default()).unwrap();
    let p = world.pusher;
    let second = format!("{},{}->{},{}", p.x.round() as usize, p.y.round() as usize, 16, 16);
    let base = format!("/session/{}", view.id);

    call(&app, "POST", &format!("{base}/goal"), Some(pairs(&first))).await;
    let mut events = Vec::new();
    for _ in 0..3 {
        events.push(call(&app, "POST", &format!("{base}/step"), None).await.1);
    }
    call(&app, "POST", &format!("{base}/goal"), Some(pairs(&second))).await;
    for _ in 0..2 {
        events.push(call(&app, "POST", &format!("{base}/step"), None).await.1);
    }
    let events: Vec<StepEvent> = events.into_iter().map(|v| serde_json::from_value(v).unwrap()).collect();

    let ctrl = Box::new(MpcController::new(PredictorModel::oracle(), PlanConfig::default()));
    let mut runner = EpisodeRunner::new(world, first.parse().unwrap(), ctrl, 5).unwrap();
    for (t, ev) in events.iter().enumerate() {
        if t == 3 {
            runner.set_goal(second.parse().unwrap()).unwrap();
        }
        let o = runner.step().unwrap();
        assert_eq!(ev.step, t);
        assert_eq!(ev.action, o.action.to_array());
        assert_eq!(ev.objective, o.objective);
        assert_eq!(ev.pixels, o.pixels);
        assert_eq!(ev.goal, *runner.goal());
    }
    assert_eq!(events[2].goal, first.parse().unwrap());
    assert_eq!(events[3].goal, second.parse().unwrap());
}

async fn serve_app() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app()).await.unwrap() });
    format!("127.0.0.1:{}", addr.port())
}

async fn post(host: &str, path: &str, body: Value) -> Value {
    // Plain HTTP/1.1 over TCP keeps the test free of an HTTP client crate.
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut stream = tokio::net::TcpStream::connect(host).await.unwrap();
    let text = body.to_string();
    let req = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    let body = out.split("\r\n\r\n").nth(1).unwrap_or("");
    serde_json::from_str(body).unwrap_or(Value::Null)
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_json(ws: &mut Socket) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(60), ws.next()).await.expect("socket timeout");
        if let Some(Ok(Message::Text(t))) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_streams_ordered_events_until_done() {
    let host = serve_app().await;
    let view: SessionView = serde_json::from_value(post(&host, "/session", json!({ "seed": 3, "steps": 4 })).await).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{host}/session/{}/events", view.id)).await.unwrap();
    post(&host, &format!("/session/{}/goal", view.id), pairs(&goal_for(&view))).await;
    let run = post(&host, &format!("/session/{}/run", view.id), json!({})).await;
    assert_eq!(run["mode"], "running");

    let mut steps = Vec::new();
    loop {
        let ev: ServerEvent = serde_json::from_value(next_json(&mut ws).await).unwrap();
        match ev {
            ServerEvent::Step(s) => steps.push(s.step),
            ServerEvent::Mode { mode: Mode::Idle, step } => {
                assert_eq!(step, 4);
                break;
            }
            _ => {}
        }
    }
    assert_eq!(steps, vec![0, 1, 2, 3]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_and_reset_stop_the_run() {
    let host = serve_app().await;
    let view: SessionView = serde_json::from_value(post(&host, "/session", json!({ "seed": 3 })).await).unwrap();
    let id = view.id;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{host}/session/{id}/events")).await.unwrap();
    post(&host, &format!("/session/{id}/goal"), pairs(&goal_for(&view))).await;
    post(&host, &format!("/session/{id}/run"), json!({})).await;

    // Wait for the first step, then pause.
    loop {
        if next_json(&mut ws).await["type"] == "step" {
            break;
        }
    }
    let paused = post(&host, &format!("/session/{id}/pause"), json!({})).await;
    assert_eq!(paused["mode"], "paused");
    let at_pause = paused["step"].as_u64().unwrap();
    tokio::time::sleep(Duration::from_millis(1500)).await;
    ws.send(Message::Text(json!({ "cmd": "frame" }).to_string().into())).await.unwrap();
    let later = loop {
        let v = next_json(&mut ws).await;
        if v["type"] == "ack" {
            break v["ok"]["step"].as_u64().unwrap();
        }
    };
    assert!(later <= at_pause + 1, "{later} steps after pausing at {at_pause}");

    post(&host, &format!("/session/{id}/run"), json!({})).await;
    let reset = post(&host, &format!("/session/{id}/reset"), json!({ "seed": 3 })).await;
    assert_eq!(reset["mode"], "idle");
    assert_eq!(reset["step"], 0);
    assert!(reset["goal"].is_null());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn socket_commands_are_acknowledged() {
    let host = serve_app().await;
    let view: SessionView = serde_json::from_value(post(&host, "/session", json!({ "seed": 3 })).await).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{host}/session/{}/events", view.id)).await.unwrap();
    let goal: GoalSpec = goal_for(&view).parse().unwrap();
    let cmd = json!({ "cmd": "goal", "pairs": goal.pairs() });
    ws.send(Message::Text(cmd.to_string().into())).await.unwrap();
    ws.send(Message::Text(json!({ "cmd": "step" }).to_string().into())).await.unwrap();
    ws.send(Message::Text(json!({ "cmd": "bogus" }).to_string().into())).await.unwrap();

    let (mut goal_ack, mut step_ack, mut step_event, mut rejected) = (false, false, false, false);
    while !(goal_ack && step_ack && step_event && rejected) {
        let v = next_json(&mut ws).await;
        match v["type"].as_str().unwrap() {
            "ack" if v["ok"]["applies_at_step"] == 0 => goal_ack = true,
            "ack" if v["ok"]["step"] == 0 => step_ack = true,
            "step" => step_event = true,
            "rejected" => rejected = true,
            _ => {}
        }
    }
}
