use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::Router;
use mira_core::grid::{random_task, Grid};
use mira_core::model::{ComplexInstruction, EpisodeId, Image, Termination};
use mira_core::protocol::mock::{Flaky, GridEditor, OraclePolicy, ScriptedPolicy};
use mira_core::protocol::*;
use mira_core::runtime::{run_episode, Backends, LoopConfig};
use reqwest::blocking::Client;
use serde_json::Value;

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn grid_image(text: &str) -> Image {
    Image::from_grid(&Grid::parse(text).unwrap())
}

fn editor_request(text: &str) -> EditorRequest {
    EditorRequest {
        image: ImagePayload::inline(&grid_image("WWW/WWW")),
        instruction_text: text.into(),
    }
}

/// Serves `router` on a background runtime and returns its base URL.
fn bare_server(router: Router) -> String {
    let listener = std::net::TcpListener::bind(local()).unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    url
}

#[test]
fn health_reports_version_and_backends() {
    let server = serve(ServerConfig::grid_mocks(None), local()).unwrap();
    let resp = Client::new().get(format!("{}{HEALTH_PATH}", server.base_url())).send().unwrap();
    assert_eq!(resp.headers()[PROTOCOL_HEADER], PROTOCOL_VERSION);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["status"], "ok");
    assert_eq!(body["backends"].as_array().unwrap().len(), 4);
}

#[test]
fn server_error_statuses() {
    let server = serve(ServerConfig::scripted(vec!["set 1 1 R".into()]), local()).unwrap();
    let http = Client::new();
    let url = |p: &str| format!("{}{p}", server.base_url());
    let body = serde_json::to_vec(&editor_request("set 1 1 R")).unwrap();

    let wrong_version = http
        .post(url(EDITOR_PATH))
        .header(PROTOCOL_HEADER, "2")
        .body(body.clone())
        .send()
        .unwrap();
    assert_eq!(wrong_version.status(), 400);
    assert_eq!(wrong_version.headers()[PROTOCOL_HEADER], PROTOCOL_VERSION);

    let garbage = http
        .post(url(EDITOR_PATH))
        .header(PROTOCOL_HEADER, PROTOCOL_VERSION)
        .body("{\"image\": 3}")
        .send()
        .unwrap();
    assert_eq!(garbage.status(), 422);
    let msg: Value = garbage.json().unwrap();
    assert!(msg["error"].as_str().unwrap().contains("image"));

    let missing = http.post(url("/v1/nothing")).header(PROTOCOL_HEADER, "1").send().unwrap();
    assert_eq!(missing.status(), 404);
    assert_eq!(missing.headers()[PROTOCOL_HEADER], PROTOCOL_VERSION);

    let client = HttpBackend::new(ClientConfig::new(server.base_url())).unwrap();
    let bad_op = EditorBackend::apply(&client, &editor_request("paint the sky")).unwrap_err();
    assert!(matches!(bad_op, BackendError::Remote { status: 422, .. }), "{bad_op:?}");
    assert!(!bad_op.is_transient());

    let req = PolicyRequest {
        original_image: ImagePayload::inline(&grid_image("WWW/WWW")),
        current_image: ImagePayload::inline(&grid_image("WWW/WWW")),
        instruction: "make cell (1,1) red".into(),
        history: vec![],
    };
    assert_eq!(client.step(&req).unwrap(), PolicyResponse::edit("set 1 1 R"));
    let underflow = client.step(&req).unwrap_err();
    assert!(matches!(underflow, BackendError::Remote { status: 409, .. }), "{underflow:?}");
}

#[test]
fn missing_version_header_is_rejected() {
    let url = bare_server(Router::new().route(
        EDITOR_PATH,
        post(|| async { r#"{"image":{"media_kind":"symbol_grid","data":"Ug=="},"width":1,"height":1}"# }),
    ));
    let client = HttpBackend::new(ClientConfig::new(url)).unwrap();
    let err = EditorBackend::apply(&client, &editor_request("set 1 1 R")).unwrap_err();
    assert_eq!(err, BackendError::ProtocolVersion { found: None });
}

#[test]
fn slow_and_unreachable_peers_map_to_transient_errors() {
    let url = bare_server(Router::new().route(
        EDITOR_PATH,
        post(|| async {
            tokio::time::sleep(Duration::from_secs(2)).await;
            "late"
        }),
    ));
    let client = HttpBackend::new(ClientConfig::new(url).with_timeout(Duration::from_millis(200))).unwrap();
    let err = EditorBackend::apply(&client, &editor_request("set 1 1 R")).unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
    assert!(err.is_transient());

    let gone = HttpBackend::new(ClientConfig::new("http://127.0.0.1:9")).unwrap();
    let err = EditorBackend::apply(&gone, &editor_request("set 1 1 R")).unwrap_err();
    assert!(matches!(err, BackendError::Connection(_)), "{err:?}");
}

#[test]
fn retries_cover_transient_wire_failures() {
    let task = random_task(3, 4, 4, 2, 0.0);
    let image = Image::from_grid(&task.grid);
    let instruction = ComplexInstruction::new(task.instruction()).unwrap();
    for (retry_limit, expected) in [(2, Termination::Stopped), (0, Termination::BackendError)] {
        let config = ServerConfig {
            policy: Some(Arc::new(OraclePolicy::new())),
            editor: Some(Arc::new(Flaky::new(GridEditor::new(), 2))),
            terminator: None,
            scorer: None,
        };
        let server = serve(config, local()).unwrap();
        let client = Arc::new(HttpBackend::new(ClientConfig::new(server.base_url())).unwrap());
        let backends = Backends::new(client.clone(), client, None);
        let loop_config = LoopConfig::default().with_retry_limit(retry_limit);
        let out = run_episode(EpisodeId::new("flaky"), &image, &instruction, &backends, &loop_config).unwrap();
        assert_eq!(out.trajectory.termination(), Some(expected), "retry_limit {retry_limit}");
        if expected == Termination::Stopped {
            assert_eq!(out.trajectory.edit_steps(), 2);
        } else {
            assert!(out.trajectory.failure().unwrap().contains("503"));
        }
    }
}

#[test]
fn scripted_policy_over_wire_matches_in_process() {
    let script: Vec<String> = ["set 1 1 R", "set 2 2 G", "<Stop>"].map(String::from).to_vec();
    let server = serve(ServerConfig::scripted(script.clone()), local()).unwrap();
    let client = Arc::new(HttpBackend::new(ClientConfig::new(server.base_url())).unwrap());
    let wire = Backends::new(client.clone(), client, None);
    let inproc = Backends::new(Arc::new(ScriptedPolicy::new(script)), Arc::new(GridEditor::new()), None);
    let image = grid_image("WWW/WWW/WWW");
    let instruction = ComplexInstruction::new("make cell (1,1) red, then make cell (2,2) green").unwrap();
    let config = LoopConfig::default();
    let a = run_episode(EpisodeId::new("s"), &image, &instruction, &wire, &config).unwrap();
    let b = run_episode(EpisodeId::new("s"), &image, &instruction, &inproc, &config).unwrap();
    assert_eq!(a.trajectory.instruction_texts(), b.trajectory.instruction_texts());
    assert_eq!(a.trajectory.image_refs(), b.trajectory.image_refs());
    assert_eq!(a.final_image(), b.final_image());
}
