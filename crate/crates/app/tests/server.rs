use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use nalgebra::{Rotation3, Vector3};
use redcyan::server::{router, AppState, ErrorBody, Health, ProcessResponse};
use redcyan_core::imaging::Frame;
use redcyan_core::io::{decode_frame, encode_png};
use redcyan_core::marker::MarkerDictionary;
use redcyan_core::pipeline::{detect_markers, PipelineConfig};
use redcyan_core::pose::Pose;
use redcyan_core::scene::{SceneBundle, SceneFile};
use redcyan_core::synth::{render_synthetic, SynthSpec};
use tower::ServiceExt;

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn app() -> (Router, Arc<AppState>) {
    let bundle = SceneBundle::load(&assets().join("scene.json")).unwrap();
    let state = Arc::new(AppState::new(bundle, PipelineConfig::default()));
    (router(Arc::clone(&state)), state)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

fn post_png(bytes: Vec<u8>) -> Request<Body> {
    Request::post("/v1/process")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(bytes))
        .unwrap()
}

fn error_code(body: &[u8]) -> String {
    serde_json::from_slice::<ErrorBody>(body).unwrap().error.code
}

fn marker_frame(state: &AppState) -> Frame {
    let scene = state.scene();
    let pose = Pose::new(
        *Rotation3::from_euler_angles(0.3, -0.2, 0.1).matrix(),
        Vector3::new(0.02, -0.01, 0.5),
    );
    let spec = SynthSpec::new(scene.camera).with_marker(scene.dictionary.pattern(2).unwrap().clone(), pose);
    render_synthetic(&spec).unwrap().0
}

#[tokio::test]
async fn health_lists_markers() {
    let (app, _) = app();
    let (status, body) = send(&app, Request::get("/v1/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "ok");
    assert!(health.markers.contains(&3));
}

#[tokio::test]
async fn markerless_frame_comes_back_unchanged() {
    let (app, _) = app();
    let frame = Frame::filled(640, 480, [90, 120, 150]).unwrap();
    let (status, body) = send(&app, post_png(encode_png(&frame).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    let resp: ProcessResponse = serde_json::from_slice(&body).unwrap();
    assert!(resp.detections.is_empty());
    assert!(resp.poses.is_empty());
    let out = decode_frame(&BASE64.decode(resp.image_png).unwrap()).unwrap();
    assert_eq!(out, frame);
}

#[tokio::test]
async fn marker_frame_reports_pose_and_timings() {
    let (app, state) = app();
    let frame = marker_frame(&state);
    let (status, body) = send(&app, post_png(encode_png(&frame).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    let resp: ProcessResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.detections.len(), 1);
    assert_eq!(resp.detections[0].id, 2);
    let pose = &resp.poses["2"];
    assert!((pose.translation[2] - 0.5).abs() < 0.01, "{:?}", pose.translation);
    assert!(resp.anaglyph);
    let stages: Vec<_> = resp.timings.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages.first(), Some(&"grayscale"));
    assert_eq!(stages.last(), Some(&"composite"));
    assert!(resp.timings.stages.iter().map(|s| s.ms).sum::<f64>() <= resp.timings.total_ms);
}

#[tokio::test]
async fn multipart_upload() {
    let (app, _) = app();
    let frame = Frame::filled(640, 480, [10, 20, 30]).unwrap();
    let boundary = "XbOuNdArYx";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"frame\"; filename=\"f.png\"\r\nContent-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend(encode_png(&frame).unwrap());
    body.extend(format!("\r\n--{boundary}--\r\n").into_bytes());
    let req = Request::post("/v1/process")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={boundary}"),
        )
        .body(Body::from(body))
        .unwrap();
    let (status, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: ProcessResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((resp.width, resp.height), (640, 480));
}

#[tokio::test]
async fn garbage_is_malformed_image() {
    let (app, _) = app();
    let (status, body) = send(&app, post_png(b"not a png at all".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "malformed_image");
}

#[tokio::test]
async fn wrong_size_is_rejected() {
    let (app, _) = app();
    let frame = Frame::filled(320, 240, [0, 0, 0]).unwrap();
    let (status, body) = send(&app, post_png(encode_png(&frame).unwrap())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "frame_size_mismatch");
}

#[tokio::test]
async fn unknown_marker_is_404() {
    let (app, _) = app();
    for uri in ["/v1/markers/99.png", "/v1/markers/three.png", "/v1/markers/3.jpg"] {
        let (status, body) = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(error_code(&body), "unknown_marker");
    }
}

#[tokio::test]
async fn served_marker_decodes_as_itself() {
    let (app, _) = app();
    let resp = app
        .clone()
        .oneshot(Request::get("/v1/markers/3.png").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let img = decode_frame(&bytes).unwrap();

    // Put it on a larger white page so the quiet zone has room.
    let pad = 40;
    let (w, h) = (img.width() + 2 * pad, img.height() + 2 * pad);
    let mut page = Frame::filled(w, h, [255, 255, 255]).unwrap();
    for y in 0..img.height() {
        for x in 0..img.width() {
            page.set_pixel(x + pad, y + pad, img.pixel(x, y));
        }
    }
    let found = detect_markers(&page, &MarkerDictionary::sample(), &PipelineConfig::default()).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].pattern_id, 3);
    assert_eq!(found[0].rotation_index, 0);
}

#[tokio::test]
async fn dictionary_round_trips() {
    let (app, state) = app();
    let (status, body) = send(&app, Request::get("/v1/dictionary").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let dict = MarkerDictionary::from_json(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(dict, state.scene().dictionary);
}

async fn put_scene(app: &Router, file: &SceneFile) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(Method::PUT)
        .uri("/v1/scene")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(serde_json::to_vec(file).unwrap()))
        .unwrap();
    send(app, req).await
}

#[tokio::test]
async fn zero_separation_matches_disabled() {
    let (app, state) = app();
    let png = encode_png(&marker_frame(&state)).unwrap();

    let mut file = state.scene().file.clone();
    file.anaglyph.separation = 0.0;
    assert_eq!(put_scene(&app, &file).await.0, StatusCode::OK);
    let (_, body) = send(&app, post_png(png.clone())).await;
    let zero: ProcessResponse = serde_json::from_slice(&body).unwrap();

    let (_, body) = send(&app, Request::get("/v1/scene").body(Body::empty()).unwrap()).await;
    assert_eq!(serde_json::from_slice::<SceneFile>(&body).unwrap(), file);

    file.anaglyph.enabled = false;
    assert_eq!(put_scene(&app, &file).await.0, StatusCode::OK);
    let (_, body) = send(&app, post_png(png)).await;
    let disabled: ProcessResponse = serde_json::from_slice(&body).unwrap();

    assert!(!zero.detections.is_empty());
    assert_eq!(zero.image_png, disabled.image_png);
    assert!(!disabled.anaglyph);
}

#[tokio::test]
async fn invalid_scene_keeps_the_old_one() {
    let (app, state) = app();
    let before = state.scene().file.clone();

    let mut bad = before.clone();
    bad.bindings[0].mesh = "builtin:teapot".into();
    let (status, body) = put_scene(&app, &bad).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "invalid_scene");

    let mut negative = before.clone();
    negative.anaglyph.separation = -1.0;
    assert_eq!(put_scene(&app, &negative).await.0, StatusCode::BAD_REQUEST);

    let req = Request::put("/v1/scene").body(Body::from("{")).unwrap();
    let (status, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "invalid_scene");

    assert_eq!(state.scene().file, before);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn scene_swaps_are_atomic() {
    let (app, state) = app();
    let png = encode_png(&marker_frame(&state)).unwrap();
    let stereo_file = state.scene().file.clone();
    let mut flat_file = stereo_file.clone();
    flat_file.anaglyph.enabled = false;

    let mut expected = Vec::new();
    for file in [&flat_file, &stereo_file] {
        put_scene(&app, file).await;
        let (_, body) = send(&app, post_png(png.clone())).await;
        let resp: ProcessResponse = serde_json::from_slice(&body).unwrap();
        expected.push((resp.anaglyph, resp.image_png));
    }
    assert_ne!(expected[0].1, expected[1].1);

    let mut tasks = Vec::new();
    for i in 0..24 {
        let app = app.clone();
        if i % 3 == 0 {
            let file = if i % 2 == 0 { flat_file.clone() } else { stereo_file.clone() };
            tasks.push(tokio::spawn(async move {
                assert_eq!(put_scene(&app, &file).await.0, StatusCode::OK);
                None
            }));
        } else {
            let png = png.clone();
            tasks.push(tokio::spawn(async move {
                let (_, body) = send(&app, post_png(png)).await;
                Some(serde_json::from_slice::<ProcessResponse>(&body).unwrap())
            }));
        }
    }
    for task in tasks {
        if let Some(resp) = task.await.unwrap() {
            // the flag and the pixels must come from the same scene
            assert!(expected.contains(&(resp.anaglyph, resp.image_png)));
        }
    }
}
