use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use dcg_core::oracle::{
    query_oracle, OracleError, OracleHandle, OracleRegistry, OracleRequest, OracleSession, RawAnswer, RemoteHandle,
    TrainItem,
};
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

/// A mock service. `reply` maps (path, body) to (status, body).
fn serve(reply: impl Fn(&str, &Value) -> (u16, Value) + Send + 'static) -> (String, Arc<AtomicUsize>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut raw = String::new();
            req.as_reader().read_to_string(&mut raw).unwrap();
            let body: Value = if raw.is_empty() { Value::Null } else { serde_json::from_str(&raw).unwrap() };
            let (status, out) = reply(req.url(), &body);
            let header = Header::from_bytes("Content-Type", "application/json").unwrap();
            let resp = Response::from_string(out.to_string()).with_status_code(status).with_header(header);
            let _ = req.respond(resp);
        }
    });
    (url, hits)
}

fn request(n: usize) -> OracleRequest {
    let domain = (0..n).map(|i| format!("v{i}")).collect();
    OracleRequest::new("col_lm", "list the names", Some("SELECT"), domain, "the column should be Answer ").unwrap()
}

#[test]
fn predict_scores_pass_through_softmax() {
    let (url, _) = serve(|path, body| {
        assert_eq!(path, "/predict");
        assert_eq!(body["oracle_id"], "col_lm");
        assert_eq!(body["n"], 3);
        assert!(body["prompt"].as_str().unwrap().starts_with("list the names SELECT, Answer 1 for v0"));
        (200, json!({"scores": [0.0, 0.0, 2.0f64.ln()]}))
    });
    let h = RemoteHandle::new(&url);
    let d = query_oracle(&h, &request(3)).unwrap();
    let p = d.probs();
    assert!((p[0] - 0.25).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
}

#[test]
fn predict_accepts_probabilities_and_rejects_bad_ones() {
    let (url, _) = serve(|_, body| {
        let probs = if body["prompt"].as_str().unwrap().contains("v2") { json!([0.3, 0.3, 0.3]) } else { json!([0.4, 0.6]) };
        (200, json!({ "probs": probs }))
    });
    let h = RemoteHandle::new(&url);
    assert_eq!(query_oracle(&h, &request(2)).unwrap().probs(), &[0.4, 0.6]);
    assert!(matches!(query_oracle(&h, &request(3)), Err(OracleError::Protocol { .. })));
}

#[test]
fn wrong_length_is_rejected() {
    let (url, _) = serve(|_, _| (200, json!({"scores": [1.0, 2.0]})));
    let h = RemoteHandle::new(&url);
    assert!(matches!(query_oracle(&h, &request(3)), Err(OracleError::LengthMismatch { .. })));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = serve(|_, _| (422, json!({"detail": "n > n_max"})));
    let h = RemoteHandle::with_config(&url, Duration::from_secs(5), 3);
    assert!(matches!(h.predict(&request(3)), Err(OracleError::Protocol { .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, hits) = serve(|_, _| (503, json!({})));
    let h = RemoteHandle::with_config(&url, Duration::from_secs(5), 2);
    match h.predict(&request(3)) {
        Err(OracleError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected a transport error, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unreachable_service_is_a_transport_error() {
    let h = RemoteHandle::with_config("http://127.0.0.1:9", Duration::from_secs(2), 0);
    assert!(matches!(h.predict(&request(2)), Err(OracleError::Transport { .. })));
}

#[test]
fn train_and_health() {
    let (url, _) = serve(|path, body| match path {
        "/train" => {
            assert_eq!(body["oracle_id"], "col_lm");
            assert_eq!(body["items"][0]["target_index"], 2);
            (200, json!({"loss": 0.25}))
        }
        "/health" => (200, json!({"status": "ok", "n_max": 9})),
        _ => (404, json!({})),
    });
    let h = RemoteHandle::new(&url);
    let items = [TrainItem { prompt: "p".into(), target_index: 2 }];
    assert_eq!(h.train("col_lm", &items).unwrap(), Some(0.25));
    let health = h.health().unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.n_max, Some(9));
}

#[test]
fn session_queries_the_service_once_per_prompt() {
    let (url, hits) = serve(|_, _| (200, json!({"scores": [0.1, 0.2, 0.3]})));
    let mut registry = OracleRegistry::new();
    registry.bind("col_lm", Arc::new(RemoteHandle::new(&url)));
    let session = OracleSession::new(&registry);
    let a = session.query(&request(3)).unwrap();
    let b = session.query(&request(3)).unwrap();
    assert_eq!(a.probs(), b.probs());
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert!(matches!(
        RemoteHandle::new(&url).predict(&request(3)).unwrap(),
        RawAnswer::Scores(ref s) if s.len() == 3
    ));
}
