use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use lidar_pseudolabel::classify::{
    build_prompts, decode_view, default_category_table, ClassifierBackend, PromptSet, RemoteBackend, RemoteParams,
    DEFAULT_TEMPLATE,
};
use lidar_pseudolabel::project::DepthMap;
use lidar_pseudolabel::Error;
use serde_json::{json, Value};

/// A canned HTTP response: status code and body.
type Reply = (u16, String);

/// Serves one reply per request, in order, and records each request body.
struct FakeSidecar {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
}

impl FakeSidecar {
    fn start(replies: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&bodies);
        thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream);
                let mut length = 0;
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                assert!(request_line.starts_with("POST /v1/classify "), "{request_line}");
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line.trim().is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                seen.lock().unwrap().push(serde_json::from_slice(&buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        FakeSidecar { url, bodies }
    }

    fn requests(&self) -> usize {
        self.bodies.lock().unwrap().len()
    }
}

fn backend(url: &str, retries: usize) -> RemoteBackend {
    RemoteBackend::new(&RemoteParams {
        url: url.to_string(),
        timeout_s: 5.0,
        retries,
    })
    .unwrap()
}

fn prompts() -> PromptSet {
    build_prompts(&default_category_table(), DEFAULT_TEMPLATE).unwrap()
}

fn maps(n: usize) -> Vec<DepthMap> {
    (0..n)
        .map(|k| {
            let mut m = DepthMap::zeros(4, 3);
            m.values[k] = 0.25 * (k + 1) as f32;
            m
        })
        .collect()
}

/// A valid score table: view `k` puts most of its mass on prompt `k`.
fn scores(views: usize, prompts: usize) -> String {
    let rows: Vec<Vec<f64>> = (0..views)
        .map(|k| {
            let mut row = vec![0.2 / (prompts - 1) as f64; prompts];
            row[k] = 0.8;
            row
        })
        .collect();
    json!({ "scores": rows }).to_string()
}

#[test]
fn request_carries_views_and_prompts() {
    let p = prompts();
    let server = FakeSidecar::start(vec![(200, scores(3, p.len()))]);
    let views = maps(3);
    let out = backend(&server.url, 0).classify(&views, &p).unwrap();

    assert_eq!(out.len(), 3);
    for (k, s) in out.iter().enumerate() {
        assert_eq!(s.view_index, k);
        assert_eq!(s.argmax(), k);
    }
    let body = server.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["image_size"], json!([3, 4]));
    assert_eq!(body["prompts"].as_array().unwrap().len(), p.len());
    assert_eq!(body["prompts"][0], json!(p.prompts[0]));
    let sent: Vec<DepthMap> = body["views"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| decode_view(v.as_str().unwrap(), 3, 4).unwrap())
        .collect();
    assert_eq!(sent, views);
}

#[test]
fn transient_failures_are_retried() {
    let p = prompts();
    let replies = vec![(503, "busy".into()), (500, "oops".into()), (200, scores(2, p.len()))];
    let server = FakeSidecar::start(replies.clone());
    assert_eq!(backend(&server.url, 2).classify(&maps(2), &p).unwrap().len(), 2);
    assert_eq!(server.requests(), 3);

    let server = FakeSidecar::start(replies);
    let err = backend(&server.url, 1).classify(&maps(2), &p).unwrap_err();
    assert_eq!(server.requests(), 2);
    match err {
        Error::Backend { views, msg } => {
            assert_eq!(views, vec![0, 1]);
            assert!(msg.contains("500"), "{msg}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn malformed_responses_are_backend_errors() {
    let p = prompts();
    let n = p.len();
    let mut bad_sum = vec![vec![0.0; n]];
    bad_sum[0][0] = 0.5;
    let mut negative = vec![vec![0.0; n]];
    negative[0][0] = 1.5;
    negative[0][1] = -0.5;
    let cases = [
        "not json".to_string(),
        json!({ "probabilities": [] }).to_string(),
        scores(2, n),
        json!({ "scores": [vec![1.0 / (n - 1) as f64; n - 1]] }).to_string(),
        json!({ "scores": bad_sum }).to_string(),
        json!({ "scores": negative }).to_string(),
    ];
    for body in cases {
        let server = FakeSidecar::start(vec![(200, body.clone())]);
        let err = backend(&server.url, 0).classify(&maps(1), &p).unwrap_err();
        assert!(matches!(err, Error::Backend { ref views, .. } if views == &[0]), "{body}: {err}");
    }
}

#[test]
fn unreachable_sidecar_is_a_backend_error() {
    // bind then drop so the port is very likely closed
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend(&format!("http://127.0.0.1:{port}"), 1).classify(&maps(2), &prompts()).unwrap_err();
    assert!(matches!(err, Error::Backend { .. }), "{err}");
    assert!(err.to_string().contains("unreachable"), "{err}");
}

#[test]
fn empty_batch_makes_no_request() {
    let server = FakeSidecar::start(Vec::new());
    assert!(backend(&server.url, 0).classify(&[], &prompts()).unwrap().is_empty());
    assert_eq!(server.requests(), 0);
}

#[test]
fn invalid_parameters_are_rejected() {
    let p = |url: &str, timeout_s| RemoteParams { url: url.into(), timeout_s, retries: 0 };
    assert!(RemoteBackend::new(&p("ftp://host", 1.0)).is_err());
    assert!(RemoteBackend::new(&p("http://host", 0.0)).is_err());
    assert!(RemoteBackend::new(&p("http://host", f64::NAN)).is_err());
    assert_eq!(RemoteBackend::new(&p("http://host/", 1.0)).unwrap().endpoint(), "http://host/v1/classify");
}
