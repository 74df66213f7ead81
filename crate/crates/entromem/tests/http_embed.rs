//! Wire-protocol tests for the HTTP embedding provider, against a local
//! mock server: request shape, bearer auth, response parsing, error
//! classification, and the on-disk response cache.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use entromem::embedding::{EmbedError, EmbeddingProvider, HttpEmbedder};

const DIM: usize = 4;

#[derive(Default)]
struct Seen {
    requests: AtomicUsize,
    last_body: Mutex<String>,
    last_auth: Mutex<Option<String>>,
    last_path: Mutex<String>,
}

enum Behavior {
    Ok,
    ServerError,
    Unauthorized,
    WrongDim,
}

/// One-thread-per-connection HTTP/1.1 responder, just enough for the
/// blocking client.
fn spawn_server(behavior: Behavior) -> (String, Arc<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().expect("addr");
    let seen = Arc::new(Seen::default());
    let seen_server = Arc::clone(&seen);
    let behavior = Arc::new(behavior);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let seen = Arc::clone(&seen_server);
            let behavior = Arc::clone(&behavior);
            thread::spawn(move || {
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let header_end = loop {
                    match stream.read(&mut chunk) {
                        Ok(0) => return,
                        Ok(n) => buf.extend_from_slice(&chunk[..n]),
                        Err(_) => return,
                    }
                    if let Some(pos) = find_header_end(&buf) {
                        break pos;
                    }
                };
                let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
                let content_length = head
                    .lines()
                    .find_map(|line| {
                        let (name, value) = line.split_once(':')?;
                        name.eq_ignore_ascii_case("content-length")
                            .then(|| value.trim().parse::<usize>().ok())?
                    })
                    .unwrap_or(0);
                let mut body = buf[header_end + 4..].to_vec();
                while body.len() < content_length {
                    match stream.read(&mut chunk) {
                        Ok(0) => break,
                        Ok(n) => body.extend_from_slice(&chunk[..n]),
                        Err(_) => return,
                    }
                }

                seen.requests.fetch_add(1, Ordering::SeqCst);
                *seen.last_body.lock().unwrap() = String::from_utf8_lossy(&body).to_string();
                *seen.last_path.lock().unwrap() = head
                    .lines()
                    .next()
                    .unwrap_or_default()
                    .split_whitespace()
                    .nth(1)
                    .unwrap_or_default()
                    .to_string();
                *seen.last_auth.lock().unwrap() = head.lines().find_map(|line| {
                    let (name, value) = line.split_once(':')?;
                    name.eq_ignore_ascii_case("authorization")
                        .then(|| value.trim().to_string())
                });

                let response = match *behavior {
                    Behavior::ServerError => {
                        "HTTP/1.1 500 Internal Server Error\r\ncontent-length: 0\r\nconnection: close\r\n\r\n".to_string()
                    }
                    Behavior::Unauthorized => {
                        "HTTP/1.1 401 Unauthorized\r\ncontent-length: 0\r\nconnection: close\r\n\r\n".to_string()
                    }
                    Behavior::Ok | Behavior::WrongDim => {
                        let parsed: serde_json::Value =
                            serde_json::from_slice(&body).unwrap_or_default();
                        let inputs = parsed["input"].as_array().cloned().unwrap_or_default();
                        let dim = if matches!(*behavior, Behavior::WrongDim) { DIM + 1 } else { DIM };
                        let data: Vec<serde_json::Value> = inputs
                            .iter()
                            .map(|input| {
                                let text = input.as_str().unwrap_or_default();
                                // Deterministic per-text direction.
                                let mut v = vec![0.25f64; dim];
                                v[text.len() % dim] = 2.0;
                                serde_json::json!({"embedding": v})
                            })
                            .collect();
                        let body = serde_json::json!({ "data": data }).to_string();
                        format!(
                            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                            body.len(),
                            body
                        )
                    }
                };
                let _ = stream.write_all(response.as_bytes());
            });
        }
    });
    (format!("http://{addr}"), seen)
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

#[test]
fn embed_sends_the_documented_request_and_normalizes() {
    let (url, seen) = spawn_server(Behavior::Ok);
    let embedder = HttpEmbedder::new(&url, "test-model", DIM).with_api_key("sk-test");

    let vector = embedder.embed("hello world").expect("embed succeeds");
    assert_eq!(vector.dim(), DIM);
    let norm: f64 = vector.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() <= 1e-9);

    assert_eq!(*seen.last_path.lock().unwrap(), "/v1/embeddings");
    assert_eq!(
        seen.last_auth.lock().unwrap().as_deref(),
        Some("Bearer sk-test")
    );
    let body: serde_json::Value =
        serde_json::from_str(&seen.last_body.lock().unwrap()).expect("json body");
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["input"], serde_json::json!(["hello world"]));
}

#[test]
fn repeated_calls_hit_the_memory_cache() {
    let (url, seen) = spawn_server(Behavior::Ok);
    let embedder = HttpEmbedder::new(&url, "test-model", DIM);
    let first = embedder.embed("same text").unwrap();
    let second = embedder.embed("same text").unwrap();
    assert_eq!(first, second);
    assert_eq!(seen.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn disk_cache_survives_a_new_provider_instance() {
    let (url, seen) = spawn_server(Behavior::Ok);
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("embed.cache");

    let embedder = HttpEmbedder::new(&url, "test-model", DIM)
        .with_cache(&cache)
        .unwrap();
    let first = embedder.embed("persisted text").unwrap();
    assert_eq!(seen.requests.load(Ordering::SeqCst), 1);

    // Cache file format: one {"k": "<hex hash>", "v": [...]} per line.
    let contents = std::fs::read_to_string(&cache).unwrap();
    let line: serde_json::Value = serde_json::from_str(contents.lines().next().unwrap()).unwrap();
    let key = line["k"].as_str().unwrap();
    assert_eq!(key.len(), 64);
    assert!(key.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(line["v"].as_array().unwrap().len(), DIM);

    // A fresh instance loads the cache and never contacts the server.
    let reloaded = HttpEmbedder::new(&url, "test-model", DIM)
        .with_cache(&cache)
        .unwrap();
    let second = reloaded.embed("persisted text").unwrap();
    assert_eq!(first, second);
    assert_eq!(seen.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn batch_requests_only_the_uncached_texts() {
    let (url, seen) = spawn_server(Behavior::Ok);
    let embedder = HttpEmbedder::new(&url, "test-model", DIM);
    embedder.embed("warm").unwrap();
    assert_eq!(seen.requests.load(Ordering::SeqCst), 1);

    let batch = embedder.embed_batch(&["cold one", "warm", "cold two"]).unwrap();
    assert_eq!(batch.len(), 3);
    assert_eq!(seen.requests.load(Ordering::SeqCst), 2);
    let body: serde_json::Value =
        serde_json::from_str(&seen.last_body.lock().unwrap()).unwrap();
    assert_eq!(body["input"], serde_json::json!(["cold one", "cold two"]));
    // Order preserved: the cached item sits in the middle.
    assert_eq!(batch[1], embedder.embed("warm").unwrap());
}

#[test]
fn server_errors_are_retryable_api_errors_are_not() {
    let (url, _) = spawn_server(Behavior::ServerError);
    let embedder = HttpEmbedder::new(&url, "test-model", DIM);
    let err = embedder.embed("text").unwrap_err();
    assert!(matches!(err, EmbedError::Transport(_)));
    assert!(err.is_retryable());

    let (url, _) = spawn_server(Behavior::Unauthorized);
    let embedder = HttpEmbedder::new(&url, "test-model", DIM);
    let err = embedder.embed("text").unwrap_err();
    assert!(matches!(err, EmbedError::Api(_)));
    assert!(!err.is_retryable());
}

#[test]
fn wrong_dimension_is_rejected() {
    let (url, _) = spawn_server(Behavior::WrongDim);
    let embedder = HttpEmbedder::new(&url, "test-model", DIM);
    assert!(matches!(
        embedder.embed("text"),
        Err(EmbedError::DimMismatch { .. })
    ));
}

#[test]
fn unreachable_host_is_a_transport_error() {
    // Bind-then-drop gives an address nothing listens on.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let embedder = HttpEmbedder::new(format!("http://127.0.0.1:{port}"), "m", DIM);
    let err = embedder.embed("text").unwrap_err();
    assert!(err.is_retryable(), "got: {err}");
}
