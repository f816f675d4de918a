//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

pub fn toy_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy_corpus.jsonl")
}

/// A one-thread HTTP/1.1 server answering every request with
/// `handler(path, body)`. Returns the base URL and a request counter.
pub fn serve<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(&str, &Value) -> (u16, Value) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_owned();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0u8; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            counter.fetch_add(1, Ordering::SeqCst);
            let parsed: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, reply) = handler(&path, &parsed);
            let text = reply.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.flush();
        }
    });
    (format!("http://{addr}/v1"), hits)
}

/// Bag-of-words embedding: lowercase alphanumeric words hashed into 64
/// buckets.
pub fn bag_of_words(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 64];
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| w.len() > 2) {
        let h = msrag::hash::fnv1a64(word.to_lowercase().as_bytes());
        v[(h % 64) as usize] += 1.0;
    }
    v
}

/// Serves `/embeddings` with [`bag_of_words`].
pub fn embedding_server() -> (String, Arc<AtomicUsize>) {
    serve(|path, body| {
        if !path.ends_with("/embeddings") {
            return (404, json!({"error": "not found"}));
        }
        let input = body.get("input").and_then(Value::as_str).unwrap_or("");
        (200, json!({"data": [{"embedding": bag_of_words(input)}]}))
    })
}
