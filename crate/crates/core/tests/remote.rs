//! Remote provider clients exercised against a single-shot local HTTP
//! server: wire format, normalization, and transport-error mapping.

use std::io::{Read, Write};
use std::net::TcpListener;

use ariadne_mem::embed::{Embedder, RemoteEmbedder};
use ariadne_mem::error::Error;
use ariadne_mem::provider::ChatClient;
use ariadne_mem::synth::{Generator, GenRequest, RemoteGenerator};

/// Serve exactly one request with the given JSON body, returning the
/// request the server saw.
fn serve_once(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = Vec::new();
        let mut chunk = [0u8; 4096];
        let request = loop {
            let n = stream.read(&mut chunk).unwrap();
            buf.extend_from_slice(&chunk[..n]);
            let text = String::from_utf8_lossy(&buf).to_string();
            if let Some(header_end) = text.find("\r\n\r\n") {
                let content_length = text
                    .lines()
                    .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                    .and_then(|v| v.parse::<usize>().ok())
                    .unwrap_or(0);
                if buf.len() >= header_end + 4 + content_length {
                    break text;
                }
            }
        };
        let response = format!(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            body.len(),
            body
        );
        stream.write_all(response.as_bytes()).unwrap();
        request
    });
    (format!("http://{addr}"), handle)
}

#[test]
fn remote_embedder_round_trip() {
    // Un-normalized 4-dim vector; the client must normalize it.
    let (url, handle) = serve_once(r#"{"vectors": [[3.0, 0.0, 4.0, 0.0]]}"#);
    let embedder = RemoteEmbedder::new(&url, "test-model", 4, None, 2).unwrap();
    let vector = embedder.embed("hello world").unwrap();
    assert_eq!(vector.dimension(), 4);
    assert!((vector.norm() - 1.0).abs() < 1e-9);
    assert!((vector.0[0] - 0.6).abs() < 1e-9);
    assert!((vector.0[2] - 0.8).abs() < 1e-9);
    let request = handle.join().unwrap();
    assert!(request.contains("\"model\":\"test-model\""));
    assert!(request.contains("\"input\":[\"hello world\"]"));
}

#[test]
fn remote_embedder_dimension_mismatch() {
    let (url, handle) = serve_once(r#"{"vectors": [[1.0, 0.0]]}"#);
    let embedder = RemoteEmbedder::new(&url, "test-model", 4, None, 2).unwrap();
    let err = embedder.embed("hello").unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 4, got: 2 }));
    handle.join().unwrap();
}

#[test]
fn remote_embedder_transport_error() {
    // Nothing listens on this port once the listener is dropped.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let embedder = RemoteEmbedder::new(&format!("http://{addr}"), "m", 4, None, 2).unwrap();
    assert!(matches!(embedder.embed("hello"), Err(Error::Transport(_))));
}

#[test]
fn remote_generator_chat_round_trip() {
    let (url, handle) = serve_once(
        r#"{"choices": [{"message": {"content": "{\"answer\": \"Summer Sounds\"}"}}]}"#,
    );
    let client = ChatClient::new(&url, "chat-model", Some("secret-key".into()), 2).unwrap();
    let generator = RemoteGenerator::new(client);
    let fact_lines = vec!["[F1] 2023-08-28: Melanie saw a band".to_string()];
    let request = GenRequest {
        query: "What band did Melanie see?",
        rules: "Rules:\n- Answer briefly.\n",
        context_body: "Facts:\n[F1] 2023-08-28: Melanie saw a band\n",
        fact_lines: &fact_lines,
        path_lines: &[],
        top_statement: None,
    };
    let raw = generator.generate(&request).unwrap();
    assert_eq!(raw, r#"{"answer": "Summer Sounds"}"#);
    let seen = handle.join().unwrap();
    assert!(seen.contains("authorization: Bearer secret-key") || seen.contains("Authorization: Bearer secret-key"));
    assert!(seen.contains("\"role\":\"system\""));
    assert!(seen.contains("Melanie"));
}
