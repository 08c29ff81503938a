//! The HTTP client against a sidecar speaking the `/v1` protocol.
//!
//! With an endpoint argument it talks to a running sidecar. Without one it
//! starts a throwaway in-process server that wraps the stub backend and
//! answers the first score request with 503 to show the retry.
//!
//!     cargo run --example sidecar_client -- http://127.0.0.1:8000

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use memprobe::gateway::{confidences_for, HttpBackend, RetryPolicy, ScoreBackend, ScoreRequest, StubBackend};
use memprobe::names::PersonName;

fn serve_stub() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let stub = StubBackend::new(1).with_shift(1.5, ["Ada Lovelace"]);
    let scores = AtomicUsize::new(0);
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            if reader.read_line(&mut line).is_err() {
                continue;
            }
            let mut length = 0;
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let (status, payload) = if line.starts_with("GET /v1/meta") {
                (200, serde_json::to_string(&stub.meta().expect("stub meta")).expect("json"))
            } else if scores.fetch_add(1, Ordering::SeqCst) == 0 {
                (503, r#"{"error":{"code":"model_not_loaded","message":"warming up"}}"#.to_owned())
            } else {
                let request: ScoreRequest = serde_json::from_slice(&body).expect("request json");
                (200, serde_json::to_string(&stub.score(&request).expect("stub score")).expect("json"))
            };
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    Ok(format!("http://{addr}"))
}

fn main() -> memprobe::Result<()> {
    let endpoint = match std::env::args().nth(1) {
        Some(url) => url,
        None => serve_stub()?,
    };
    let backend = HttpBackend::new(&endpoint)?;
    println!("{endpoint}: {:?}", backend.meta()?);

    let names: Vec<PersonName> = ["Ada Lovelace", "Grace Hopper"].iter().filter_map(|n| PersonName::parse(n)).collect();
    let refs: Vec<&PersonName> = names.iter().collect();
    let retry = RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(50),
        max_delay: Duration::from_secs(1),
    };
    let conf = confidences_for(&backend, "My name is MASK.", &refs, &retry)?;
    for (n, c) in names.iter().zip(conf) {
        println!("{:<14} {c:.4}", n.as_str());
    }
    Ok(())
}
