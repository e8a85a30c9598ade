//! Wire model client and remote oracle against an in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use zerosense::corpus::LanguageClass;
use zerosense::harness::{ModelClient, TranscribeRequest, WireClient, WireConfig};
use zerosense::synth::english_like_text;
use zerosense::zerotext::{
    audit_vacuum, generate_zero_text, GenSpec, NgramModel, OracleRequest, OracleResponse, ProbabilityOracle,
    RemoteMode, RemoteOracle, Tokenization, ValidVocab,
};
use zerosense::Error;

type Handler = dyn Fn(usize, &str) -> (u16, String) + Send + Sync;

/// Serves one response per connection from `handler(request_index, body)`.
fn serve(handler: Arc<Handler>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let count = AtomicUsize::new(0);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
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
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let (status, reply) = handler(count.fetch_add(1, Ordering::SeqCst), &String::from_utf8_lossy(&body));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

fn reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn client(endpoint: String, retries: u32) -> WireClient {
    WireClient::new(WireConfig {
        endpoint,
        model: "reader".into(),
        retries,
        backoff_ms: 1,
        timeout_secs: 5.0,
        max_tokens: Some(256),
        ..WireConfig::default()
    })
    .unwrap()
}

fn request<'a>(png: &'a [u8]) -> TranscribeRequest<'a> {
    TranscribeRequest {
        page_id: "p1",
        instruction: "read",
        image_png: png,
        ground_truth: "never sent",
    }
}

#[test]
fn wire_client_sends_image_and_reads_reply() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let endpoint = serve(Arc::new(move |_, body: &str| {
        log.lock().unwrap().push(body.to_string());
        (200, reply("hello page"))
    }));
    let out = client(endpoint, 0).transcribe(&request(b"\x89PNG")).unwrap();
    assert_eq!(out, "hello page");

    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body["model"], "reader");
    assert_eq!(body["max_tokens"], 256);
    let content = &body["messages"][0]["content"];
    assert_eq!(content[0]["text"], "read");
    assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
    assert!(!seen.lock().unwrap()[0].contains("never sent"));
}

#[test]
fn wire_client_retries_server_errors() {
    let endpoint = serve(Arc::new(|i, _: &str| match i {
        0 => (503, "{}".into()),
        1 => (429, "{}".into()),
        _ => (200, reply("third time")),
    }));
    assert_eq!(client(endpoint, 3).transcribe(&request(b"x")).unwrap(), "third time");
}

#[test]
fn wire_client_gives_up_after_retries() {
    let endpoint = serve(Arc::new(|_, _: &str| (500, "{}".into())));
    match client(endpoint, 2).transcribe(&request(b"x")) {
        Err(Error::Unreachable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected unreachable, got {other:?}"),
    }
}

#[test]
fn wire_client_does_not_retry_client_errors() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let endpoint = serve(Arc::new(move |_, _: &str| {
        c.fetch_add(1, Ordering::SeqCst);
        (400, r#"{"error": "bad image"}"#.into())
    }));
    let err = client(endpoint, 3).transcribe(&request(b"x")).unwrap_err();
    assert!(err.to_string().contains("400"), "{err}");
    std::thread::sleep(Duration::from_millis(20));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

fn oracle_server(model: Arc<NgramModel>) -> String {
    serve(Arc::new(move |_, body: &str| {
        let req: OracleRequest = serde_json::from_str(body).unwrap();
        match OracleResponse::answer(model.as_ref(), &req) {
            Ok(r) => (200, serde_json::to_string(&r).unwrap()),
            Err(e) => (400, serde_json::json!({"error": e.to_string()}).to_string()),
        }
    }))
}

#[test]
fn remote_oracle_matches_local_model() {
    let model = Arc::new(NgramModel::train(&english_like_text(60_000, 8).unwrap(), 3, Tokenization::Word).unwrap());
    let endpoint = oracle_server(model.clone());
    let remote = RemoteOracle::connect(endpoint, RemoteMode::Full, Duration::from_secs(5), None).unwrap();
    assert_eq!(remote.vocabulary().tokens(), model.vocabulary().tokens());

    let context = model.encode("the first of").unwrap();
    let (local, served) = (model.distribution(&context).unwrap(), remote.distribution(&context).unwrap());
    for (a, b) in local.iter().zip(&served) {
        assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{a} vs {b}");
    }

    let valid = ValidVocab::for_script(model.vocabulary(), LanguageClass::Latin, 0.8).unwrap();
    let spec = GenSpec {
        tau_init: 1e-4,
        ..GenSpec::new(25, 3)
    };
    let here = generate_zero_text(&spec, model.as_ref(), &valid).unwrap();
    let there = generate_zero_text(&spec, &remote, &valid).unwrap();
    assert_eq!(here.tokens, there.tokens);
    let audit = audit_vacuum(&there.tokens, &remote).unwrap();
    assert!(audit.max_posterior < here.log.max_tau());
}

#[test]
fn top_k_oracle_spreads_leftover_mass() {
    let model = Arc::new(NgramModel::train(&english_like_text(30_000, 2).unwrap(), 2, Tokenization::Word).unwrap());
    let endpoint = oracle_server(model.clone());
    let remote = RemoteOracle::connect(endpoint, RemoteMode::TopK(5), Duration::from_secs(5), None).unwrap();
    let context = model.encode("the").unwrap();
    let local = model.distribution(&context).unwrap();
    let served = remote.distribution(&context).unwrap();
    assert!((served.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let mut ranked: Vec<usize> = (0..local.len()).collect();
    ranked.sort_by(|&a, &b| local[b].total_cmp(&local[a]).then(a.cmp(&b)));
    for &i in &ranked[..5] {
        assert!((local[i] - served[i]).abs() < 1e-12);
    }
    let rest = (1.0 - ranked[..5].iter().map(|&i| local[i]).sum::<f64>()) / (local.len() - 5) as f64;
    for &i in &ranked[5..] {
        assert!((served[i] - rest).abs() < 1e-12);
    }
}
