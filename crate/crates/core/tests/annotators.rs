use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde_json::{json, Value};
use subgoal_critic::annotators::{
    match_canonical, parse_response, AnnotateError, Annotator, AnnotatorBackend, CanonicalLexicon, HttpConfig, HttpLlm,
    MockScript, ParseStatus, PositivePolicy, RecordedResponses, RequestTemplate, ResponseCache, VerdictRecord,
    VerdictWriter,
};
use subgoal_critic::datasets::{collect_balanced, CollectConfig};
use subgoal_critic::keyroom::{SubgoalEvent, Transition};
use subgoal_critic::promptkit::{compose, find_config, PromptText};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/responses")
}

#[test]
fn reference_responses_parse_to_expected_flags() {
    let expected: IndexMap<String, IndexMap<String, bool>> =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("expected.json")).unwrap()).unwrap();
    assert_eq!(expected.len(), 6);
    for (model, flags) in &expected {
        let text = std::fs::read_to_string(fixtures().join(format!("{model}.txt"))).unwrap();
        let (parsed, status) = parse_response(&text);
        assert_eq!(status, ParseStatus::Ok, "{model}");
        assert_eq!(&parsed, flags, "{model}");
        assert_eq!(parsed.keys().collect::<Vec<_>>(), flags.keys().collect::<Vec<_>>(), "{model}: key order");
        // The transition is a plain move, so nothing canonical is confirmed.
        let matched = match_canonical(&parsed, &CanonicalLexicon::default());
        assert!(matched.values().all(|v| !v), "{model}: {matched:?}");
    }
}

#[test]
fn lexicon_on_reported_names() {
    let lex = CanonicalLexicon::default();
    let classify = |n: &str| lex.classify(n).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(classify("Key collection"), ["pick up the key"]);
    assert_eq!(classify("Unlock doors"), ["open the door"]);
    assert_eq!(classify("open_door"), ["open the door"]);
    assert_eq!(classify("Door Opening"), ["open the door"]);
    assert!(classify("find_key").is_empty());
    assert!(classify("Collect useful items").is_empty());
    assert!(classify("Movement").is_empty());
}

fn sample() -> (Vec<Transition>, PromptText) {
    let m = collect_balanced(3, 12, 10_000, &CollectConfig::default()).unwrap();
    let ts: Vec<Transition> = m.transitions().cloned().collect();
    let p = compose(&find_config("cropped-provided").unwrap().spec, &ts[0]).unwrap();
    (ts, p)
}

#[test]
fn oracle_backend_matches_ground_truth() {
    let (ts, _) = sample();
    let annotator = Annotator::new(AnnotatorBackend::Oracle);
    let spec = find_config("gamescreen-discovered").unwrap().spec;
    for t in &ts {
        let v = annotator.annotate(&compose(&spec, t).unwrap(), t).unwrap();
        assert_eq!(v.parse_status, ParseStatus::Ok);
        assert_eq!(v.is_positive(PositivePolicy::LexiconFiltered), t.event != SubgoalEvent::None);
        assert!(v.confirms(t.event, PositivePolicy::LexiconFiltered) || t.event == SubgoalEvent::None);
    }
}

#[test]
fn mock_script_lookup_order() {
    let (ts, p) = sample();
    let mut script = MockScript::constant("{'x': True}");
    script.by_transition.insert(ts[0].id.clone(), "{'key pickup': True}".into());
    let v = Annotator::new(AnnotatorBackend::Mock(Arc::new(script.clone()))).annotate(&p, &ts[0]).unwrap();
    assert!(v.matched_canonical["pick up the key"]);
    script.by_prompt.insert(p.prompt_id(), "no dictionary here".into());
    let v = Annotator::new(AnnotatorBackend::Mock(Arc::new(script))).annotate(&p, &ts[0]).unwrap();
    assert_eq!(v.parse_status, ParseStatus::Unparseable);
    assert!(!v.is_positive(PositivePolicy::AnyTrue));
}

#[test]
fn recorded_backend_replays_and_reports_gaps() {
    let (ts, p) = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gemma.jsonl");
    let line =
        json!({"transition_id": ts[0].id, "config_name": "cropped-provided", "response": "{\"open the door\": True}"});
    std::fs::write(&path, format!("{line}\n")).unwrap();
    let rec = Arc::new(RecordedResponses::load(&path).unwrap());
    let annotator = Annotator::new(AnnotatorBackend::RecordedFile(rec));
    assert_eq!(annotator.backend.label(), "gemma");
    let v = annotator.annotate(&p, &ts[0]).unwrap();
    assert!(v.matched_canonical["open the door"]);
    let p1 = compose(&find_config("cropped-provided").unwrap().spec, &ts[1]).unwrap();
    assert!(matches!(annotator.annotate(&p1, &ts[1]), Err(AnnotateError::MissingRecord { .. })));
}

#[test]
fn responses_are_capped() {
    let (ts, p) = sample();
    let long = format!("{{'pick up the key': True}}{}", "é".repeat(100));
    let mut annotator = Annotator::new(AnnotatorBackend::Mock(Arc::new(MockScript::constant(long))));
    annotator.response_cap = 30;
    let v = annotator.annotate(&p, &ts[0]).unwrap();
    assert!(v.raw.truncated);
    assert!(v.raw.text.len() <= 30);
    assert!(v.subgoal_flags["pick up the key"]);
}

#[test]
fn parallel_annotation_keeps_job_order() {
    let (ts, _) = sample();
    let spec = find_config("cropped-provided").unwrap().spec;
    let jobs: Vec<(PromptText, &Transition)> = ts.iter().map(|t| (compose(&spec, t).unwrap(), t)).collect();
    let annotator = Annotator::new(AnnotatorBackend::Oracle);
    let mut seen = Vec::new();
    annotator
        .annotate_all(&jobs, 4, |i, r| -> Result<(), ()> {
            seen.push((i, r.unwrap().transition_id));
            Ok(())
        })
        .unwrap();
    let want: Vec<(usize, String)> = ts.iter().enumerate().map(|(i, t)| (i, t.id.clone())).collect();
    assert_eq!(seen, want);

    let mut calls = 0;
    let err = annotator.annotate_all(&jobs, 3, |i, _| {
        calls += 1;
        if i == 2 {
            Err("stop")
        } else {
            Ok(())
        }
    });
    assert_eq!(err, Err("stop"));
    assert_eq!(calls, 3);
}

#[test]
fn verdict_file_round_trip() {
    let (ts, p) = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verdicts.jsonl");
    let v = Annotator::new(AnnotatorBackend::Oracle).annotate(&p, &ts[0]).unwrap();
    let rec = VerdictRecord::from_verdict(&v, "cropped-provided");
    VerdictWriter::append(&path).unwrap().write(&rec).unwrap();
    let back = subgoal_critic::annotators::read_verdicts(&path).unwrap();
    assert_eq!(back, vec![rec]);
}

// ---- HTTP ------------------------------------------------------------------

struct Seen {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

/// Serves the scripted `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let count = Arc::new(AtomicUsize::new(0));
    let (seen2, count2) = (Arc::clone(&seen), Arc::clone(&count));
    std::thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                let (k, v) = (k.trim().to_lowercase(), v.trim().to_owned());
                if k == "content-length" {
                    len = v.parse().unwrap();
                }
                headers.push((k, v));
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_owned();
            seen2.lock().unwrap().push(Seen {
                path,
                headers,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            count2.fetch_add(1, Ordering::SeqCst);
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen, count)
}

fn chat(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn fast_config(endpoint: &str) -> HttpConfig {
    let mut cfg = HttpConfig::new(endpoint, "test-model");
    cfg.backoff_base_ms = 1;
    cfg.timeout_secs = 10;
    cfg
}

#[test]
fn http_retries_transient_failures() {
    let (url, seen, count) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, chat("{\"pick up the key\": True, \"open the door\": False}")),
    ]);
    let mut cfg = fast_config(&url);
    cfg.api_key = Some("sk-test".into());
    let text = HttpLlm::new(cfg).complete("PROMPT").unwrap();
    assert!(text.contains("True"));
    assert_eq!(count.load(Ordering::SeqCst), 3);
    let seen = seen.lock().unwrap();
    let last = &seen[2];
    assert_eq!(last.path, "/v1/chat/completions");
    assert_eq!(last.body["model"], "test-model");
    assert_eq!(last.body["temperature"], 0);
    assert_eq!(last.body["messages"][0]["content"], "PROMPT");
    assert!(last.headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer sk-test"));
}

#[test]
fn http_gives_up_after_max_retries() {
    let (url, _, count) = serve(vec![(500, "{}".into()); 3]);
    let mut cfg = fast_config(&url);
    cfg.max_retries = 2;
    let err = HttpLlm::new(cfg).complete("p").unwrap_err();
    assert_eq!(err.attempts, 3);
    assert_eq!(count.load(Ordering::SeqCst), 3);
    assert!(err.message.contains("500"));
}

#[test]
fn http_client_errors_are_fatal() {
    let (url, _, count) = serve(vec![(400, "{\"error\": \"bad\"}".into()), (200, chat("unused"))]);
    let err = HttpLlm::new(fast_config(&url)).complete("p").unwrap_err();
    assert_eq!(err.attempts, 1);
    assert_eq!(count.load(Ordering::SeqCst), 1);
    let (url, _, _) = serve(vec![(200, "{\"other\": 1}".into())]);
    let err = HttpLlm::new(fast_config(&url)).complete("p").unwrap_err();
    assert!(err.message.contains("/choices/0/message/content"));
}

#[test]
fn http_custom_template() {
    let (url, seen, _) = serve(vec![(200, json!({"output": {"text": "{'key pickup': True}"}}).to_string())]);
    let mut cfg = fast_config(&url);
    cfg.template = RequestTemplate {
        body: json!({"inputs": "{{prompt}}", "parameters": {"max_new_tokens": "{{max_tokens}}", "temperature": 0.7}}),
        response_pointer: "/output/text".into(),
        headers: [("X-Client".to_owned(), "sgc".to_owned())].into_iter().collect(),
    };
    cfg.max_tokens = 64;
    assert_eq!(HttpLlm::new(cfg).complete("hello").unwrap(), "{'key pickup': True}");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body["inputs"], "hello");
    assert_eq!(seen[0].body["parameters"]["max_new_tokens"], 64);
    assert_eq!(seen[0].body["temperature"], 0);
    assert!(seen[0].headers.iter().any(|(k, v)| k == "x-client" && v == "sgc"));
}

#[test]
fn http_annotator_uses_cache() {
    let (ts, p) = sample();
    let (url, _, count) = serve(vec![(200, chat("{'open the door': True}"))]);
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let make = || {
        let cache = Arc::new(ResponseCache::open(&cache_path).unwrap());
        Annotator::new(AnnotatorBackend::HttpLlm(Box::new(HttpLlm::new(fast_config(&url))))).with_cache(cache)
    };
    let first = make().annotate(&p, &ts[0]).unwrap();
    let second = make().annotate(&p, &ts[0]).unwrap();
    assert_eq!(count.load(Ordering::SeqCst), 1);
    assert_eq!(first.subgoal_flags, second.subgoal_flags);
    assert_eq!(first.raw.backend, format!("http:test-model@{url}"));
    assert_eq!(make().backend.label(), "test-model");
}

#[test]
fn http_failure_surfaces_as_backend_error() {
    let (ts, p) = sample();
    let (url, _, _) = serve(vec![(401, "{}".into())]);
    let annotator = Annotator::new(AnnotatorBackend::HttpLlm(Box::new(HttpLlm::new(fast_config(&url)))));
    match annotator.annotate(&p, &ts[0]) {
        Err(AnnotateError::Backend { attempts, prompt_id, .. }) => {
            assert_eq!(attempts, 1);
            assert_eq!(prompt_id, p.prompt_id());
        }
        other => panic!("{other:?}"),
    }
}
