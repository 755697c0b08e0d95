mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use morphoforge::llm::*;
use morphoforge::prompts::ChatMessage;
use proptest::prelude::*;

fn msgs(text: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::system("You are terse."), ChatMessage::user(text)]
}

fn sim_client(backend: impl Backend + 'static, rpm: u32, tpm_k: u32) -> (LlmClient, Arc<SimulatedClock>) {
    let clock = Arc::new(SimulatedClock::default());
    let cfg = EndpointConfig::new(Vendor::OpenAi, "gpt-4-0613", rpm, tpm_k);
    (LlmClient::new(cfg, Box::new(backend), clock.clone()).unwrap(), clock)
}

#[test]
fn digest_is_pinned() {
    // sha256 of {"model":"gpt-4-0613","messages":[{"role":"system",...},{"role":"user",...}]}
    // computed outside Rust
    let d = prompt_digest("gpt-4-0613", &msgs("Réponse: \"Cube\"\nok?"));
    assert_eq!(d, "67053aeb760b106e73ca0a56aeae958d355b01f22ca8b4a5b79a2aadaa5d2c86");
}

#[test]
fn canned_map_answers() {
    let d = prompt_digest("gpt-4-0613", &msgs("q"));
    let (c, _) = sim_client(MockBackend::from_map(HashMap::from([(d, "Answer: 'Flat'".into())])), 10, 10);
    assert_eq!(c.complete_messages(msgs("q")).unwrap(), "Answer: 'Flat'");
}

#[test]
fn two_per_minute_delays_third_call_by_window() {
    let (c, clock) = sim_client(MockBackend::new(|_| Ok("ok".into())), 2, 10);
    c.complete_messages(msgs("a")).unwrap();
    clock.advance(Duration::from_secs(5));
    c.complete_messages(msgs("b")).unwrap();
    c.complete_messages(msgs("c")).unwrap();
    // the first slot frees 60 s after it was taken
    assert_eq!(clock.now(), Duration::from_secs(60));
}

#[test]
fn transcript_file_round_trip_and_offline_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let writer = Arc::new(TranscriptWriter::append_to(&path).unwrap());
    let (live, _) = sim_client(MockBackend::hashed(1), 100, 100);
    let live = live.with_transcript(writer);
    let questions = ["one", "two", "three", "two"];
    let answers: Vec<String> = questions.iter().map(|q| live.complete_messages(msgs(q)).unwrap()).collect();
    let transcript = Transcript::load(&path).unwrap();
    assert_eq!(transcript, live.transcript());
    assert_eq!(transcript.entries.len(), 4);

    let (replay, _) = sim_client(ReplayBackend::new(&transcript).unwrap(), 100, 100);
    for (q, a) in questions.iter().zip(&answers) {
        assert_eq!(&replay.complete_messages(msgs(q)).unwrap(), a);
    }
    assert!(matches!(replay.complete_messages(msgs("four")), Err(LlmError::ReplayMiss { .. })));
}

#[test]
fn empty_transcript_misses_everything() {
    let (c, _) = sim_client(ReplayBackend::new(&Transcript::default()).unwrap(), 10, 10);
    for q in ["a", "b"] {
        assert!(matches!(c.complete_messages(msgs(q)), Err(LlmError::ReplayMiss { .. })));
    }
}

#[test]
fn corrupt_transcript_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{not json}\n").unwrap();
    match Transcript::load(&path) {
        Err(LlmError::Transcript(m)) => assert!(m.contains("line 1")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn backoff_doubles_between_attempts() {
    let calls = Arc::new(AtomicU32::new(0));
    let seen = calls.clone();
    let (c, clock) = sim_client(
        MockBackend::new(move |_| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Http { status: 503, body: "busy".into() })
        }),
        100,
        100,
    );
    let err = c.complete_messages(msgs("q")).unwrap_err();
    assert_eq!(err, LlmError::Transient { attempts: 4, last: "HTTP 503: busy".into() });
    assert_eq!(calls.load(Ordering::SeqCst), 4);
    assert_eq!(clock.now(), Duration::from_millis(1000 + 2000 + 4000));
}

#[test]
fn client_error_is_not_retried() {
    let calls = Arc::new(AtomicU32::new(0));
    let seen = calls.clone();
    let (c, _) = sim_client(
        MockBackend::new(move |_| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Http { status: 401, body: "no key".into() })
        }),
        100,
        100,
    );
    assert!(matches!(c.complete_messages(msgs("q")), Err(LlmError::Permanent { status: 401, .. })));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn http_backend_needs_key_in_environment() {
    let mut cfg = EndpointConfig::preset("gpt-4").unwrap();
    cfg.api_key_env = "MORPHOFORGE_TEST_UNSET_KEY".into();
    assert!(matches!(HttpBackend::from_config(&cfg), Err(LlmError::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// No 60 s window ever holds more than the request or token budget,
    /// except a lone request that exceeds the token budget by itself.
    #[test]
    fn sliding_window_never_overfills(
        rpm in 1u32..6,
        tpm in 50u64..400,
        reqs in prop::collection::vec((0u64..30_000, 1u64..200), 1..40),
    ) {
        let clock = SimulatedClock::default();
        let mut limiter = RateLimiter::new(rpm, tpm);
        let mut admitted: Vec<(Duration, u64)> = Vec::new();
        for (gap_ms, tokens) in reqs {
            clock.advance(Duration::from_millis(gap_ms));
            limiter.acquire(&clock, tokens);
            admitted.push((clock.now(), tokens));
        }
        for (i, &(start, _)) in admitted.iter().enumerate() {
            let window: Vec<u64> = admitted[i..]
                .iter()
                .take_while(|(t, _)| *t < start + WINDOW)
                .map(|e| e.1)
                .collect();
            prop_assert!(window.len() <= rpm as usize);
            let used: u64 = window.iter().sum();
            prop_assert!(used <= tpm || window.len() == 1, "{used} tokens in {window:?}");
        }
    }
}
