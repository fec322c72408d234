use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use ureq::Agent;
use vqakit_core::answerability::LabeledPair;
use vqakit_core::review::ReviewVerdict;
use vqakit_core::{jsonl, Letter, QaPair};
use vqakit_review::{AppState, ServiceConfig};

struct Server {
    base: String,
    clock: Arc<AtomicU64>,
    agent: Agent,
    _dir: tempfile::TempDir,
    log: std::path::PathBuf,
    ids: Vec<String>,
}

fn candidates(n: usize) -> Vec<QaPair> {
    (0..n)
        .map(|i| {
            QaPair::new(
                format!("rec{i:03}"),
                1,
                format!("What is shown in image {i}?"),
                ["Liver".into(), "Kidney".into(), "Heart".into(), "Brain".into()],
                Letter::B,
            )
            .unwrap()
        })
        .collect()
}

fn config(dir: &Path, n: usize) -> ServiceConfig {
    jsonl::write(&dir.join("candidates.jsonl"), &candidates(n)).unwrap();
    std::fs::create_dir_all(dir.join("media/images")).unwrap();
    std::fs::write(dir.join("media/images/rec000.jpg"), b"\xff\xd8jpeg").unwrap();
    std::fs::write(dir.join("secret.txt"), b"secret").unwrap();
    ServiceConfig {
        candidates: dir.join("candidates.jsonl"),
        corpus: None,
        log: dir.join("reviews.jsonl"),
        media_dir: dir.join("media"),
        ui_dir: None,
        lease_ms: 1_000,
    }
}

fn start(dir: tempfile::TempDir, config: ServiceConfig) -> Server {
    let clock = Arc::new(AtomicU64::new(10_000));
    let c = clock.clone();
    let state = AppState::load(&config, Arc::new(move || c.load(Ordering::SeqCst))).unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            vqakit_review::serve(listener, state).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
    Server {
        base: format!("http://{addr}"),
        clock,
        agent,
        log: config.log.clone(),
        ids: jsonl::read::<QaPair>(&config.candidates).unwrap().into_iter().map(|p| p.pair_id).collect(),
        _dir: dir,
    }
}

fn server(n: usize) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), n);
    start(dir, cfg)
}

impl Server {
    fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_vec().unwrap())
    }

    fn get(&self, path: &str) -> (u16, String) {
        let (s, b) = self.get_bytes(path);
        (s, String::from_utf8(b).unwrap())
    }

    fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    fn get_json(&self, path: &str) -> (u16, Value) {
        let (s, body) = self.get(path);
        (s, serde_json::from_str(&body).unwrap())
    }

    fn post(&self, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(&format!("{}/api/verdicts", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn next(&self, annotator: &str) -> Value {
        let (s, v) = self.get_json(&format!("/api/tasks/next?annotator={annotator}"));
        assert_eq!(s, 200);
        v["task"].clone()
    }
}

fn verdict(pair_id: &str, annotator: &str, ok: bool) -> String {
    json!({
        "pair_id": pair_id,
        "annotator": annotator,
        "criteria": {"question_image_answerable": ok, "distractors_adequate": true, "image_quality_ok": true},
    })
    .to_string()
}

#[test]
fn lease_submit_and_progress() {
    let s = server(3);
    let t = s.next("ann");
    assert_eq!(t["pair_id"], s.id(0));
    assert_eq!(t["image_url"], "/media/rec000");
    assert_eq!(t["answer_letter"], "B");
    assert_eq!(s.next("ann")["pair_id"], s.id(0), "held lease is returned again");
    assert_eq!(s.next("other")["pair_id"], s.id(1));

    let (status, body) = s.post(&verdict(s.id(0), "ann", true));
    assert_eq!(status, 201, "{body}");
    assert_eq!(body["verdict"]["accept"], true);
    assert_eq!(body["progress"]["resolved"], 1);

    let (_, p) = s.get_json("/api/progress");
    assert_eq!(p, json!({"total": 3, "resolved": 1, "accepted": 1, "retention_rate": 1.0}));
    assert_eq!(s.next("ann")["pair_id"], s.id(2));
}

#[test]
fn expired_leases_are_reissued() {
    let s = server(1);
    assert_eq!(s.next("a")["pair_id"], s.id(0));
    assert!(s.next("b").is_null());
    s.clock.fetch_add(1_001, Ordering::SeqCst);
    assert_eq!(s.next("b")["pair_id"], s.id(0));
}

#[test]
fn bad_requests() {
    let s = server(2);
    let (status, body) = s.post("{not json");
    assert_eq!(status, 400);
    assert_eq!(body["code"], "bad_request");
    let (status, body) = s.post(&verdict("nope-q1", "ann", true));
    assert_eq!(status, 404);
    assert_eq!(body["code"], "unknown_pair");
    let (status, body) = s.post(&verdict(s.id(0), " ", true));
    assert_eq!(status, 400, "{body}");
    let (status, _) = s.get("/api/tasks/next");
    assert_eq!(status, 400);
    // Nothing invalid reached the log.
    assert_eq!(std::fs::read_to_string(&s.log).unwrap(), "");
}

#[test]
fn claimed_accept_is_recomputed() {
    let s = server(1);
    let mut body: Value = serde_json::from_str(&verdict(s.id(0), "ann", false)).unwrap();
    body["accept"] = json!(true);
    let (status, v) = s.post(&body.to_string());
    assert_eq!(status, 201);
    assert_eq!(v["verdict"]["accept"], false);
}

#[test]
fn log_is_replayed_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 3);
    let path = dir.path().to_path_buf();
    let s = start(dir, cfg.clone());
    s.post(&verdict(s.id(0), "a", true));
    s.post(&verdict(s.id(1), "a", false));
    let logged: Vec<ReviewVerdict> = jsonl::read(&path.join("reviews.jsonl")).unwrap();
    assert_eq!(logged.len(), 2);

    // A second service over the same files sees the same state.
    let state = AppState::load(&cfg, vqakit_review::system_clock()).unwrap();
    drop(state);
    let (_, labels) = s.get("/api/export/labels");
    let mut expected = vec![(s.id(0).to_string(), 1u8), (s.id(1).to_string(), 0)];
    expected.sort();
    let got: Vec<(String, u8)> = labels
        .lines()
        .map(|l| serde_json::from_str::<LabeledPair>(l).unwrap())
        .map(|l| (l.pair_id, l.label))
        .collect();
    assert_eq!(got, expected);
    let dir2 = tempfile::tempdir().unwrap();
    let s2 = start(dir2, cfg);
    let (_, p) = s2.get_json("/api/progress");
    assert_eq!(p["resolved"], 2);
    assert_eq!(p["accepted"], 1);
    assert_eq!(s2.next("b")["pair_id"], s.id(2));
}

#[test]
fn media_is_served_without_traversal() {
    let s = server(1);
    let (status, body) = s.get_bytes("/media/images/rec000.jpg");
    assert_eq!(status, 200);
    assert!(body.ends_with(b"jpeg"));
    assert_eq!(s.get("/media/../secret.txt").0, 404);
    assert_eq!(s.get("/media/%2e%2e/secret.txt").0, 404);
    assert_eq!(s.get("/media/images/missing.jpg").0, 404);
    assert_eq!(s.get("/").0, 404);
}

#[test]
fn concurrent_annotators_get_distinct_tasks() {
    let s = Arc::new(server(40));
    let handles: Vec<_> = (0..8)
        .map(|k| {
            let s = s.clone();
            std::thread::spawn(move || {
                let name = format!("ann{k}");
                let mut seen = Vec::new();
                for _ in 0..5 {
                    let t = s.next(&name);
                    let id = t["pair_id"].as_str().unwrap().to_string();
                    let (status, _) = s.post(&verdict(&id, &name, k % 2 == 0));
                    assert_eq!(status, 201);
                    seen.push(id);
                }
                seen
            })
        })
        .collect();
    let all: Vec<String> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let distinct: BTreeSet<_> = all.iter().collect();
    assert_eq!(distinct.len(), 40, "every pair reviewed exactly once");
    assert!(s.next("late").is_null());
    let (_, p) = s.get_json("/api/progress");
    assert_eq!(p["resolved"], 40);
    assert_eq!(p["accepted"], 20);
}
