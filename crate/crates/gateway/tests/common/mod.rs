#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use aw_core::compose::Condition;
use aw_core::eval::{Label, StageOneCoding};
use aw_core::workflow::{CreateProject, Engine};
use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn aw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aw"))
        .args(args)
        .env("AW_DATA_DIR", dir)
        .env_remove("AW_PORT")
        .output()
        .expect("spawn aw")
}

pub fn aw_ok(dir: &Path, args: &[&str]) -> String {
    let out = aw(dir, args);
    assert!(
        out.status.success(),
        "aw {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn aw_json(dir: &Path, args: &[&str]) -> Value {
    serde_json::from_str(&aw_ok(dir, args)).unwrap()
}

/// `aw serve` on an ephemeral port, killed on drop.
pub struct Server {
    child: Option<Child>,
    pub base: String,
}

impl Server {
    pub fn start(dir: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_aw"))
            .args(["serve", "--port", "0", "--data-dir"])
            .arg(dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn aw serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Server {
            child: Some(child),
            base,
        }
    }

    pub fn client(&self) -> Client {
        Client {
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .unwrap(),
            base: self.base.clone(),
        }
    }

    /// SIGTERM, then wait for a clean exit.
    pub fn stop(mut self) {
        let mut child = self.child.take().unwrap();
        let _ = Command::new("kill").arg("-TERM").arg(child.id().to_string()).status();
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = child.try_wait().unwrap() {
                assert!(status.success(), "server exited with {status}");
                return;
            }
            if Instant::now() > deadline {
                let _ = child.kill();
                panic!("server ignored SIGTERM");
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

#[derive(Clone)]
pub struct Client {
    http: reqwest::blocking::Client,
    pub base: String,
}

pub struct Reply {
    pub status: u16,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or("").to_owned()
    }
}

impl Client {
    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Reply {
        let resp = req.send().expect("request");
        let status = resp.status().as_u16();
        Reply {
            status,
            text: resp.text().unwrap(),
        }
    }

    pub fn get(&self, path: &str) -> Reply {
        self.send(self.http.get(format!("{}{path}", self.base)))
    }

    pub fn post(&self, path: &str, body: Value) -> Reply {
        self.send(self.http.post(format!("{}{path}", self.base)).json(&body))
    }

    pub fn post_as(&self, path: &str, role: &str, identity: &str, body: Value) -> Reply {
        self.send(
            self.http
                .post(format!("{}{path}", self.base))
                .header("X-AW-Role", role)
                .header("X-AW-Identity", identity)
                .json(&body),
        )
    }

    pub fn post_raw(&self, path: &str, body: &'static str) -> Reply {
        self.send(
            self.http
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .body(body),
        )
    }

    pub fn event_count(&self, project: &str) -> usize {
        self.get(&format!("/projects/{project}/events")).json().as_array().unwrap().len()
    }
}

/// One step of the scripted end-to-end workflow.
#[derive(Debug, Clone)]
pub enum Step {
    Create,
    Submit(&'static str, &'static str, &'static str),
    Close,
    Code(StageOneCoding),
    Toggle(&'static str),
    Commit,
    Compose(Condition),
    Assign(String, Condition),
    Restart,
}

pub const PROJECT: &str = "rt";
pub const BATCH: usize = 10;

fn coding(id: &str, correct: bool, group: Option<&str>, useful: bool) -> Step {
    Step::Code(StageOneCoding::new(id, correct, group.map(str::to_owned), useful).unwrap())
}

pub fn create_body() -> CreateProject {
    CreateProject {
        project_id: Some(PROJECT.into()),
        manifest_ref: "dog".into(),
        intent_id: "1b".into(),
        experiment_group: None,
        seed_example: aw_core::workflow::SeedExample {
            image_uri: "dog_05".into(),
            concept_tag: "dog".into(),
        },
        collaboration_mode: aw_core::workflow::CollaborationMode::Feed,
    }
}

/// A deterministic worker: right on unambiguous images, biased towards
/// No on ambiguous ones, with a per-worker twist.
fn answer(worker: usize, image: &str) -> Label {
    let positive = ["dog_", "small_breed_", "similar_animal_"]
        .iter()
        .any(|p| image.starts_with(p));
    let ambiguous = !["dog_0", "other_animal_", "plane_"].iter().any(|p| image.starts_with(p));
    let twist = (image.bytes().map(u64::from).sum::<u64>() + worker as u64).is_multiple_of(3);
    let label = if ambiguous { Label::No } else { Label::from_bool(positive) };
    if twist {
        label.flipped()
    } else {
        label
    }
}

/// The full script, with restarts after coding and in the middle of labeling.
/// Each assignment is followed by labels for its whole batch.
pub fn script() -> Vec<Step> {
    let mut s = vec![
        Step::Create,
        Step::Submit("w1", "cartoon_05", "cartoon dog"),
        Step::Submit("w2", "small_breed_04", "puppy"),
        Step::Submit("w3", "misc_05", "dog bowl"),
        Step::Submit("w4", "other_animal_03", "wolf"),
        Step::Submit("w5", "cartoon_05", "Cartoon Dog"),
        Step::Close,
        coding("s2", true, Some("g1"), true),
        coding("s3", true, Some("g2"), true),
        coding("s4", false, None, false),
        coding("s5", true, Some("g3"), false),
        coding("s6", true, Some("g1"), false),
        Step::Restart,
        Step::Toggle("s2"),
        Step::Toggle("s3"),
        Step::Toggle("s5"),
        Step::Toggle("s5"),
        Step::Toggle("seed"),
        Step::Commit,
    ];
    s.extend(Condition::ALL.map(Step::Compose));
    for (ci, c) in Condition::ALL.into_iter().enumerate() {
        if ci == 3 {
            s.push(Step::Restart);
        }
        for w in 0..3 {
            s.push(Step::Assign(format!("lw{ci}{w}"), c));
        }
    }
    s
}

/// Labels every image of `batch` for worker number `n`.
pub fn label_steps(worker: &str, batch: &[String]) -> Vec<(String, Label)> {
    let n: usize = worker.trim_start_matches("lw").parse().unwrap();
    batch.iter().map(|i| (i.clone(), answer(n, i))).collect()
}

fn condition_str(c: Condition) -> &'static str {
    c.as_str()
}

pub struct HttpOutcome {
    pub report_before_restart: String,
    pub report_after_restart: String,
    pub csv: String,
    pub final_stage: String,
    pub restarts: usize,
}

fn expect(reply: Reply, status: u16, what: &str) -> Result<Value, String> {
    if reply.status != status {
        return Err(format!("{what}: expected {status}, got {} {}", reply.status, reply.text));
    }
    Ok(reply.json())
}

/// Drives the script over HTTP against a server on `dir`, restarting the
/// process where the script says so.
pub fn run_http(dir: &Path) -> Result<HttpOutcome, String> {
    let mut server = Server::start(dir);
    let mut c = server.client();
    let mut restarts = 0;
    let p = PROJECT;
    for step in script() {
        match step {
            Step::Create => {
                expect(c.post("/projects", serde_json::to_value(create_body()).unwrap()), 201, "create")?;
            }
            Step::Submit(w, uri, tag) => {
                expect(
                    c.post_as(
                        &format!("/projects/{p}/submissions"),
                        "worker",
                        w,
                        json!({ "imageUri": uri, "conceptTag": tag }),
                    ),
                    201,
                    "submit",
                )?;
            }
            Step::Close => {
                expect(c.post(&format!("/projects/{p}/stage"), json!({ "action": "close" })), 200, "close")?;
            }
            Step::Code(coding) => {
                expect(
                    c.post(&format!("/projects/{p}/codings"), serde_json::to_value(coding).unwrap()),
                    200,
                    "code",
                )?;
            }
            Step::Toggle(t) => {
                expect(
                    c.post(&format!("/projects/{p}/resolution/toggle"), json!({ "targetId": t })),
                    200,
                    "toggle",
                )?;
            }
            Step::Commit => {
                expect(c.post(&format!("/projects/{p}/resolution/commit"), json!({})), 200, "commit")?;
            }
            Step::Compose(cond) => {
                expect(
                    c.post(
                        &format!("/projects/{p}/bundles"),
                        json!({ "condition": condition_str(cond), "rngSeed": 3 }),
                    ),
                    200,
                    "compose",
                )?;
            }
            Step::Assign(w, cond) => {
                let a = expect(
                    c.post_as(
                        &format!("/projects/{p}/assignments"),
                        "worker",
                        &w,
                        json!({ "condition": condition_str(cond), "batchSize": BATCH }),
                    ),
                    200,
                    "assign",
                )?;
                let id = a["id"].as_str().unwrap().to_owned();
                let batch: Vec<String> = serde_json::from_value(a["batch"].clone()).unwrap();
                for (image, label) in label_steps(&w, &batch) {
                    expect(
                        c.post_as(
                            &format!("/assignments/{id}/labels"),
                            "worker",
                            &w,
                            json!({ "imageId": image, "label": label }),
                        ),
                        201,
                        "label",
                    )?;
                }
            }
            Step::Restart => {
                server.stop();
                server = Server::start(dir);
                c = server.client();
                restarts += 1;
            }
        }
    }
    let report_before_restart = c.get(&format!("/projects/{p}/report")).text;
    let csv = c.get(&format!("/projects/{p}/report?format=csv")).text;
    server.stop();
    server = Server::start(dir);
    c = server.client();
    restarts += 1;
    let report_after_restart = c.get(&format!("/projects/{p}/report")).text;
    let advanced = expect(
        c.post(&format!("/projects/{p}/stage"), json!({ "action": "advance", "threshold": 0.5 })),
        200,
        "advance",
    )?;
    server.stop();
    Ok(HttpOutcome {
        report_before_restart,
        report_after_restart,
        csv,
        final_stage: advanced["stage"].as_str().unwrap_or("").to_owned(),
        restarts,
    })
}

/// The same script against an in-process engine with no restarts.
pub fn run_reference() -> Result<String, String> {
    let e = Engine::in_memory();
    let p = PROJECT;
    let err = |e: aw_core::workflow::EngineError| e.to_string();
    for step in script() {
        match step {
            Step::Create => {
                e.create_project(create_body()).map_err(err)?;
            }
            Step::Submit(w, uri, tag) => {
                e.submit_ambiguous_example(p, w, uri, tag).map_err(err)?;
            }
            Step::Close => {
                e.close_find_stage(p).map_err(err)?;
            }
            Step::Code(coding) => {
                e.code_submission(p, coding).map_err(err)?;
            }
            Step::Toggle(t) => {
                e.toggle_example(p, t).map_err(err)?;
            }
            Step::Commit => {
                e.commit_resolution(p).map_err(err)?;
            }
            Step::Compose(cond) => {
                e.compose_bundle(p, cond, None, 3).map_err(err)?;
            }
            Step::Assign(w, cond) => {
                let a = e.request_assignment(p, &w, cond, BATCH, None).map_err(err)?;
                for (image, label) in label_steps(&w, &a.batch) {
                    e.submit_label(&a.id, &image, label).map_err(err)?;
                }
            }
            Step::Restart => {}
        }
    }
    let report = e.report(p).map_err(err)?;
    serde_json::to_string_pretty(&report).map_err(|e| e.to_string())
}

/// Fires `n` simultaneous assignment requests for one worker; returns the
/// status codes and error codes seen.
pub fn race_assignments(c: &Client, project: &str, worker: &str, n: usize) -> Vec<(u16, String)> {
    let barrier = std::sync::Arc::new(std::sync::Barrier::new(n));
    let handles: Vec<_> = (0..n)
        .map(|i| {
            let c = c.clone();
            let barrier = barrier.clone();
            let project = project.to_owned();
            let worker = worker.to_owned();
            std::thread::spawn(move || {
                let cond = Condition::ALL[i % 5].as_str();
                barrier.wait();
                let r = c.post_as(
                    &format!("/projects/{project}/assignments"),
                    "worker",
                    &worker,
                    json!({ "condition": cond, "batchSize": 4, "rngSeed": i }),
                );
                let code = if r.status == 200 { String::new() } else { r.code() };
                (r.status, code)
            })
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

pub fn create(c: &Client, id: &str, group: Option<&str>) {
    let mut body = json!({
        "projectId": id,
        "intentId": "1b",
        "seedExample": { "imageUri": "dog_05", "conceptTag": "dog" },
    });
    if let Some(g) = group {
        body["experimentGroup"] = json!(g);
    }
    let r = c.post("/projects", body);
    assert_eq!(r.status, 201, "{}", r.text);
}

/// Drives `id` from FIND to LABEL with one resolved example.
pub fn to_label(c: &Client, id: &str) {
    let r = c.post_as(
        &format!("/projects/{id}/submissions"),
        "worker",
        "finder",
        json!({ "imageUri": "cartoon_05", "conceptTag": "cartoon dog" }),
    );
    assert_eq!(r.status, 201, "{}", r.text);
    assert_eq!(c.post(&format!("/projects/{id}/stage"), json!({ "action": "close" })).status, 200);
    assert_eq!(
        c.post(&format!("/projects/{id}/resolution/toggle"), json!({ "targetId": "seed" })).status,
        200
    );
    assert_eq!(c.post(&format!("/projects/{id}/resolution/commit"), json!({})).status, 200);
}
