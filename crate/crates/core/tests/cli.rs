use std::ffi::OsStr;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use pfid::cli::*;
use pfid::metrics::EvalReport;
use pfid::protocol::GenerationTrace;

fn pfid<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfid"))
        .args(args)
        .env_remove(SEED_ENV)
        .output()
        .unwrap()
}

fn ok<S: AsRef<OsStr>>(args: &[S]) -> String {
    let out = pfid(args);
    let shown: Vec<_> = args.iter().map(|a| a.as_ref().to_string_lossy()).collect();
    assert!(
        out.status.success(),
        "{shown:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code<S: AsRef<OsStr>>(args: &[S]) -> i32 {
    pfid(args).status.code().unwrap()
}

fn small_train(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "train",
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "20",
        "--layers",
        "6",
        "--heads",
        "2",
        "--d-ff",
        "32",
        "--batch-size",
        "2",
        "--block-size",
        "24",
    ];
    if !extra.contains(&"--d-model") {
        args.extend(["--d-model", "16"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
    out
}

struct Server(Child, String);

impl Server {
    fn start(args: &[&str]) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_pfid"))
            .arg("serve")
            .args(args)
            .args(["--port", "0"])
            .env_remove(SEED_ENV)
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .expect("address line")
            .to_string();
        Server(child, addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn train_is_reproducible_and_writes_its_records() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_train(dir.path(), "a.ckpt", &["--seed", "4"]);
    let b = small_train(dir.path(), "b.ckpt", &["--seed", "4"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let losses: pfid::model::TrainReport =
        serde_json::from_slice(&std::fs::read(sibling(&a, ".losses.json")).unwrap()).unwrap();
    assert_eq!(losses.losses.len(), 20);
    assert!(losses.final_eval_loss < losses.initial_eval_loss);
    let manifest: RunManifest =
        serde_json::from_slice(&std::fs::read(sibling(&a, ".manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest.checkpoint_sha256.unwrap(),
        sha256_hex(&std::fs::read(&a).unwrap())
    );
    assert_eq!(manifest.seeds["train"], 4);

    let zero = dir.path().join("zero.ckpt");
    assert_eq!(
        code(&["train", "--out", zero.to_str().unwrap(), "--steps", "0"]),
        EXIT_CONFIG
    );
}

#[test]
fn generate_modes_transports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_train(dir.path(), "m.ckpt", &[]);
    let ck = ckpt.to_str().unwrap();
    let prompt = "Omar is 70 years old. => ";
    let base = [
        "generate",
        "--checkpoint",
        ck,
        "--prompt",
        prompt,
        "--greedy",
        "--max-new-tokens",
        "12",
    ];
    let with = |extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|s| s.to_string()).collect()
    };

    let degenerate = ["--omega", "0", "--phead", "0", "--ptail", "0"];
    let pipeline = ok(&with(&[&["--mode", "pipeline"], &degenerate[..]].concat()));
    let local = ok(&with(&[&["--mode", "local"], &degenerate[..]].concat()));
    assert_eq!(pipeline, local);

    // Same seeds over a real socket and in process: identical traces.
    let server = Server::start(&["--checkpoint", ck, "--seed", "9"]);
    let sim_json = ok(&with(&["--json", "--seed", "9"]));
    let sock_json = ok(&with(&[
        "--json",
        "--seed",
        "9",
        "--transport",
        "socket",
        "--addr",
        &server.1,
    ]));
    let sim = GenerationTrace::from_json(&sim_json).unwrap();
    assert_eq!(sim, GenerationTrace::from_json(&sock_json).unwrap());
    assert_eq!(sim.ledger.records.len(), sim.steps.len());

    // The environment variable stands in for --seed.
    let env = Command::new(env!("CARGO_BIN_EXE_pfid"))
        .args(with(&["--json"]))
        .env(SEED_ENV, "9")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(env.stdout).unwrap(), sim_json);

    // A mismatched server split is a protocol error on the client.
    let other = small_train(dir.path(), "wide.ckpt", &["--d-model", "32"]);
    let wide = Server::start(&["--checkpoint", other.to_str().unwrap()]);
    assert_eq!(
        code(&with(&["--transport", "socket", "--addr", &wide.1])),
        EXIT_PROTOCOL
    );

    assert_eq!(code(&with(&["--phead", "1.5"])), EXIT_CONFIG);
    assert_eq!(code(&with(&["--layer-range", "5,3"])), EXIT_CONFIG);
    assert_eq!(
        code(&with(&["--transport", "socket", "--addr", "127.0.0.1:1"])),
        EXIT_TRANSPORT
    );
    assert_eq!(
        code(&["generate", "--checkpoint", "/nonexistent", "--prompt", "x"]),
        EXIT_OTHER
    );
    assert_eq!(code(&["generate", "--bogus"]), EXIT_CONFIG);

    for mode in ["eavesdropper", "remnant"] {
        let trace_out = dir.path().join(format!("{mode}.json"));
        let capture = dir.path().join(format!("{mode}.cap"));
        ok(&with(&[
            "--mode",
            mode,
            "--trace-out",
            trace_out.to_str().unwrap(),
            "--capture-out",
            capture.to_str().unwrap(),
        ]));
        let exchanges = pfid::adversary::read_capture(&std::fs::read(&capture).unwrap()).unwrap();
        assert_eq!(exchanges.len(), 12);
        assert!(sibling(&trace_out, ".manifest.json").exists());
    }
}

#[test]
fn exported_shards_serve_and_generate_like_the_full_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_train(dir.path(), "m.ckpt", &[]);
    let (client, server) = (
        dir.path().join("client.ckpt"),
        dir.path().join("server.ckpt"),
    );
    ok(&[
        "export",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer-range",
        "2,4",
        "--client-out",
        client.to_str().unwrap(),
        "--server-out",
        server.to_str().unwrap(),
    ]);
    let srv = Server::start(&["--checkpoint", server.to_str().unwrap()]);
    let common = [
        "--prompt",
        "Call Nina at 555-0123. => ",
        "--max-new-tokens",
        "10",
        "--json",
        "--layer-range",
        "2,4",
    ];
    let remote = ok(&[
        &[
            "generate",
            "--checkpoint",
            client.to_str().unwrap(),
            "--transport",
            "socket",
            "--addr",
            &srv.1,
        ],
        &common[..],
    ]
    .concat());
    let sim = ok(&[
        &["generate", "--checkpoint", ckpt.to_str().unwrap()],
        &common[..],
    ]
    .concat());
    assert_eq!(remote, sim);
    // A client checkpoint cannot run the in-process server.
    assert_eq!(
        code(
            &[
                &["generate", "--checkpoint", client.to_str().unwrap()],
                &common[..]
            ]
            .concat()
        ),
        EXIT_CONFIG
    );
}

#[test]
fn sweep_and_analyze_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_train(dir.path(), "m.ckpt", &[]);
    let ck = ckpt.to_str().unwrap();
    let out = dir.path().join("omega.json");
    let table = ok(&[
        "sweep",
        "--checkpoint",
        ck,
        "--omega",
        "0",
        "0.5",
        "1",
        "2",
        "--greedy",
        "--max-new-tokens",
        "6",
        "--prompts",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = EvalReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let omegas: Vec<f64> = report.scenarios.iter().map(|s| s.config.omega).collect();
    assert_eq!(omegas, [0.0, 0.5, 1.0, 2.0]);
    assert_eq!(table.lines().filter(|l| l.contains(" local ")).count(), 4);
    let manifest = std::fs::read(sibling(&out, ".manifest.json")).unwrap();
    assert_eq!(
        report.manifest_sha256.as_deref(),
        Some(sha256_hex(&manifest).as_str())
    );

    let out = dir.path().join("phead.json");
    ok(&[
        "sweep",
        "--checkpoint",
        ck,
        "--phead",
        "0",
        "0.35",
        "0.65",
        "0.8",
        "--greedy",
        "--max-new-tokens",
        "6",
        "--prompts",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = EvalReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let up: Vec<f64> = report.scenarios.iter().map(|s| s.comm_up_ratio).collect();
    assert!(up.windows(2).all(|w| w[0] > w[1]), "{up:?}");

    let out = dir.path().join("analyze.json");
    let text = ok(&[
        "analyze",
        "--checkpoint",
        ck,
        "--prompts",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = EvalReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.comm_fit.unwrap().max_residual, 0.0);
    assert_eq!(report.spectra.unwrap().layers.len(), 7);
    assert!(text.contains("max residual 0"));
}
