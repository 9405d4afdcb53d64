mod common;

use std::sync::Arc;

use pfid::adversary::*;
use pfid::linalg::{ratio_to_rank, Matrix};
use pfid::model::*;
use pfid::protocol::*;
use pfid::shard::*;
use proptest::prelude::*;

fn sharded() -> ShardedModel {
    split(&common::untrained(), ShardSpec::default()).unwrap()
}

fn table2(max_new_tokens: usize) -> PfidConfig {
    PfidConfig {
        sampling: SamplingParams {
            max_new_tokens,
            seed: 17,
            ..SamplingParams::default()
        },
        seed: 5,
        ..PfidConfig::default()
    }
}

fn in_memory(model: &ShardedModel, cfg: &PfidConfig) -> InMemoryTransport {
    InMemoryTransport::new(Arc::new(MiddleServer::new(model.middle.clone(), *cfg)))
}

#[test]
fn degenerate_config_matches_the_pipeline_exactly() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = PfidConfig::degenerate(SamplingParams::greedy(12));
    for prompt in common::prompts(10, 1) {
        let sim = run_local_sim(&model, &cfg, &tok, &prompt).unwrap();
        assert_eq!(sim.local.steps.len(), 12);
        // Logits included: the split path runs the same operations.
        for (l, p) in sim.local.steps.iter().zip(&sim.pipeline.steps) {
            assert_eq!((l.token, &l.logits, &l.top5), (p.token, &p.logits, &p.top5));
        }
        assert_eq!(sim.local.text, sim.pipeline.text);
        for mode in AdversaryMode::ALL {
            assert_eq!(sim.eavesdropper(mode).tokens(), sim.local.tokens());
        }
        assert!(sim.remnant.empty);
    }
}

#[test]
fn same_seed_same_trace_and_sim_matches_client() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = table2(10);
    let prompt = "Omar is 70 years old. => ";
    let a = run_local_sim(&model, &cfg, &tok, prompt).unwrap();
    let b = run_local_sim(&model, &cfg, &tok, prompt).unwrap();
    assert_eq!(a.local, b.local);
    assert_eq!(a.exchanges, b.exchanges);
    let direct = client_generate(
        &model.client(),
        &mut in_memory(&model, &cfg),
        &cfg,
        &tok,
        prompt,
    )
    .unwrap();
    assert_eq!(direct, a.local);
}

#[test]
fn ledger_follows_the_byte_formula_under_table2_settings() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = table2(6);
    let trace = client_generate(
        &model.client(),
        &mut in_memory(&model, &cfg),
        &cfg,
        &tok,
        "Call Anna at 555-0101. => ",
    )
    .unwrap();
    let d = 64;
    for (step, rec) in trace.steps.iter().zip(&trace.ledger.records) {
        let n = rec.n;
        assert_eq!(step.k_head, ratio_to_rank(0.65, d, n).unwrap());
        assert_eq!(step.k_tail, ratio_to_rank(0.75, d, n).unwrap());
        assert_eq!(rec.bytes_up, 32 + 4 * step.k_head * (d + n + 1));
        assert_eq!(rec.bytes_down, 32 + 4 * step.k_tail * (d + n + 1));
        assert_eq!(rec.baseline(), 4 * d * n);
    }
    let up: usize = trace.ledger.records.iter().map(|r| r.bytes_up).sum();
    assert_eq!(up, trace.ledger.total_up);
}

#[test]
fn socket_and_memory_transports_agree_across_concurrent_sessions() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = table2(8);
    let server = Arc::new(MiddleServer::new(model.middle.clone(), cfg));
    let handle = ServerHandle::spawn(server, "127.0.0.1:0").unwrap();
    let addr = handle.addr();
    let prompts = common::prompts(4, 3);
    let threads: Vec<_> = prompts
        .iter()
        .cloned()
        .map(|p| {
            let (client, tok) = (model.client(), tok.clone());
            std::thread::spawn(move || {
                let mut t = TcpTransport::connect(addr).unwrap();
                client_generate(&client, &mut t, &cfg, &tok, &p).unwrap()
            })
        })
        .collect();
    for (p, th) in prompts.iter().zip(threads) {
        let remote = th.join().unwrap();
        let local =
            client_generate(&model.client(), &mut in_memory(&model, &cfg), &cfg, &tok, p).unwrap();
        assert_eq!(remote, local);
    }
    handle.shutdown().unwrap();
}

#[test]
fn zero_noise_ignores_the_noise_seed() {
    let model = sharded();
    let h = model.head_forward(&[3, 4, 5, 6, 7]).unwrap();
    let request = encode_dense(&h, PacketRole::ClientToServer, 0);
    let reply = |seed| {
        let cfg = PfidConfig {
            ptail: 0.0,
            noise_sigma: 0.0,
            seed,
            ..PfidConfig::default()
        };
        MiddleServer::new(model.middle.clone(), cfg).handle(&request)
    };
    assert_eq!(reply(1), reply(2));
    let noisy = |seed| {
        let cfg = PfidConfig {
            ptail: 0.0,
            noise_sigma: 0.5,
            seed,
            ..PfidConfig::default()
        };
        MiddleServer::new(model.middle.clone(), cfg).handle(&request)
    };
    assert_ne!(noisy(1), noisy(2));
}

#[test]
fn identity_middle_echoes_the_request() {
    let mut m = common::untrained();
    // Zero output projections make a pre-norm block the identity.
    for l in 3..5 {
        let layer = Arc::make_mut(&mut m.layers[l]);
        layer.wo = Matrix::zeros(64, 64);
        layer.w2 = Matrix::zeros(256, 64);
        layer.b2 = vec![0.0; 64];
    }
    let model = split(&m, ShardSpec::default()).unwrap();
    let cfg = PfidConfig {
        ptail: 0.0,
        bypass_svd_at_zero: false,
        ..PfidConfig::default()
    };
    let server = MiddleServer::new(model.middle.clone(), cfg);
    let client = PfidClient::new(model.client(), cfg, Tokenizer::default()).unwrap();
    let h = model.head_forward(&[10, 20, 30, 40, 50, 60]).unwrap();
    let (request, _) = client.upload_packet(&h, 0).unwrap();
    let sent = decode_packet(&request).unwrap().reconstruct().unwrap();
    let back = decode_packet(&server.handle(&request))
        .unwrap()
        .reconstruct()
        .unwrap();
    let err = back.sub(&sent).unwrap().frobenius_norm() / sent.frobenius_norm();
    assert!(err < 1e-4, "relative echo error {err}");
}

#[test]
fn reply_rank_follows_ptail() {
    let model = sharded();
    let cfg = PfidConfig::default();
    let server = MiddleServer::new(model.middle.clone(), cfg);
    let client = PfidClient::new(model.client(), cfg, Tokenizer::default()).unwrap();
    for n in [1, 5, 23, 64, 100] {
        let tokens: Vec<TokenId> = (0..n).map(|i| (i % 90) as TokenId).collect();
        let (request, _) = client
            .upload_packet(&model.head_forward(&tokens).unwrap(), 3)
            .unwrap();
        let reply = decode_packet(&server.handle(&request)).unwrap();
        assert_eq!(reply.rank(), ratio_to_rank(0.75, 64, n).unwrap());
        assert_eq!(reply.step, 3);
    }
}

fn error_code(reply: &[u8]) -> (u32, String) {
    match decode_packet(reply).unwrap().payload {
        Payload::Error { code, message } => (code, message),
        other => panic!("expected an error packet, got {other:?}"),
    }
}

#[test]
fn server_rejects_wrong_role_and_shape() {
    let model = sharded();
    let server = MiddleServer::new(model.middle.clone(), PfidConfig::default());
    let h = model.head_forward(&[1, 2, 3]).unwrap();
    assert_eq!(
        error_code(&server.handle(&encode_dense(&h, PacketRole::ServerToClient, 0))).0,
        ERR_ROLE
    );
    let narrow = Matrix::zeros(32, 3);
    assert_eq!(
        error_code(&server.handle(&encode_dense(&narrow, PacketRole::ClientToServer, 0))).0,
        ERR_SHAPE
    );
    let long = Matrix::zeros(64, 129);
    assert_eq!(
        error_code(&server.handle(&encode_dense(&long, PacketRole::ClientToServer, 0))).0,
        ERR_SHAPE
    );
    let mut nan = h.clone();
    nan.set(0, 0, f64::NAN);
    // Non-finite payloads never reach the model.
    assert_eq!(
        error_code(&server.handle(&encode_dense(&nan, PacketRole::ClientToServer, 0))).0,
        ERR_MALFORMED
    );
}

/// Answers every request with a fixed reply.
struct Canned(Vec<u8>);

impl Transport for Canned {
    fn exchange(&mut self, _: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.0.clone())
    }
}

struct FailAfter(usize, InMemoryTransport);

impl Transport for FailAfter {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        if self.0 == 0 {
            return Err(TransportError::Closed);
        }
        self.0 -= 1;
        self.1.exchange(request)
    }
}

#[test]
fn client_errors_carry_the_step() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = table2(5);
    let client = PfidClient::new(model.client(), cfg, tok).unwrap();
    let err = client
        .generate(&mut FailAfter(2, in_memory(&model, &cfg)), "Hi => ")
        .unwrap_err();
    assert!(
        matches!(err, ProtocolError::Transport { step: 2, .. }),
        "{err}"
    );
    let err = client
        .generate(&mut Canned(b"junk".to_vec()), "Hi => ")
        .unwrap_err();
    assert!(
        matches!(err, ProtocolError::Packet { step: 0, .. }),
        "{err}"
    );
    let err = client
        .generate(&mut Canned(encode_error(ERR_SHAPE, "no", 0)), "Hi => ")
        .unwrap_err();
    assert!(
        matches!(
            err,
            ProtocolError::Remote {
                step: 0,
                code: ERR_SHAPE,
                ..
            }
        ),
        "{err}"
    );
    let stale = encode_dense(&Matrix::zeros(64, 6), PacketRole::ServerToClient, 9);
    let err = client.generate(&mut Canned(stale), "Hi => ").unwrap_err();
    assert!(
        matches!(err, ProtocolError::Desync { step: 0, .. }),
        "{err}"
    );
    assert!(client.generate(&mut in_memory(&model, &cfg), "").is_err());
}

#[test]
fn eavesdropper_detects_desync_and_stops_with_the_capture() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = table2(6);
    let sim = run_local_sim(&model, &cfg, &tok, "Lima is far. => ").unwrap();
    let public = model.client();
    let mut swapped = sim.exchanges.clone();
    swapped.swap(1, 2);
    let err = eavesdrop_generate(&public, &swapped, AdversaryMode::TailOnly, &cfg, &tok, "x")
        .unwrap_err();
    assert!(
        matches!(err, ProtocolError::Desync { step: 1, .. }),
        "{err}"
    );
    let short = eavesdrop_generate(
        &public,
        &sim.exchanges[..3],
        AdversaryMode::TailOnly,
        &cfg,
        &tok,
        "x",
    )
    .unwrap();
    assert_eq!(short.steps.len(), 3);
    let again = read_capture(&write_capture(&sim.exchanges)).unwrap();
    let replay = eavesdrop_generate(
        &public,
        &again,
        AdversaryMode::TailOnly,
        &cfg,
        &tok,
        &sim.local.prompt,
    )
    .unwrap();
    assert_eq!(&replay, &sim.eavesdropper_tail_only);
}

#[test]
fn remnant_is_empty_without_upload_truncation_and_deterministic() {
    let model = sharded();
    let tok = Tokenizer::default();
    let cfg = PfidConfig {
        phead: 0.0,
        ..table2(5)
    };
    let sim = run_local_sim(&model, &cfg, &tok, "Nina is 9. => ").unwrap();
    assert!(sim.remnant.empty);
    assert!(sim.remnant.relative_norms.iter().all(|&r| r == 0.0));
    let cfg = table2(5);
    let a = run_local_sim(&model, &cfg, &tok, "Nina is 9. => ").unwrap();
    let b = run_local_sim(&model, &cfg, &tok, "Nina is 9. => ").unwrap();
    assert!(!a.remnant.empty);
    assert_eq!(a.remnant, b.remnant);
}

#[test]
fn config_file_round_trip_drives_the_same_run() {
    let cfg = table2(4);
    let back = PfidConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn server_answers_any_bytes_with_a_packet(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let model = sharded();
        let server = MiddleServer::new(model.middle.clone(), PfidConfig::default());
        let reply = server.handle(&bytes);
        prop_assert!(decode_packet(&reply).is_ok());
    }

    #[test]
    fn header_mutations_never_crash(field in 0usize..8, value in any::<u32>()) {
        let model = sharded();
        let cfg = PfidConfig::default();
        let server = MiddleServer::new(model.middle.clone(), cfg);
        let client = PfidClient::new(model.client(), cfg, Tokenizer::default()).unwrap();
        let (mut request, _) = client.upload_packet(&model.head_forward(&[1, 2, 3, 4]).unwrap(), 0).unwrap();
        request[field * 4..field * 4 + 4].copy_from_slice(&value.to_le_bytes());
        let reply = decode_packet(&server.handle(&request));
        prop_assert!(reply.is_ok());
    }

    #[test]
    fn reprivatize_adds_exactly_omega_times_head(omega in 0.0f64..4.0, seed in any::<u64>()) {
        let h = Matrix::from_fn(6, 5, |i, j| ((seed >> (i + j)) & 7) as f64 - 3.5);
        let m = Matrix::from_fn(6, 5, |i, j| (i * 5 + j) as f64 * 0.1);
        let out = reprivatize(&m, &h, omega).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                prop_assert!((out.get(i, j) - m.get(i, j) - omega * h.get(i, j)).abs() < 1e-12);
            }
        }
    }
}
