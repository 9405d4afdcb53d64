//! A middle server on a real TCP socket and a client talking to it, checked
//! against the in-process simulator with the same seeds.

use pfid::model::*;
use pfid::protocol::*;
use pfid::shard::{split, ShardSpec};
use std::sync::Arc;

fn main() {
    let model = init_model(ModelConfig::default()).unwrap();
    let tok = Tokenizer::default();
    let cfg = PfidConfig {
        noise_sigma: 0.1,
        seed: 5,
        sampling: SamplingParams {
            max_new_tokens: 20,
            seed: 5,
            ..SamplingParams::default()
        },
        ..PfidConfig::default()
    };
    let sharded = split(&model, ShardSpec::default()).unwrap();
    let handle = ServerHandle::spawn(
        Arc::new(MiddleServer::new(sharded.middle.clone(), cfg)),
        "127.0.0.1:0",
    )
    .unwrap();
    println!("middle server on {}", handle.addr());

    let client = PfidClient::new(sharded.client(), cfg, tok.clone()).unwrap();
    let mut tcp = TcpTransport::connect(handle.addr()).unwrap();
    let prompt = "Mia lives at 12 Oak St. => ";
    let remote = client.generate(&mut tcp, prompt).unwrap();
    let sim = run_local_sim(&sharded, &cfg, &tok, prompt).unwrap();
    println!("socket:    {:?}", remote.text);
    println!("simulator: {:?}", sim.local.text);
    println!("identical traces: {}", remote == sim.local);

    // Garbage gets an error packet back, not a dropped connection.
    let reply = decode_packet(&tcp.exchange(b"not a packet").unwrap()).unwrap();
    println!("reply to garbage: {:?}", reply.payload);
    handle.shutdown().unwrap();
}
