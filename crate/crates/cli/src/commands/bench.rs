//! Times the five cost components of a federated run in isolation:
//! feature extraction, per-sample gradient computation, message
//! preparation, oblivious transfer, and socket communication.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::time::{Duration, Instant};

use serde::Serialize;

use fedanomaly::data::{extract_features, generate_synthetic, DatasetConfig, RateTable};
use fedanomaly::model::Mlp;
use fedanomaly::ot::{ot_transfer, OtChoice, OtMode, OtSenderInput};
use fedanomaly::party::PartyId;
use fedanomaly::rng::labeled_rng;
use fedanomaly::transport::{
    decode_frame, encode_frame, MsgType, ProtocolMessage, TcpEndpoint, TransportError,
    DEFAULT_MAX_FRAME,
};

use crate::commands::{ensure_out, write_json};
use crate::config::load_config;
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::BenchArgs;

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct BenchRow {
    component: String,
    ops: u64,
    seconds: f64,
    per_op_micros: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bytes_per_sec: Option<f64>,
}

fn row(component: &str, ops: u64, elapsed: Duration) -> BenchRow {
    let seconds = elapsed.as_secs_f64();
    BenchRow {
        component: component.into(),
        ops,
        seconds,
        per_op_micros: seconds * 1e6 / ops as f64,
        bytes_per_sec: None,
    }
}

fn bench_feature_extraction(scale: u32) -> Result<BenchRow, CliError> {
    let cfg = DatasetConfig {
        n_transactions: 4_000 * scale as usize,
        n_accounts: 1_000,
        n_banks: 4,
        anomaly_rate: 0.01,
        flag_correlation: 0.9,
        seed: 7,
    };
    let data = generate_synthetic(&cfg)?;
    let rates = RateTable::builtin();
    let start = Instant::now();
    let features = extract_features(&data.transactions, &rates)?;
    let elapsed = start.elapsed();
    assert_eq!(features.len(), data.transactions.len());
    Ok(row("feature-extraction", features.len() as u64, elapsed))
}

fn bench_sgd(scale: u32) -> BenchRow {
    let model = Mlp::anomaly_detector(&mut labeled_rng(11, "bench-model"));
    let n_inputs = model.input_len();
    let inputs: Vec<Vec<f64>> = (0..64)
        .map(|i| (0..n_inputs).map(|k| ((i * 31 + k * 7) % 13) as f64 / 13.0 - 0.4).collect())
        .collect();
    let ops = 2_000u64 * scale as u64;
    let start = Instant::now();
    let mut sink = 0.0;
    for i in 0..ops {
        let input = &inputs[(i % 64) as usize];
        let g = model.per_sample_gradient(input, (i % 2) as f64, 5e-4);
        sink += g[0];
    }
    let elapsed = start.elapsed();
    assert!(sink.is_finite());
    row("sgd-computation", ops, elapsed)
}

/// Serialize and deserialize a share-sized frame, the dominant message of a
/// training batch.
fn bench_message_prep(scale: u32) -> Result<BenchRow, CliError> {
    let model = Mlp::anomaly_detector(&mut labeled_rng(12, "bench-model"));
    let payload = vec![0xA5u8; model.param_count() * 8];
    let msg =
        ProtocolMessage::new(*b"bench-session\0\0\0", PartyId::Bank(0), MsgType::ShareForward, payload);
    let ops = 500u64 * scale as u64;
    let start = Instant::now();
    let mut sink = 0usize;
    for _ in 0..ops {
        let frame = encode_frame(&msg);
        let (decoded, used) = decode_frame(&frame, DEFAULT_MAX_FRAME)
            .map_err(fedanomaly::protocol::ProtocolError::from)?;
        sink += used + decoded.payload.len();
    }
    let elapsed = start.elapsed();
    assert!(sink > 0);
    Ok(row("message-preparation", ops, elapsed))
}

fn bench_ot(scale: u32) -> Result<BenchRow, CliError> {
    let input = OtSenderInput::new(vec![1u8; 32], vec![2u8; 32])
        .map_err(fedanomaly::protocol::ProtocolError::from)?;
    let mut srng = labeled_rng(13, "bench-ot-sender");
    let mut rrng = labeled_rng(14, "bench-ot-receiver");
    let ops = 150u64 * scale as u64;
    let start = Instant::now();
    for i in 0..ops {
        let got = ot_transfer(OtMode::Crypto, &input, OtChoice(i % 2 == 1), &mut srng, &mut rrng)
            .map_err(fedanomaly::protocol::ProtocolError::from)?;
        assert_eq!(got[0], 1 + (i % 2) as u8);
    }
    Ok(row("ot-computation", ops, start.elapsed()))
}

fn free_address() -> Result<SocketAddr, CliError> {
    let listener = TcpListener::bind("127.0.0.1:0")
        .map_err(|e| CliError::Io { path: "127.0.0.1:0".into(), source: e })?;
    listener.local_addr().map_err(|e| CliError::Io { path: "127.0.0.1:0".into(), source: e })
}

/// Pushes share-sized frames through a loopback socket pair, receiver in a
/// second thread, and measures send-to-drain wall time.
fn bench_communication(scale: u32) -> Result<BenchRow, CliError> {
    let n = 300u64 * scale as u64;
    let msg = ProtocolMessage::new(
        *b"bench-session\0\0\0",
        PartyId::Hub,
        MsgType::ShareForward,
        vec![0x5Au8; 16 * 1024],
    );
    let frame_len = encode_frame(&msg).len() as u64;

    let mut addresses = BTreeMap::new();
    addresses.insert(PartyId::Hub.wire_tag(), free_address()?);
    addresses.insert(PartyId::Bank(0).wire_tag(), free_address()?);
    let deadline = Duration::from_secs(10);

    let receiver_addresses = addresses.clone();
    let receiver = std::thread::spawn(move || -> Result<(), TransportError> {
        let mut endpoint = TcpEndpoint::establish(
            PartyId::Bank(0),
            &receiver_addresses,
            &[PartyId::Hub],
            deadline,
        )?;
        for _ in 0..n {
            endpoint.recv(Duration::from_secs(30))?;
        }
        Ok(())
    });

    let mut endpoint =
        TcpEndpoint::establish(PartyId::Hub, &addresses, &[PartyId::Bank(0)], deadline)
            .map_err(fedanomaly::protocol::ProtocolError::from)?;
    let start = Instant::now();
    for _ in 0..n {
        endpoint.send(PartyId::Bank(0), &msg).map_err(fedanomaly::protocol::ProtocolError::from)?;
    }
    receiver
        .join()
        .expect("receiver thread must not panic")
        .map_err(fedanomaly::protocol::ProtocolError::from)?;
    let elapsed = start.elapsed();

    let mut r = row("communication", n, elapsed);
    r.bytes_per_sec = Some(n as f64 * frame_len as f64 / elapsed.as_secs_f64());
    Ok(r)
}

pub fn run(args: BenchArgs) -> Result<(), CliError> {
    let cfg = load_config(args.common.config.as_deref())?;
    if args.scale == 0 {
        return Err(CliError::Config("--scale must be at least 1".into()));
    }
    let out = &args.common.out;
    ensure_out(out)?;

    let rows = vec![
        bench_feature_extraction(args.scale)?,
        bench_sgd(args.scale),
        bench_message_prep(args.scale)?,
        bench_ot(args.scale)?,
        bench_communication(args.scale)?,
    ];
    write_json(&out.join("bench.json"), &rows)?;

    println!("{:<22} {:>10} {:>10} {:>14}", "component", "ops", "seconds", "per-op (us)");
    for r in &rows {
        println!(
            "{:<22} {:>10} {:>10.3} {:>14.2}",
            r.component, r.ops, r.seconds, r.per_op_micros
        );
        if let Some(bps) = r.bytes_per_sec {
            println!("{:<22} {:>10} {:>10.1} MB/s", "", "", bps / 1e6);
        }
    }

    let outputs = ["bench.json".to_string()];
    write_manifest(out, "bench", &cfg, &outputs, None)?;
    Ok(())
}
