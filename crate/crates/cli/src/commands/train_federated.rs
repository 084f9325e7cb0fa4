use std::collections::BTreeMap;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use fedanomaly::data::read_accounts_csv;
use fedanomaly::model::save_checkpoint;
use fedanomaly::party::PartyId;
use fedanomaly::protocol::{
    bank_flag_tables, run_party_over_tcp, train_in_sim, AggregatorMachine, HubData, HubTrainer,
    LeakageReport,
};
use fedanomaly::transport::{CommsReport, MsgType, PairTraffic};

use crate::commands::{ensure_out, load_prepared, test_auprc, write_json};
use crate::config::{load_config, save_config_toml, RunConfig};
use crate::errors::{io_err, CliError};
use crate::manifest::write_manifest;
use crate::{Role, TrainFederatedArgs, Transport};

const ESTABLISH: Duration = Duration::from_secs(30);
const RECV_TIMEOUT: Duration = Duration::from_secs(180);

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct FedMetrics {
    auprc: Option<f64>,
    batches: u64,
    skipped_rows: u64,
    train_rows: usize,
    test_rows: usize,
    hub_received: BTreeMap<String, u64>,
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct CommsOut<'a> {
    total_messages: u64,
    total_bytes: u64,
    ot_invocations: u64,
    per_party: Vec<PartySent>,
    pairs: &'a [PairTraffic],
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct PartySent {
    party: String,
    messages_sent: u64,
    bytes_sent: u64,
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct LeakageOut<'a> {
    bank_queries: &'a BTreeMap<u32, BTreeMap<u32, u64>>,
    aggregator_banks: &'a BTreeMap<u32, u64>,
    skipped_rows: u64,
    total_bank_queries: u64,
    total_aggregator_observations: u64,
}

/// What one tcp party process writes for the orchestrator to merge. Only
/// the fields that party knows are present.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct PartyFragment {
    role: String,
    comms: CommsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ot_invocations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batches: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skipped_rows: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hub_received: Option<BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bank_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bank_queries: Option<BTreeMap<u32, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregator_banks: Option<BTreeMap<u32, u64>>,
}

impl PartyFragment {
    fn empty(role: String, comms: CommsReport) -> Self {
        PartyFragment {
            role,
            comms,
            ot_invocations: None,
            batches: None,
            skipped_rows: None,
            hub_received: None,
            bank_index: None,
            bank_queries: None,
            aggregator_banks: None,
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, args: &TrainFederatedArgs) {
    args.train.apply(&mut cfg.train);
    if let Some(v) = args.ot {
        cfg.session.ot = v;
    }
    if let Some(v) = args.ot_reduction {
        cfg.session.ot_reduction = v;
    }
    if let Some(v) = args.key_cache {
        cfg.session.key_cache = v;
    }
    if let Some(v) = &args.host {
        cfg.tcp.host = v.clone();
    }
    if let Some(v) = args.base_port {
        cfg.tcp.base_port = v;
    }
}

pub fn run(args: TrainFederatedArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    apply_overrides(&mut cfg, &args);
    match (args.transport, args.role) {
        (Transport::Sim, Role::All) => run_sim(&args, &cfg),
        (Transport::Sim, role) => {
            Err(CliError::Config(format!("--role {role} requires --transport tcp")))
        }
        (Transport::Tcp, Role::All) => orchestrate_tcp(&args, &cfg),
        (Transport::Tcp, role) => run_tcp_party(&args, &cfg, role),
    }
}

fn write_comms(out: &Path, comms: &CommsReport, ot_invocations: u64) -> Result<(), CliError> {
    let mut per: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for p in &comms.pairs {
        let e = per.entry(p.from.clone()).or_insert((0, 0));
        e.0 += p.messages;
        e.1 += p.bytes;
    }
    let per_party = per
        .into_iter()
        .map(|(party, (messages_sent, bytes_sent))| PartySent { party, messages_sent, bytes_sent })
        .collect();
    write_json(
        &out.join("comms.json"),
        &CommsOut {
            total_messages: comms.total_messages,
            total_bytes: comms.total_bytes,
            ot_invocations,
            per_party,
            pairs: &comms.pairs,
        },
    )
}

fn write_leakage(out: &Path, report: &LeakageReport) -> Result<(), CliError> {
    write_json(
        &out.join("leakage.json"),
        &LeakageOut {
            bank_queries: &report.bank_queries,
            aggregator_banks: &report.aggregator_banks,
            skipped_rows: report.skipped_rows,
            total_bank_queries: report.total_bank_queries(),
            total_aggregator_observations: report.total_aggregator_observations(),
        },
    )
}

fn run_sim(args: &TrainFederatedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let out = &args.common.out;
    ensure_out(out)?;
    let data = load_prepared(&args.data, cfg)?;
    let outcome = train_in_sim(&data, &cfg.train, &cfg.session.to_session())?;
    let auprc = test_auprc(&outcome.model, &data)?;

    save_checkpoint(&out.join("checkpoint.bin"), &outcome.model, &data.norm)?;
    write_json(
        &out.join("metrics.json"),
        &FedMetrics {
            auprc,
            batches: outcome.batches,
            skipped_rows: outcome.skipped_rows,
            train_rows: data.train_rows.len(),
            test_rows: data.test_rows.len(),
            hub_received: outcome.hub_received.clone(),
        },
    )?;
    write_comms(out, &outcome.comms, outcome.ot_invocations)?;
    write_leakage(out, &outcome.leakage)?;

    let outputs = ["checkpoint.bin", "metrics.json", "comms.json", "leakage.json"]
        .map(String::from);
    write_manifest(out, "train-federated", cfg, &outputs, None)?;
    match auprc {
        Some(v) => println!(
            "federated training done: test AUPRC {v:.4}, {} bytes over {} messages, {} transfers",
            outcome.comms.total_bytes, outcome.comms.total_messages, outcome.ot_invocations
        ),
        None => println!("federated training done: test split has no anomalies"),
    }
    Ok(())
}

fn party_list(n_banks: u32) -> Vec<PartyId> {
    let mut parties = vec![PartyId::Hub, PartyId::Aggregator];
    parties.extend((0..n_banks).map(PartyId::Bank));
    parties
}

fn fragment_name(role: Role) -> String {
    match role {
        Role::Hub => "party-hub.json".into(),
        Role::Aggregator => "party-aggregator.json".into(),
        Role::Bank(i) => format!("party-bank-{i}.json"),
        Role::All => unreachable!("fragments belong to single parties"),
    }
}

fn count_banks(data_dir: &Path) -> Result<u32, CliError> {
    let accounts = read_accounts_csv(&data_dir.join("accounts.csv"))?;
    let distinct: std::collections::BTreeSet<&str> =
        accounts.iter().map(|a| a.bank_id.as_str()).collect();
    Ok(distinct.len() as u32)
}

fn party_tag(name: &str) -> u32 {
    match name {
        "hub" => 0,
        "aggregator" => 1,
        other => match other.strip_prefix("bank:").and_then(|i| i.parse::<u32>().ok()) {
            Some(i) => 2 + i,
            None => u32::MAX,
        },
    }
}

/// Spawns one child process per party against the resolved config, waits
/// for all of them, and merges their fragments into the same comms.json and
/// leakage.json a sim run writes.
fn orchestrate_tcp(args: &TrainFederatedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let out = &args.common.out;
    ensure_out(out)?;
    let eff = out.join("effective-config.toml");
    save_config_toml(&eff, cfg)?;
    let n_banks = count_banks(&args.data)?;
    let exe = std::env::current_exe()
        .map_err(|e| CliError::Io { path: "current executable".into(), source: e })?;

    let mut roles = vec![Role::Aggregator];
    roles.extend((0..n_banks).map(Role::Bank));
    roles.push(Role::Hub);

    let mut children = Vec::new();
    for role in &roles {
        let child = std::process::Command::new(&exe)
            .arg("train-federated")
            .arg("--config")
            .arg(&eff)
            .arg("--data")
            .arg(&args.data)
            .arg("--out")
            .arg(out)
            .arg("--transport")
            .arg("tcp")
            .arg("--role")
            .arg(role.to_string())
            .spawn()
            .map_err(|e| CliError::Io { path: exe.clone(), source: e })?;
        children.push((role.to_string(), child));
    }

    // Reap as they finish; once any party fails the rest can only stall on
    // timeouts, so kill them instead of waiting those out.
    let mut statuses: Vec<Option<std::process::ExitStatus>> = Vec::new();
    statuses.resize_with(children.len(), || None);
    let mut first_failure: Option<(String, i32)> = None;
    loop {
        let mut all_done = true;
        for (i, (role, child)) in children.iter_mut().enumerate() {
            if statuses[i].is_some() {
                continue;
            }
            match child.try_wait().map_err(|e| CliError::Io { path: exe.clone(), source: e })? {
                Some(status) => {
                    statuses[i] = Some(status);
                    if !status.success() && first_failure.is_none() {
                        first_failure = Some((role.clone(), status.code().unwrap_or(-1)));
                    }
                }
                None => all_done = false,
            }
        }
        if all_done {
            break;
        }
        if first_failure.is_some() {
            for (i, (_, child)) in children.iter_mut().enumerate() {
                if statuses[i].is_none() {
                    let _ = child.kill();
                }
            }
        }
        std::thread::sleep(Duration::from_millis(25));
    }
    if let Some((role, code)) = first_failure {
        return Err(CliError::Child { role, code });
    }

    // Each party counted only what it sent, so the fragments are disjoint
    // and merging is pure accumulation.
    let mut merged = CommsReport { total_messages: 0, total_bytes: 0, pairs: Vec::new() };
    let mut leakage = LeakageReport::default();
    let mut ot_invocations = 0;
    for &role in &roles {
        let path = out.join(fragment_name(role));
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let frag: PartyFragment = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merged.total_messages += frag.comms.total_messages;
        merged.total_bytes += frag.comms.total_bytes;
        merged.pairs.extend(frag.comms.pairs);
        if let Some(v) = frag.ot_invocations {
            ot_invocations += v;
        }
        if let (Some(i), Some(q)) = (frag.bank_index, frag.bank_queries) {
            if !q.is_empty() {
                leakage.bank_queries.insert(i, q);
            }
        }
        if let Some(a) = frag.aggregator_banks {
            leakage.aggregator_banks = a;
        }
        if let Some(v) = frag.skipped_rows {
            leakage.skipped_rows = v;
        }
    }
    merged.pairs.sort_by_key(|p| (party_tag(&p.from), party_tag(&p.to)));

    write_comms(out, &merged, ot_invocations)?;
    write_leakage(out, &leakage)?;
    let outputs = [
        "checkpoint.bin",
        "metrics.json",
        "comms.json",
        "leakage.json",
        "effective-config.toml",
    ]
    .map(String::from);
    write_manifest(out, "train-federated", cfg, &outputs, None)?;
    println!(
        "tcp training done across {} parties: {} bytes over {} messages, {} transfers",
        roles.len(),
        merged.total_bytes,
        merged.total_messages,
        ot_invocations
    );
    Ok(())
}

fn address_book(cfg: &RunConfig, parties: &[PartyId]) -> Result<BTreeMap<u32, SocketAddr>, CliError> {
    let mut book = BTreeMap::new();
    for p in parties {
        let tag = p.wire_tag();
        let port = cfg
            .tcp
            .base_port
            .checked_add(tag as u16)
            .ok_or_else(|| CliError::Config(format!("base-port overflows at party {p}")))?;
        let addr = (cfg.tcp.host.as_str(), port)
            .to_socket_addrs()
            .map_err(|e| CliError::Config(format!("cannot resolve {}:{port}: {e}", cfg.tcp.host)))?
            .next()
            .ok_or_else(|| {
                CliError::Config(format!("{} resolves to no address", cfg.tcp.host))
            })?;
        book.insert(tag, addr);
    }
    Ok(book)
}

fn run_tcp_party(args: &TrainFederatedArgs, cfg: &RunConfig, role: Role) -> Result<(), CliError> {
    let out = &args.common.out;
    ensure_out(out)?;
    let data = load_prepared(&args.data, cfg)?;
    let n_banks = data.n_banks();
    let session = cfg.session.to_session();
    let parties = party_list(n_banks);
    let addresses = address_book(cfg, &parties)?;
    let peers_of = |me: PartyId| -> Vec<PartyId> {
        parties.iter().copied().filter(|p| *p != me).collect()
    };

    let fragment = match role {
        Role::Hub => {
            let hub_data = HubData {
                features: &data.features,
                labels: &data.labels,
                receiver_bank: &data.receiver_bank,
                receiver_account: &data.receiver_account,
                rows: &data.train_rows,
            };
            let hub = HubTrainer::new(hub_data, cfg.train.clone(), session.hub_options(n_banks))?;
            let (hub, sent) =
                run_party_over_tcp(hub, &addresses, &peers_of(PartyId::Hub), ESTABLISH, RECV_TIMEOUT)?;
            let (model, stats) = hub.into_parts();
            let auprc = test_auprc(&model, &data)?;
            save_checkpoint(&out.join("checkpoint.bin"), &model, &data.norm)?;
            let hub_received: BTreeMap<String, u64> = stats
                .received_by_type
                .iter()
                .map(|(&b, &n)| {
                    let name = match MsgType::from_byte(b) {
                        Some(t) => t.name().to_string(),
                        None => format!("type-{b}"),
                    };
                    (name, n)
                })
                .collect();
            write_json(
                &out.join("metrics.json"),
                &FedMetrics {
                    auprc,
                    batches: stats.batches,
                    skipped_rows: stats.skipped_rows,
                    train_rows: data.train_rows.len(),
                    test_rows: data.test_rows.len(),
                    hub_received: hub_received.clone(),
                },
            )?;
            let mut frag = PartyFragment::empty("hub".into(), sent.report());
            frag.ot_invocations = Some(stats.ot_invocations);
            frag.batches = Some(stats.batches);
            frag.skipped_rows = Some(stats.skipped_rows);
            frag.hub_received = Some(hub_received);
            frag
        }
        Role::Aggregator => {
            let machine =
                AggregatorMachine::new(session.session_id, cfg.train.noise, session.aggregator_seed);
            let (machine, sent) = run_party_over_tcp(
                machine,
                &addresses,
                &peers_of(PartyId::Aggregator),
                ESTABLISH,
                RECV_TIMEOUT,
            )?;
            let mut frag = PartyFragment::empty("aggregator".into(), sent.report());
            frag.aggregator_banks = Some(machine.bank_share_counts().clone());
            frag
        }
        Role::Bank(i) => {
            if i >= n_banks {
                return Err(CliError::Config(format!(
                    "bank {i} does not exist; the data has {n_banks} banks"
                )));
            }
            let mut banks = session.banks(bank_flag_tables(&data));
            let machine = banks.swap_remove(i as usize);
            let (machine, sent) = run_party_over_tcp(
                machine,
                &addresses,
                &peers_of(PartyId::Bank(i)),
                ESTABLISH,
                RECV_TIMEOUT,
            )?;
            let mut frag = PartyFragment::empty(format!("bank:{i}"), sent.report());
            frag.bank_index = Some(i);
            frag.bank_queries = Some(machine.query_counts().clone());
            frag
        }
        Role::All => unreachable!("dispatched above"),
    };

    write_json(&out.join(fragment_name(role)), &fragment)?;
    let suffix = fragment_name(role);
    let suffix = suffix.trim_start_matches("party-").trim_end_matches(".json");
    let outputs = [fragment_name(role)];
    write_manifest(out, "train-federated", cfg, &outputs, Some(suffix))?;
    println!("{} finished: sent {} messages", fragment.role, fragment.comms.total_messages);
    Ok(())
}
