//! Multi-node scenario runner. Nodes run in this process with their own
//! listeners; everything the runner does to them goes through their agent
//! protocol and MTCP sockets, except reading statistics.

pub mod bdm;
pub mod junit;
pub mod scenario;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::task::JoinHandle;

use crate::aap2::{Aap2Client, Auth, AuthSet, BundleAdu, LinkOp};
use crate::bundle::{Bundle, CreationTimestamp};
use crate::cla::mtcp::mtcp_frame;
use crate::clock::{Clock, SharedClock, SimClock, SystemClock};
use crate::config::{ClaConfig, Config};
use crate::crc::CrcType;
use crate::eid::EndpointId;
use crate::node::Node;
use crate::storage::command::ReplyBody;
use crate::storage::{remote_command, BundleFilter, StorageCommand, Verb};

pub use bdm::{BdmLog, BdmRule, BdmScript, HopSpec, Otherwise, ScriptedBdm};
pub use junit::junit_xml;
pub use scenario::{ClockSpec, Expectation, NodeSpec, RawFrame, Scenario, ScenarioError, Step};

/// Admin secret given to nodes whose configuration sets none.
pub const DEFAULT_ADMIN_SECRET: &str = "harness-admin";
const AGENT_SECRET: &[u8] = b"harness";
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub index: usize,
    pub label: String,
    /// `None` when the step was skipped after an earlier failure.
    pub ok: Option<bool>,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: String,
    pub steps: Vec<StepOutcome>,
    pub duration: Duration,
    pub sim_elapsed_ms: Option<u64>,
    pub setup_error: Option<String>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.setup_error.is_none() && self.steps.iter().all(|s| s.ok == Some(true))
    }

    /// Step labels and results; identical for identical scenario files.
    pub fn event_log(&self) -> Vec<String> {
        let mut log = Vec::new();
        if let Some(e) = &self.setup_error {
            log.push(format!("setup failed: {e}"));
        }
        for s in &self.steps {
            let tag = match s.ok {
                Some(true) => "ok",
                Some(false) => "FAILED",
                None => "skipped",
            };
            log.push(format!("{:02} {tag} {}", s.index, s.label));
        }
        log
    }

    pub fn failure(&self) -> Option<String> {
        if let Some(e) = &self.setup_error {
            return Some(format!("setup: {e}"));
        }
        self.steps
            .iter()
            .find(|s| s.ok == Some(false))
            .map(|s| format!("step {:02} {}: {}", s.index, s.label, s.detail))
    }
}

struct Running {
    node: Node,
    config: Config,
}

type Inbox = Arc<Mutex<Vec<(Instant, BundleAdu)>>>;

struct Listener {
    node: String,
    agent: String,
    inbox: Inbox,
    task: Option<JoinHandle<()>>,
}

struct BdmSlot {
    node: String,
    script: BdmScript,
    log: Arc<BdmLog>,
    bdm: Option<ScriptedBdm>,
}

struct Run<'a> {
    scenario: &'a Scenario,
    clock: SharedClock,
    sim: Option<(SimClock, u64)>,
    tmp: tempfile::TempDir,
    nodes: BTreeMap<String, Running>,
    clients: HashMap<(String, String), Aap2Client>,
    sent: HashMap<String, (Instant, Vec<Vec<u8>>)>,
    listeners: BTreeMap<String, Listener>,
    bdms: BTreeMap<String, BdmSlot>,
    raw_seq: u64,
}

/// Runs every step in order and stops at the first failure.
pub async fn run_scenario(s: &Scenario) -> ScenarioReport {
    let started = Instant::now();
    let mut report = ScenarioReport {
        name: s.name.clone(),
        steps: Vec::new(),
        duration: Duration::ZERO,
        sim_elapsed_ms: None,
        setup_error: None,
    };
    let mut run = match Run::new(s).await {
        Ok(r) => r,
        Err(e) => {
            report.setup_error = Some(e);
            report.duration = started.elapsed();
            return report;
        }
    };
    let mut failed = false;
    for (i, step) in s.steps.iter().enumerate() {
        let label = step.label();
        if failed {
            report.steps.push(StepOutcome {
                index: i + 1,
                label,
                ok: None,
                detail: String::new(),
                elapsed: Duration::ZERO,
            });
            continue;
        }
        let t = Instant::now();
        let r = run.step(i, step).await;
        failed = r.is_err();
        log::info!("harness {}: {:02} {label}: {}", s.name, i + 1, if failed { "FAILED" } else { "ok" });
        let (ok, detail) = match r {
            Ok(d) => (true, d),
            Err(e) => (false, e),
        };
        report.steps.push(StepOutcome {
            index: i + 1,
            label,
            ok: Some(ok),
            detail,
            elapsed: t.elapsed(),
        });
    }
    report.sim_elapsed_ms = run.sim.as_ref().map(|(c, start)| c.now_ms() - start);
    run.teardown().await;
    report.duration = started.elapsed();
    report
}

impl<'a> Run<'a> {
    async fn new(s: &'a Scenario) -> Result<Run<'a>, String> {
        let (clock, sim): (SharedClock, _) = match s.clock {
            ClockSpec::Real => (Arc::new(SystemClock), None),
            ClockSpec::Sim { start_ms } => {
                let c = SimClock::new(start_ms);
                (Arc::new(c.clone()), Some((c, start_ms)))
            }
        };
        let tmp = tempfile::Builder::new()
            .prefix("bmux-harness-")
            .tempdir()
            .map_err(|e| format!("temporary directory: {e}"))?;
        let mut run = Run {
            scenario: s,
            clock,
            sim,
            tmp,
            nodes: BTreeMap::new(),
            clients: HashMap::new(),
            sent: HashMap::new(),
            listeners: BTreeMap::new(),
            bdms: BTreeMap::new(),
            raw_seq: 0,
        };
        for spec in &s.nodes {
            if run.nodes.contains_key(&spec.name) {
                return Err(format!("node {:?} declared twice", spec.name));
            }
            let config = run.prepare_config(spec)?;
            let node = match Node::start(&config, run.clock.clone()).await {
                Ok(n) => n,
                Err(e) => {
                    run.teardown().await;
                    return Err(format!("node {}: {e}", spec.name));
                }
            };
            run.nodes.insert(spec.name.clone(), Running { node, config });
        }
        Ok(run)
    }

    fn prepare_config(&self, spec: &NodeSpec) -> Result<Config, String> {
        let mut v = spec.config.clone();
        let tmp = self.tmp.path().to_string_lossy().into_owned();
        expand_tmp(&mut v, &tmp);
        let obj = v
            .as_object_mut()
            .ok_or_else(|| format!("node {}: config must be an object", spec.name))?;
        let aap2 = obj.entry("aap2").or_insert_with(|| serde_json::json!({}));
        if let Some(a) = aap2.as_object_mut() {
            a.entry("tcp").or_insert_with(|| "127.0.0.1:0".into());
        }
        if let Some(clas) = obj.get_mut("clas").and_then(|c| c.as_array_mut()) {
            for c in clas {
                if let Some(c) = c.as_object_mut() {
                    if c.get("type").and_then(|t| t.as_str()) == Some("mtcp") {
                        c.entry("listen").or_insert_with(|| "127.0.0.1:0".into());
                    }
                }
            }
        }
        obj.entry("admin_secret").or_insert_with(|| DEFAULT_ADMIN_SECRET.into());
        Config::from_json(&v.to_string()).map_err(|e| format!("node {}: {e}", spec.name))
    }

    fn running(&self, name: &str) -> Result<&Running, String> {
        self.nodes.get(name).ok_or_else(|| format!("unknown node {name:?}"))
    }

    fn aap2_addr(&self, name: &str) -> Result<String, String> {
        self.running(name)?
            .node
            .aap2_addr()
            .map(|a| a.to_string())
            .ok_or_else(|| format!("node {name} has no agent TCP listener"))
    }

    fn mtcp_addr(&self, name: &str) -> Result<SocketAddr, String> {
        self.running(name)?
            .node
            .mtcp_addr()
            .ok_or_else(|| format!("node {name} has no MTCP listener"))
    }

    fn admin_secret(&self, name: &str) -> Result<Vec<u8>, String> {
        Ok(self
            .running(name)?
            .config
            .admin_secret
            .clone()
            .unwrap_or_default()
            .into_bytes())
    }

    /// Expands `${node.mtcp}`, `${node.aap2}`, `${node.id}` and `${tmp}`.
    fn resolve(&self, s: &str) -> Result<String, String> {
        let mut out = String::new();
        let mut rest = s;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let end = rest[start..]
                .find('}')
                .ok_or_else(|| format!("unterminated placeholder in {s:?}"))?;
            let key = &rest[start + 2..start + end];
            let value = match key.split_once('.') {
                None if key == "tmp" => self.tmp.path().to_string_lossy().into_owned(),
                Some((node, "mtcp")) => self.mtcp_addr(node)?.to_string(),
                Some((node, "aap2")) => self.aap2_addr(node)?,
                Some((node, "id")) => self.running(node)?.node.node_id().to_string(),
                _ => return Err(format!("unknown placeholder ${{{key}}}")),
            };
            out.push_str(&value);
            rest = &rest[start + end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Cached active connection for `agent` on `node`; the empty agent id is
    /// the link-control connection.
    async fn client(&mut self, node: &str, agent: &str) -> Result<&mut Aap2Client, String> {
        let key = (node.to_string(), agent.to_string());
        if !self.clients.contains_key(&key) {
            let addr = self.aap2_addr(node)?;
            let c = if agent.is_empty() {
                let admin = self.admin_secret(node)?;
                Aap2Client::open(&addr, true, "", &[], AuthSet::from([Auth::LinkControl]), &admin).await
            } else {
                Aap2Client::active(&addr, agent, AGENT_SECRET).await
            }
            .map_err(|e| format!("connect to {node}: {e}"))?;
            self.clients.insert(key.clone(), c);
        }
        Ok(self.clients.get_mut(&key).unwrap())
    }

    fn payloads(&self, index: usize, s: &scenario::SendStep) -> Result<Vec<Vec<u8>>, String> {
        match (&s.payload, s.size) {
            (Some(p), None) => Ok(vec![p.as_bytes().to_vec(); s.count]),
            (None, Some(size)) => Ok((0..s.count)
                .map(|i| {
                    let seed = self.scenario.seed ^ ((index as u64) << 32) ^ i as u64;
                    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
                    let mut v = vec![0u8; size];
                    rng.fill_bytes(&mut v);
                    v
                })
                .collect()),
            _ => Err("send needs exactly one of payload and size".into()),
        }
    }

    async fn step(&mut self, index: usize, step: &Step) -> Result<String, String> {
        match step {
            Step::LinkUp(l) | Step::LinkDown(l) => {
                let op = if matches!(step, Step::LinkUp(_)) { LinkOp::Up } else { LinkOp::Down };
                let peer = EndpointId::parse_node_id(&self.resolve(&l.peer)?).map_err(|e| e.to_string())?;
                let cla = self.resolve(&l.cla)?.parse().map_err(|e| format!("{e}"))?;
                let c = self.client(&l.node, "").await?;
                c.link(op, &peer, &cla, l.flags).await.map_err(|e| e.to_string())?;
                Ok(String::new())
            }
            Step::Listen(l) => {
                if self.listeners.contains_key(&l.id) {
                    return Err(format!("listener {:?} exists", l.id));
                }
                let mut listener = Listener {
                    node: l.node.clone(),
                    agent: l.agent.clone(),
                    inbox: Arc::default(),
                    task: None,
                };
                self.connect_listener(&mut listener).await?;
                self.listeners.insert(l.id.clone(), listener);
                Ok(String::new())
            }
            Step::Send(s) => {
                let to: EndpointId = self.resolve(&s.to)?.parse().map_err(|e| format!("{e}"))?;
                let payloads = self.payloads(index, s)?;
                let c = self.client(&s.node, &s.agent).await?;
                for p in &payloads {
                    c.send_adu(&to, p.clone(), s.lifetime_ms)
                        .await
                        .map_err(|e| format!("send: {e}"))?;
                }
                let entry = self.sent.entry(s.id.clone()).or_insert_with(|| (Instant::now(), Vec::new()));
                entry.0 = Instant::now();
                entry.1.extend(payloads);
                Ok(String::new())
            }
            Step::Advance(ms) => {
                let (c, _) = self.sim.as_ref().ok_or("advance needs the simulated clock")?;
                c.advance(*ms);
                // Let timers that became due run before the next step.
                tokio::time::sleep(Duration::from_millis(10)).await;
                Ok(String::new())
            }
            Step::Sleep(ms) => {
                tokio::time::sleep(Duration::from_millis(*ms)).await;
                Ok(String::new())
            }
            Step::Restart(name) => self.restart(name).await.map(|_| String::new()),
            Step::Storage(s) => {
                let mut filter = BundleFilter::all();
                filter.destination_pattern = s.dest.as_ref().map(|d| self.resolve(d)).transpose()?;
                filter.source = match &s.source {
                    Some(src) => Some(self.resolve(src)?.parse().map_err(|e| format!("{e}"))?),
                    None => None,
                };
                let verb = match s.verb {
                    scenario::VerbSpec::Query => Verb::Query,
                    scenario::VerbSpec::Delete => Verb::Delete,
                    scenario::VerbSpec::Recall => Verb::Recall,
                };
                let mut cmd = StorageCommand::new(verb, filter);
                if let Some(d) = s.delete_after {
                    cmd.delete_after = d;
                }
                let n = self.storage_count(&s.node, &cmd).await?;
                match s.expect_count {
                    Some(want) if want != n => Err(format!("reply carries {n}, expected {want}")),
                    _ => Ok(format!("{n}")),
                }
            }
            Step::RawMtcp(r) => {
                let addr = self.mtcp_addr(&r.node)?;
                let mut stream = TcpStream::connect(addr).await.map_err(|e| e.to_string())?;
                for f in &r.frames {
                    let bytes = match f {
                        RawFrame::Hex(h) => hex::decode(h.split_whitespace().collect::<String>()).map_err(|e| e.to_string())?,
                        RawFrame::Bundle(b) => {
                            self.raw_seq += 1;
                            if let Some(id) = &b.id {
                                let e = self.sent.entry(id.clone()).or_insert_with(|| (Instant::now(), Vec::new()));
                                e.1.push(b.payload.as_bytes().to_vec());
                            }
                            Bundle::new(
                                self.resolve(&b.src)?.parse().map_err(|e| format!("{e}"))?,
                                self.resolve(&b.dst)?.parse().map_err(|e| format!("{e}"))?,
                                CreationTimestamp::new(self.clock.now_ms(), self.raw_seq),
                                b.lifetime_ms,
                                b.payload.as_bytes().to_vec(),
                                CrcType::Crc16X25,
                            )
                            .encode()
                            .map_err(|e| e.to_string())?
                        }
                    };
                    stream.write_all(&mtcp_frame(&bytes)).await.map_err(|e| e.to_string())?;
                }
                stream.shutdown().await.map_err(|e| e.to_string())?;
                Ok(String::new())
            }
            Step::Bdm(b) => {
                if self.bdms.contains_key(&b.id) {
                    return Err(format!("dispatcher {:?} exists", b.id));
                }
                let mut slot = BdmSlot {
                    node: b.node.clone(),
                    script: b.script(),
                    log: Arc::default(),
                    bdm: None,
                };
                self.attach_bdm(&mut slot).await?;
                self.bdms.insert(b.id.clone(), slot);
                Ok(String::new())
            }
            Step::BdmDetach(id) => {
                let slot = self.bdms.get_mut(id).ok_or_else(|| format!("unknown dispatcher {id:?}"))?;
                if let Some(b) = slot.bdm.take() {
                    b.detach().await;
                }
                Ok(String::new())
            }
            Step::Expect(e) => {
                let deadline = Instant::now() + Duration::from_millis(self.scenario.timeout_ms);
                loop {
                    let r = self.check(e).await;
                    if r.is_ok() || Instant::now() >= deadline {
                        return r;
                    }
                    tokio::time::sleep(POLL).await;
                }
            }
        }
    }

    async fn storage_count(&self, node: &str, cmd: &StorageCommand) -> Result<u64, String> {
        let r = self.running(node)?;
        let agent = r
            .config
            .storage
            .as_ref()
            .map(|s| s.agent_id.clone())
            .ok_or_else(|| format!("node {node} has no storage"))?;
        let admin = self.admin_secret(node)?;
        let addr = self.aap2_addr(node)?;
        let timeout = Duration::from_millis(self.scenario.timeout_ms);
        let reply = remote_command(&addr, &agent, Some(&admin), cmd, timeout)
            .await
            .map_err(|e| format!("storage command: {e}"))?;
        match reply.body {
            ReplyBody::Records(r) => Ok(r.len() as u64),
            ReplyBody::Count(n) => Ok(n),
            ReplyBody::None => Err(format!("storage replied {:?}: {}", reply.status, reply.detail)),
        }
    }

    async fn check(&self, e: &Expectation) -> Result<String, String> {
        match e {
            Expectation::Received {
                listener,
                sends,
                within_ms,
            } => {
                let l = self
                    .listeners
                    .get(listener)
                    .ok_or_else(|| format!("unknown listener {listener:?}"))?;
                let mut want = Vec::new();
                let mut last_send = None;
                for id in sends {
                    let (at, p) = self.sent.get(id).ok_or_else(|| format!("unknown send {id:?}"))?;
                    want.extend(p.iter().cloned());
                    last_send = last_send.max(Some(*at));
                }
                let inbox = l.inbox.lock().unwrap().clone();
                let mut got: Vec<Vec<u8>> = inbox.iter().map(|(_, a)| a.payload.clone()).collect();
                want.sort();
                got.sort();
                if got != want {
                    return Err(format!("{} ADUs received, {} expected or payloads differ", got.len(), want.len()));
                }
                if let (Some(limit), Some(sent_at)) = (within_ms, last_send) {
                    let last = inbox.iter().map(|(t, _)| *t).max().unwrap_or(sent_at);
                    let took = last.saturating_duration_since(sent_at);
                    if took > Duration::from_millis(*limit) {
                        return Err(format!("delivery took {} ms", took.as_millis()));
                    }
                }
                Ok(format!("{} ADUs", got.len()))
            }
            Expectation::Stored { node, dest, count } => {
                let mut filter = BundleFilter::all();
                filter.destination_pattern = dest.as_ref().map(|d| self.resolve(d)).transpose()?;
                let n = self.storage_count(node, &StorageCommand::new(Verb::Query, filter)).await?;
                if n == *count {
                    Ok(String::new())
                } else {
                    Err(format!("{n} records stored"))
                }
            }
            Expectation::Stats { node, equals, at_least } => {
                let stats = self.running(node)?.node.stats().await;
                let v = serde_json::to_value(&stats).map_err(|e| e.to_string())?;
                let get = |k: &str| v.pointer(&format!("/{k}")).and_then(|x| x.as_u64()).unwrap_or(0);
                for (k, want) in equals {
                    if get(k) != *want {
                        return Err(format!("{k} = {}, expected {want}", get(k)));
                    }
                }
                for (k, want) in at_least {
                    if get(k) < *want {
                        return Err(format!("{k} = {}, expected at least {want}", get(k)));
                    }
                }
                Ok(String::new())
            }
            Expectation::Accounting(nodes) => {
                for n in nodes {
                    let s = self.running(n)?.node.stats().await;
                    if !s.accounting_closes() || s.pending != 0 {
                        return Err(format!(
                            "{n}: ingested {} vs delivered {} + forwarded {} + stored {} + dropped {} + pending {}",
                            s.ingested,
                            s.delivered,
                            s.forwarded,
                            s.stored,
                            s.dropped_total(),
                            s.pending
                        ));
                    }
                }
                Ok(String::new())
            }
            Expectation::BdmRequests { bdm, count } => {
                let slot = self.bdms.get(bdm).ok_or_else(|| format!("unknown dispatcher {bdm:?}"))?;
                let n = slot.log.requests();
                if n == *count {
                    Ok(String::new())
                } else {
                    Err(format!("{n} dispatch requests: {:?}", slot.log.decisions()))
                }
            }
            Expectation::SimElapsedAtMost(ms) => {
                let (c, start) = self.sim.as_ref().ok_or("needs the simulated clock")?;
                let elapsed = c.now_ms() - start;
                if elapsed <= *ms {
                    Ok(format!("{elapsed} ms"))
                } else {
                    Err(format!("{elapsed} ms elapsed"))
                }
            }
            Expectation::Alive(n) => {
                let r = self.running(n)?;
                if r.node.bpa().stats().await.is_none() {
                    return Err("bundle processor stopped".into());
                }
                let addr = self.aap2_addr(n)?;
                Aap2Client::connect(&addr).await.map_err(|e| e.to_string())?;
                Ok(String::new())
            }
        }
    }

    async fn connect_listener(&self, l: &mut Listener) -> Result<(), String> {
        let addr = self.aap2_addr(&l.node)?;
        let mut client = Aap2Client::passive(&addr, &l.agent, AGENT_SECRET)
            .await
            .map_err(|e| format!("listen on {}: {e}", l.node))?;
        let inbox = l.inbox.clone();
        l.task = Some(tokio::spawn(async move {
            while let Ok(adu) = client.recv_adu().await {
                inbox.lock().unwrap().push((Instant::now(), adu));
            }
        }));
        Ok(())
    }

    async fn attach_bdm(&self, slot: &mut BdmSlot) -> Result<(), String> {
        let mut script = slot.script.clone();
        for r in &mut script.rules {
            r.dest = self.resolve(&r.dest)?;
            for h in &mut r.via {
                h.node = self.resolve(&h.node)?;
                h.cla = self.resolve(&h.cla)?;
            }
        }
        let addr = self.aap2_addr(&slot.node)?;
        let admin = self.admin_secret(&slot.node)?;
        let bdm = ScriptedBdm::attach(&addr, &admin, script, slot.log.clone())
            .await
            .map_err(|e| format!("dispatcher on {}: {e}", slot.node))?;
        slot.bdm = Some(bdm);
        Ok(())
    }

    /// Stops the node and starts it again on the same ports and storage,
    /// then reconnects the listeners and dispatchers that were attached to it.
    async fn restart(&mut self, name: &str) -> Result<(), String> {
        let Running { node, mut config } = self.nodes.remove(name).ok_or_else(|| format!("unknown node {name:?}"))?;
        config.aap2.tcp = node.aap2_addr().or(config.aap2.tcp);
        let mtcp = node.mtcp_addr();
        for c in &mut config.clas {
            if let ClaConfig::Mtcp { listen, .. } = c {
                *listen = mtcp.or(*listen);
            }
        }
        self.clients.retain(|(n, _), _| n != name);
        for l in self.listeners.values_mut().filter(|l| l.node == name) {
            if let Some(t) = l.task.take() {
                t.abort();
            }
        }
        for s in self.bdms.values_mut().filter(|s| s.node == name) {
            if let Some(b) = s.bdm.take() {
                b.detach().await;
            }
        }
        node.shutdown().await;
        let node = Node::start(&config, self.clock.clone())
            .await
            .map_err(|e| format!("restart {name}: {e}"))?;
        self.nodes.insert(name.to_string(), Running { node, config });

        let mut listeners = std::mem::take(&mut self.listeners);
        let mut bdms = std::mem::take(&mut self.bdms);
        let mut result = Ok(());
        for l in listeners.values_mut().filter(|l| l.node == name) {
            result = result.and(self.connect_listener(l).await);
        }
        for s in bdms.values_mut().filter(|s| s.node == name && s.bdm.is_none()) {
            result = result.and(self.attach_bdm(s).await);
        }
        self.listeners = listeners;
        self.bdms = bdms;
        result
    }

    async fn teardown(&mut self) {
        for l in self.listeners.values_mut() {
            if let Some(t) = l.task.take() {
                t.abort();
            }
        }
        for s in self.bdms.values_mut() {
            if let Some(b) = s.bdm.take() {
                b.detach().await;
            }
        }
        self.clients.clear();
        for (_, r) in std::mem::take(&mut self.nodes) {
            r.node.shutdown().await;
        }
    }
}

fn expand_tmp(v: &mut serde_json::Value, tmp: &str) {
    match v {
        serde_json::Value::String(s) if s.contains("${tmp}") => *s = s.replace("${tmp}", tmp),
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| expand_tmp(x, tmp)),
        serde_json::Value::Object(o) => o.values_mut().for_each(|x| expand_tmp(x, tmp)),
        _ => {}
    }
}
