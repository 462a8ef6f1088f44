//! A table-driven Bundle Dispatcher Module that attaches over the agent
//! protocol like an external one. It follows link notifications and only
//! forwards over next hops it has seen CONNECTED.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use tokio::task::JoinHandle;

use crate::aap2::{Aap2Client, Aap2Error, Auth, AuthSet, Incoming, LinkMessage, LinkOp, Response};
use crate::cla::ClaAddress;
use crate::dispatch::{DispatchDecision, NextHop};
use crate::eid::EndpointId;
use crate::fib::FibFlags;
use crate::storage::filter::wildcard_match;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Otherwise {
    Store,
    #[default]
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopSpec {
    pub node: String,
    pub cla: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdmRule {
    /// Wildcard pattern over the destination EID.
    pub dest: String,
    #[serde(default)]
    pub via: Vec<HopSpec>,
    /// Decision when none of `via` is connected.
    #[serde(default)]
    pub otherwise: Otherwise,
    #[serde(default)]
    pub max_fragment_payload: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BdmScript {
    #[serde(default)]
    pub rules: Vec<BdmRule>,
    /// Decision for destinations no rule matches.
    #[serde(default)]
    pub default: Otherwise,
}

/// Requests answered and decisions taken, kept across re-attachments.
#[derive(Debug, Default)]
pub struct BdmLog {
    requests: AtomicU64,
    decisions: Mutex<Vec<String>>,
}

impl BdmLog {
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn decisions(&self) -> Vec<String> {
        self.decisions.lock().unwrap().clone()
    }
}

struct Table {
    rules: Vec<(BdmRule, Vec<NextHop>)>,
    default: Otherwise,
    connected: HashMap<(EndpointId, ClaAddress), bool>,
}

impl Table {
    fn new(script: BdmScript) -> Result<Table, String> {
        let mut rules = Vec::new();
        for r in script.rules {
            let mut hops = Vec::new();
            for h in &r.via {
                hops.push(NextHop {
                    node_id: EndpointId::parse_node_id(&h.node).map_err(|e| format!("{}: {e}", h.node))?,
                    cla_address: h.cla.parse().map_err(|e| format!("{}: {e}", h.cla))?,
                });
            }
            rules.push((r, hops));
        }
        Ok(Table {
            rules,
            default: script.default,
            connected: HashMap::new(),
        })
    }

    fn on_link(&mut self, l: &LinkMessage) {
        let key = (l.node_id.clone(), l.cla_address.clone());
        match l.op {
            LinkOp::NotifyUp => {
                let up = l.flags.is_some_and(|f| FibFlags(f).contains(FibFlags::CONNECTED));
                self.connected.insert(key, up);
            }
            LinkOp::NotifyDown => {
                self.connected.remove(&key);
            }
            _ => {}
        }
    }

    fn is_up(&self, address: &ClaAddress) -> bool {
        self.connected.iter().any(|((_, a), up)| a == address && *up)
    }

    fn decide(&self, dst: &EndpointId) -> DispatchDecision {
        let text = dst.to_string();
        let Some((rule, hops)) = self.rules.iter().find(|(r, _)| wildcard_match(&r.dest, &text)) else {
            return otherwise(self.default, "no rule");
        };
        let up: Vec<NextHop> = hops.iter().filter(|h| self.is_up(&h.cla_address)).cloned().collect();
        if up.is_empty() {
            return otherwise(rule.otherwise, "next hop not connected");
        }
        let mut d = DispatchDecision::forward(up);
        d.max_fragment_payload = rule.max_fragment_payload;
        d
    }
}

fn otherwise(o: Otherwise, reason: &str) -> DispatchDecision {
    match o {
        Otherwise::Store => DispatchDecision::store(),
        Otherwise::Drop => DispatchDecision::drop(reason),
    }
}

pub struct ScriptedBdm {
    log: Arc<BdmLog>,
    task: JoinHandle<()>,
}

impl ScriptedBdm {
    /// Connects to the node at `address` and claims dispatch authority.
    pub async fn attach(address: &str, admin_secret: &[u8], script: BdmScript, log: Arc<BdmLog>) -> Result<ScriptedBdm, Aap2Error> {
        let mut table = Table::new(script).map_err(|_| Aap2Error::Unexpected("invalid next hop in dispatcher script"))?;
        let auth = AuthSet::from([Auth::Dispatch, Auth::LinkControl]);
        let mut client = Aap2Client::open(address, false, "", &[], auth, admin_secret).await?;
        let node = client.node_id().clone();
        let task_log = log.clone();
        let task = tokio::spawn(async move {
            loop {
                let r = match client.recv().await {
                    Ok(Incoming::Dispatch(req)) => {
                        let d = table.decide(&req.meta.dst);
                        task_log.requests.fetch_add(1, Ordering::SeqCst);
                        task_log.decisions.lock().unwrap().push(format!("{} -> {d}", req.meta.dst));
                        client.dispatch(req.request_id, d).await
                    }
                    Ok(Incoming::Link(l)) => {
                        table.on_link(&l);
                        client.answer(Response::ok()).await
                    }
                    Ok(_) => client.answer(Response::ok()).await,
                    Err(e) => Err(e),
                };
                if let Err(e) = r {
                    log::debug!("dispatcher for {node} detached: {e}");
                    break;
                }
            }
        });
        Ok(ScriptedBdm { log, task })
    }

    pub fn log(&self) -> &Arc<BdmLog> {
        &self.log
    }

    /// Drops the connection; the node loses its dispatcher.
    pub async fn detach(self) {
        self.task.abort();
        let _ = self.task.await;
    }
}
