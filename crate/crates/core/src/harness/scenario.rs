//! Declarative scenario files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::bdm::{BdmRule, BdmScript, Otherwise};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Seeds generated payloads.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clock: ClockSpec,
    /// Bound on each expectation, in real milliseconds.
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    pub nodes: Vec<NodeSpec>,
    pub steps: Vec<Step>,
}

fn default_timeout() -> u64 {
    10_000
}

#[derive(Debug, Clone, Copy, Deserialize, Default, PartialEq, Eq)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClockSpec {
    #[default]
    Real,
    Sim {
        #[serde(default = "default_sim_start")]
        start_ms: u64,
    },
}

fn default_sim_start() -> u64 {
    // 2023-01-01T00:00:00Z in DTN time.
    725_846_400_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    /// A daemon configuration. `${tmp}` expands to a per-run directory;
    /// unset listeners bind to an ephemeral loopback port.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    LinkUp(LinkStep),
    LinkDown(LinkStep),
    Listen(ListenStep),
    Send(SendStep),
    /// Moves the simulated clock forward (milliseconds).
    Advance(u64),
    /// Real-time pause (milliseconds).
    Sleep(u64),
    Restart(String),
    Storage(StorageStep),
    RawMtcp(RawMtcpStep),
    Bdm(BdmStep),
    BdmDetach(String),
    Expect(Expectation),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkStep {
    pub node: String,
    pub peer: String,
    pub cla: String,
    #[serde(default)]
    pub flags: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListenStep {
    pub id: String,
    pub node: String,
    pub agent: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SendStep {
    pub id: String,
    pub node: String,
    pub to: String,
    #[serde(default = "default_sender")]
    pub agent: String,
    /// Literal UTF-8 payload.
    #[serde(default)]
    pub payload: Option<String>,
    /// Generated payload of this many octets.
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub lifetime_ms: Option<u64>,
}

fn default_sender() -> String {
    "harness".into()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum VerbSpec {
    Query,
    Delete,
    Recall,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageStep {
    pub node: String,
    pub verb: VerbSpec,
    #[serde(default)]
    pub dest: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub delete_after: Option<bool>,
    /// Records (QUERY) or count (DELETE, RECALL) the reply must carry.
    #[serde(default)]
    pub expect_count: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMtcpStep {
    pub node: String,
    pub frames: Vec<RawFrame>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RawFrame {
    /// Frame contents as hex; framed as a CBOR byte string.
    Hex(String),
    Bundle(RawBundle),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBundle {
    /// Records the payload like a send step with this id.
    #[serde(default)]
    pub id: Option<String>,
    pub src: String,
    pub dst: String,
    pub payload: String,
    #[serde(default = "default_raw_lifetime")]
    pub lifetime_ms: u64,
}

fn default_raw_lifetime() -> u64 {
    3_600_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdmStep {
    pub id: String,
    pub node: String,
    #[serde(default)]
    pub rules: Vec<BdmRule>,
    #[serde(default)]
    pub default: Otherwise,
}

impl BdmStep {
    pub fn script(&self) -> BdmScript {
        BdmScript {
            rules: self.rules.clone(),
            default: self.default,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    /// The listener holds exactly the payloads of the named sends.
    Received {
        listener: String,
        sends: Vec<String>,
        #[serde(default)]
        within_ms: Option<u64>,
    },
    /// A storage QUERY at the node returns `count` records.
    Stored {
        node: String,
        #[serde(default)]
        dest: Option<String>,
        count: u64,
    },
    /// Node statistics, addressed by JSON pointer without the leading slash.
    Stats {
        node: String,
        #[serde(default)]
        equals: BTreeMap<String, u64>,
        #[serde(default)]
        at_least: BTreeMap<String, u64>,
    },
    /// ingested == delivered + forwarded + stored + dropped with nothing pending.
    Accounting(Vec<String>),
    BdmRequests {
        bdm: String,
        count: u64,
    },
    SimElapsedAtMost(u64),
    Alive(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {0}: {1}")]
    Read(String, std::io::Error),
    #[error("invalid scenario at `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Read(path.display().to_string(), e))?;
        Scenario::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Invalid {
            key: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }
}

impl Step {
    /// Short description for reports; free of run-specific values.
    pub fn label(&self) -> String {
        match self {
            Step::LinkUp(l) => format!("link_up {} -> {}", l.node, l.peer),
            Step::LinkDown(l) => format!("link_down {} -> {}", l.node, l.peer),
            Step::Listen(l) => format!("listen {} on {} as {}", l.id, l.node, l.agent),
            Step::Send(s) => format!("send {} x{} from {} to {}", s.id, s.count, s.node, s.to),
            Step::Advance(ms) => format!("advance {ms} ms"),
            Step::Sleep(ms) => format!("sleep {ms} ms"),
            Step::Restart(n) => format!("restart {n}"),
            Step::Storage(s) => format!("storage {:?} at {}", s.verb, s.node),
            Step::RawMtcp(r) => format!("raw_mtcp {} frames to {}", r.frames.len(), r.node),
            Step::Bdm(b) => format!("bdm {} attaches to {}", b.id, b.node),
            Step::BdmDetach(id) => format!("bdm {id} detaches"),
            Step::Expect(e) => match e {
                Expectation::Received { listener, sends, .. } => format!("expect {listener} received {}", sends.join(",")),
                Expectation::Stored { node, count, .. } => format!("expect {count} stored at {node}"),
                Expectation::Stats { node, .. } => format!("expect stats at {node}"),
                Expectation::Accounting(n) => format!("expect accounting closes at {}", n.join(",")),
                Expectation::BdmRequests { bdm, count } => format!("expect {count} dispatch requests at {bdm}"),
                Expectation::SimElapsedAtMost(ms) => format!("expect simulated time <= {ms} ms"),
                Expectation::Alive(n) => format!("expect {n} alive"),
            },
        }
    }
}
