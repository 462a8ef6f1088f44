//! Endpoint registrations. Each agent id has at most one sender (active
//! connection) and one receiver (passive connection), bound by a shared secret.

use std::collections::HashMap;

use thiserror::Error;

use super::ConnId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Active client control: the client hands bundles to the daemon.
    Sender,
    /// Passive: the daemon delivers bundles to the client.
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sink {
    Conn(ConnId),
    /// Built-in endpoint served inside the node (storage, BIBE).
    Service,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("invalid agent id {0:?}")]
    InvalidAgentId(String),
    #[error("endpoint {0:?} is occupied")]
    Occupied(String),
}

#[derive(Debug)]
struct Slots {
    secret: Vec<u8>,
    sender: Option<Sink>,
    receiver: Option<Sink>,
}

impl Slots {
    fn slot(&mut self, d: Direction) -> &mut Option<Sink> {
        match d {
            Direction::Sender => &mut self.sender,
            Direction::Receiver => &mut self.receiver,
        }
    }
}

pub fn valid_agent_id(agent_id: &str) -> bool {
    !agent_id.is_empty() && !agent_id.chars().any(|c| c.is_whitespace() || c.is_control())
}

#[derive(Debug, Default)]
pub struct Registry {
    agents: HashMap<String, Slots>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A second registration for an agent id succeeds only with the same
    /// secret and the other direction.
    pub fn register(&mut self, agent_id: &str, direction: Direction, sink: Sink, secret: &[u8]) -> Result<(), RegistryError> {
        if !valid_agent_id(agent_id) {
            return Err(RegistryError::InvalidAgentId(agent_id.to_string()));
        }
        match self.agents.get_mut(agent_id) {
            None => {
                let mut slots = Slots {
                    secret: secret.to_vec(),
                    sender: None,
                    receiver: None,
                };
                *slots.slot(direction) = Some(sink);
                self.agents.insert(agent_id.to_string(), slots);
                Ok(())
            }
            Some(slots) => {
                if slots.secret != secret || slots.slot(direction).is_some() {
                    return Err(RegistryError::Occupied(agent_id.to_string()));
                }
                *slots.slot(direction) = Some(sink);
                Ok(())
            }
        }
    }

    pub fn unregister(&mut self, agent_id: &str, direction: Direction, sink: Sink) {
        if let Some(slots) = self.agents.get_mut(agent_id) {
            if *slots.slot(direction) == Some(sink) {
                *slots.slot(direction) = None;
            }
            if slots.sender.is_none() && slots.receiver.is_none() {
                self.agents.remove(agent_id);
            }
        }
    }

    pub fn receiver(&self, agent_id: &str) -> Option<Sink> {
        self.agents.get(agent_id).and_then(|s| s.receiver)
    }

    pub fn sender(&self, agent_id: &str) -> Option<Sink> {
        self.agents.get(agent_id).and_then(|s| s.sender)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}
