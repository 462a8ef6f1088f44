//! Issuing storage commands over the agent protocol, as an external tool would.

use std::time::Duration;

use crate::aap2::{Aap2Client, Aap2Error, Auth, AuthSet};
use crate::eid::EndpointId;

use super::{StorageCommand, StorageReply};

/// Sends `cmd` to the storage endpoint `storage_agent` of the node at
/// `address` and waits for the reply bundle. A throwaway agent id is
/// registered in both directions so the reply can be received.
pub async fn remote_command(
    address: &str,
    storage_agent: &str,
    admin_secret: Option<&[u8]>,
    cmd: &StorageCommand,
    timeout: Duration,
) -> Result<StorageReply, Aap2Error> {
    let agent = format!("sqctl-{:08x}", rand::random::<u32>());
    let secret: [u8; 16] = rand::random();
    let mut rx = Aap2Client::passive(address, &agent, &secret).await?;
    let (auth, admin) = match admin_secret {
        Some(s) => (AuthSet::from([Auth::LinkControl]), s),
        None => (AuthSet::new(), &[][..]),
    };
    let mut tx = Aap2Client::open(address, true, &agent, &secret, auth, admin).await?;
    let dst: EndpointId = tx
        .node_id()
        .with_agent(storage_agent)
        .map_err(|_| Aap2Error::Unexpected("node id cannot carry a storage endpoint"))?;
    tx.send_adu(&dst, cmd.encode(), None).await?;
    let adu = rx.recv_adu_timeout(timeout).await?;
    StorageReply::decode(&adu.payload).map_err(|_| Aap2Error::Unexpected("malformed storage reply"))
}
