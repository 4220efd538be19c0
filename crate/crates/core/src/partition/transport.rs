//! Message transport between partition workers.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("partition {0} is unreachable")]
    Disconnected(usize),
    #[error("no message from any peer within {0:?}")]
    Timeout(Duration),
    #[error("all peers hung up")]
    Closed,
}

/// Point-to-point byte messages; delivery order between one pair of peers is
/// preserved.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn send(&mut self, dest: usize, msg: Vec<u8>) -> Result<(), TransportError>;
    /// Non-blocking receive.
    fn poll(&mut self) -> Option<Vec<u8>>;
    /// Blocking receive with a timeout.
    fn wait(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;
}

/// Channel-based transport for workers sharing one process.
pub struct InProcess {
    rank: usize,
    peers: Vec<Sender<Vec<u8>>>,
    inbox: Receiver<Vec<u8>>,
}

impl InProcess {
    /// One connected endpoint per rank.
    pub fn mesh(n: usize) -> Vec<InProcess> {
        let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| channel()).unzip();
        receivers
            .into_iter()
            .enumerate()
            .map(|(rank, inbox)| InProcess { rank, peers: senders.clone(), inbox })
            .collect()
    }
}

impl Transport for InProcess {
    fn rank(&self) -> usize {
        self.rank
    }

    fn send(&mut self, dest: usize, msg: Vec<u8>) -> Result<(), TransportError> {
        self.peers.get(dest).ok_or(TransportError::Disconnected(dest))?.send(msg).map_err(|_| TransportError::Disconnected(dest))
    }

    fn poll(&mut self) -> Option<Vec<u8>> {
        self.inbox.try_recv().ok()
    }

    fn wait(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.inbox.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout(timeout),
            RecvTimeoutError::Disconnected => TransportError::Closed,
        })
    }
}
