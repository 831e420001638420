//! Timed fabric messages. Delivery time is issue time plus the route's
//! hop latencies plus one serialization delay of payload over the
//! bottleneck bandwidth; sequence numbers make same-cycle delivery
//! order deterministic.

use crate::ir::NodeId;

/// Functional outcome of one slice execution, shipped back to the host.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceResult {
    pub live_outs: Vec<u64>,
    /// Line addresses and payloads to opportunistically fill into L1,
    /// newest first, already truncated to the fill cap.
    pub fill_lines: Vec<(u64, [u8; 64])>,
    /// Every load the slice performed, in execution order: (address,
    /// value). Spliced into the host's load-value trace at the await.
    pub loads: Vec<(u64, u64)>,
    /// Stores the slice performed, in order: (address, bytes).
    pub stores: Vec<(u64, Vec<u8>)>,
    /// Cycles the near core spent executing.
    pub exec_cycles: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SliceOutcome {
    Ok(SliceResult),
    Trap(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    ReadReq { line: u64 },
    ReadResp { line: u64, payload: [u8; 64] },
    WriteReq { addr: u64, bytes: Vec<u8> },
    WriteAck { addr: u64 },
    SliceSubmit { slice: u32, live_ins: Vec<u64> },
    SliceDone { slice: u32, outcome: SliceOutcome },
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::ReadReq { .. } => "read_req",
            MessageKind::ReadResp { .. } => "read_resp",
            MessageKind::WriteReq { .. } => "write_req",
            MessageKind::WriteAck { .. } => "write_ack",
            MessageKind::SliceSubmit { .. } => "slice_submit",
            MessageKind::SliceDone { .. } => "slice_done",
        }
    }

    /// Bytes on the wire. Control headers are not modeled; data and
    /// operand words are.
    pub fn payload_bytes(&self) -> u64 {
        match self {
            MessageKind::ReadReq { .. } => 8,
            MessageKind::ReadResp { .. } => 64,
            MessageKind::WriteReq { bytes, .. } => bytes.len() as u64,
            MessageKind::WriteAck { .. } => 0,
            MessageKind::SliceSubmit { live_ins, .. } => 8 * live_ins.len() as u64,
            MessageKind::SliceDone { outcome, .. } => match outcome {
                SliceOutcome::Ok(r) => 8 * r.live_outs.len() as u64 + 64 * r.fill_lines.len() as u64,
                SliceOutcome::Trap(_) => 8,
            },
        }
    }

    /// True for responses that carry memory data; these must carry
    /// exactly one 64-byte line each.
    pub fn is_data_response(&self) -> bool {
        matches!(self, MessageKind::ReadResp { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabricMessage {
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub issue_time: u64,
    pub deliver_time: u64,
    pub seq: u64,
}

impl FabricMessage {
    /// One line of the diffable message log.
    pub fn log_line(&self) -> String {
        let extra = match &self.kind {
            MessageKind::ReadReq { line } => format!("line={line:#x}"),
            MessageKind::ReadResp { line, .. } => format!("line={line:#x} bytes=64"),
            MessageKind::WriteReq { addr, bytes } => format!("addr={addr:#x} bytes={}", bytes.len()),
            MessageKind::WriteAck { addr } => format!("addr={addr:#x}"),
            MessageKind::SliceSubmit { slice, live_ins } => {
                format!("slice={slice} ins={}", live_ins.len())
            }
            MessageKind::SliceDone { slice, outcome } => match outcome {
                SliceOutcome::Ok(r) => format!(
                    "slice={slice} outs={} fills={} cycles={}",
                    r.live_outs.len(),
                    r.fill_lines.len(),
                    r.exec_cycles
                ),
                SliceOutcome::Trap(msg) => format!("slice={slice} trap={msg}"),
            },
        };
        format!(
            "{seq} {kind} {src}->{dst} issue={issue} deliver={deliver} {extra}",
            seq = self.seq,
            kind = self.kind.name(),
            src = self.src,
            dst = self.dst,
            issue = self.issue_time,
            deliver = self.deliver_time,
        )
    }
}
