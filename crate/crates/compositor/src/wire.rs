//! Length-prefixed framed wire protocol: a 4-byte big-endian length
//! followed by that many bytes of UTF-8 JSON `{"op","req_id","payload"}`.

use std::io::{Read, Write};

use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{serialize_service, service_from_json, ParseError, ServiceDescription};
use crate::registry::FindQuery;

pub const DEFAULT_MAX_FRAME: usize = 1 << 20; // 1 MiB

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub op: Op,
    pub req_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Register(ServiceDescription),
    Deregister(String),
    Find(FindQuery),
    FindResult(Vec<ServiceDescription>),
    SyncPull,
    SyncState(Vec<ServiceDescription>),
    Compose(Value),
    ComposeResult(Value),
    Error { code: String, detail: Value },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Register(_) => "REGISTER",
            Op::Deregister(_) => "DEREGISTER",
            Op::Find(_) => "FIND",
            Op::FindResult(_) => "FIND_RESULT",
            Op::SyncPull => "SYNC_PULL",
            Op::SyncState(_) => "SYNC_STATE",
            Op::Compose(_) => "COMPOSE",
            Op::ComposeResult(_) => "COMPOSE_RESULT",
            Op::Error { .. } => "ERROR",
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("FRAME_ERROR: {0}")]
    Frame(String),
    #[error("PARSE_ERROR: {0}")]
    Parse(#[from] ParseError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn services_json(services: &[ServiceDescription]) -> Result<Value, WireError> {
    services
        .iter()
        .map(|s| {
            let bytes = serialize_service(s)
                .map_err(|v| WireError::Frame(format!("invalid service in frame: {v:?}")))?;
            Ok(serde_json::from_slice(&bytes).expect("canonical service document"))
        })
        .collect::<Result<Vec<Value>, WireError>>()
        .map(Value::Array)
}

fn query_json(q: &FindQuery) -> Value {
    let mut obj = serde_json::Map::new();
    if let Some(c) = &q.output_concept {
        obj.insert("output_concept".into(), c.as_str().into());
    }
    if let Some(p) = &q.category_prefix {
        obj.insert("category_prefix".into(), p.clone().into());
    }
    if let Some(id) = &q.id {
        obj.insert("id".into(), id.clone().into());
    }
    Value::Object(obj)
}

fn query_from_json(v: &Value) -> Result<FindQuery, ParseError> {
    let obj = v
        .as_object()
        .ok_or_else(|| ParseError::at("payload", "expected a query object"))?;
    let mut q = FindQuery::default();
    for (k, v) in obj {
        let s = v
            .as_str()
            .ok_or_else(|| ParseError::at(&format!("payload.{k}"), "expected a string"))?;
        match k.as_str() {
            "output_concept" => {
                q.output_concept = Some(
                    crate::model::Concept::new(s)
                        .map_err(|e| ParseError::at("payload.output_concept", e.to_string()))?,
                )
            }
            "category_prefix" => q.category_prefix = Some(s.to_string()),
            "id" => q.id = Some(s.to_string()),
            _ => return Err(ParseError::at(&format!("payload.{k}"), "unknown query field")),
        }
    }
    if q.is_empty() {
        return Err(ParseError::at("payload", "at least one query criterion required"));
    }
    Ok(q)
}

fn services_from_json(v: &Value) -> Result<Vec<ServiceDescription>, ParseError> {
    v.as_array()
        .ok_or_else(|| ParseError::at("payload", "expected a service array"))?
        .iter()
        .map(service_from_json)
        .collect()
}

pub fn encode(msg: &Message, max_frame: usize) -> Result<Vec<u8>, WireError> {
    let payload = match &msg.op {
        Op::Register(desc) => {
            let bytes = serialize_service(desc)
                .map_err(|v| WireError::Frame(format!("invalid service in frame: {v:?}")))?;
            serde_json::from_slice(&bytes).expect("canonical service document")
        }
        Op::Deregister(id) => json!({ "id": id }),
        Op::Find(q) => query_json(q),
        Op::FindResult(services) | Op::SyncState(services) => services_json(services)?,
        Op::SyncPull => json!({}),
        Op::Compose(v) | Op::ComposeResult(v) => v.clone(),
        Op::Error { code, detail } => json!({ "code": code, "detail": detail }),
    };
    let body = serde_json::to_vec(&json!({
        "op": msg.op.name(),
        "req_id": msg.req_id,
        "payload": payload,
    }))
    .expect("frame body serialization");
    if body.len() > max_frame {
        return Err(WireError::Frame(format!(
            "oversize frame: {} bytes exceeds max {max_frame}",
            body.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning the message
/// and the number of bytes consumed.
pub fn decode(bytes: &[u8], max_frame: usize) -> Result<(Message, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Frame("truncated length prefix".into()));
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > max_frame {
        return Err(WireError::Frame(format!("oversize frame: {len} bytes exceeds max {max_frame}")));
    }
    if bytes.len() < 4 + len {
        return Err(WireError::Frame(format!(
            "truncated body: declared {len} bytes, got {}",
            bytes.len() - 4
        )));
    }
    let msg = decode_body(&bytes[4..4 + len])?;
    Ok((msg, 4 + len))
}

fn decode_body(body: &[u8]) -> Result<Message, WireError> {
    let value = crate::model::json_from_bytes(body)?;
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::at("", "expected a frame object"))?;
    let op_name = obj
        .get("op")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::at("op", "required field missing"))?;
    let req_id = obj
        .get("req_id")
        .and_then(Value::as_u64)
        .ok_or_else(|| ParseError::at("req_id", "required unsigned integer"))?;
    let payload = obj
        .get("payload")
        .ok_or_else(|| ParseError::at("payload", "required field missing"))?;
    let op = match op_name {
        "REGISTER" => Op::Register(service_from_json(payload)?),
        "DEREGISTER" => {
            let id = payload
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| ParseError::at("payload.id", "required field missing"))?;
            Op::Deregister(id.to_string())
        }
        "FIND" => Op::Find(query_from_json(payload)?),
        "FIND_RESULT" => Op::FindResult(services_from_json(payload)?),
        "SYNC_PULL" => Op::SyncPull,
        "SYNC_STATE" => Op::SyncState(services_from_json(payload)?),
        "COMPOSE" => Op::Compose(payload.clone()),
        "COMPOSE_RESULT" => Op::ComposeResult(payload.clone()),
        "ERROR" => Op::Error {
            code: payload
                .get("code")
                .and_then(Value::as_str)
                .ok_or_else(|| ParseError::at("payload.code", "required field missing"))?
                .to_string(),
            detail: payload.get("detail").cloned().unwrap_or(Value::Null),
        },
        other => return Err(ParseError::at("op", format!("unknown op {other:?}")).into()),
    };
    Ok(Message { op, req_id })
}

/// Blocking read of exactly one frame from a stream.
pub fn read_frame<R: Read>(r: &mut R, max_frame: usize) -> Result<Message, WireError> {
    let mut prefix = [0u8; 4];
    r.read_exact(&mut prefix)?;
    let len = u32::from_be_bytes(prefix) as usize;
    if len > max_frame {
        return Err(WireError::Frame(format!("oversize frame: {len} bytes exceeds max {max_frame}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message, max_frame: usize) -> Result<(), WireError> {
    let bytes = encode(msg, max_frame)?;
    w.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{cat1, concept};

    #[test]
    fn find_round_trips() {
        let msg = Message {
            op: Op::Find(FindQuery::by_output(concept("C"))),
            req_id: 7,
        };
        let bytes = encode(&msg, DEFAULT_MAX_FRAME).unwrap();
        let declared = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        assert_eq!(declared, bytes.len() - 4);
        let (decoded, used) = decode(&bytes, DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(decoded, msg);
    }

    #[test]
    fn all_ops_round_trip() {
        let msgs = vec![
            Message { op: Op::Register(cat1()[0].clone()), req_id: 1 },
            Message { op: Op::Deregister("S1".into()), req_id: 2 },
            Message { op: Op::FindResult(cat1()), req_id: 3 },
            Message { op: Op::SyncPull, req_id: 4 },
            Message { op: Op::SyncState(cat1()), req_id: 5 },
            Message { op: Op::Compose(serde_json::json!({"desired": ["C"]})), req_id: 6 },
            Message {
                op: Op::Error { code: "NO_COMPOSITION".into(), detail: serde_json::json!({"unreachable": ["Z"]}) },
                req_id: 7,
            },
        ];
        for msg in msgs {
            let bytes = encode(&msg, DEFAULT_MAX_FRAME).unwrap();
            let (decoded, _) = decode(&bytes, DEFAULT_MAX_FRAME).unwrap();
            assert_eq!(decoded, msg);
        }
    }

    #[test]
    fn truncated_body_is_a_frame_error() {
        let mut bytes = 5u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(b"abc");
        let err = decode(&bytes, DEFAULT_MAX_FRAME).unwrap_err();
        assert!(matches!(err, WireError::Frame(m) if m.contains("truncated")));
    }

    #[test]
    fn oversize_frame_is_rejected_both_ways() {
        let mut bytes = ((DEFAULT_MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        bytes.extend_from_slice(&[b' '; 8]);
        let err = decode(&bytes, DEFAULT_MAX_FRAME).unwrap_err();
        assert!(matches!(err, WireError::Frame(m) if m.contains("oversize")));

        let msg = Message {
            op: Op::Compose(serde_json::Value::String("x".repeat(DEFAULT_MAX_FRAME))),
            req_id: 1,
        };
        let err = encode(&msg, DEFAULT_MAX_FRAME).unwrap_err();
        assert!(matches!(err, WireError::Frame(m) if m.contains("oversize")));
    }
}
