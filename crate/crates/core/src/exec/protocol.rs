//! Newline-delimited JSON frames exchanged with feature worker processes.
//!
//! Requests:
//!
//! ```text
//! {"id":1,"op":"load","feature_id":"..","source":".."}
//! {"id":2,"op":"eval","feature_id":"..","examples":[<payload>, ..]}
//! {"id":3,"op":"shutdown"}
//! ```
//!
//! Responses are `{"id":N,"ok":true,"values":[..]}` or
//! `{"id":N,"ok":false,"error":{"kind":"..","message":"..","example_index":N}}`.
//! Payloads use the same encoding as dataset records.

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ExecFailure, FailureKind};
use crate::data::Payload;
use crate::feature::FeatureId;

#[derive(Debug, Clone, PartialEq)]
pub enum Request<'a> {
    Load {
        id: u64,
        feature_id: &'a FeatureId,
        source: &'a str,
    },
    Eval {
        id: u64,
        feature_id: &'a FeatureId,
        examples: &'a [&'a Payload],
    },
    Shutdown {
        id: u64,
    },
}

impl Request<'_> {
    pub fn id(&self) -> u64 {
        match self {
            Request::Load { id, .. } | Request::Eval { id, .. } | Request::Shutdown { id } => *id,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Request::Load { id, feature_id, source } => json!({
                "id": id,
                "op": "load",
                "feature_id": feature_id.as_str(),
                "source": source,
            }),
            Request::Eval { id, feature_id, examples } => json!({
                "id": id,
                "op": "eval",
                "feature_id": feature_id.as_str(),
                "examples": examples.iter().map(|p| p.to_json()).collect::<Vec<_>>(),
            }),
            Request::Shutdown { id } => json!({ "id": id, "op": "shutdown" }),
        }
    }

    /// One frame, terminated by `\n`.
    pub fn to_line(&self) -> String {
        let mut line = self.to_value().to_string();
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WireError {
    pub kind: String,
    pub message: String,
    #[serde(default)]
    pub example_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default)]
    pub values: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub error: Option<WireError>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed response frame: {0}")]
    Malformed(String),
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

pub fn parse_response(line: &str) -> Result<Response, ProtocolError> {
    let response: Response = serde_json::from_str(line.trim_end()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match (response.ok, &response.values, &response.error) {
        (true, Some(_), _) | (false, _, Some(_)) => Ok(response),
        (true, None, _) => Err(ProtocolError::Malformed("ok response without `values`".into())),
        (false, _, None) => Err(ProtocolError::Malformed("error response without `error`".into())),
    }
}

impl Response {
    /// Converts a response to an eval request of `expected` payloads into
    /// values or the reported failure. `null` values count as non-finite.
    pub fn into_values(self, expected: usize) -> Result<Result<Vec<f64>, ExecFailure>, ProtocolError> {
        if !self.ok {
            return Ok(Err(self.error.expect("checked in parse_response").into()));
        }
        let values = self.values.unwrap_or_default();
        if values.len() != expected {
            return Err(ProtocolError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut out = Vec::with_capacity(expected);
        for (i, v) in values.into_iter().enumerate() {
            match v {
                Some(x) => out.push(x),
                None => {
                    return Ok(Err(ExecFailure::new(FailureKind::NonFinite, "worker returned null").at(i)));
                }
            }
        }
        Ok(Ok(out))
    }

    pub fn into_unit(self) -> Result<(), ExecFailure> {
        match self.error {
            Some(e) if !self.ok => Err(e.into()),
            _ => Ok(()),
        }
    }
}

impl From<WireError> for ExecFailure {
    fn from(e: WireError) -> Self {
        ExecFailure {
            // unknown kinds from a misbehaving worker are treated as exceptions
            kind: FailureKind::parse(&e.kind).unwrap_or(FailureKind::RuntimeException),
            message: e.message,
            example_index: e.example_index,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_frames_are_bit_exact() {
        let fid = FeatureId::of_source("s");
        let load = Request::Load { id: 1, feature_id: &fid, source: "x = 1\n" };
        assert_eq!(
            load.to_line(),
            format!("{{\"id\":1,\"op\":\"load\",\"feature_id\":\"{fid}\",\"source\":\"x = 1\\n\"}}\n")
        );
        let p = Payload::Tabular(vec![("a".into(), 1.5)]);
        let eval = Request::Eval { id: 2, feature_id: &fid, examples: &[&p] };
        assert_eq!(
            eval.to_line(),
            format!("{{\"id\":2,\"op\":\"eval\",\"feature_id\":\"{fid}\",\"examples\":[{{\"a\":1.5}}]}}\n")
        );
        assert_eq!(Request::Shutdown { id: 3 }.to_line(), "{\"id\":3,\"op\":\"shutdown\"}\n");
    }

    #[test]
    fn parses_success_and_error() {
        let ok = parse_response(r#"{"id":4,"ok":true,"values":[1.0,2.5]}"#).unwrap();
        assert_eq!(ok.into_values(2).unwrap().unwrap(), vec![1.0, 2.5]);

        let err = parse_response(
            r#"{"id":5,"ok":false,"error":{"kind":"runtime_exception","message":"boom","example_index":2}}"#,
        )
        .unwrap();
        let failure = err.into_values(5).unwrap().unwrap_err();
        assert_eq!(failure.kind, FailureKind::RuntimeException);
        assert_eq!(failure.example_index, Some(2));

        let nf = parse_response(r#"{"id":6,"ok":false,"error":{"kind":"non_finite","message":"inf"}}"#).unwrap();
        assert_eq!(nf.into_values(1).unwrap().unwrap_err().kind, FailureKind::NonFinite);
    }

    #[test]
    fn rejects_malformed_frames() {
        assert!(parse_response("not json").is_err());
        assert!(parse_response(r#"{"id":1,"ok":true}"#).is_err());
        assert!(parse_response(r#"{"id":1,"ok":false}"#).is_err());
        let short = parse_response(r#"{"id":1,"ok":true,"values":[1.0]}"#).unwrap();
        assert!(matches!(short.into_values(2), Err(ProtocolError::LengthMismatch { .. })));
    }

    #[test]
    fn null_value_is_non_finite() {
        let r = parse_response(r#"{"id":1,"ok":true,"values":[1.0,null]}"#).unwrap();
        let f = r.into_values(2).unwrap().unwrap_err();
        assert_eq!((f.kind, f.example_index), (FailureKind::NonFinite, Some(1)));
    }
}
