//! Canonical line-structured graph document.
//!
//! One JSON object per line, keys sorted, tagged by `record`:
//!
//! ```text
//! {"num_layers":2,"record":"graph","schema_version":1,"total_active_features":1}
//! {"id":0,"kind":"token","layer":-1,"position":0,"record":"node","token_id":5}
//! {"activation":1.0,"feature_index":3,"id":1,"kind":"feature","layer":0,"position":0,"record":"node"}
//! {"id":2,"kind":"logit","layer":2,"position":0,"record":"node","token_id":9}
//! {"dst":1,"record":"edge","src":0,"weight":0.5}
//! {"probability":0.9,"record":"logit","token_id":9}
//! ```
//!
//! The header comes first, followed by nodes (by id), edges (by `(src, dst)`)
//! and traced logits (by descending probability). Floats use the shortest
//! decimal that round-trips exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{validate_graph, AttributionGraph, Edge, Node, NodeKind, TracedLogit, SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    num_layers: u32,
    schema_version: u32,
    total_active_features: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_index: Option<u32>,
    id: u64,
    kind: NodeKind,
    layer: i32,
    position: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_id: Option<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    dst: u64,
    src: u64,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogitRecord {
    probability: f64,
    token_id: u32,
}

fn tagged<T: Serialize>(tag: &str, record: &T) -> String {
    let mut value = serde_json::to_value(record).expect("graph records serialize");
    let map: &mut Map<String, Value> = value.as_object_mut().expect("records are objects");
    map.insert("record".to_owned(), Value::String(tag.to_owned()));
    // serde_json's default map is ordered by key.
    serde_json::to_string(&value).expect("json value serializes")
}

/// Canonical byte encoding of a graph (UTF-8, newline-terminated).
pub fn serialize_graph(g: &AttributionGraph) -> String {
    let mut out = String::new();
    let mut push = |line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    push(tagged(
        "graph",
        &HeaderRecord {
            num_layers: g.num_layers,
            schema_version: g.schema_version,
            total_active_features: g.total_active_features,
        },
    ));
    for n in &g.nodes {
        push(tagged(
            "node",
            &NodeRecord {
                activation: n.activation,
                feature_index: n.feature_index,
                id: n.id,
                kind: n.kind,
                layer: n.layer,
                position: n.position,
                token_id: n.token_id,
            },
        ));
    }
    for e in &g.edges {
        push(tagged(
            "edge",
            &EdgeRecord {
                dst: e.dst,
                src: e.src,
                weight: e.weight,
            },
        ));
    }
    for l in &g.traced_logits {
        push(tagged(
            "logit",
            &LogitRecord {
                probability: l.probability,
                token_id: l.token_id,
            },
        ));
    }
    out
}

fn schema(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Schema {
        line,
        message: message.to_string(),
    }
}

fn decode<T: for<'de> Deserialize<'de>>(line: usize, value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| schema(line, e))
}

/// Parses and validates a graph document.
pub fn parse_graph(bytes: &[u8]) -> Result<AttributionGraph> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Syntax {
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;

    let mut header: Option<HeaderRecord> = None;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut logits = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Syntax {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(mut map) = value else {
            return Err(Error::Syntax {
                line,
                message: "record is not a JSON object".into(),
            });
        };
        let tag = match map.remove("record") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(schema(line, "field `record` must be a string")),
            None => return Err(schema(line, "missing field `record`")),
        };
        let body = Value::Object(map);
        match (tag.as_str(), header.is_some()) {
            ("graph", false) if nodes.is_empty() && edges.is_empty() && logits.is_empty() => {
                let h: HeaderRecord = decode(line, body)?;
                if h.schema_version != SCHEMA_VERSION {
                    return Err(schema(
                        line,
                        format!("unsupported schema_version {}", h.schema_version),
                    ));
                }
                header = Some(h);
            }
            ("graph", _) => return Err(schema(line, "header must appear exactly once, first")),
            (_, false) => return Err(schema(line, "graph header must be the first record")),
            ("node", true) => {
                let r: NodeRecord = decode(line, body)?;
                nodes.push(Node {
                    id: r.id,
                    kind: r.kind,
                    layer: r.layer,
                    position: r.position,
                    feature_index: r.feature_index,
                    activation: r.activation,
                    token_id: r.token_id,
                });
            }
            ("edge", true) => {
                let r: EdgeRecord = decode(line, body)?;
                edges.push(Edge::new(r.src, r.dst, r.weight));
            }
            ("logit", true) => {
                let r: LogitRecord = decode(line, body)?;
                logits.push(TracedLogit {
                    token_id: r.token_id,
                    probability: r.probability,
                });
            }
            (other, true) => return Err(schema(line, format!("unknown record type {other:?}"))),
        }
    }

    let h = header.ok_or_else(|| schema(0, "empty document: missing graph header"))?;
    let g = AttributionGraph::with_schema_version(
        h.schema_version,
        h.num_layers,
        h.total_active_features,
        nodes,
        edges,
        logits,
    );
    let violations = validate_graph(&g);
    if violations.is_empty() {
        Ok(g)
    } else {
        Err(Error::Validation(violations))
    }
}

pub fn read_graph(path: &Path) -> Result<AttributionGraph> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    parse_graph(&bytes)
}

pub fn write_graph(path: &Path, g: &AttributionGraph) -> Result<()> {
    std::fs::write(path, serialize_graph(g)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ViolationKind;

    fn minimal() -> AttributionGraph {
        AttributionGraph::new(
            1,
            1,
            vec![
                Node::token(0, 0, 3),
                Node::feature(1, 0, 0, 7, 1.0),
                Node::logit(2, 1, 0, 11),
            ],
            vec![Edge::new(0, 1, 0.5), Edge::new(1, 2, 2.0)],
            vec![TracedLogit {
                token_id: 11,
                probability: 0.9,
            }],
        )
    }

    #[test]
    fn minimal_graph_round_trips_byte_identically() {
        let g = minimal();
        let text = serialize_graph(&g);
        let parsed = parse_graph(text.as_bytes()).unwrap();
        assert_eq!(parsed, g);
        assert_eq!(serialize_graph(&parsed), text);
        assert!(text.ends_with('\n'));
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"num_layers":1,"record":"graph","schema_version":1,"total_active_features":1}"#
        );
        assert!(text.contains(
            r#"{"activation":1.0,"feature_index":7,"id":1,"kind":"feature","layer":0,"position":0,"record":"node"}"#
        ));
    }

    #[test]
    fn serialization_ignores_insertion_order() {
        let g = minimal();
        let mut nodes = g.nodes().to_vec();
        nodes.reverse();
        let mut edges = g.edges().to_vec();
        edges.reverse();
        let shuffled = AttributionGraph::new(1, 1, nodes, edges, g.traced_logits().to_vec());
        assert_eq!(serialize_graph(&shuffled), serialize_graph(&g));
    }

    #[test]
    fn self_loop_is_a_validation_error() {
        let g = AttributionGraph::new(
            1,
            1,
            vec![
                Node::token(0, 0, 3),
                Node::feature(5, 0, 0, 7, 1.0),
                Node::logit(2, 1, 0, 11),
            ],
            vec![Edge::new(0, 5, 0.5), Edge::new(5, 5, 1.0), Edge::new(5, 2, 2.0)],
            vec![TracedLogit {
                token_id: 11,
                probability: 0.9,
            }],
        );
        let err = parse_graph(serialize_graph(&g).as_bytes()).unwrap_err();
        match err {
            Error::Validation(v) => {
                assert!(v
                    .iter()
                    .any(|v| v.kind == ViolationKind::SelfLoop && v.ids == vec![5, 5]));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_syntax_error() {
        let err = parse_graph(b"{\"record\":\"graph\",").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 1, .. }));
    }

    #[test]
    fn unknown_and_missing_fields_are_schema_errors() {
        let mut text = serialize_graph(&minimal());
        text = text.replace(r#""weight":0.5"#, r#""weight":0.5,"extra":1"#);
        assert!(matches!(
            parse_graph(text.as_bytes()).unwrap_err(),
            Error::Schema { .. }
        ));

        let text = serialize_graph(&minimal()).replace(r#","weight":2.0"#, "");
        assert!(matches!(
            parse_graph(text.as_bytes()).unwrap_err(),
            Error::Schema { .. }
        ));

        let text = serialize_graph(&minimal()).replace(r#""kind":"token""#, r#""kind":"embedding""#);
        assert!(matches!(
            parse_graph(text.as_bytes()).unwrap_err(),
            Error::Schema { .. }
        ));
    }

    #[test]
    fn header_must_come_first() {
        let text = serialize_graph(&minimal());
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(0, 1);
        let err = parse_graph(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
        assert!(matches!(parse_graph(b"").unwrap_err(), Error::Schema { .. }));
    }

    #[test]
    fn awkward_floats_round_trip_exactly() {
        let w = 0.1 + 0.2;
        let a = std::f64::consts::PI * 1e-7;
        let g = AttributionGraph::new(
            1,
            4,
            vec![
                Node::token(0, 0, 3),
                Node::feature(1, 0, 0, 7, a),
                Node::logit(2, 1, 0, 11),
            ],
            vec![Edge::new(0, 1, w), Edge::new(1, 2, -1e-300)],
            vec![TracedLogit {
                token_id: 11,
                probability: 1.0 / 3.0,
            }],
        );
        let back = parse_graph(serialize_graph(&g).as_bytes()).unwrap();
        assert_eq!(back.edges()[0].weight.to_bits(), w.to_bits());
        assert_eq!(back.nodes()[1].activation.unwrap().to_bits(), a.to_bits());
        assert_eq!(back, g);
    }
}
