//! Hand-written validators for every wire message and artifact file.
//!
//! Validators walk the whole document and report every violation they find
//! instead of stopping at the first.

use std::fmt;
use std::str::FromStr;

use base64::Engine;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::model::{Trajectory, Violation};

/// Largest accepted base64 image field, in bytes of encoded text.
pub const MAX_PAYLOAD_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemaId {
    PolicyRequest,
    PolicyResponse,
    EditorRequest,
    EditorResponse,
    TerminatorRequest,
    TerminatorResponse,
    ScorerRequest,
    ScorerResponse,
    Trajectory,
    Sample,
    Bench,
    Source,
}

impl SchemaId {
    pub const ALL: [SchemaId; 12] = [
        SchemaId::PolicyRequest,
        SchemaId::PolicyResponse,
        SchemaId::EditorRequest,
        SchemaId::EditorResponse,
        SchemaId::TerminatorRequest,
        SchemaId::TerminatorResponse,
        SchemaId::ScorerRequest,
        SchemaId::ScorerResponse,
        SchemaId::Trajectory,
        SchemaId::Sample,
        SchemaId::Bench,
        SchemaId::Source,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemaId::PolicyRequest => "policy-request",
            SchemaId::PolicyResponse => "policy-response",
            SchemaId::EditorRequest => "editor-request",
            SchemaId::EditorResponse => "editor-response",
            SchemaId::TerminatorRequest => "terminator-request",
            SchemaId::TerminatorResponse => "terminator-response",
            SchemaId::ScorerRequest => "scorer-request",
            SchemaId::ScorerResponse => "scorer-response",
            SchemaId::Trajectory => crate::model::TRAJECTORY_SCHEMA,
            SchemaId::Sample => crate::pipeline::SAMPLE_SCHEMA,
            SchemaId::Bench => crate::eval::BENCH_SCHEMA,
            SchemaId::Source => crate::pipeline::SOURCE_SCHEMA,
        }
    }

    /// Schema named by a record's top-level `schema` field, if any.
    pub fn of_record(value: &Value) -> Option<SchemaId> {
        value.get("schema")?.as_str()?.parse().ok()
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown schema id {0:?}")]
pub struct UnknownSchema(pub String);

impl FromStr for SchemaId {
    type Err = UnknownSchema;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemaId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| UnknownSchema(s.to_string()))
    }
}

/// Validates raw bytes against a schema, returning every violation.
pub fn validate_message(raw: &[u8], schema: SchemaId) -> Result<(), Vec<Violation>> {
    let value: Value = match serde_json::from_slice(raw) {
        Ok(v) => v,
        Err(e) => return Err(vec![Violation::new("$", format!("not valid JSON: {e}"))]),
    };
    let v = validate_value(&value, schema);
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Same as [`validate_message`] on an already parsed document.
pub fn validate_value(value: &Value, schema: SchemaId) -> Vec<Violation> {
    let mut c = Checker::default();
    let Some(map) = c.object(value, "") else {
        return c.out;
    };
    match schema {
        SchemaId::PolicyRequest => {
            c.image(map, "original_image");
            c.image(map, "current_image");
            c.text(map, "instruction", true);
            if let Some(h) = map.get("history") {
                match h.as_array() {
                    Some(items) => {
                        for (i, item) in items.iter().enumerate() {
                            if !item.is_string() {
                                c.push(format!("history[{i}]"), "expected string");
                            }
                        }
                    }
                    None => c.push("history", "expected array of strings"),
                }
            }
        }
        SchemaId::PolicyResponse => {
            let action = c.enumeration(map, "action", &["edit", "stop"]);
            let text = c.optional_text(map, "instruction_text");
            match (action, text) {
                (Some("stop"), Some(_)) => {
                    c.push("instruction_text", "must be absent when action is stop")
                }
                (Some("edit"), None) if !map.contains_key("instruction_text") => {
                    c.push("instruction_text", "required when action is edit")
                }
                (Some("edit"), Some(t)) if t.trim().is_empty() => {
                    c.push("instruction_text", "must be nonempty when action is edit")
                }
                _ => {}
            }
            c.optional_text(map, "reasoning");
        }
        SchemaId::EditorRequest => {
            c.image(map, "image");
            c.text(map, "instruction_text", true);
        }
        SchemaId::EditorResponse => {
            c.image(map, "image");
            c.positive(map, "width");
            c.positive(map, "height");
        }
        SchemaId::TerminatorRequest => {
            c.image(map, "current_image");
            c.image(map, "original_image");
            c.text(map, "instruction", true);
        }
        SchemaId::TerminatorResponse => {
            c.enumeration(map, "decision", &["continue", "stop"]);
        }
        SchemaId::ScorerRequest => {
            c.image(map, "source_image");
            c.image(map, "edited_image");
            c.text(map, "instruction_text", true);
        }
        SchemaId::ScorerResponse => {
            for key in ["sc", "pq", "overall"] {
                c.score(map, key);
            }
        }
        SchemaId::Trajectory => {
            c.tag(map, schema);
            c.typed::<Trajectory>(value, Trajectory::violations);
        }
        SchemaId::Sample => {
            c.tag(map, schema);
            c.typed::<crate::pipeline::SupervisionRecord>(value, |r| r.violations());
        }
        SchemaId::Bench => {
            c.tag(map, schema);
            c.text(map, "sample_id", true);
            c.image(map, "image");
            if let Some(text) = c.text(map, "instruction", true) {
                let n = crate::model::word_count(text);
                if n > crate::model::DEFAULT_WORD_CAP {
                    c.push(
                        "instruction",
                        format!("{n} words exceeds cap of {}", crate::model::DEFAULT_WORD_CAP),
                    );
                }
            }
        }
        SchemaId::Source => {
            c.text(map, "source_id", true);
            c.image(map, "image");
            match map.get("atomic_edits").and_then(Value::as_array) {
                None => c.push("atomic_edits", "required array of strings"),
                Some(items) if items.is_empty() => c.push("atomic_edits", "must be nonempty"),
                Some(items) => {
                    for (i, item) in items.iter().enumerate() {
                        if item.as_str().map(|s| s.trim().is_empty()).unwrap_or(true) {
                            c.push(format!("atomic_edits[{i}]"), "expected nonempty string");
                        }
                    }
                }
            }
        }
    }
    c.out
}

#[derive(Default)]
struct Checker {
    out: Vec<Violation>,
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.out.push(Violation::new(path, msg));
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        let o = v.as_object();
        if o.is_none() {
            self.push(if path.is_empty() { "$" } else { path }, "expected object");
        }
        o
    }

    fn text<'v>(&mut self, map: &'v Map<String, Value>, key: &str, nonempty: bool) -> Option<&'v str> {
        match map.get(key) {
            None => {
                self.push(key, "required field missing");
                None
            }
            Some(Value::String(s)) => {
                if nonempty && s.trim().is_empty() {
                    self.push(key, "must be nonempty");
                }
                Some(s)
            }
            Some(_) => {
                self.push(key, "expected string");
                None
            }
        }
    }

    fn optional_text<'v>(&mut self, map: &'v Map<String, Value>, key: &str) -> Option<&'v str> {
        match map.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.push(key, "expected string");
                None
            }
        }
    }

    fn enumeration<'v>(
        &mut self,
        map: &'v Map<String, Value>,
        key: &str,
        allowed: &[&str],
    ) -> Option<&'v str> {
        let s = self.text(map, key, false)?;
        if allowed.contains(&s) {
            Some(s)
        } else {
            self.push(key, format!("expected one of {allowed:?}, found {s:?}"));
            None
        }
    }

    fn positive(&mut self, map: &Map<String, Value>, key: &str) {
        match map.get(key).map(Value::as_u64) {
            None => self.push(key, "required field missing"),
            Some(Some(n)) if n >= 1 && n <= u32::MAX as u64 => {}
            Some(_) => self.push(key, "expected positive integer"),
        }
    }

    fn score(&mut self, map: &Map<String, Value>, key: &str) {
        match map.get(key).map(Value::as_f64) {
            None => self.push(key, "required field missing"),
            Some(Some(x)) if (0.0..=10.0).contains(&x) => {}
            Some(Some(x)) => self.push(key, format!("{x} outside [0,10]")),
            Some(None) => self.push(key, "expected number"),
        }
    }

    fn image(&mut self, map: &Map<String, Value>, key: &str) {
        let Some(v) = map.get(key) else {
            self.push(key, "required field missing");
            return;
        };
        let Some(img) = self.object(v, key) else {
            return;
        };
        match img.get("media_kind").and_then(Value::as_str) {
            Some("raster") | Some("symbol_grid") => {}
            Some(other) => self.push(join(key, "media_kind"), format!("unknown media kind {other:?}")),
            None => self.push(join(key, "media_kind"), "required string"),
        }
        let data = img.get("data");
        let reference = img.get("ref");
        match (data, reference) {
            (None, None) => self.push(key, "one of data or ref is required"),
            (Some(_), Some(_)) => self.push(key, "data and ref are mutually exclusive"),
            (Some(d), None) => match d.as_str() {
                None => self.push(join(key, "data"), "expected base64 string"),
                Some(s) if s.len() > MAX_PAYLOAD_BYTES => {
                    self.push(join(key, "data"), format!("payload exceeds {MAX_PAYLOAD_BYTES} bytes"))
                }
                Some(s) => {
                    if base64::engine::general_purpose::STANDARD.decode(s).is_err() {
                        self.push(join(key, "data"), "invalid base64");
                    } else if s.is_empty() {
                        self.push(join(key, "data"), "empty payload");
                    }
                }
            },
            (None, Some(r)) => {
                let ok = r
                    .as_str()
                    .map(|s| s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit()))
                    .unwrap_or(false);
                if !ok {
                    self.push(join(key, "ref"), "expected 64-digit hex content hash");
                }
            }
        }
    }

    fn tag(&mut self, map: &Map<String, Value>, schema: SchemaId) {
        match map.get("schema").and_then(Value::as_str) {
            Some(s) if s == schema.name() => {}
            Some(s) => self.push("schema", format!("expected {:?}, found {s:?}", schema.name())),
            None => self.push("schema", "required field missing"),
        }
    }

    fn typed<T: DeserializeOwned>(&mut self, value: &Value, check: impl Fn(&T) -> Vec<Violation>) {
        match serde_json::from_value::<T>(value.clone()) {
            Ok(t) => {
                for v in check(&t) {
                    // the tag check above already covers the schema field
                    if v.path != "schema" {
                        self.out.push(v);
                    }
                }
            }
            Err(e) => self.push("$", format!("structure: {e}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn img() -> Value {
        json!({"media_kind": "symbol_grid", "data": "V1cvV1c="})
    }

    #[test]
    fn conforming_policy_request() {
        let raw = json!({"original_image": img(), "current_image": img(), "instruction": "x"});
        assert!(validate_message(raw.to_string().as_bytes(), SchemaId::PolicyRequest).is_ok());
    }

    #[test]
    fn missing_current_image_names_path() {
        let raw = json!({"original_image": img(), "instruction": "x"});
        let v = validate_message(raw.to_string().as_bytes(), SchemaId::PolicyRequest).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "current_image");
    }

    #[test]
    fn reports_all_violations() {
        let raw = json!({"original_image": {"media_kind": "tiff", "data": "!!"}, "instruction": 3});
        let v = validate_message(raw.to_string().as_bytes(), SchemaId::PolicyRequest).unwrap_err();
        let paths: Vec<&str> = v.iter().map(|v| v.path.as_str()).collect();
        assert_eq!(
            paths,
            vec!["original_image.media_kind", "original_image.data", "current_image", "instruction"]
        );
    }

    #[test]
    fn stop_with_text_rejected() {
        let raw = json!({"action": "stop", "instruction_text": "x"});
        let v = validate_message(raw.to_string().as_bytes(), SchemaId::PolicyResponse).unwrap_err();
        assert_eq!(v[0].path, "instruction_text");
        let raw = json!({"action": "edit"});
        assert!(validate_message(raw.to_string().as_bytes(), SchemaId::PolicyResponse).is_err());
    }

    #[test]
    fn score_range() {
        let raw = json!({"sc": 11, "pq": 5, "overall": 5});
        let v = validate_message(raw.to_string().as_bytes(), SchemaId::ScorerResponse).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "sc");
    }

    #[test]
    fn not_json() {
        let v = validate_message(b"{", SchemaId::EditorRequest).unwrap_err();
        assert_eq!(v[0].path, "$");
    }

    #[test]
    fn schema_names_round_trip() {
        for id in SchemaId::ALL {
            assert_eq!(id.name().parse::<SchemaId>().unwrap(), id);
        }
        assert!("nope".parse::<SchemaId>().is_err());
    }
}
