//! Video generation parameters in the chat model's JSON reply format.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub const MOTION_MAX: u8 = 4;
pub const GUIDANCE_MAX: f64 = 100.0;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("reply contains no JSON object")]
    NoJsonFound,
    #[error("`{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
}

fn violation(field: &str, reason: impl Into<String>) -> ParamsError {
    ParamsError::SchemaViolation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

macro_rules! camera_enum {
    ($name:ident { $($variant:ident => $wire:literal),+ }) => {
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($variant,)+
            #[default]
            None,
        }

        impl $name {
            fn to_wire(self) -> Value {
                match self {
                    $($name::$variant => Value::String($wire.into()),)+
                    $name::None => Value::Null,
                }
            }

            fn from_wire(field: &str, value: Option<&Value>) -> Result<Self, ParamsError> {
                match value {
                    None | Some(Value::Null) => Ok($name::None),
                    $(Some(Value::String(s)) if s == $wire => Ok($name::$variant),)+
                    Some(other) => Err(violation(
                        field,
                        format!("expected one of {} or null, got {other}", [$($wire),+].join("/")),
                    )),
                }
            }
        }
    };
}

camera_enum!(Zoom { In => "in", Out => "out" });
camera_enum!(Pan { Left => "left", Right => "right" });
camera_enum!(Tilt { Up => "up", Down => "down" });
camera_enum!(Rotate { Cw => "cw", Ccw => "ccw" });

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Camera {
    pub zoom: Zoom,
    pub pan: Pan,
    pub tilt: Tilt,
    pub rotate: Rotate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub description: String,
    /// 0 (still) ..= 4 (very lively).
    pub motion: u8,
    /// In (0, 100].
    pub guidance_scale: f64,
    pub negative_prompt: String,
    pub camera: Camera,
}

impl GenerationParams {
    /// Canonical wire form, key for key the shape the chat model is asked for.
    pub fn to_wire_json(&self) -> Value {
        json!({
            "description": self.description,
            "option": {
                "parameters": {
                    "motion": self.motion,
                    "guidanceScale": self.guidance_scale,
                    "negativePrompt": self.negative_prompt,
                },
                "camera": {
                    "zoom": self.camera.zoom.to_wire(),
                    "pan": self.camera.pan.to_wire(),
                    "tilt": self.camera.tilt.to_wire(),
                    "rotate": self.camera.rotate.to_wire(),
                }
            }
        })
    }

    pub fn to_wire_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_wire_json()).expect("params serialize")
    }

    /// Validates a parsed JSON value against the parameter schema.
    pub fn from_wire_json(value: &Value) -> Result<Self, ParamsError> {
        let root = value
            .as_object()
            .ok_or_else(|| violation("$", "expected a JSON object"))?;
        let description = match root.get("description") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(violation("description", "expected a string")),
            None => return Err(violation("description", "missing")),
        };
        let option = object_field(root, "option", "option")?;
        let parameters = object_field(option, "parameters", "option.parameters")?;

        let motion = match parameters.get("motion") {
            Some(Value::Number(n)) => match n.as_u64() {
                Some(m) if m <= MOTION_MAX as u64 => m as u8,
                _ => {
                    return Err(violation(
                        "option.parameters.motion",
                        format!("expected an integer in 0..={MOTION_MAX}, got {n}"),
                    ))
                }
            },
            Some(_) => return Err(violation("option.parameters.motion", "expected an integer")),
            None => return Err(violation("option.parameters.motion", "missing")),
        };
        let guidance_scale = match parameters.get("guidanceScale") {
            Some(Value::Number(n)) => {
                let g = n.as_f64().unwrap_or(f64::NAN);
                if !(g > 0.0 && g <= GUIDANCE_MAX) {
                    return Err(violation(
                        "option.parameters.guidanceScale",
                        format!("expected a number in (0, {GUIDANCE_MAX}], got {n}"),
                    ));
                }
                g
            }
            Some(_) => {
                return Err(violation(
                    "option.parameters.guidanceScale",
                    "expected a number",
                ))
            }
            None => return Err(violation("option.parameters.guidanceScale", "missing")),
        };
        let negative_prompt = match parameters.get("negativePrompt") {
            Some(Value::String(s)) => s.clone(),
            None | Some(Value::Null) => String::new(),
            Some(_) => {
                return Err(violation(
                    "option.parameters.negativePrompt",
                    "expected a string",
                ))
            }
        };

        let camera = match option.get("camera") {
            None | Some(Value::Null) => Camera::default(),
            Some(Value::Object(c)) => Camera {
                zoom: Zoom::from_wire("option.camera.zoom", c.get("zoom"))?,
                pan: Pan::from_wire("option.camera.pan", c.get("pan"))?,
                tilt: Tilt::from_wire("option.camera.tilt", c.get("tilt"))?,
                rotate: Rotate::from_wire("option.camera.rotate", c.get("rotate"))?,
            },
            Some(_) => return Err(violation("option.camera", "expected an object")),
        };

        Ok(Self {
            description,
            motion,
            guidance_scale,
            negative_prompt,
            camera,
        })
    }
}

fn object_field<'a>(
    parent: &'a Map<String, Value>,
    key: &str,
    path: &str,
) -> Result<&'a Map<String, Value>, ParamsError> {
    match parent.get(key) {
        Some(Value::Object(o)) => Ok(o),
        Some(_) => Err(violation(path, "expected an object")),
        None => Err(violation(path, "missing")),
    }
}

/// Byte offset one past the `}` closing the object opened at `open`,
/// honouring JSON string literals.
fn matching_brace(text: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in text.bytes().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first balanced `{...}` span in `reply` that parses as a JSON
/// object. Surrounding prose and code fences are ignored.
pub fn first_json_object(reply: &str) -> Option<Value> {
    let mut from = 0;
    while let Some(rel) = reply[from..].find('{') {
        let open = from + rel;
        if let Some(end) = matching_brace(reply, open) {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&reply[open..end]) {
                return Some(v);
            }
        }
        from = open + 1;
    }
    None
}

pub fn parse_params(reply: &str) -> Result<GenerationParams, ParamsError> {
    let value = first_json_object(reply).ok_or(ParamsError::NoJsonFound)?;
    GenerationParams::from_wire_json(&value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_payload_with_prose_and_fence() {
        let reply = "Sure! Here are the parameters:\n```json\n{\"description\":\"d\",\"option\":{\"parameters\":{\"motion\":2,\"guidanceScale\":12,\"negativePrompt\":\"\"},\"camera\":{\"zoom\":\"in\",\"pan\":null,\"tilt\":null,\"rotate\":null}}}\n```\nLet me know.";
        let p = parse_params(reply).unwrap();
        assert_eq!(p.motion, 2);
        assert_eq!(p.guidance_scale, 12.0);
        assert_eq!(p.camera.zoom, Zoom::In);
        assert_eq!(p.camera.pan, Pan::None);
        assert_eq!(p.camera.tilt, Tilt::None);
        assert_eq!(p.camera.rotate, Rotate::None);
    }

    #[test]
    fn absent_camera_keys_are_none() {
        let p = parse_params(
            r#"{"description":"d","option":{"parameters":{"motion":0,"guidanceScale":1.5},"camera":{"pan":"left"}}}"#,
        )
        .unwrap();
        assert_eq!(p.camera.pan, Pan::Left);
        assert_eq!(p.camera.zoom, Zoom::None);
        assert_eq!(p.negative_prompt, "");
    }

    #[test]
    fn schema_violations() {
        let zoom = r#"{"description":"d","option":{"parameters":{"motion":1,"guidanceScale":5},"camera":{"zoom":"diagonal"}}}"#;
        assert!(matches!(
            parse_params(zoom),
            Err(ParamsError::SchemaViolation { field, .. }) if field == "option.camera.zoom"
        ));
        let motion = r#"{"description":"d","option":{"parameters":{"motion":9,"guidanceScale":5}}}"#;
        assert!(matches!(
            parse_params(motion),
            Err(ParamsError::SchemaViolation { field, .. }) if field == "option.parameters.motion"
        ));
    }

    #[test]
    fn skips_braces_that_are_not_json() {
        let reply = "use {curly} notation then {\"description\":\"x\",\"option\":{\"parameters\":{\"motion\":3,\"guidanceScale\":7}}}";
        assert_eq!(parse_params(reply).unwrap().motion, 3);
        assert_eq!(parse_params("no braces at all"), Err(ParamsError::NoJsonFound));
        assert_eq!(parse_params("{ not json"), Err(ParamsError::NoJsonFound));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_matching() {
        let reply = r#"{"description":"a } tricky { one \" here","option":{"parameters":{"motion":1,"guidanceScale":2}}}"#;
        assert_eq!(parse_params(reply).unwrap().description, "a } tricky { one \" here");
    }

    #[test]
    fn wire_keys_match_template() {
        let p = parse_params(r#"{"description":"d","option":{"parameters":{"motion":1,"guidanceScale":2}}}"#).unwrap();
        let s = p.to_wire_string();
        for key in ["\"guidanceScale\"", "\"negativePrompt\"", "\"zoom\": null", "\"rotate\": null"] {
            assert!(s.contains(key), "{s}");
        }
    }
}
