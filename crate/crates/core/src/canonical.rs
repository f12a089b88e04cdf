//! Canonical JSON: object keys sorted, no insignificant whitespace, every
//! float written with 17 significant digits. Two serializations of the same
//! value are byte-identical, so files can be hashed and compared directly.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;
use sha2::{Digest, Sha256};

struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes `value` to canonical JSON bytes.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    // serde_json::Value keeps object keys in a BTreeMap, which sorts them.
    let tree = serde_json::to_value(value)?;
    let mut out = Vec::with_capacity(256);
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    tree.serialize(&mut ser)?;
    Ok(out)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    // the formatter only ever emits ASCII plus the UTF-8 of string contents
    Ok(String::from_utf8(to_vec(value)?).expect("serde_json emits UTF-8"))
}

/// Lower-case hex SHA-256 of the canonical serialization.
pub fn sha256_hex<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(hex_digest(&to_vec(value)?))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Converts a `serde_path_to_error` path into an RFC 6901 JSON pointer,
/// appending the field named by a "missing field" message when present.
pub(crate) fn json_pointer(path: &serde_path_to_error::Path, message: &str) -> String {
    let mut pointer = String::new();
    for seg in path.iter() {
        use serde_path_to_error::Segment;
        let token = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.clone(),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => continue,
        };
        pointer.push('/');
        pointer.push_str(&token.replace('~', "~0").replace('/', "~1"));
    }
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            pointer.push('/');
            pointer.push_str(field);
        }
    }
    if pointer.is_empty() {
        pointer.push('/');
    }
    pointer
}
