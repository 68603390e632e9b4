//! SHA-256 digests and canonical JSON encoding.
//!
//! Every digest in the system is lowercase hex SHA-256. Canonical JSON is the
//! compact `serde_json` encoding with object keys in sorted order, which is what
//! `serde_json::Map` produces without the `preserve_order` feature.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Length of a hex-encoded SHA-256 digest.
pub const HEX_DIGEST_LEN: usize = 64;

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Compact, key-sorted JSON bytes for any serializable value.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    // Round-trip through `serde_json::Value` so struct field order does not leak
    // into the encoding.
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_vec(&v).expect("JSON value encodes")
}

pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(canonical_json(value))
}

/// True when `s` looks like a lowercase hex SHA-256 digest.
pub fn is_hex_digest(s: &str) -> bool {
    s.len() == HEX_DIGEST_LEN && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_digest() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn canonical_sorts_keys() {
        #[derive(Serialize)]
        struct S {
            z: u8,
            a: u8,
        }
        assert_eq!(canonical_json(&S { z: 1, a: 2 }), br#"{"a":2,"z":1}"#.to_vec());
    }

    #[test]
    fn hex_digest_shape() {
        assert!(is_hex_digest(&sha256_hex("abc")));
        assert!(!is_hex_digest("xyz"));
        assert!(!is_hex_digest(&sha256_hex("abc").to_uppercase()));
    }
}
