// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON form of `value` (object keys sorted).
pub fn content_digest<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so going through it
    // canonicalizes key order regardless of the struct's field order.
    let canonical = serde_json::to_value(value).expect("serializable document");
    let bytes = serde_json::to_vec(&canonical).expect("serializable value");
    hex::encode(Sha256::digest(&bytes))
}
