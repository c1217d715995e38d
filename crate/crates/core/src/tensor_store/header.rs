use std::collections::HashSet;
use std::fmt;
use std::io::Read;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use super::{Dtype, Result, StoreError, TensorRecord, MAX_HEADER_LEN};

const METADATA_KEY: &str = "__metadata__";

pub(crate) struct ParsedHeader {
    pub raw: Vec<u8>,
    pub records: Vec<TensorRecord>,
    pub metadata: Option<Vec<(String, String)>>,
}

/// JSON object entries in document order, duplicates kept.
struct Entries(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

fn malformed(msg: impl Into<String>) -> StoreError {
    StoreError::MalformedHeader(msg.into())
}

pub(crate) fn read_header<R: Read>(reader: &mut R, file_len: u64) -> Result<ParsedHeader> {
    if file_len < 8 {
        return Err(malformed("file shorter than the 8-byte length prefix"));
    }
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes)?;
    let n = u64::from_le_bytes(len_bytes);
    if n > MAX_HEADER_LEN || n > file_len - 8 {
        return Err(malformed(format!(
            "header length {n} exceeds file size {file_len}"
        )));
    }
    let mut raw = vec![0u8; n as usize];
    reader.read_exact(&mut raw)?;
    let (records, metadata) = parse_entries(&raw)?;
    let available = file_len - 8 - n;
    let required = records.iter().map(|r| r.offset + r.len).max().unwrap_or(0);
    if required > available {
        return Err(StoreError::Truncated {
            required,
            available,
        });
    }
    Ok(ParsedHeader {
        raw,
        records,
        metadata,
    })
}

type Entry = (Vec<TensorRecord>, Option<Vec<(String, String)>>);

fn parse_entries(raw: &[u8]) -> Result<Entry> {
    let text = std::str::from_utf8(raw).map_err(|e| malformed(format!("not UTF-8: {e}")))?;
    let Entries(entries) =
        serde_json::from_str(text).map_err(|e| malformed(format!("invalid JSON object: {e}")))?;

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(entries.len());
    let mut metadata = None;
    for (name, value) in entries {
        if !seen.insert(name.clone()) {
            return Err(StoreError::DuplicateName(name));
        }
        if name == METADATA_KEY {
            let map: ordered::OrderedStrings = serde_json::from_value(value)
                .map_err(|e| malformed(format!("__metadata__ must map strings to strings: {e}")))?;
            metadata = Some(map.0);
            continue;
        }
        let entry: RawEntry = serde_json::from_value(value)
            .map_err(|e| malformed(format!("tensor {name}: {e}")))?;
        let dtype: Dtype = entry.dtype.parse().map_err(|d| StoreError::UnknownDtype {
            name: name.clone(),
            dtype: d,
        })?;
        if entry.shape.contains(&0) {
            return Err(malformed(format!("tensor {name}: zero-sized dimension")));
        }
        let [begin, end] = entry.data_offsets;
        if end < begin {
            return Err(malformed(format!("tensor {name}: data_offsets end before begin")));
        }
        let numel = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed(format!("tensor {name}: shape overflows")))?;
        let expected = numel
            .checked_mul(dtype.size() as u64)
            .ok_or_else(|| malformed(format!("tensor {name}: shape overflows")))?;
        if expected != end - begin {
            return Err(StoreError::LengthMismatch {
                name,
                expected,
                actual: end - begin,
            });
        }
        records.push(TensorRecord {
            name,
            dtype,
            shape: entry.shape,
            offset: begin,
            len: end - begin,
        });
    }

    let mut by_offset: Vec<&TensorRecord> = records.iter().collect();
    by_offset.sort_by_key(|r| (r.offset, r.len));
    for pair in by_offset.windows(2) {
        if pair[0].offset + pair[0].len > pair[1].offset {
            return Err(StoreError::Overlap {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }
    Ok((records, metadata))
}

mod ordered {
    use super::*;

    /// String map that keeps document order.
    pub struct OrderedStrings(pub Vec<(String, String)>);

    impl<'de> Deserialize<'de> for OrderedStrings {
        fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
            struct V;
            impl<'de> Visitor<'de> for V {
                type Value = OrderedStrings;
                fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                    f.write_str("a string-to-string object")
                }
                fn visit_map<A: MapAccess<'de>>(
                    self,
                    mut map: A,
                ) -> std::result::Result<OrderedStrings, A::Error> {
                    let mut out = Vec::new();
                    while let Some(kv) = map.next_entry::<String, String>()? {
                        out.push(kv);
                    }
                    Ok(OrderedStrings(out))
                }
            }
            d.deserialize_map(V)
        }
    }
}

/// Serialize a header (records with offsets already assigned) and pad it
/// with spaces to a multiple of 8 bytes.
pub fn encode_header(records: &[TensorRecord], metadata: Option<&[(String, String)]>) -> Vec<u8> {
    let mut s = String::from("{");
    let mut first = true;
    let mut sep = |s: &mut String| {
        if !first {
            s.push(',');
        }
        first = false;
    };
    if let Some(meta) = metadata {
        sep(&mut s);
        s.push_str(&serde_json::to_string(METADATA_KEY).unwrap());
        s.push_str(":{");
        for (i, (k, v)) in meta.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&serde_json::to_string(k).unwrap());
            s.push(':');
            s.push_str(&serde_json::to_string(v).unwrap());
        }
        s.push('}');
    }
    for r in records {
        sep(&mut s);
        s.push_str(&serde_json::to_string(&r.name).unwrap());
        s.push_str(&format!(
            r#":{{"dtype":"{}","shape":{},"data_offsets":[{},{}]}}"#,
            r.dtype,
            serde_json::to_string(&r.shape).unwrap(),
            r.offset,
            r.offset + r.len
        ));
    }
    s.push('}');
    while s.len() % 8 != 0 {
        s.push(' ');
    }
    s.into_bytes()
}
