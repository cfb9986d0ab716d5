//! JSON-lines metric records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub utterance_id: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(utterance_id: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        MetricRecord {
            utterance_id: utterance_id.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_records<W: Write>(mut out: W, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let recs = vec![MetricRecord::new("utt1", "si_snr", 12.5), MetricRecord::new("utt1", "sdr", -3.0)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"utterance_id":"utt1","metric":"si_snr","value":12.5}"#));
        assert_eq!(read_records(&text).unwrap(), recs);
    }
}
