use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One measurement; every CSV this tool writes uses these columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub instance_id: String,
    pub policy_kind: String,
    pub n: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub seed: u64,
    pub status: String,
}

pub const OK: &str = "ok";

pub fn to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
