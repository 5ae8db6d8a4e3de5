use std::collections::BTreeMap;

/// A packet as seen by transactions and schedulers.
///
/// `length`, `flow_id`, `arrival` and `id` are readable from transactions as
/// `p.length`, `p.flow_id`, `p.arrival` and `p.id`. `p.size` reads the
/// `size` field when present and falls back to `length`. Everything else lives
/// in `fields`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub id: u64,
    pub arrival: u64,
    pub flow_id: u64,
    pub length: u32,
    pub fields: BTreeMap<String, i64>,
    /// Rank written by the most recent transaction.
    pub rank_out: Option<u64>,
}

impl PacketRecord {
    pub fn new(id: u64, arrival: u64, flow_id: u64, length: u32) -> Self {
        Self {
            id,
            arrival,
            flow_id,
            length,
            fields: BTreeMap::new(),
            rank_out: None,
        }
    }

    pub fn with_field(mut self, name: &str, value: i64) -> Self {
        self.fields.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        match name {
            "length" => Some(self.length as i64),
            "flow_id" => Some(self.flow_id as i64),
            "arrival" => Some(self.arrival as i64),
            "id" => Some(self.id as i64),
            "size" => Some(
                self.fields
                    .get("size")
                    .copied()
                    .unwrap_or(self.length as i64),
            ),
            _ => self.fields.get(name).copied(),
        }
    }

    /// Writes to the builtin attributes are ignored; they are fixed by the
    /// trace.
    pub fn set(&mut self, name: &str, value: i64) {
        if !matches!(name, "length" | "flow_id" | "arrival" | "id") {
            self.fields.insert(name.to_string(), value);
        }
    }
}
