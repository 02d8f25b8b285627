use serde::{Deserialize, Serialize};

use super::adapter::ReconcileVerdict;
use super::chain::ExplorerTx;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorerRecord {
    #[serde(flatten)]
    pub tx: ExplorerTx,
    pub escrow_id: Option<String>,
    pub workflow_id: Option<String>,
    pub reconciliation: Option<ReconcileVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorerFilter {
    pub rail_id: Option<String>,
    pub tx_id: Option<String>,
    pub escrow_id: Option<String>,
    pub workflow_id: Option<String>,
}

impl ExplorerFilter {
    fn accepts(&self, r: &ExplorerRecord) -> bool {
        self.rail_id.as_deref().is_none_or(|v| r.tx.rail_id.as_str() == v)
            && self.tx_id.as_deref().is_none_or(|v| r.tx.tx_id.to_hex() == v)
            && self.escrow_id.as_deref().is_none_or(|v| r.escrow_id.as_deref() == Some(v))
            && self.workflow_id.as_deref().is_none_or(|v| r.workflow_id.as_deref() == Some(v))
    }
}

/// Read-side index of settlement transactions and their reconciliation.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ExplorerIndex {
    records: Vec<ExplorerRecord>,
}

impl ExplorerIndex {
    /// Replaces any earlier rows for the same (rail, tx).
    pub fn index(&mut self, rows: Vec<ExplorerRecord>) {
        for row in &rows {
            self.records
                .retain(|r| !(r.tx.rail_id == row.tx.rail_id && r.tx.tx_id == row.tx.tx_id));
        }
        self.records.extend(rows);
    }

    pub fn query(&self, filter: &ExplorerFilter) -> Vec<ExplorerRecord> {
        self.records.iter().filter(|r| filter.accepts(r)).cloned().collect()
    }

    pub fn records(&self) -> &[ExplorerRecord] {
        &self.records
    }
}
