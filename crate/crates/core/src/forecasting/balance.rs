use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::CellId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceRow {
    pub cell: CellId,
    pub vehicles: f64,
    pub dropoffs: f64,
    pub pickups: f64,
    /// `vehicles + dropoffs - pickups`; negative marks a deficit.
    pub balance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
}

impl BalanceReport {
    pub fn deficits(&self) -> impl Iterator<Item = &BalanceRow> {
        self.rows.iter().filter(|r| r.balance < 0.0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row", "col", "vehicles", "dropoffs", "pickups", "balance"])?;
        for r in &self.rows {
            wtr.write_record([
                r.cell.row.to_string(),
                r.cell.col.to_string(),
                r.vehicles.to_string(),
                r.dropoffs.to_string(),
                r.pickups.to_string(),
                r.balance.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Expected vehicle balance per cell over the next window.
pub fn balance(
    vehicles: &BTreeMap<CellId, f64>,
    pickups: &BTreeMap<CellId, f64>,
    dropoffs: &BTreeMap<CellId, f64>,
) -> Result<BalanceReport> {
    if !vehicles.keys().eq(pickups.keys()) || !vehicles.keys().eq(dropoffs.keys()) {
        return Err(Error::invalid(
            "vehicle, pickup and drop-off cell sets differ",
        ));
    }
    let rows = vehicles
        .iter()
        .map(|(&cell, &v)| {
            let (p, d) = (pickups[&cell], dropoffs[&cell]);
            BalanceRow {
                cell,
                vehicles: v,
                dropoffs: d,
                pickups: p,
                balance: v + d - p,
            }
        })
        .collect();
    Ok(BalanceReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64, p: f64, d: f64) -> f64 {
        let c = CellId::new(0, 0);
        let m = |x| BTreeMap::from([(c, x)]);
        balance(&m(v), &m(p), &m(d)).unwrap().rows[0].balance
    }

    #[test]
    fn worked_example() {
        assert_eq!(one(3.0, 2.0, 1.0), 2.0);
        assert_eq!(one(4.0, 0.0, 0.0), 4.0);
        assert!(one(0.0, 3.0, 1.0) < 0.0);
    }

    #[test]
    fn misaligned_cells() {
        let a = BTreeMap::from([(CellId::new(0, 0), 1.0)]);
        let b = BTreeMap::from([(CellId::new(0, 1), 1.0)]);
        assert!(balance(&a, &a, &b).is_err());
    }
}
