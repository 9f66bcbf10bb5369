//! Server-side pessimistic lock table.
//!
//! Lives inside the server's single message loop; no internal
//! synchronization.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::semantics::{breakable_set, ElementId, ReferenceGraph, SemanticsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockKind {
    Body,
    Defining,
}

impl LockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LockKind::Body => "body",
            LockKind::Defining => "defining",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "body" => Some(LockKind::Body),
            "defining" => Some(LockKind::Defining),
            _ => None,
        }
    }
}

impl fmt::Display for LockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LockUnit {
    pub elements: BTreeSet<ElementId>,
    pub kind: LockKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditClass {
    Header,
    Body,
    NewMember,
    NewReference(ElementId),
}

/// Elements an edit must hold before it may touch `target`.
///
/// For `NewMember` the target is the provisional id reserved for the new
/// element and is not looked up in the graph.
pub fn compute_lock_unit(
    target: ElementId,
    edit_class: EditClass,
    graph: &ReferenceGraph,
) -> Result<LockUnit, SemanticsError> {
    let exists = |id: ElementId| if graph.contains(id) { Ok(id) } else { Err(SemanticsError::UnknownElement(id)) };
    Ok(match edit_class {
        EditClass::Body => LockUnit { elements: BTreeSet::from([exists(target)?]), kind: LockKind::Body },
        EditClass::Header => {
            let mut elements = breakable_set(graph, target)?.members;
            elements.insert(target);
            LockUnit { elements, kind: LockKind::Defining }
        }
        EditClass::NewMember => LockUnit { elements: BTreeSet::from([target]), kind: LockKind::Body },
        EditClass::NewReference(referent) => {
            LockUnit { elements: BTreeSet::from([exists(referent)?]), kind: LockKind::Body }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockRecord {
    pub lock_id: u64,
    pub holder: String,
    pub unit: LockUnit,
    pub acquired_at_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockOutcome {
    Grant(LockRecord),
    Deny { holder: String, elements: BTreeSet<ElementId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseCause {
    Committed,
    Reverted,
    Disconnected,
    WentOffRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockTable {
    records: Vec<LockRecord>,
    next_lock_id: u64,
}

impl Default for LockTable {
    fn default() -> Self {
        LockTable { records: Vec::new(), next_lock_id: 1 }
    }
}

impl LockTable {
    pub fn records(&self) -> &[LockRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn held_by(&self, holder: &str) -> impl Iterator<Item = &LockRecord> {
        let holder = holder.to_string();
        self.records.iter().filter(move |r| r.holder == holder)
    }

    /// Grants `unit` to `holder` unless some element of it is related (per
    /// `related`) to an element locked by another holder. Requests that
    /// overlap the holder's own records extend the oldest of them.
    pub fn request(
        &mut self,
        holder: &str,
        unit: LockUnit,
        acquired_at_version: u64,
        related: &dyn Fn(ElementId, ElementId) -> bool,
    ) -> LockOutcome {
        for rec in self.records.iter().filter(|r| r.holder != holder) {
            let blocking: BTreeSet<ElementId> = rec
                .unit
                .elements
                .iter()
                .copied()
                .filter(|held| unit.elements.iter().any(|want| related(*want, *held)))
                .collect();
            if !blocking.is_empty() {
                return LockOutcome::Deny { holder: rec.holder.clone(), elements: blocking };
            }
        }

        let overlapping: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.holder == holder && !r.unit.elements.is_disjoint(&unit.elements))
            .map(|(i, _)| i)
            .collect();
        if let Some((&first, rest)) = overlapping.split_first() {
            let mut merged = self.records[first].clone();
            merged.unit.elements.extend(unit.elements.iter().copied());
            merged.unit.kind = merged.unit.kind.max(unit.kind);
            for &i in rest {
                merged.unit.elements.extend(self.records[i].unit.elements.iter().copied());
                merged.unit.kind = merged.unit.kind.max(self.records[i].unit.kind);
            }
            for &i in rest.iter().rev() {
                self.records.remove(i);
            }
            self.records[first] = merged.clone();
            return LockOutcome::Grant(merged);
        }

        let record = LockRecord { lock_id: self.next_lock_id, holder: holder.to_string(), unit, acquired_at_version };
        self.next_lock_id += 1;
        self.records.push(record.clone());
        LockOutcome::Grant(record)
    }

    /// Drops every record of `holder`, returning the freed elements.
    pub fn release_all(&mut self, holder: &str, _cause: ReleaseCause) -> Vec<ElementId> {
        let mut freed = BTreeSet::new();
        self.records.retain(|r| {
            if r.holder == holder {
                freed.extend(r.unit.elements.iter().copied());
                false
            } else {
                true
            }
        });
        freed.into_iter().collect()
    }

    /// Drops one record if `holder` owns it.
    pub fn release(&mut self, holder: &str, lock_id: u64) -> Vec<ElementId> {
        match self.records.iter().position(|r| r.lock_id == lock_id && r.holder == holder) {
            Some(i) => self.records.remove(i).unit.elements.into_iter().collect(),
            None => Vec::new(),
        }
    }

    pub fn query(&self, element: ElementId) -> Option<(&str, u64, LockKind)> {
        self.records
            .iter()
            .find(|r| r.unit.elements.contains(&element))
            .map(|r| (r.holder.as_str(), r.lock_id, r.unit.kind))
    }

    /// Pairs of live records from different holders with related elements.
    pub fn violations(&self, related: &dyn Fn(ElementId, ElementId) -> bool) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for (i, a) in self.records.iter().enumerate() {
            for b in &self.records[i + 1..] {
                if a.holder != b.holder
                    && a.unit.elements.iter().any(|x| b.unit.elements.iter().any(|y| related(*x, *y)))
                {
                    out.push((a.lock_id, b.lock_id));
                }
            }
        }
        out
    }
}
