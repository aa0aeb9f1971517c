//! The six-stratum compliance lattice.
//!
//! A unit's latent compliance type records its treatment-receipt behavior
//! under the low- and high-saturation mechanisms (first and second letter:
//! n = nevertaker, c = complier, a = alwaystaker). Monotonicity within a
//! mechanism rules out defiers; monotonicity of behavior across mechanisms
//! (order n <= c <= a) rules out the downward shifts, leaving
//! {cc, aa, nn, ca, nc, na}.
//!
//! Exclusion restrictions equate potential outcomes across the assignment
//! arm wherever receipt does not respond to assignment, which collapses the
//! 24 raw (stratum, z, mechanism) outcome cells down to 16 canonical ones.

use serde::{Deserialize, Serialize};

use crate::design::Mechanism;

/// Latent compliance stratum. First letter: behavior under the low
/// mechanism; second: under the high mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplianceType {
    Cc,
    Aa,
    Nn,
    Ca,
    Nc,
    Na,
}

pub use ComplianceType::{Aa, Ca, Cc, Na, Nc, Nn};

impl ComplianceType {
    pub const ALL: [ComplianceType; 6] = [Cc, Aa, Nn, Ca, Nc, Na];

    pub fn index(self) -> usize {
        match self {
            Cc => 0,
            Aa => 1,
            Nn => 2,
            Ca => 3,
            Nc => 4,
            Na => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cc => "cc",
            Aa => "aa",
            Nn => "nn",
            Ca => "ca",
            Nc => "nc",
            Na => "na",
        }
    }

    /// Behavior at a single mechanism: 'n', 'c' or 'a'.
    pub fn behavior(self, a: Mechanism) -> char {
        let s = self.label().as_bytes();
        s[a.index()] as char
    }

    /// Whether the unit complies with assignment under mechanism `a`.
    pub fn is_complier(self, a: Mechanism) -> bool {
        self.behavior(a) == 'c'
    }
}

impl std::fmt::Display for ComplianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Potential treatment receipt D(z, a) for a unit of stratum `g`.
pub fn potential_receipt(g: ComplianceType, z: u8, a: Mechanism) -> u8 {
    match g.behavior(a) {
        'n' => 0,
        'c' => z,
        'a' => 1,
        _ => unreachable!(),
    }
}

/// The strata consistent with an observed (mechanism, assignment, receipt)
/// triple: the exact preimage of `potential_receipt`.
pub fn compatible_strata(a: Mechanism, z: u8, d: u8) -> Vec<ComplianceType> {
    ComplianceType::ALL
        .iter()
        .copied()
        .filter(|&g| potential_receipt(g, z, a) == d)
        .collect()
}

/// One outcome-parameter cell, keyed by stratum, assignment arm, and
/// mechanism. Keys equated by the exclusion restrictions share a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub g: ComplianceType,
    pub z: u8,
    pub a: Mechanism,
}

impl CellKey {
    pub fn new(g: ComplianceType, z: u8, a: Mechanism) -> Self {
        CellKey { g, z, a }
    }

    pub fn canonical(self) -> Self {
        active_cell(self.g, self.z, self.a)
    }
}

/// Collapse an outcome cell to its canonical representative (z = 0 wherever
/// the exclusion restriction applies). A stratum's outcome cannot depend on
/// its own assignment at a mechanism where its receipt does not.
pub fn active_cell(g: ComplianceType, z: u8, a: Mechanism) -> CellKey {
    let collapses = g.behavior(a) != 'c';
    CellKey::new(g, if collapses { 0 } else { z }, a)
}

/// Number of canonical outcome cells.
pub const N_CELLS: usize = 16;

/// Dense index of a canonical cell in 0..16. The input need not be
/// canonical; it is collapsed first.
pub fn cell_index(g: ComplianceType, z: u8, a: Mechanism) -> usize {
    let key = active_cell(g, z, a);
    let (z, ai) = (key.z as usize, key.a.index());
    match key.g {
        Cc => 2 * ai + z,            // 0..4
        Aa => 4 + ai,                // 4..6
        Nn => 6 + ai,                // 6..8
        Ca => 8 + 2 * ai + z,        // (0,a0)=8 (1,a0)=9 (0,a1)=10
        Nc => 11 + ai + z,           // (0,a0)=11 (0,a1)=12 (1,a1)=13
        Na => 14 + ai,               // 14..16
    }
}

/// All 16 canonical cells, in `cell_index` order.
pub fn canonical_cells() -> Vec<CellKey> {
    let mut out = vec![None; N_CELLS];
    for g in ComplianceType::ALL {
        for a in Mechanism::ALL {
            for z in [0u8, 1] {
                let key = active_cell(g, z, a);
                out[cell_index(g, z, a)] = Some(key);
            }
        }
    }
    out.into_iter().map(|k| k.unwrap()).collect()
}
