//! Measurement protocols over the two-ring, eight-electrode layout and the
//! voltage frames they produce.
//!
//! Electrode indices in protocols are 1-based: ring 1 is 1..=8
//! counter-clockwise from azimuth 0, ring 2 is 9..=16 with electrode `k + 8`
//! axially behind `k`.

mod frame;

pub use frame::{Frame, FrameMetadata};

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CatheterSpec;

/// Electrodes per ring in the supported layout.
pub const RING_SIZE: usize = 8;

/// One injection/measurement quadruple, 1-based electrode indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Measurement {
    pub inject_pos: usize,
    pub inject_neg: usize,
    pub meas_pos: usize,
    pub meas_neg: usize,
}

impl Measurement {
    pub const fn new(inject_pos: usize, inject_neg: usize, meas_pos: usize, meas_neg: usize) -> Self {
        Self {
            inject_pos,
            inject_neg,
            meas_pos,
            meas_neg,
        }
    }

    pub fn injection(&self) -> (usize, usize) {
        (self.inject_pos, self.inject_neg)
    }

    pub fn measurement(&self) -> (usize, usize) {
        (self.meas_pos, self.meas_neg)
    }

    /// The row with injection and measurement pairs exchanged.
    pub fn reciprocal(&self) -> Self {
        Self::new(self.meas_pos, self.meas_neg, self.inject_pos, self.inject_neg)
    }

    fn touches_injection(&self) -> bool {
        let inj = [self.inject_pos, self.inject_neg];
        inj.contains(&self.meas_pos) || inj.contains(&self.meas_neg)
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{})->({},{})",
            self.inject_pos, self.inject_neg, self.meas_pos, self.meas_neg
        )
    }
}

/// Ordered list of measurement rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub rows: Vec<Measurement>,
}

/// Next electrode counter-clockwise on the same ring (1-based).
fn ring_next(k: usize) -> usize {
    let ring = (k - 1) / RING_SIZE;
    ring * RING_SIZE + (k % RING_SIZE) + 1
}

/// Eight rows: row `k` injects between `k` and `k + 8` and measures on the
/// neighbouring aligned pair `(k + 1, k + 9)`, wrapping within each ring.
pub fn radial_protocol() -> Protocol {
    let rows = (1..=RING_SIZE)
        .map(|k| Measurement::new(k, k + RING_SIZE, ring_next(k), ring_next(k + RING_SIZE)))
        .collect();
    Protocol {
        name: "radial".into(),
        rows,
    }
}

/// 136 rows in three blocks, each ordered by injection then measurement:
///
/// 1. cross-ring injections `(k, k+8)` measured on every other aligned pair
///    `(m, m+8)`, `m != k`: 8 x 7 = 56 rows;
/// 2. ring-1 adjacent injections `(k, k+1)` measured on the adjacent ring-1
///    pairs that avoid both injecting electrodes: 8 x 5 = 40 rows;
/// 3. the same on ring 2: 40 rows.
pub fn full_protocol() -> Protocol {
    let mut rows = Vec::with_capacity(136);
    for k in 1..=RING_SIZE {
        for m in (1..=RING_SIZE).filter(|&m| m != k) {
            rows.push(Measurement::new(k, k + RING_SIZE, m, m + RING_SIZE));
        }
    }
    for ring in 0..2 {
        let base = ring * RING_SIZE;
        for k in 1..=RING_SIZE {
            let (a, b) = (base + k, ring_next(base + k));
            for m in 1..=RING_SIZE {
                let (c, d) = (base + m, ring_next(base + m));
                let row = Measurement::new(a, b, c, d);
                if !row.touches_injection() {
                    rows.push(row);
                }
            }
        }
    }
    Protocol {
        name: "full".into(),
        rows,
    }
}

/// Problem found by [`validate_protocol`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolIssue {
    IndexOutOfRange { row: usize, electrode: usize },
    SameInjectionElectrode { row: usize },
    SameMeasurementElectrode { row: usize },
    MeasuresOnInjectingElectrode { row: usize },
    DuplicateRow { row: usize, first: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ProtocolIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks index bounds, pair distinctness, injection/measurement
/// disjointness and duplicate rows. Row numbers in the report are 0-based.
pub fn validate_protocol(protocol: &Protocol, catheter: &CatheterSpec) -> ValidationReport {
    let count = catheter.electrode_count();
    let mut issues = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (i, r) in protocol.rows.iter().enumerate() {
        for e in [r.inject_pos, r.inject_neg, r.meas_pos, r.meas_neg] {
            if e == 0 || e > count {
                issues.push(ProtocolIssue::IndexOutOfRange { row: i, electrode: e });
            }
        }
        if r.inject_pos == r.inject_neg {
            issues.push(ProtocolIssue::SameInjectionElectrode { row: i });
        }
        if r.meas_pos == r.meas_neg {
            issues.push(ProtocolIssue::SameMeasurementElectrode { row: i });
        }
        if r.touches_injection() {
            issues.push(ProtocolIssue::MeasuresOnInjectingElectrode { row: i });
        }
        if let Some(&first) = seen.get(r) {
            issues.push(ProtocolIssue::DuplicateRow { row: i, first });
        } else {
            seen.insert(*r, i);
        }
    }
    ValidationReport { issues }
}

impl Protocol {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct injection pairs in order of first appearance.
    pub fn injections(&self) -> Vec<(usize, usize)> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .map(Measurement::injection)
            .filter(|p| seen.insert(*p))
            .collect()
    }

    /// Largest electrode index referenced.
    pub fn max_electrode(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| [r.inject_pos, r.inject_neg, r.meas_pos, r.meas_neg])
            .max()
            .unwrap_or(0)
    }

    /// Looks up a built-in protocol by name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "radial" => Ok(radial_protocol()),
            "full" => Ok(full_protocol()),
            other => Err(Error::Parameter(format!("unknown protocol `{other}`"))),
        }
    }

    /// Writes CSV with header `inject_pos,inject_neg,meas_pos,meas_neg`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["inject_pos", "inject_neg", "meas_pos", "meas_neg"])?;
        for r in &self.rows {
            w.serialize((r.inject_pos, r.inject_neg, r.meas_pos, r.meas_neg))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: &str, input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        let expected = ["inject_pos", "inject_neg", "meas_pos", "meas_neg"];
        if header.iter().map(str::trim).ne(expected.iter().copied()) {
            return Err(Error::Input(format!("unexpected protocol header `{}`", header.as_slice())));
        }
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let (a, b, c, d): (usize, usize, usize, usize) = rec?;
            rows.push(Measurement::new(a, b, c, d));
        }
        Ok(Self {
            name: name.into(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn radial_rows() {
        let p = radial_protocol();
        assert_eq!(p.len(), 8);
        assert_eq!(p.rows[0], Measurement::new(1, 9, 2, 10));
        assert_eq!(p.rows[7], Measurement::new(8, 16, 1, 9));
        assert!(validate_protocol(&p, &CatheterSpec::default()).is_valid());
    }

    #[test]
    fn full_counts_and_validity() {
        let p = full_protocol();
        assert_eq!(p.len(), 136);
        assert!(p.rows.iter().all(|r| !r.touches_injection()));
        assert!(validate_protocol(&p, &CatheterSpec::default()).is_valid());
        assert_eq!(p.injections().len(), 24);
        assert_eq!(p, full_protocol());
    }

    #[test]
    fn invalid_rows_reported() {
        let c = CatheterSpec::default();
        let p = Protocol {
            name: "bad".into(),
            rows: vec![Measurement::new(1, 9, 1, 2), Measurement::new(1, 17, 2, 3)],
        };
        let rep = validate_protocol(&p, &c);
        assert!(rep.issues.contains(&ProtocolIssue::MeasuresOnInjectingElectrode { row: 0 }));
        assert!(rep.issues.contains(&ProtocolIssue::IndexOutOfRange { row: 1, electrode: 17 }));
        let dup = Protocol {
            name: "dup".into(),
            rows: vec![Measurement::new(1, 9, 2, 10); 2],
        };
        assert_eq!(
            validate_protocol(&dup, &c).issues,
            vec![ProtocolIssue::DuplicateRow { row: 1, first: 0 }]
        );
    }

    #[test]
    fn csv_round_trip() {
        let p = full_protocol();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"inject_pos,inject_neg,meas_pos,meas_neg\n"));
        let back = Protocol::read_csv("full", buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn full_protocol_contains_every_radial_row() {
        let full = full_protocol();
        for r in radial_protocol().rows {
            assert!(full.rows.contains(&r), "{r} missing");
        }
    }

    fn rotate(k: usize) -> usize {
        ring_next(k)
    }

    proptest! {
        #[test]
        fn radial_is_rotation_invariant(shift in 0usize..8) {
            let p = radial_protocol();
            for (i, r) in p.rows.iter().enumerate() {
                let mut m = *r;
                for _ in 0..shift {
                    m = Measurement::new(rotate(m.inject_pos), rotate(m.inject_neg), rotate(m.meas_pos), rotate(m.meas_neg));
                }
                prop_assert_eq!(m, p.rows[(i + shift) % 8]);
            }
        }

        #[test]
        fn rotated_full_protocol_is_a_permutation(shift in 0usize..8) {
            let p = full_protocol();
            let set: HashSet<_> = p.rows.iter().copied().collect();
            for r in &p.rows {
                let mut m = *r;
                for _ in 0..shift {
                    m = Measurement::new(rotate(m.inject_pos), rotate(m.inject_neg), rotate(m.meas_pos), rotate(m.meas_neg));
                }
                prop_assert!(set.contains(&m));
            }
        }
    }
}
