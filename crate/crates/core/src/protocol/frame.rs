use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use super::{Measurement, Protocol};
use crate::error::{Error, Result};
use crate::noise::{NoiseModel, NoiseReference};

/// Provenance carried alongside a frame's voltages.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMetadata {
    pub label: String,
    /// Injected current amplitude, A.
    pub current_amplitude: f64,
    /// Noise model applied, if any, and the RNG stream it used.
    pub noise: Option<(NoiseModel, u64)>,
    /// True once a baseline has been subtracted.
    pub calibrated: bool,
}

/// One voltage per protocol row, V.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub protocol: Protocol,
    pub voltages: Vec<f64>,
    pub metadata: FrameMetadata,
}

const CSV_HEADER: &str = "row,inject_pos,inject_neg,meas_pos,meas_neg,voltage";

impl Frame {
    pub fn new(protocol: Protocol, voltages: Vec<f64>, metadata: FrameMetadata) -> Result<Self> {
        if protocol.len() != voltages.len() {
            return Err(Error::Input(format!(
                "{} voltages for a {}-row protocol",
                voltages.len(),
                protocol.len()
            )));
        }
        Ok(Self {
            protocol,
            voltages,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.voltages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltages.is_empty()
    }

    /// Errors unless `other` was taken with the same protocol rows.
    pub fn check_compatible(&self, other: &Frame) -> Result<()> {
        if self.protocol.rows != other.protocol.rows {
            return Err(Error::Input(format!(
                "protocol mismatch: `{}` ({} rows) vs `{}` ({} rows)",
                self.protocol.name,
                self.protocol.len(),
                other.protocol.name,
                other.protocol.len()
            )));
        }
        Ok(())
    }

    /// Element-wise `self - reference`, marked calibrated.
    pub fn subtract(&self, reference: &Frame) -> Result<Frame> {
        self.check_compatible(reference)?;
        let voltages = self
            .voltages
            .iter()
            .zip(&reference.voltages)
            .map(|(a, b)| a - b)
            .collect();
        let mut metadata = self.metadata.clone();
        metadata.calibrated = true;
        Ok(Frame {
            protocol: self.protocol.clone(),
            voltages,
            metadata,
        })
    }

    /// CSV with `# key=value` metadata lines before the header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        let m = &self.metadata;
        writeln!(s, "# label={}", m.label).unwrap();
        writeln!(s, "# protocol={}", self.protocol.name).unwrap();
        writeln!(s, "# current_amplitude={}", m.current_amplitude).unwrap();
        writeln!(s, "# calibrated={}", m.calibrated).unwrap();
        if let Some((noise, stream)) = &m.noise {
            writeln!(s, "# noise_snr_db={}", noise.snr_db).unwrap();
            writeln!(s, "# noise_seed={}", noise.seed).unwrap();
            writeln!(s, "# noise_reference={}", noise.reference).unwrap();
            writeln!(s, "# noise_stream={stream}").unwrap();
        }
        writeln!(s, "{CSV_HEADER}").unwrap();
        for (i, (r, v)) in self.protocol.rows.iter().zip(&self.voltages).enumerate() {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                i + 1,
                r.inject_pos,
                r.inject_neg,
                r.meas_pos,
                r.meas_neg,
                v
            )
            .unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Frame> {
        let bad = |msg: String| Error::Input(format!("frame CSV: {msg}"));
        let mut meta = FrameMetadata::default();
        let mut protocol_name = String::from("custom");
        let (mut snr, mut seed, mut reference, mut stream) = (None, None, None, None);
        let mut rows = Vec::new();
        let mut voltages = Vec::new();
        let mut header_seen = false;
        for line in BufReader::new(input).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kv) = line.strip_prefix('#') {
                let Some((k, v)) = kv.trim().split_once('=') else {
                    continue;
                };
                let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`")));
                match k.trim() {
                    "label" => meta.label = v.into(),
                    "protocol" => protocol_name = v.into(),
                    "current_amplitude" => meta.current_amplitude = num(v)?,
                    "calibrated" => meta.calibrated = v == "true",
                    "noise_snr_db" => snr = Some(num(v)?),
                    "noise_seed" => seed = Some(v.parse().map_err(|_| bad(format!("bad seed `{v}`")))?),
                    "noise_reference" => reference = Some(v.parse::<NoiseReference>()?),
                    "noise_stream" => stream = Some(v.parse().map_err(|_| bad(format!("bad stream `{v}`")))?),
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                if line != CSV_HEADER {
                    return Err(bad(format!("unexpected header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields in `{line}`")));
            }
            let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("bad index `{s}`")));
            rows.push(Measurement::new(idx(f[1])?, idx(f[2])?, idx(f[3])?, idx(f[4])?));
            voltages.push(f[5].trim().parse().map_err(|_| bad(format!("bad voltage `{}`", f[5])))?);
        }
        if !header_seen {
            return Err(bad("missing header".into()));
        }
        if let (Some(snr_db), Some(seed), Some(reference)) = (snr, seed, reference) {
            meta.noise = Some((
                NoiseModel {
                    snr_db,
                    seed,
                    reference,
                },
                stream.unwrap_or(0),
            ));
        }
        Frame::new(
            Protocol {
                name: protocol_name,
                rows,
            },
            voltages,
            meta,
        )
    }
}
