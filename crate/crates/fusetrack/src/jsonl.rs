//! JSONL log formats: one self-contained record per line, UTF-8.
//!
//! Streams use fixed field names: sensor frames (`t`, `sensor`,
//! `detections`), odometry (`t`, `v`, `omega`), RTK fixes (`t`, `vehicle`,
//! `px`, `py`, `vx`, `vy`, `heading`), fused lists (`t`, `tracks` with the
//! covariance flattened to 16 row-major numbers) and relative-truth records
//! (`t`, `x`, `y`, `vx`, `vy`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::Result;
use crate::filtering::{Mat4, StateEstimate, Vec4};
use crate::motion::EgoMotion;
use crate::tracker::{FusedList, SensorFrame};
use crate::truth_eval::{RelativeState, RtkFix};

/// Serialized form of one track inside a fused-list record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u64,
    pub age: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// 4x4 covariance, row major
    pub cov: Vec<f64>,
}

/// One fused list per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedListRecord {
    pub t: f64,
    pub tracks: Vec<TrackRecord>,
}

impl From<&FusedList> for FusedListRecord {
    fn from(list: &FusedList) -> Self {
        Self {
            t: list.t,
            tracks: list
                .tracks
                .iter()
                .map(|tr| TrackRecord {
                    id: tr.id,
                    age: tr.age,
                    x: tr.state.mean[0],
                    y: tr.state.mean[1],
                    vx: tr.state.mean[2],
                    vy: tr.state.mean[3],
                    cov: tr.state.cov.transpose().as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl FusedListRecord {
    /// Rebuild the in-memory list. Sensor attribution and timestamps beyond
    /// `t` are not stored in the log.
    pub fn to_states(&self) -> Vec<(u64, u32, StateEstimate)> {
        self.tracks
            .iter()
            .map(|tr| {
                let mut cov = Mat4::zeros();
                for i in 0..4 {
                    for j in 0..4 {
                        cov[(i, j)] = tr.cov.get(i * 4 + j).copied().unwrap_or(0.0);
                    }
                }
                (
                    tr.id,
                    tr.age,
                    StateEstimate::new(Vec4::new(tr.x, tr.y, tr.vx, tr.vy), cov),
                )
            })
            .collect()
    }
}

/// Any record that can appear in one of the log streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    SensorFrame(SensorFrame),
    RtkFix(RtkFix),
    FusedList(FusedListRecord),
    RelativeState(RelativeState),
    EgoMotion(EgoMotion),
}

impl LogRecord {
    pub fn timestamp(&self) -> f64 {
        match self {
            LogRecord::SensorFrame(r) => r.t,
            LogRecord::EgoMotion(r) => r.t,
            LogRecord::RtkFix(r) => r.t,
            LogRecord::FusedList(r) => r.t,
            LogRecord::RelativeState(r) => r.t,
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::SensorId;
    use crate::tracker::Detection;
    use crate::truth_eval::Vehicle;

    #[test]
    fn field_names_are_stable() {
        let frame = SensorFrame {
            t: 1.0,
            sensor: SensorId::Lidar,
            detections: vec![Detection { x: 1.0, y: 2.0, vx: 3.0, vy: 4.0 }],
        };
        let s = serde_json::to_string(&frame).unwrap();
        assert_eq!(
            s,
            r#"{"t":1.0,"sensor":"lidar","detections":[{"x":1.0,"y":2.0,"vx":3.0,"vy":4.0}]}"#
        );

        let ego = EgoMotion { t: 0.5, v: 10.0, omega: 0.1 };
        assert_eq!(serde_json::to_string(&ego).unwrap(), r#"{"t":0.5,"v":10.0,"omega":0.1}"#);

        let fix = RtkFix {
            t: 2.0,
            vehicle: Vehicle::Ego,
            px: 1.0,
            py: 2.0,
            vx: 3.0,
            vy: 4.0,
            heading: Some(0.25),
            omega: None,
        };
        let s = serde_json::to_string(&fix).unwrap();
        assert_eq!(
            s,
            r#"{"t":2.0,"vehicle":"ego","px":1.0,"py":2.0,"vx":3.0,"vy":4.0,"heading":0.25}"#
        );
    }

    #[test]
    fn roundtrip_through_generic_record() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::default();
        let strategy = (
            -1e3..1e3f64,
            -1e3..1e3f64,
            -50.0..50.0f64,
            -50.0..50.0f64,
            0.0..1e4f64,
        );
        runner
            .run(&strategy, |(x, y, vx, vy, t)| {
                let frame = SensorFrame {
                    t,
                    sensor: SensorId::Radar,
                    detections: vec![Detection { x, y, vx, vy }],
                };
                let line = serde_json::to_string(&frame).unwrap();
                let parsed: LogRecord = serde_json::from_str(&line).unwrap();
                let reser = match &parsed {
                    LogRecord::SensorFrame(f) => serde_json::to_string(f).unwrap(),
                    other => panic!("wrong variant: {other:?}"),
                };
                prop_assert_eq!(line, reser);
                Ok(())
            })
            .unwrap();
    }

    #[test]
    fn fused_list_record_roundtrip() {
        use crate::filtering::StateEstimate;
        use crate::tracker::Track;
        let list = FusedList {
            t: 3.0,
            tracks: vec![Track {
                id: 7,
                state: StateEstimate::new(
                    Vec4::new(1.0, 2.0, 3.0, 4.0),
                    Mat4::from_diagonal(&Vec4::new(0.1, 0.2, 0.3, 0.4)),
                ),
                age: 5,
                created_at: 0.0,
                updated_at: 3.0,
                last_sensor: SensorId::Lidar,
                coasted: 0,
            }],
        };
        let rec = FusedListRecord::from(&list);
        assert_eq!(rec.tracks[0].cov.len(), 16);
        assert_eq!(rec.tracks[0].cov[0], 0.1);
        assert_eq!(rec.tracks[0].cov[5], 0.2);
        let line = serde_json::to_string(&rec).unwrap();
        let back: FusedListRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(rec, back);
        let states = back.to_states();
        assert_eq!(states[0].0, 7);
        assert_eq!(states[0].2.cov[(1, 1)], 0.2);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ego.jsonl");
        let records = vec![
            EgoMotion { t: 0.0, v: 1.0, omega: 0.0 },
            EgoMotion { t: 0.1, v: 1.5, omega: -0.2 },
        ];
        write_jsonl(&path, records.iter().copied()).unwrap();
        let back: Vec<EgoMotion> = read_jsonl(&path).unwrap();
        assert_eq!(records, back);
    }
}
