//! Trajectory CSV: `step,epoch,i,S,event,x1..xn,V1..Vn`, one row per record
//! plus a terminal `end:<status>` row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::direction::{CoordSet, EpochState};
use crate::dynamics::{EventTag, TerminalStatus, Trajectory, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Malformed { row: usize, msg: String },
    #[error("empty trajectory file")]
    Empty,
}

fn header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "epoch", "i", "S", "event"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=n).map(|k| format!("x{k}")));
    h.extend((1..=n).map(|k| format!("V{k}")));
    h
}

/// 17 significant digits, enough to read back the same `f64`.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory_to<W: Write>(traj: &Trajectory, out: W) -> Result<(), TrajectoryIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(traj.dim))?;
    let row = |r: &TrajectoryRecord, event: String| -> Vec<String> {
        let mut fields = vec![
            r.step.to_string(),
            r.epoch.to_string(),
            (r.state.coord + 1).to_string(),
            r.state.set.bits().to_string(),
            event,
        ];
        fields.extend(r.point.iter().map(|&v| fmt_float(v)));
        fields.extend(r.field.iter().map(|&v| fmt_float(v)));
        fields
    };
    for r in &traj.records {
        w.write_record(row(r, r.event.map(|e| e.to_string()).unwrap_or_default()))?;
    }
    let end = format!("end:{}", traj.status);
    match traj.records.last() {
        Some(last) => w.write_record(row(last, end))?,
        None => {
            let mut fields = vec!["0".to_string(), "0".into(), "1".into(), "0".into(), end];
            fields.extend(std::iter::repeat_n(String::new(), 2 * traj.dim));
            w.write_record(fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), TrajectoryIoError> {
    write_trajectory_to(traj, File::create(path)?)
}

pub fn read_trajectory_from<R: Read>(input: R) -> Result<Trajectory, TrajectoryIoError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rd.records();
    let head = match rows.next() {
        Some(h) => h?,
        None => return Err(TrajectoryIoError::Empty),
    };
    if head.len() < 5 || (head.len() - 5) % 2 != 0 {
        return Err(TrajectoryIoError::Malformed {
            row: 1,
            msg: format!("unexpected header with {} columns", head.len()),
        });
    }
    let n = (head.len() - 5) / 2;
    let expected = header(n);
    if head.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(TrajectoryIoError::Malformed { row: 1, msg: format!("expected header {}", expected.join(",")) });
    }

    let mut records = Vec::new();
    let mut status = None;
    for (k, row) in rows.enumerate() {
        let row_no = k + 2;
        let row = row?;
        let bad = |msg: String| TrajectoryIoError::Malformed { row: row_no, msg };
        if status.is_some() {
            return Err(bad("data after the terminal row".into()));
        }
        if row.len() != head.len() {
            return Err(bad(format!("expected {} fields, found {}", head.len(), row.len())));
        }
        let int = |idx: usize| -> Result<u64, TrajectoryIoError> {
            row[idx].parse::<u64>().map_err(|e| bad(format!("column {}: {e}", expected[idx])))
        };
        let event = &row[4];
        if let Some(s) = event.strip_prefix("end:") {
            status = Some(s.parse::<TerminalStatus>().map_err(bad)?);
            continue;
        }
        let coord = int(2)?;
        if coord == 0 {
            return Err(bad("column i: coordinates are 1-based".into()));
        }
        let state =
            EpochState::new(coord as usize - 1, CoordSet::from_bits(int(3)?)).map_err(|e| bad(e.to_string()))?;
        let event = if event.is_empty() { None } else { Some(event.parse::<EventTag>().map_err(bad)?) };
        let floats = |range: std::ops::Range<usize>| -> Result<Vec<f64>, TrajectoryIoError> {
            range
                .map(|idx| row[idx].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", expected[idx]))))
                .collect()
        };
        records.push(TrajectoryRecord {
            step: int(0)?,
            epoch: int(1)?,
            state,
            event,
            point: floats(5..5 + n)?,
            field: floats(5 + n..5 + 2 * n)?,
        });
    }
    let status = status.ok_or(TrajectoryIoError::Malformed {
        row: records.len() + 2,
        msg: "missing terminal end:<status> row".into(),
    })?;
    Ok(Trajectory { dim: n, records, status })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, TrajectoryIoError> {
    read_trajectory_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{solve_stonr, SolverConfig};
    use crate::objectives::builtin_problem;

    fn to_string(t: &Trajectory) -> String {
        let mut buf = Vec::new();
        write_trajectory_to(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn bilinear_first_row_is_the_start() {
        let p = builtin_problem("bilinear").unwrap();
        let t = solve_stonr(&p, &SolverConfig::default()).unwrap().trajectory;
        let text = to_string(&t);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,epoch,i,S,event,x1,x2,V1,V2");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&first[..5], &["0", "0", "1", "0", "start"]);
        assert_eq!(first[5].parse::<f64>().unwrap(), 0.0);
        assert_eq!(first[6].parse::<f64>().unwrap(), 0.0);
        assert!(text.trim_end().lines().last().unwrap().contains("end:solved"));
    }

    #[test]
    fn round_trip_is_exact() {
        for name in ["bilinear", "f2"] {
            let p = builtin_problem(name).unwrap();
            let t = solve_stonr(&p, &SolverConfig::default()).unwrap().trajectory;
            let back = read_trajectory_from(to_string(&t).as_bytes()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn empty_trajectory_round_trips() {
        let t = Trajectory { dim: 2, records: vec![], status: TerminalStatus::MaxSteps };
        assert_eq!(read_trajectory_from(to_string(&t).as_bytes()).unwrap(), t);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(read_trajectory_from(&b""[..]), Err(TrajectoryIoError::Empty)));
    }

    #[test]
    fn malformed_rows_are_reported_with_their_number() {
        let text = "step,epoch,i,S,event,x1,x2,V1,V2\n0,0,1,0,start,0,0,1,1\n1,0,1,0,,abc,0,1,1\n";
        match read_trajectory_from(text.as_bytes()) {
            Err(TrajectoryIoError::Malformed { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("x1"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_terminal_row_is_an_error() {
        let text = "step,epoch,i,S,event,x1,V1\n0,0,1,0,start,0,1\n";
        assert!(read_trajectory_from(text.as_bytes()).is_err());
    }

    #[test]
    fn extreme_values_survive() {
        let rec = TrajectoryRecord {
            step: 7,
            epoch: 2,
            state: EpochState::new(2, CoordSet::from_bits(0b11)).unwrap(),
            event: Some(EventTag::Middling(1)),
            point: vec![f64::MIN_POSITIVE, -0.1, 1.0 / 3.0],
            field: vec![1e300, -5e-324, 0.0],
        };
        let t = Trajectory { dim: 3, records: vec![rec], status: TerminalStatus::AssumptionViolation };
        assert_eq!(read_trajectory_from(to_string(&t).as_bytes()).unwrap(), t);
    }
}
