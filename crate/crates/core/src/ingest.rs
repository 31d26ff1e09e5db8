//! Telemetry loading and standardization.
//!
//! Positions are centered per coordinate and divided by the pooled standard
//! deviation of both coordinates, so the aspect ratio of the track is kept.
//! Times are mapped affinely from the observed `[t_min, t_max]` onto `[0, 1]`.

use std::io::Read;
use std::path::Path;

use crate::{FmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRecord {
    pub time: f64,
    pub x: f64,
    pub y: f64,
}

/// Parameters of the affine map between raw and model units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean_x: f64,
    pub mean_y: f64,
    pub pooled_sd: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Standardization {
    /// The map that leaves unit-interval times and positions unchanged.
    pub fn identity() -> Self {
        Standardization {
            mean_x: 0.0,
            mean_y: 0.0,
            pooled_sd: 1.0,
            t_min: 0.0,
            t_max: 1.0,
        }
    }

    pub fn time_to_unit(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }

    pub fn time_from_unit(&self, u: f64) -> f64 {
        self.t_min + u * (self.t_max - self.t_min)
    }

    pub fn position_to_model(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.mean_x) / self.pooled_sd,
            (p[1] - self.mean_y) / self.pooled_sd,
        ]
    }

    pub fn position_to_raw(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.mean_x + p[0] * self.pooled_sd,
            self.mean_y + p[1] * self.pooled_sd,
        ]
    }
}

/// A track in model units: times on `[0, 1]`, positions centered and scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedTrack {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub std: Standardization,
}

impl StandardizedTrack {
    /// Wrap observations that are already in model units (simulation output).
    pub fn from_model_units(times: Vec<f64>, positions: Vec<[f64; 2]>) -> Result<Self> {
        if times.len() != positions.len() {
            return Err(FmmError::InvalidArgument(format!(
                "{} times but {} positions",
                times.len(),
                positions.len()
            )));
        }
        if times.len() < 3 {
            return Err(FmmError::TooFewRecords(times.len()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FmmError::InvalidArgument(
                "times must be strictly increasing".into(),
            ));
        }
        if times
            .iter()
            .chain(positions.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(FmmError::NonFinite("track values".into()));
        }
        Ok(StandardizedTrack {
            times,
            positions,
            std: Standardization::identity(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// One coordinate as a plain vector (0 = x, 1 = y).
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.positions.iter().map(|p| p[axis]).collect()
    }

    /// Back to raw records.
    pub fn to_records(&self) -> Vec<TelemetryRecord> {
        self.times
            .iter()
            .zip(&self.positions)
            .map(|(&t, &p)| {
                let r = self.std.position_to_raw(p);
                TelemetryRecord {
                    time: self.std.time_from_unit(t),
                    x: r[0],
                    y: r[1],
                }
            })
            .collect()
    }
}

/// Load a `time,x,y` CSV file.
pub fn load_track(path: impl AsRef<Path>) -> Result<Vec<TelemetryRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| FmmError::io(path, e))?;
    parse_track(file)
}

/// Parse `time,x,y` CSV from any reader. Records are returned sorted by time.
pub fn parse_track<R: Read>(reader: R) -> Result<Vec<TelemetryRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| FmmError::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["time", "x", "y"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(FmmError::Parse {
            row: 1,
            message: format!("expected header `time,x,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    // (line number, record) so duplicates can be reported against the file.
    let mut rows: Vec<(usize, TelemetryRecord)> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| FmmError::Parse {
            row: line,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(FmmError::Parse {
                row: line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let field = |i: usize| -> Result<f64> {
            let v: f64 = rec[i].parse().map_err(|_| FmmError::Parse {
                row: line,
                message: format!("`{}` is not a number", &rec[i]),
            })?;
            if !v.is_finite() {
                return Err(FmmError::Parse {
                    row: line,
                    message: format!("`{}` is not finite", &rec[i]),
                });
            }
            Ok(v)
        };
        rows.push((
            line,
            TelemetryRecord {
                time: field(0)?,
                x: field(1)?,
                y: field(2)?,
            },
        ));
    }

    rows.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
    for w in rows.windows(2) {
        if w[0].1.time == w[1].1.time {
            return Err(FmmError::DuplicateTime {
                time: w[0].1.time,
                first: w[0].0.min(w[1].0),
                second: w[0].0.max(w[1].0),
            });
        }
    }
    if rows.len() < 3 {
        return Err(FmmError::TooFewRecords(rows.len()));
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Center, scale and time-normalize a set of records.
///
/// The pooled variance is `(SS_x + SS_y) / (2n - 2)`, i.e. each coordinate
/// loses one degree of freedom to its own mean.
pub fn standardize(records: &[TelemetryRecord]) -> Result<StandardizedTrack> {
    let n = records.len();
    if n < 3 {
        return Err(FmmError::TooFewRecords(n));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    if sorted
        .iter()
        .any(|r| !(r.time.is_finite() && r.x.is_finite() && r.y.is_finite()))
    {
        return Err(FmmError::NonFinite("telemetry record".into()));
    }
    for (i, w) in sorted.windows(2).enumerate() {
        if w[0].time == w[1].time {
            return Err(FmmError::DuplicateTime {
                time: w[0].time,
                first: i,
                second: i + 1,
            });
        }
    }

    let nf = n as f64;
    let mean_x = sorted.iter().map(|r| r.x).sum::<f64>() / nf;
    let mean_y = sorted.iter().map(|r| r.y).sum::<f64>() / nf;
    let ss: f64 = sorted
        .iter()
        .map(|r| (r.x - mean_x).powi(2) + (r.y - mean_y).powi(2))
        .sum();
    let pooled_sd = (ss / (2.0 * nf - 2.0)).sqrt();
    if pooled_sd <= 0.0 || !pooled_sd.is_finite() {
        return Err(FmmError::ZeroVariance);
    }
    let std = Standardization {
        mean_x,
        mean_y,
        pooled_sd,
        t_min: sorted[0].time,
        t_max: sorted[n - 1].time,
    };

    let mut times: Vec<f64> = sorted.iter().map(|r| std.time_to_unit(r.time)).collect();
    // pin the endpoints exactly
    times[0] = 0.0;
    times[n - 1] = 1.0;
    let positions = sorted
        .iter()
        .map(|r| std.position_to_model([r.x, r.y]))
        .collect();
    Ok(StandardizedTrack {
        times,
        positions,
        std,
    })
}

/// Map model-unit positions back to raw units.
pub fn destandardize(positions: &[[f64; 2]], std: &Standardization) -> Result<Vec<[f64; 2]>> {
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FmmError::NonFinite("positions".into()));
    }
    Ok(positions.iter().map(|&p| std.position_to_raw(p)).collect())
}
