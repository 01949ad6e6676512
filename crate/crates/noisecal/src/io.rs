//! File formats. Data CSVs hold one row per step with columns `k`, the true
//! state, the input applied since the previous step and the measurement.
//! Matrices in JSON are arrays of rows. Floats are written in shortest
//! round-trip form.

use std::fs;
use std::path::Path;

use noisecal_core::{Mat, SupervisorySpec, Vector};
use serde::{Deserialize, Serialize};

use crate::sim::{Pair, Supervision, Trajectory, POS_DIM, STATE_DIM};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

pub const CALIB_CSV: &str = "calibration.csv";
pub const TEST_CSV: &str = "test.csv";
pub const SUPERVISORY_JSON: &str = "supervisory.json";
pub const MANIFEST_JSON: &str = "manifest.json";

const HEADER: [&str; 13] = [
    "k", "px", "py", "pz", "vx", "vy", "vz", "ux", "uy", "uz", "yx", "yy", "yz",
];

fn show(path: &Path) -> String {
    path.display().to_string()
}

pub fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Option<Mat> {
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: show(path),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| IoError::File {
        path: show(path),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: show(path),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: show(path),
        source,
    })
}

pub fn write_data_csv(path: &Path, traj: &Trajectory, ys: &[Vector]) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: show(path),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HEADER).map_err(csv_err)?;
    for (i, ((x, u), y)) in traj.states.iter().zip(&traj.inputs).zip(ys).enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(x.iter().chain(u.iter()).chain(y.iter()).map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: show(path),
        source,
    })
}

/// Reads a data CSV; `x0` comes from the manifest.
pub fn read_data_csv(path: &Path, x0: Vector) -> Result<(Trajectory, Vec<Vector>), IoError> {
    let csv_err = |source| IoError::Csv {
        path: show(path),
        source,
    };
    let format = |msg: String| IoError::Format {
        path: show(path),
        msg,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != HEADER {
        return Err(format(format!("expected columns {HEADER:?}")));
    }
    let mut traj = Trajectory {
        x0,
        states: Vec::new(),
        inputs: Vec::new(),
    };
    let mut ys = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| format(format!("row {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        if vals[0] != (i + 1) as f64 {
            return Err(format(format!("row {} has k = {}", i + 1, vals[0])));
        }
        traj.states
            .push(Vector::from_column_slice(&vals[1..1 + STATE_DIM]));
        traj.inputs.push(Vector::from_column_slice(
            &vals[1 + STATE_DIM..1 + STATE_DIM + POS_DIM],
        ));
        ys.push(Vector::from_column_slice(&vals[1 + STATE_DIM + POS_DIM..]));
    }
    Ok((traj, ys))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisoryFile {
    /// 1-based supervised steps.
    pub indices: Vec<usize>,
    pub pairs: Vec<Pair>,
    pub hs: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl SupervisoryFile {
    pub fn new(sup: &Supervision) -> Self {
        let spec = &sup.spec;
        SupervisoryFile {
            indices: spec.indices.clone(),
            pairs: sup.pairs.clone(),
            hs: rows(&spec.hs),
            psi: rows(&spec.psi),
            ys: spec.ys.iter().copied().collect(),
        }
    }

    pub fn spec(&self, path: &Path) -> Result<SupervisorySpec, IoError> {
        let format = |msg: &str| IoError::Format {
            path: show(path),
            msg: msg.into(),
        };
        if self.indices.is_empty() {
            return Ok(SupervisorySpec::empty());
        }
        let s = self.ys.len();
        let spec = SupervisorySpec {
            indices: self.indices.clone(),
            hs: from_rows(&self.hs, STATE_DIM * self.indices.len())
                .ok_or_else(|| format("ragged hs"))?,
            psi: from_rows(&self.psi, s).ok_or_else(|| format("ragged psi"))?,
            ys: Vector::from_vec(self.ys.clone()),
        };
        if spec.hs.nrows() != s || spec.psi.nrows() != s {
            return Err(format("hs, psi and ys disagree in size"));
        }
        Ok(spec)
    }
}

/// What `simulate` produced, with the initial states the CSVs omit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub dt: f64,
    pub calib_x0: Vec<f64>,
    pub test_x0: Vec<f64>,
    pub r_true: Vec<Vec<f64>>,
    pub supervised_states: usize,
    pub supervisory_pairs: usize,
    pub measurement_rmse: f64,
}

/// A simulated experiment on disk.
pub struct DataDir {
    pub manifest: Manifest,
    pub calib: (Trajectory, Vec<Vector>),
    pub test: (Trajectory, Vec<Vector>),
    pub spec: SupervisorySpec,
}

pub fn write_data_dir(
    dir: &Path,
    manifest: &Manifest,
    calib: (&Trajectory, &[Vector]),
    test: (&Trajectory, &[Vector]),
    sup: &Supervision,
) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: show(dir),
        source,
    })?;
    write_data_csv(&dir.join(CALIB_CSV), calib.0, calib.1)?;
    write_data_csv(&dir.join(TEST_CSV), test.0, test.1)?;
    write_json(&dir.join(SUPERVISORY_JSON), &SupervisoryFile::new(sup))?;
    write_json(&dir.join(MANIFEST_JSON), manifest)
}

pub fn read_data_dir(dir: &Path) -> Result<DataDir, IoError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_JSON))?;
    let calib = read_data_csv(
        &dir.join(CALIB_CSV),
        Vector::from_vec(manifest.calib_x0.clone()),
    )?;
    let test = read_data_csv(
        &dir.join(TEST_CSV),
        Vector::from_vec(manifest.test_x0.clone()),
    )?;
    let path = dir.join(SUPERVISORY_JSON);
    let spec = read_json::<SupervisoryFile>(&path)?.spec(&path)?;
    Ok(DataDir {
        manifest,
        calib,
        test,
        spec,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub loss: f64,
    pub ell_o: f64,
    pub ell_s: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub wall_time: f64,
}

/// `calibrate` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub param: crate::config::ParamKind,
    pub mode: crate::config::Mode,
    pub loss: crate::config::LossKind,
    pub theta_hat: Vec<f64>,
    pub r_hat: Vec<Vec<f64>>,
    pub final_loss: f64,
    pub termination: String,
    pub iterations: Vec<IterationRow>,
}

pub fn write_history_csv(path: &Path, rows: &[IterationRow]) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: show(path),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "iteration",
        "loss",
        "ell_o",
        "ell_s",
        "grad_norm",
        "step",
        "wall_time",
    ])
    .map_err(csv_err)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.loss.to_string(),
            r.ell_o.to_string(),
            r.ell_s.to_string(),
            r.grad_norm.to_string(),
            r.step.to_string(),
            r.wall_time.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: show(path),
        source,
    })
}
