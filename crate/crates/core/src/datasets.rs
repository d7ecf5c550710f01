//! Toy 2D densities used throughout: a four-mode Gaussian mixture, two
//! concentric rings, and a swiss roll, plus the flat sample container and its
//! CSV serialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("dataset spec invalid: {0}")]
    BadSpec(String),
}

/// Rows of `dim`-dimensional points, optionally tagged with the chain and
/// step that produced them. Storage is row-major and flat.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
    /// `(chain_id, step)` per row when the set came out of a sampler.
    meta: Option<Vec<(u32, u32)>>,
}

impl SampleSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "samples must have at least one coordinate");
        Self { dim, data: Vec::new(), meta: None }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Self {
        let mut set = Self::new(dim);
        for r in rows {
            set.push(r.as_ref());
        }
        set
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn meta(&self, i: usize) -> Option<(u32, u32)> {
        self.meta.as_ref().map(|m| m[i])
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim);
        assert!(self.meta.is_none(), "mixing tagged and untagged rows");
        self.data.extend_from_slice(row);
    }

    pub fn push_tagged(&mut self, row: &[f64], chain_id: u32, step: u32) {
        assert_eq!(row.len(), self.dim);
        let n = self.data.len() / self.dim;
        let meta = self.meta.get_or_insert_with(Vec::new);
        assert_eq!(meta.len(), n, "mixing tagged and untagged rows");
        self.data.extend_from_slice(row);
        meta.push((chain_id, step));
    }

    /// Append another set with the same dimension and tagging convention.
    pub fn extend(&mut self, other: &SampleSet) {
        assert_eq!(self.dim, other.dim);
        if other.is_empty() {
            return;
        }
        if self.is_empty() {
            self.data.extend_from_slice(&other.data);
            self.meta = other.meta.clone();
            return;
        }
        assert_eq!(
            self.meta.is_some(),
            other.meta.is_some(),
            "mixing tagged and untagged rows"
        );
        self.data.extend_from_slice(&other.data);
        if let (Some(m), Some(o)) = (self.meta.as_mut(), other.meta.as_ref()) {
            m.extend_from_slice(o);
        }
    }

    /// CSV with header `x1,..,xd[,chain_id,step]`. Floats are written with
    /// the shortest decimal representation that parses back to the same bits,
    /// so a save/load round trip is exact.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), DatasetError> {
        let path_s = path.as_ref().display().to_string();
        let mut out = String::new();
        for i in 0..self.dim {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "x{}", i + 1);
        }
        if self.meta.is_some() {
            out.push_str(",chain_id,step");
        }
        out.push('\n');
        for i in 0..self.len() {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            if let Some((c, s)) = self.meta(i) {
                let _ = write!(out, ",{c},{s}");
            }
            out.push('\n');
        }
        std::fs::write(path.as_ref(), out).map_err(|source| DatasetError::Io { path: path_s, source })
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self, DatasetError> {
        let path_s = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|source| DatasetError::Io { path: path_s.clone(), source })?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| DatasetError::Parse {
            path: path_s.clone(),
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let dim = cols.iter().take_while(|c| c.starts_with('x')).count();
        let tagged = match cols.len() - dim {
            0 => false,
            2 if cols[dim] == "chain_id" && cols[dim + 1] == "step" => true,
            _ => {
                return Err(DatasetError::Parse {
                    path: path_s,
                    line: 1,
                    msg: format!("unrecognized header {header:?}"),
                })
            }
        };
        if dim == 0 {
            return Err(DatasetError::Parse {
                path: path_s,
                line: 1,
                msg: "no coordinate columns".into(),
            });
        }
        let mut set = SampleSet::new(dim);
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            let expected = dim + if tagged { 2 } else { 0 };
            if fields.len() != expected {
                return Err(DatasetError::Parse {
                    path: path_s,
                    line: lineno,
                    msg: format!("expected {expected} fields, found {}", fields.len()),
                });
            }
            let mut row = Vec::with_capacity(dim);
            for f in &fields[..dim] {
                let v: f64 = f.parse().map_err(|_| DatasetError::Parse {
                    path: path_s.clone(),
                    line: lineno,
                    msg: format!("bad float {f:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::Parse {
                        path: path_s.clone(),
                        line: lineno,
                        msg: format!("non-finite value {f:?}"),
                    });
                }
                row.push(v);
            }
            if tagged {
                let parse_u32 = |f: &str| -> Result<u32, DatasetError> {
                    f.parse().map_err(|_| DatasetError::Parse {
                        path: path_s.clone(),
                        line: lineno,
                        msg: format!("bad integer {f:?}"),
                    })
                };
                let c = parse_u32(fields[dim])?;
                let s = parse_u32(fields[dim + 1])?;
                set.push_tagged(&row, c, s);
            } else {
                set.push(&row);
            }
        }
        Ok(set)
    }
}

fn default_mog_std() -> f64 {
    0.2
}
fn default_r1() -> f64 {
    0.5
}
fn default_r2() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.025
}
fn default_t_min() -> f64 {
    1.5 * PI
}
fn default_t_max() -> f64 {
    4.5 * PI
}

/// Which toy density to draw from, with its shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    /// Four Gaussians at (±1, ±1).
    Mog4 {
        #[serde(default = "default_mog_std")]
        std: f64,
    },
    /// Two concentric circles with radial jitter.
    TwoRings {
        #[serde(default = "default_r1")]
        r1: f64,
        #[serde(default = "default_r2")]
        r2: f64,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    /// Spiral `t·(cos t, sin t)/t_max` for `t ∈ [t_min, t_max]`, rescaled
    /// into `[−1,1]²` before jitter.
    SwissRoll {
        #[serde(default = "default_t_min")]
        t_min: f64,
        #[serde(default = "default_t_max")]
        t_max: f64,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
}

/// Draw `spec.n` points; deterministic in `spec.seed`.
pub fn generate(spec: &DatasetSpec) -> Result<SampleSet, DatasetError> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut set = SampleSet::new(2);
    match spec.kind {
        DatasetKind::Mog4 { std } => {
            if std <= 0.0 {
                return Err(DatasetError::BadSpec(format!("mog std must be positive, got {std}")));
            }
            const MEANS: [[f64; 2]; 4] = [[-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [1.0, -1.0]];
            for _ in 0..spec.n {
                let k = rng.random_range(0..4);
                let p = [MEANS[k][0] + std * normal_from(&mut rng), MEANS[k][1] + std * normal_from(&mut rng)];
                set.push(&p);
            }
        }
        DatasetKind::TwoRings { r1, r2, jitter } => {
            if r1 <= 0.0 || r2 <= 0.0 {
                return Err(DatasetError::BadSpec("ring radii must be positive".into()));
            }
            for _ in 0..spec.n {
                let r0 = if rng.random_range(0..2) == 0 { r1 } else { r2 };
                let theta = rng.random::<f64>() * TAU;
                let r = r0 + jitter * normal_from(&mut rng);
                set.push(&[r * theta.cos(), r * theta.sin()]);
            }
        }
        DatasetKind::SwissRoll { t_min, t_max, jitter } => {
            if !(t_max > t_min) || t_min < 0.0 {
                return Err(DatasetError::BadSpec("need 0 <= t_min < t_max".into()));
            }
            for _ in 0..spec.n {
                let t = t_min + (t_max - t_min) * rng.random::<f64>();
                let p = [
                    t * t.cos() / t_max + jitter * normal_from(&mut rng),
                    t * t.sin() / t_max + jitter * normal_from(&mut rng),
                ];
                set.push(&p);
            }
        }
    }
    Ok(set)
}

fn normal_from<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}
