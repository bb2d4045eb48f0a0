//! Training point generation.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{BoundaryKind, BoundaryPoint};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("sample count must be at least {min}, got {got}")]
    Count { min: usize, got: usize },
    #[error("invalid k range ({0}, {1}): need 0 < k_min < k_max")]
    Range(f64, f64),
    #[error("sample csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sample csv row {row}: {msg}")]
    Row { row: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KDistribution {
    Uniform,
    LogUniform,
}

/// All training points of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub collocation: Vec<(f64, f64)>,
    pub dirichlet: Vec<BoundaryPoint>,
    pub neumann: Vec<BoundaryPoint>,
    /// Empty for fixed-k training.
    pub k_values: Vec<f64>,
}

fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            return v;
        }
    }
}

/// `n` i.i.d. uniform points strictly inside the unit square.
pub fn sample_interior(n: usize, seed: u64) -> Result<Vec<(f64, f64)>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::Count { min: 1, got: 0 });
    }
    let mut rng = stream_rng(seed, Stream::Interior);
    Ok((0..n)
        .map(|_| {
            let x = open_unit(&mut rng);
            let y = open_unit(&mut rng);
            (x, y)
        })
        .collect())
}

/// Dirichlet points on x ∈ {0, 1} and Neumann points on y ∈ {0, 1}.
///
/// Each pair of edges gets an even split; an odd count puts the extra point
/// on the x = 0 (resp. y = 0) edge.
pub fn sample_boundary(
    n_bd: usize,
    n_bn: usize,
    seed: u64,
) -> Result<(Vec<BoundaryPoint>, Vec<BoundaryPoint>), SamplingError> {
    for n in [n_bd, n_bn] {
        if n < 2 {
            return Err(SamplingError::Count { min: 2, got: n });
        }
    }
    let mut rng = stream_rng(seed, Stream::Dirichlet);
    let low = n_bd.div_ceil(2);
    let dirichlet = (0..n_bd)
        .map(|i| {
            let x = if i < low { 0.0 } else { 1.0 };
            BoundaryPoint::dirichlet(x, open_unit(&mut rng))
        })
        .collect();
    let mut rng = stream_rng(seed, Stream::Neumann);
    let low = n_bn.div_ceil(2);
    let neumann = (0..n_bn)
        .map(|i| {
            let y = if i < low { 0.0 } else { 1.0 };
            BoundaryPoint::neumann(open_unit(&mut rng), y)
        })
        .collect();
    Ok((dirichlet, neumann))
}

/// `n` diffusion coefficients strictly inside `(k_min, k_max)`.
pub fn sample_k(
    n: usize,
    range: (f64, f64),
    distribution: KDistribution,
    seed: u64,
) -> Result<Vec<f64>, SamplingError> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(SamplingError::Range(lo, hi));
    }
    if n == 0 {
        return Err(SamplingError::Count { min: 1, got: 0 });
    }
    let mut rng = stream_rng(seed, Stream::DiffusionCoefficient);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = open_unit(&mut rng);
        let k = match distribution {
            KDistribution::Uniform => lo + t * (hi - lo),
            KDistribution::LogUniform => {
                let (a, b) = (lo.log10(), hi.log10());
                10f64.powf(a + t * (b - a))
            }
        };
        // rounding can land exactly on an endpoint
        if k > lo && k < hi {
            out.push(k);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    class: String,
    x: Option<f64>,
    y: Option<f64>,
    k: Option<f64>,
    nx: Option<f64>,
    ny: Option<f64>,
}

impl SampleSet {
    /// Number of residual evaluations per loss: every collocation point at every k.
    pub fn residual_pairs(&self, k_fixed: Option<f64>) -> usize {
        let nk = if k_fixed.is_some() { 1 } else { self.k_values.len() };
        self.collocation.len() * nk
    }

    /// CSV with columns `class, x, y, k, nx, ny`; unused cells are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SamplingError> {
        let mut w = csv::Writer::from_writer(writer);
        for &(x, y) in &self.collocation {
            w.serialize(SampleRow {
                class: "interior".into(),
                x: Some(x),
                y: Some(y),
                k: None,
                nx: None,
                ny: None,
            })?;
        }
        for p in self.dirichlet.iter().chain(&self.neumann) {
            let class = match p.kind {
                BoundaryKind::Dirichlet => "dirichlet",
                BoundaryKind::Neumann => "neumann",
            };
            w.serialize(SampleRow {
                class: class.into(),
                x: Some(p.x),
                y: Some(p.y),
                k: None,
                nx: Some(p.normal.0),
                ny: Some(p.normal.1),
            })?;
        }
        for &k in &self.k_values {
            w.serialize(SampleRow {
                class: "k".into(),
                x: None,
                y: None,
                k: Some(k),
                nx: None,
                ny: None,
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SamplingError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut set = SampleSet::default();
        for (i, row) in r.deserialize::<SampleRow>().enumerate() {
            let row = row?;
            let need = |v: Option<f64>, name: &str| {
                v.ok_or_else(|| SamplingError::Row {
                    row: i + 1,
                    msg: format!("missing {name}"),
                })
            };
            match row.class.as_str() {
                "interior" => set.collocation.push((need(row.x, "x")?, need(row.y, "y")?)),
                "dirichlet" | "neumann" => {
                    let kind = if row.class == "dirichlet" {
                        BoundaryKind::Dirichlet
                    } else {
                        BoundaryKind::Neumann
                    };
                    let p = BoundaryPoint {
                        x: need(row.x, "x")?,
                        y: need(row.y, "y")?,
                        kind,
                        normal: (need(row.nx, "nx")?, need(row.ny, "ny")?),
                    };
                    if !p.is_valid() {
                        return Err(SamplingError::Row {
                            row: i + 1,
                            msg: format!("point ({}, {}) is not on a {} edge", p.x, p.y, row.class),
                        });
                    }
                    match kind {
                        BoundaryKind::Dirichlet => set.dirichlet.push(p),
                        BoundaryKind::Neumann => set.neumann.push(p),
                    }
                }
                "k" => set.k_values.push(need(row.k, "k")?),
                other => {
                    return Err(SamplingError::Row {
                        row: i + 1,
                        msg: format!("unknown class {other:?}"),
                    })
                }
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_is_deterministic_and_inside() {
        let a = sample_interior(1000, 7).unwrap();
        assert_eq!(a, sample_interior(1000, 7).unwrap());
        assert_ne!(a, sample_interior(1000, 8).unwrap());
        assert!(a.iter().all(|&(x, y)| x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0));
        assert!(sample_interior(0, 7).is_err());
    }

    #[test]
    fn interior_mean_is_centered() {
        let n = 100_000;
        let pts = sample_interior(n, 3).unwrap();
        // 3σ of the sample mean of U(0,1)
        let tol = 3.0 * (1.0 / 12f64.sqrt()) / (n as f64).sqrt();
        assert!(tol < 0.01);
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
        assert!((mx - 0.5).abs() < tol, "{mx}");
        assert!((my - 0.5).abs() < tol, "{my}");
    }

    #[test]
    fn boundary_split_and_normals() {
        let (d, n) = sample_boundary(200, 200, 1).unwrap();
        assert_eq!(d.iter().filter(|p| p.x == 0.0).count(), 100);
        assert_eq!(d.iter().filter(|p| p.x == 1.0).count(), 100);
        assert_eq!(n.iter().filter(|p| p.y == 0.0 && p.normal == (0.0, -1.0)).count(), 100);
        assert_eq!(n.iter().filter(|p| p.y == 1.0 && p.normal == (0.0, 1.0)).count(), 100);
        assert!(d.iter().chain(&n).all(BoundaryPoint::is_valid));
        assert_eq!((d.clone(), n.clone()), sample_boundary(200, 200, 1).unwrap());

        let (d, n) = sample_boundary(5, 3, 1).unwrap();
        assert_eq!(d.iter().filter(|p| p.x == 0.0).count(), 3);
        assert_eq!(n.iter().filter(|p| p.y == 0.0).count(), 2);
        assert!(sample_boundary(1, 4, 1).is_err());
    }

    #[test]
    fn boundary_streams_ignore_interior_count() {
        // Interior and boundary draw from independent streams.
        let (d1, _) = sample_boundary(10, 10, 5).unwrap();
        let _ = sample_interior(123, 5).unwrap();
        let (d2, _) = sample_boundary(10, 10, 5).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn k_samples_in_range() {
        let ks = sample_k(20, (1e-4, 1.0), KDistribution::LogUniform, 2).unwrap();
        assert_eq!(ks.len(), 20);
        assert!(ks.iter().all(|&k| k > 1e-4 && k < 1.0));
        let ks = sample_k(20, (1e-3, 1.0), KDistribution::Uniform, 2).unwrap();
        assert!(ks.iter().all(|&k| k > 1e-3 && k < 1.0));
        assert!(sample_k(3, (1.0, 0.1), KDistribution::Uniform, 0).is_err());
        assert!(sample_k(3, (0.0, 0.1), KDistribution::Uniform, 0).is_err());
    }

    #[test]
    fn log_uniform_mean_exponent() {
        let ks = sample_k(10_000, (1e-4, 1.0), KDistribution::LogUniform, 11).unwrap();
        let mean = ks.iter().map(|k| k.log10()).sum::<f64>() / ks.len() as f64;
        assert!((mean + 2.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn csv_round_trip() {
        let (dirichlet, neumann) = sample_boundary(4, 6, 9).unwrap();
        let set = SampleSet {
            collocation: sample_interior(5, 9).unwrap(),
            dirichlet,
            neumann,
            k_values: sample_k(3, (1e-4, 1.0), KDistribution::LogUniform, 9).unwrap(),
        };
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("class,x,y,k,nx,ny\n"));
        assert_eq!(SampleSet::read_csv(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn csv_rejects_off_edge_boundary_point() {
        let text = "class,x,y,k,nx,ny\ndirichlet,0.5,0.5,,-1,0\n";
        assert!(SampleSet::read_csv(text.as_bytes()).is_err());
    }
}
