//! Spatial domain: vertex sets on the unit sphere.
//!
//! Vertices live on (one or both hemispheres of) the unit sphere and are
//! addressed by spherical coordinates `theta` (polar angle, radians, measured
//! from the +z axis) and `phi` (azimuth, radians). All distances exposed by
//! this module are great-circle central angles expressed in **degrees of
//! arc**; locations on different hemispheres are treated as infinitely far
//! apart so that no smoothing weight ever crosses the medial wall.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Cortical hemisphere tag. Distances across hemispheres are infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Hemisphere {
    Left,
    Right,
}

impl FromStr for Hemisphere {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "L" | "l" | "left" | "Left" => Ok(Hemisphere::Left),
            "R" | "r" | "right" | "Right" => Ok(Hemisphere::Right),
            other => Err(format!("unknown hemisphere label {other:?} (expected L or R)")),
        }
    }
}

impl fmt::Display for Hemisphere {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hemisphere::Left => write!(f, "L"),
            Hemisphere::Right => write!(f, "R"),
        }
    }
}

/// A fixed, ordered set of vertices on the unit sphere.
///
/// Positions within the set are 0-based; the on-disk format labels vertices
/// with contiguous 1-based indices.
#[derive(Debug, Clone)]
pub struct VertexSet {
    thetas: Vec<f64>,
    phis: Vec<f64>,
    hemispheres: Vec<Hemisphere>,
    /// Cartesian unit vectors, cached for distance evaluation.
    units: Vec<[f64; 3]>,
}

fn unit_vector(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Great-circle central angle in degrees between two unit vectors, via
/// `atan2(|a x b|, a . b)`: exact for identical vectors and numerically
/// stable near both 0 and 180 degrees, where `acos` of the dot product
/// loses precision.
fn central_angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cx = a[1] * b[2] - a[2] * b[1];
    let cy = a[2] * b[0] - a[0] * b[2];
    let cz = a[0] * b[1] - a[1] * b[0];
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    cross.atan2(dot).to_degrees()
}

impl VertexSet {
    /// Builds a vertex set from parallel coordinate lists.
    pub fn new(thetas: Vec<f64>, phis: Vec<f64>, hemispheres: Vec<Hemisphere>) -> Result<Self> {
        if thetas.len() != phis.len() || thetas.len() != hemispheres.len() {
            return Err(Error::Invalid(
                "vertex coordinate lists have mismatched lengths".into(),
            ));
        }
        if thetas.is_empty() {
            return Err(Error::Invalid("vertex set is empty".into()));
        }
        for (i, (&t, &p)) in thetas.iter().zip(&phis).enumerate() {
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::Invalid(format!(
                    "vertex {} has non-finite coordinates",
                    i + 1
                )));
            }
        }
        let units = thetas
            .iter()
            .zip(&phis)
            .map(|(&t, &p)| unit_vector(t, p))
            .collect();
        Ok(VertexSet {
            thetas,
            phis,
            hemispheres,
            units,
        })
    }

    /// Quasi-uniform Fibonacci lattice of `n` vertices, all assigned to one
    /// hemisphere label. Used by the simulation harness.
    pub fn fibonacci_lattice(n: usize, hemisphere: Hemisphere) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("vertex count must be positive".into()));
        }
        let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        let mut thetas = Vec::with_capacity(n);
        let mut phis = Vec::with_capacity(n);
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            thetas.push(z.acos());
            phis.push((golden_angle * i as f64).rem_euclid(2.0 * std::f64::consts::PI));
        }
        VertexSet::new(thetas, phis, vec![hemisphere; n])
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.thetas[i]
    }

    pub fn phi(&self, i: usize) -> f64 {
        self.phis[i]
    }

    pub fn hemisphere(&self, i: usize) -> Hemisphere {
        self.hemispheres[i]
    }

    /// Geodesic distance between stored vertices, degrees of arc;
    /// `f64::INFINITY` when the vertices lie on different hemispheres.
    pub fn distance_deg(&self, i: usize, j: usize) -> f64 {
        if self.hemispheres[i] != self.hemispheres[j] {
            return f64::INFINITY;
        }
        central_angle_deg(&self.units[i], &self.units[j])
    }

    /// Distance from an arbitrary location to stored vertex `j`, degrees.
    pub fn distance_to_deg(&self, theta: f64, phi: f64, hemisphere: Hemisphere, j: usize) -> f64 {
        if self.hemispheres[j] != hemisphere {
            return f64::INFINITY;
        }
        central_angle_deg(&unit_vector(theta, phi), &self.units[j])
    }

    /// Full pairwise distance matrix (degrees; infinite across hemispheres).
    /// Symmetric by construction with an exactly zero diagonal.
    pub fn distance_matrix(&self) -> Array2<f64> {
        let v = self.len();
        let mut d = Array2::<f64>::zeros((v, v));
        for i in 0..v {
            for j in (i + 1)..v {
                let dist = self.distance_deg(i, j);
                d[[i, j]] = dist;
                d[[j, i]] = dist;
            }
        }
        d
    }

    /// Smallest positive finite inter-vertex distance (degrees).
    pub fn min_spacing_deg(&self) -> f64 {
        let v = self.len();
        let mut best = f64::INFINITY;
        for i in 0..v {
            for j in (i + 1)..v {
                let d = self.distance_deg(i, j);
                if d > 0.0 && d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// Restricts the set to the given vertex positions (0-based), preserving
    /// their order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let mut thetas = Vec::with_capacity(positions.len());
        let mut phis = Vec::with_capacity(positions.len());
        let mut hemis = Vec::with_capacity(positions.len());
        for &p in positions {
            if p >= self.len() {
                return Err(Error::Invalid(format!(
                    "vertex position {p} out of range (set has {} vertices)",
                    self.len()
                )));
            }
            thetas.push(self.thetas[p]);
            phis.push(self.phis[p]);
            hemis.push(self.hemispheres[p]);
        }
        VertexSet::new(thetas, phis, hemis)
    }
}

/// Reads a vertex CSV with header `index,theta,phi,hemisphere`; indices must
/// be contiguous `1..=V` (any row order).
pub fn load_vertices(path: &Path) -> Result<VertexSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;

    let mut rows: Vec<(usize, f64, f64, Hemisphere)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != 4 {
            return Err(Error::format(
                path,
                format!("expected 4 columns, found {}", record.len()),
            ));
        }
        let index: usize = record[0]
            .parse()
            .map_err(|_| Error::format(path, format!("bad vertex index {:?}", &record[0])))?;
        let theta: f64 = record[1]
            .parse()
            .map_err(|_| Error::format(path, format!("bad theta {:?}", &record[1])))?;
        let phi: f64 = record[2]
            .parse()
            .map_err(|_| Error::format(path, format!("bad phi {:?}", &record[2])))?;
        let hemi = Hemisphere::from_str(&record[3]).map_err(|e| Error::format(path, e))?;
        rows.push((index, theta, phi, hemi));
    }

    let v = rows.len();
    let mut thetas = vec![f64::NAN; v];
    let mut phis = vec![f64::NAN; v];
    let mut hemis = vec![Hemisphere::Left; v];
    let mut seen = vec![false; v];
    for (index, theta, phi, hemi) in rows {
        if index == 0 || index > v {
            return Err(Error::format(
                path,
                format!("vertex index {index} outside contiguous range 1..={v}"),
            ));
        }
        if seen[index - 1] {
            return Err(Error::format(path, format!("duplicate vertex index {index}")));
        }
        seen[index - 1] = true;
        thetas[index - 1] = theta;
        phis[index - 1] = phi;
        hemis[index - 1] = hemi;
    }
    VertexSet::new(thetas, phis, hemis)
}

/// Writes the vertex CSV consumed by [`load_vertices`].
pub fn save_vertices(path: &Path, vertices: &VertexSet) -> Result<()> {
    crate::mat1::atomic_write_text(path, |out| {
        writeln!(out, "index,theta,phi,hemisphere")?;
        for i in 0..vertices.len() {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{}",
                i + 1,
                vertices.theta(i),
                vertices.phi(i),
                vertices.hemisphere(i)
            )?;
        }
        Ok(())
    })
}
