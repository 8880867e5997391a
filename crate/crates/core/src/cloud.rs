//! Point clouds, the unit-sphere sampler and ambient-space neighbor queries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// `n` points in `R^d` assumed to sample an `m`-dimensional manifold.
///
/// Coordinates are stored row-major. Clouds are immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<f64>,
    dim: usize,
    intrinsic_dim: usize,
    seed: Option<u64>,
}

impl PointCloud {
    pub fn new(coords: Vec<f64>, dim: usize, intrinsic_dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "ambient dimension must be positive"));
        }
        if intrinsic_dim == 0 || intrinsic_dim > dim {
            return Err(invalid(
                "intrinsic_dim",
                format!("need 1 <= m <= d, got m={intrinsic_dim}, d={dim}"),
            ));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(invalid(
                "coords",
                format!("{} values do not form rows of width {dim}", coords.len()),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coords", "all coordinates must be finite"));
        }
        Ok(Self {
            coords,
            dim,
            intrinsic_dim,
            seed: None,
        })
    }

    pub fn from_points(points: &[Vec<f64>], intrinsic_dim: usize) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(points.concat(), dim, intrinsic_dim)
    }

    /// `n` i.i.d. uniform points on the unit sphere `S^2`, drawn by normalizing
    /// standard Gaussian vectors.
    ///
    /// Points are drawn sequentially from one stream, so for a fixed seed the
    /// first `p` points are shared by every cloud with `n >= p`.
    pub fn sample_sphere(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one point"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(3 * n);
        for _ in 0..n {
            coords.extend_from_slice(&random_unit_vector(&mut rng));
        }
        Ok(Self {
            coords,
            dim: 3,
            intrinsic_dim: 2,
            seed: Some(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(self.point(i), self.point(j))
    }

    /// A copy of the cloud with rows permuted: row `r` of the result is row
    /// `perm[r]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: perm.len(),
            });
        }
        let mut coords = Vec::with_capacity(self.coords.len());
        for &r in perm {
            self.check_index(r)?;
            coords.extend_from_slice(self.point(r));
        }
        Ok(Self {
            coords,
            dim: self.dim,
            intrinsic_dim: self.intrinsic_dim,
            seed: self.seed,
        })
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }

    /// All `j` with `|x_i - x_j| <= eps`, `i` included, ascending.
    pub fn neighbors_within(&self, i: usize, eps: f64) -> Result<Vec<usize>> {
        self.check_index(i)?;
        check_radius(eps)?;
        let xi = self.point(i);
        Ok((0..self.len())
            .filter(|&j| euclidean(xi, self.point(j)) <= eps)
            .collect())
    }

    /// `neighbors_within(i, eps)` for every `i`, using a cell grid in low
    /// ambient dimension.
    pub fn neighborhoods(&self, eps: f64) -> Result<Vec<Vec<usize>>> {
        check_radius(eps)?;
        if self.dim <= 4 {
            let grid = GridIndex::new(self, eps)?;
            (0..self.len()).map(|i| grid.neighbors(i)).collect()
        } else {
            (0..self.len()).map(|i| self.neighbors_within(i, eps)).collect()
        }
    }

    /// Indices of the `k` nearest cloud points to `query`, nearest first.
    /// Equal distances are ordered by index.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        Ok(self
            .knn_with_distances(query, k)?
            .into_iter()
            .map(|(j, _)| j)
            .collect())
    }

    pub fn knn_with_distances(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(invalid("k", format!("need 1 <= k <= n={}, got {k}", self.len())));
        }
        let mut all: Vec<(usize, f64)> = self
            .points()
            .enumerate()
            .map(|(j, x)| (j, euclidean(query, x)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_unstable_by(cmp);
        Ok(all)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(BufReader::new(file))
    }

    pub fn read_csv(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (dim, intrinsic_dim) = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        reason: "empty file, expected `# d=<d> m=<m>` header".into(),
                    })
                }
                Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
                Some((idx, line)) => break parse_header(&line?, idx + 1)?,
            }
        };
        let mut coords = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = coords.len();
            for token in line.split(',') {
                let value: f64 = token.trim().parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    reason: format!("non-numeric token `{}`", token.trim()),
                })?;
                coords.push(value);
            }
            let width = coords.len() - before;
            if width != dim {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("expected {dim} columns, found {width}"),
                });
            }
        }
        if coords.is_empty() {
            return Err(Error::Parse {
                line: 1,
                reason: "no points after header".into(),
            });
        }
        Self::new(coords, dim, intrinsic_dim)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(self.to_csv_string().as_bytes())?;
        file.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# d={} m={}\n", self.dim, self.intrinsic_dim);
        for p in self.points() {
            for (c, v) in p.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<(usize, usize)> {
    let bad = |reason: &str| Error::Parse {
        line: line_no,
        reason: reason.to_string(),
    };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad("expected `# d=<d> m=<m>` header"))?;
    let mut d = None;
    let mut m = None;
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad("header fields must be key=value"))?;
        let value: usize = value.parse().map_err(|_| bad("header value is not an integer"))?;
        match key {
            "d" => d = Some(value),
            "m" => m = Some(value),
            _ => return Err(bad("unknown header key")),
        }
    }
    match (d, m) {
        (Some(d), Some(m)) => Ok((d, m)),
        _ => Err(bad("header must declare both d and m")),
    }
}

fn check_radius(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(invalid("eps", format!("radius must be positive and finite, got {eps}")))
    }
}

pub(crate) fn random_unit_vector(rng: &mut impl rand::Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-300 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform-grid accelerator for fixed-radius queries.
///
/// Cells have side `radius`, so every neighbor of a point lies in the `3^d`
/// cells around it. Results match [`PointCloud::neighbors_within`] exactly.
pub struct GridIndex<'a> {
    cloud: &'a PointCloud,
    radius: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    pub fn new(cloud: &'a PointCloud, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in cloud.points().enumerate() {
            cells.entry(cell_of(p, radius)).or_default().push(i);
        }
        Ok(Self {
            cloud,
            radius,
            cells,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Same contract as [`PointCloud::neighbors_within`] at the index radius.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        self.cloud.check_index(i)?;
        let xi = self.cloud.point(i);
        let center = cell_of(xi, self.radius);
        let d = center.len();
        let mut out = Vec::new();
        let mut offset = vec![-1i64; d];
        loop {
            let key: Vec<i64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
            if let Some(members) = self.cells.get(&key) {
                out.extend(
                    members
                        .iter()
                        .copied()
                        .filter(|&j| euclidean(xi, self.cloud.point(j)) <= self.radius),
                );
            }
            // odometer over {-1, 0, 1}^d
            let mut axis = 0;
            while axis < d && offset[axis] == 1 {
                offset[axis] = -1;
                axis += 1;
            }
            if axis == d {
                break;
            }
            offset[axis] += 1;
        }
        out.sort_unstable();
        Ok(out)
    }
}

fn cell_of(p: &[f64], radius: f64) -> Vec<i64> {
    p.iter().map(|c| (c / radius).floor() as i64).collect()
}
