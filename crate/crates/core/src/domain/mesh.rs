//! Triangle meshes: OFF parsing, synthetic sphere/torus meshes, and
//! area-weighted surface sampling.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    /// Running sum of `areas`, used for inverse-CDF triangle selection.
    cumulative: Vec<f64>,
}

/// Points drawn from a mesh surface with their face normals and source triangles.
#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub points: Array2<f64>,
    pub normals: Array2<f64>,
    pub triangles: Vec<usize>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::invalid(format!(
                    "triangle {t} references vertex {bad} but mesh has {} vertices",
                    vertices.len()
                )));
            }
        }
        let areas: Vec<f64> = triangles
            .iter()
            .map(|t| 0.5 * norm(cross(sub(vertices[t[1]], vertices[t[0]]), sub(vertices[t[2]], vertices[t[0]]))))
            .collect();
        let mut acc = 0.0;
        let cumulative = areas
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            areas,
            cumulative,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Unit normal of triangle `t`, oriented by its winding.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        let n = cross(
            sub(self.vertices[b], self.vertices[a]),
            sub(self.vertices[c], self.vertices[a]),
        );
        let len = norm(n);
        [n[0] / len, n[1] / len, n[2] / len]
    }

    /// Icosahedron refined `subdivisions` times and projected onto a sphere.
    pub fn icosphere(radius: f64, subdivisions: usize) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for v in verts.iter_mut() {
            *v = scale(*v, 1.0 / norm(*v));
        }
        for _ in 0..subdivisions {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let m = scale(add(verts[a], verts[b]), 0.5);
                    verts.push(scale(m, 1.0 / norm(m)));
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for &[a, b, c] in &faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let verts = verts.into_iter().map(|v| scale(v, radius)).collect();
        Mesh::new(verts, faces).expect("icosphere indices are valid")
    }

    /// Torus with tube centre radius `major` and tube radius `minor`, meshed on a
    /// `segments × rings` grid.
    pub fn torus(major: f64, minor: f64, segments: usize, rings: usize) -> Self {
        let mut verts = Vec::with_capacity(segments * rings);
        for i in 0..segments {
            let u = 2.0 * PI * i as f64 / segments as f64;
            for j in 0..rings {
                let v = 2.0 * PI * j as f64 / rings as f64;
                let r = major + minor * v.cos();
                verts.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
            }
        }
        let idx = |i: usize, j: usize| (i % segments) * rings + (j % rings);
        let mut faces = Vec::with_capacity(2 * segments * rings);
        for i in 0..segments {
            for j in 0..rings {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        Mesh::new(verts, faces).expect("torus indices are valid")
    }

    /// Area-weighted uniform surface sample with face normals.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SurfaceSample> {
        let total = self.total_area();
        if !(total > 0.0) {
            return Err(Error::Degenerate("mesh has zero total area".into()));
        }
        let mut points = Array2::zeros((n, 3));
        let mut normals = Array2::zeros((n, 3));
        let mut triangles = Vec::with_capacity(n);
        for s in 0..n {
            let target = rng.random::<f64>() * total;
            let t = self
                .cumulative
                .partition_point(|&c| c <= target)
                .min(self.triangles.len() - 1);
            let [a, b, c] = self.triangles[t];
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s1 = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s1, s1 * (1.0 - r2), s1 * r2);
            let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let nrm = self.face_normal(t);
            for d in 0..3 {
                points[[s, d]] = wa * va[d] + wb * vb[d] + wc * vc[d];
                normals[[s, d]] = nrm[d];
            }
            triangles.push(t);
        }
        Ok(SurfaceSample {
            points,
            normals,
            triangles,
        })
    }
}

/// Parses ASCII OFF (or COFF) text. Polygons are fan-triangulated; trailing
/// per-vertex or per-face colour values are ignored.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty input, expected OFF header"))?;
    let rest = if let Some(r) = header.strip_prefix("COFF") {
        r
    } else if let Some(r) = header.strip_prefix("OFF") {
        r
    } else {
        return Err(Error::parse(hline, format!("expected OFF header, found `{header}`")));
    };
    // Some ModelNet files glue the counts onto the header line.
    let (cline, counts) = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::parse(hline + 1, "missing counts line"))?
    } else {
        (hline, rest.trim())
    };
    let c: Vec<usize> = counts
        .split_whitespace()
        .map(|tok| parse_tok(tok, cline))
        .collect::<Result<_>>()?;
    if c.len() < 2 {
        return Err(Error::parse(cline, "counts line must give V F [E]"));
    }
    let (nv, nf) = (c[0], c[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (lno, l) = lines
            .next()
            .ok_or_else(|| Error::parse(text.lines().count() + 1, "unexpected end of input in vertex list"))?;
        let f: Vec<f64> = l
            .split_whitespace()
            .map(|tok| parse_tok(tok, lno))
            .collect::<Result<_>>()?;
        if f.len() < 3 {
            return Err(Error::parse(lno, "vertex needs three coordinates"));
        }
        vertices.push([f[0], f[1], f[2]]);
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (lno, l) = lines
            .next()
            .ok_or_else(|| Error::parse(text.lines().count() + 1, "unexpected end of input in face list"))?;
        let mut toks = l.split_whitespace();
        let k: usize = parse_tok(toks.next().unwrap(), lno)?;
        if k < 3 {
            return Err(Error::parse(lno, format!("face with {k} vertices")));
        }
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            let tok = toks
                .next()
                .ok_or_else(|| Error::parse(lno, format!("face declares {k} vertices")))?;
            let i: usize = parse_tok(tok, lno)?;
            if i >= nv {
                return Err(Error::parse(
                    lno,
                    format!("vertex index {i} out of range for {nv} vertices"),
                ));
            }
            idx.push(i);
        }
        for j in 1..k - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Mesh::new(vertices, triangles)
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("non-numeric token `{tok}`")))
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TRIANGLE: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn parses_unit_right_triangle() {
        let m = parse_off(TRIANGLE).unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.triangles().len(), 1);
        assert!((m.total_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn accepts_coff_glued_counts_and_comments() {
        let m = parse_off("# mesh\nCOFF\n3 1 0\n0 0 0 255 0 0 255\n1 0 0 0 0 0 0\n0 1 0 1 1 1 1\n3 0 1 2\n").unwrap();
        assert_eq!(m.triangles().len(), 1);
        let m = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.vertices().len(), 3);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let err = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err}");
    }

    #[test]
    fn malformed_header_and_tokens() {
        assert!(matches!(parse_off("PLY\n"), Err(Error::Parse { line: 1, .. })));
        let err = parse_off("OFF\n3 1 0\n0 0 0\n1 zero 0\n0 1 0\n3 0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn single_triangle_normals_are_unit_face_normal() {
        let m = parse_off(TRIANGLE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = m.sample_surface(500, &mut rng).unwrap();
        for row in s.normals.rows() {
            let len = row.dot(&row).sqrt();
            assert!((len - 1.0).abs() < 1e-9);
            assert!((row[2].abs() - 1.0).abs() < 1e-12);
        }
        for p in s.points.rows() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12 && p[2] == 0.0);
        }
    }

    #[test]
    fn triangle_hits_follow_area() {
        // Areas 1 and 3.
        let verts = vec![
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 5.0],
            [6.0, 0.0, 5.0],
            [0.0, 1.0, 5.0],
        ];
        let m = Mesh::new(verts, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        assert_eq!(m.triangle_areas(), &[1.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = m.sample_surface(10_000, &mut rng).unwrap();
        let frac = s.triangles.iter().filter(|&&t| t == 1).count() as f64 / 10_000.0;
        // Binomial sd = sqrt(0.75 * 0.25 / 1e4) ≈ 0.0043.
        assert!((frac - 0.75).abs() < 0.02, "{frac}");
    }

    #[test]
    fn degenerate_mesh_is_rejected() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample_surface(4, &mut rng), Err(Error::Degenerate(_))));
    }

    #[test]
    fn synthetic_meshes_have_expected_area() {
        let s = Mesh::icosphere(1.0, 4);
        assert_eq!(s.triangles().len(), 20 * 256);
        assert!((s.total_area() - 4.0 * PI).abs() / (4.0 * PI) < 0.01);
        let t = Mesh::torus(2.0, 0.5, 96, 48);
        let exact = 4.0 * PI * PI * 2.0 * 0.5;
        assert!((t.total_area() - exact).abs() / exact < 0.01);
    }
}
