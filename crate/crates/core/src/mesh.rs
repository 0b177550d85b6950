//! Triangle meshes and their interchange formats.
//!
//! Two on-disk encodings are supported: Wavefront OBJ (only `v` and `f`
//! records are read, everything else is counted and skipped) and a small JSON
//! document `{"vertices": [[x,y,z],...], "faces": [[a,b,c],...]}` with 0-based
//! indices. Both writers emit the shortest decimal form that parses back to
//! the identical `f64`, so `load(save(m)) == m` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("mesh has no vertices")]
    Empty,
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} on line {line} has {arity} vertices; only triangles are accepted")]
    NonTriangleFace {
        face: usize,
        line: usize,
        arity: usize,
    },
    #[error("invalid JSON mesh: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("expected {expected} vertices, got {actual}")]
    VertexCountMismatch { expected: usize, actual: usize },
    #[error("vertex {vertex} has a non-finite coordinate")]
    NonFinite { vertex: usize },
}

pub type MeshResult<T> = Result<T, MeshError>;

/// Indexed triangle mesh. Deformations only ever replace vertex positions;
/// the face list and the vertex order are fixed for the mesh's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> MeshResult<Self> {
        if vertices.len() < 3 {
            return Err(MeshError::TooFewVertices(vertices.len()));
        }
        if let Some(v) = vertices
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(MeshError::NonFinite { vertex: v });
        }
        let count = vertices.len();
        for (face, tri) in faces.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(MeshError::FaceIndexOutOfRange { face, index, count });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Same connectivity, new positions. Used by every deformation so that
    /// topology is carried over untouched.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> MeshResult<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        // non-empty by construction
        bounding_box(&self.vertices).expect("mesh has vertices")
    }

    /// Length of the bounding-box diagonal, the scale every relative
    /// tolerance in this crate is expressed against.
    pub fn box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }
}

/// Componentwise min/max over a point set.
pub fn bounding_box(points: &[Point3<f64>]) -> MeshResult<(Point3<f64>, Point3<f64>)> {
    let first = points.first().ok_or(MeshError::Empty)?;
    let mut lo = *first;
    let mut hi = *first;
    for p in &points[1..] {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Ok((lo, hi))
}

#[derive(Serialize, Deserialize)]
pub(crate) struct MeshDoc {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl From<&Mesh> for MeshDoc {
    fn from(mesh: &Mesh) -> Self {
        Self {
            vertices: mesh.vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
            faces: mesh.faces.clone(),
        }
    }
}

impl TryFrom<MeshDoc> for Mesh {
    type Error = MeshError;

    fn try_from(doc: MeshDoc) -> MeshResult<Self> {
        let vertices = doc.vertices.into_iter().map(Point3::from).collect();
        Mesh::new(vertices, doc.faces)
    }
}

/// Result of parsing an OBJ file: the mesh plus how many records were skipped.
#[derive(Debug, Clone)]
pub struct ObjLoad {
    pub mesh: Mesh,
    pub ignored_records: usize,
}

pub fn parse_obj(text: &str) -> MeshResult<ObjLoad> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut ignored = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<&str> = fields.collect();
                if coords.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("vertex record needs 3 coordinates, got {}", coords.len()),
                    });
                }
                let mut p = [0.0; 3];
                for (slot, tok) in p.iter_mut().zip(&coords) {
                    *slot = tok.parse::<f64>().map_err(|e| MeshError::Parse {
                        line,
                        message: format!("bad coordinate {tok:?}: {e}"),
                    })?;
                }
                vertices.push(Point3::from(p));
            }
            Some("f") => {
                let refs: Vec<&str> = fields.collect();
                if refs.len() != 3 {
                    return Err(MeshError::NonTriangleFace {
                        face: faces.len(),
                        line,
                        arity: refs.len(),
                    });
                }
                let mut tri = [0usize; 3];
                for (slot, tok) in tri.iter_mut().zip(&refs) {
                    // "7", "7/2", "7//3", "7/2/3": the vertex index comes first
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|e| MeshError::Parse {
                        line,
                        message: format!("bad face index {tok:?}: {e}"),
                    })?;
                    *slot = resolve_obj_index(idx, vertices.len()).ok_or_else(|| {
                        MeshError::Parse {
                            line,
                            message: format!(
                                "face index {idx} is invalid with {} vertices defined (OBJ indices are 1-based)",
                                vertices.len()
                            ),
                        }
                    })?;
                }
                faces.push(tri);
            }
            Some(_) => ignored += 1,
            None => {}
        }
    }

    if ignored > 0 {
        log::warn!("ignored {ignored} non-geometry OBJ records");
    }
    Ok(ObjLoad {
        mesh: Mesh::new(vertices, faces)?,
        ignored_records: ignored,
    })
}

fn resolve_obj_index(idx: i64, defined: usize) -> Option<usize> {
    match idx {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        // negative indices count back from the most recent vertex
        i => {
            let back = i.unsigned_abs() as usize;
            (back <= defined).then(|| defined - back)
        }
    }
}

pub fn to_obj_string(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 64 + mesh.faces.len() * 24);
    for p in &mesh.vertices {
        // `{:?}` prints the shortest round-trip representation
        let _ = writeln!(out, "v {:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub(crate) fn read_text(path: &Path) -> MeshResult<String> {
    fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Loads an OBJ file, or a JSON mesh when the extension is `.json`.
pub fn load_mesh(path: impl AsRef<Path>) -> MeshResult<Mesh> {
    let path = path.as_ref();
    let text = read_text(path)?;
    if is_json(path) {
        let doc: MeshDoc = serde_json::from_str(&text)?;
        Mesh::try_from(doc)
    } else {
        Ok(parse_obj(&text)?.mesh)
    }
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> MeshResult<()> {
    let path = path.as_ref();
    let body = if is_json(path) {
        serde_json::to_string(&MeshDoc::from(mesh))?
    } else {
        to_obj_string(mesh)
    };
    fs::write(path, body).map_err(|source| MeshError::Io {
        path: path.to_owned(),
        source,
    })
}
