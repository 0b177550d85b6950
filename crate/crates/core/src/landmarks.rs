//! 68-point facial landmark schemes.
//!
//! A scheme is an ordered list of 68 mesh vertex indices (iBUG-68 order) and
//! a partition of those 68 slots into nine regions. The default split:
//!
//! | region          | slots               |
//! |-----------------|---------------------|
//! | contour         | 0-16                |
//! | right eyebrow   | 17-21               |
//! | left eyebrow    | 22-26               |
//! | upper nose      | 27-30               |
//! | lower nose      | 31-35               |
//! | right eye       | 36-41               |
//! | left eye        | 42-47               |
//! | upper lip       | 48-54, 60-64        |
//! | lower lip       | 55-59, 65-67        |
//!
//! The JSON form is `{"landmarks": [...68 vertex indices...], "regions":
//! {"contour": [...vertex indices...], ...}}`. `landmarks` may be omitted, in
//! which case the ordering is the concatenation of the regions in
//! [`Region::ALL`] order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{read_text, Mesh, MeshError};

pub const LANDMARK_COUNT: usize = 68;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("scheme has {0} landmarks, expected 68")]
    WrongCount(usize),
    #[error("vertex {0} appears more than once in the scheme")]
    Duplicate(usize),
    #[error("landmark {slot} uses vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        slot: usize,
        index: usize,
        count: usize,
    },
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("region {0} is missing or empty")]
    MissingRegion(Region),
    #[error("region {region} lists vertex {index}, which is not one of the 68 landmarks")]
    NotALandmark { region: Region, index: usize },
    #[error("landmark slot {0} is not assigned to any region")]
    Unassigned(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid landmark JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Contour,
    RightEyebrow,
    LeftEyebrow,
    UpperNose,
    LowerNose,
    RightEye,
    LeftEye,
    UpperLip,
    LowerLip,
}

impl Region {
    pub const ALL: [Region; 9] = [
        Region::Contour,
        Region::RightEyebrow,
        Region::LeftEyebrow,
        Region::UpperNose,
        Region::LowerNose,
        Region::RightEye,
        Region::LeftEye,
        Region::UpperLip,
        Region::LowerLip,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Contour => "contour",
            Region::RightEyebrow => "right_eyebrow",
            Region::LeftEyebrow => "left_eyebrow",
            Region::UpperNose => "upper_nose",
            Region::LowerNose => "lower_nose",
            Region::RightEye => "right_eye",
            Region::LeftEye => "left_eye",
            Region::UpperLip => "upper_lip",
            Region::LowerLip => "lower_lip",
        }
    }

    /// Slots of this region in the iBUG-68 ordering.
    pub fn ibug_slots(self) -> Vec<usize> {
        match self {
            Region::Contour => (0..17).collect(),
            Region::RightEyebrow => (17..22).collect(),
            Region::LeftEyebrow => (22..27).collect(),
            Region::UpperNose => (27..31).collect(),
            Region::LowerNose => (31..36).collect(),
            Region::RightEye => (36..42).collect(),
            Region::LeftEye => (42..48).collect(),
            Region::UpperLip => (48..55).chain(60..65).collect(),
            Region::LowerLip => (55..60).chain(65..68).collect(),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = LandmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| LandmarkError::UnknownRegion(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkScheme {
    vertices: Vec<usize>,
    regions: [Vec<usize>; 9],
}

impl LandmarkScheme {
    /// Builds a scheme from 68 vertex indices in iBUG order with the default
    /// region split.
    pub fn ibug68(vertices: Vec<usize>) -> Result<Self, LandmarkError> {
        let regions = Region::ALL.map(Region::ibug_slots);
        Self::from_slots(vertices, regions)
    }

    /// Landmark `i` is vertex `i`. Handy for meshes that are the landmark set.
    pub fn identity() -> Self {
        Self::ibug68((0..LANDMARK_COUNT).collect()).expect("identity scheme is valid")
    }

    /// `regions[r]` lists slot positions (0..68) belonging to region `r`.
    pub fn from_slots(
        vertices: Vec<usize>,
        regions: [Vec<usize>; 9],
    ) -> Result<Self, LandmarkError> {
        if vertices.len() != LANDMARK_COUNT {
            return Err(LandmarkError::WrongCount(vertices.len()));
        }
        let mut seen = HashSet::with_capacity(LANDMARK_COUNT);
        for &v in &vertices {
            if !seen.insert(v) {
                return Err(LandmarkError::Duplicate(v));
            }
        }
        let mut owner = [None::<Region>; LANDMARK_COUNT];
        for (region, slots) in Region::ALL.into_iter().zip(&regions) {
            if slots.is_empty() {
                return Err(LandmarkError::MissingRegion(region));
            }
            for &slot in slots {
                if slot >= LANDMARK_COUNT {
                    return Err(LandmarkError::WrongCount(slot + 1));
                }
                if owner[slot].replace(region).is_some() {
                    return Err(LandmarkError::Duplicate(vertices[slot]));
                }
            }
        }
        if let Some(slot) = owner.iter().position(Option::is_none) {
            return Err(LandmarkError::Unassigned(slot));
        }
        Ok(Self { vertices, regions })
    }

    /// The 68 vertex indices, in landmark order.
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// Slot positions of a region.
    pub fn region_slots(&self, region: Region) -> &[usize] {
        &self.regions[region.index()]
    }

    /// Vertex indices of a region.
    pub fn region_vertices(&self, region: Region) -> Vec<usize> {
        self.region_slots(region)
            .iter()
            .map(|&s| self.vertices[s])
            .collect()
    }

    pub fn validate_for(&self, vertex_count: usize) -> Result<(), LandmarkError> {
        match self.vertices.iter().position(|&v| v >= vertex_count) {
            Some(slot) => Err(LandmarkError::IndexOutOfRange {
                slot,
                index: self.vertices[slot],
                count: vertex_count,
            }),
            None => Ok(()),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, LandmarkError> {
        let doc: SchemeDoc = serde_json::from_str(text)?;
        let mut by_region: HashMap<Region, Vec<usize>> = HashMap::new();
        for (name, list) in doc.regions {
            by_region.insert(name.parse()?, list);
        }
        let vertices = match doc.landmarks {
            Some(v) => v,
            None => Region::ALL
                .iter()
                .flat_map(|r| by_region.get(r).cloned().unwrap_or_default())
                .collect(),
        };
        if vertices.len() != LANDMARK_COUNT {
            return Err(LandmarkError::WrongCount(vertices.len()));
        }
        let slot_of: HashMap<usize, usize> = vertices
            .iter()
            .enumerate()
            .map(|(slot, &v)| (v, slot))
            .collect();
        let mut regions: [Vec<usize>; 9] = Default::default();
        for region in Region::ALL {
            let list = by_region
                .get(&region)
                .ok_or(LandmarkError::MissingRegion(region))?;
            regions[region.index()] = list
                .iter()
                .map(|&index| {
                    slot_of
                        .get(&index)
                        .copied()
                        .ok_or(LandmarkError::NotALandmark { region, index })
                })
                .collect::<Result<_, _>>()?;
        }
        Self::from_slots(vertices, regions)
    }

    pub fn to_json_string(&self) -> String {
        let doc = SchemeDoc {
            landmarks: Some(self.vertices.clone()),
            regions: Region::ALL
                .iter()
                .map(|&r| (r.name().to_owned(), self.region_vertices(r)))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("scheme serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LandmarkError> {
        Self::from_json_str(&read_text(path.as_ref())?)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    landmarks: Option<Vec<usize>>,
    regions: IndexMap<String, Vec<usize>>,
}

/// Landmark positions gathered from a mesh, with their region grouping.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    pub points: Vec<Point3<f64>>,
    pub regions: [Vec<usize>; 9],
}

impl LandmarkSet {
    pub fn region_points(&self, region: Region) -> impl Iterator<Item = &Point3<f64>> {
        self.regions[region.index()]
            .iter()
            .map(|&s| &self.points[s])
    }
}

pub fn sample_landmarks(
    mesh: &Mesh,
    scheme: &LandmarkScheme,
) -> Result<LandmarkSet, LandmarkError> {
    scheme.validate_for(mesh.vertex_count())?;
    let v = mesh.vertices();
    Ok(LandmarkSet {
        points: scheme.vertices.iter().map(|&i| v[i]).collect(),
        regions: scheme.regions.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_mesh(n: usize) -> Mesh {
        let verts = (0..n)
            .map(|i| Point3::new(i as f64, (i * i) as f64, -(i as f64)))
            .collect();
        Mesh::new(verts, vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn identity_scheme_gathers_in_order() {
        let mesh = line_mesh(68);
        let set = sample_landmarks(&mesh, &LandmarkScheme::identity()).unwrap();
        assert_eq!(set.points, mesh.vertices());
        assert_eq!(set.region_points(Region::Contour).count(), 17);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let mut idx: Vec<usize> = (0..68).collect();
        idx[5] = 68;
        let scheme = LandmarkScheme::ibug68(idx).unwrap();
        let err = sample_landmarks(&line_mesh(68), &scheme).unwrap_err();
        assert!(matches!(
            err,
            LandmarkError::IndexOutOfRange {
                slot: 5,
                index: 68,
                count: 68
            }
        ));
    }

    #[test]
    fn region_sizes_total_68() {
        let s = LandmarkScheme::identity();
        let sizes: Vec<usize> = Region::ALL
            .iter()
            .map(|&r| s.region_slots(r).len())
            .collect();
        assert_eq!(sizes, vec![17, 5, 5, 4, 5, 6, 6, 12, 8]);
        assert_eq!(sizes.iter().sum::<usize>(), 68);
    }

    #[test]
    fn duplicates_rejected() {
        let mut idx: Vec<usize> = (0..68).collect();
        idx[10] = 3;
        assert!(matches!(
            LandmarkScheme::ibug68(idx),
            Err(LandmarkError::Duplicate(3))
        ));
        assert!(matches!(
            LandmarkScheme::ibug68((0..67).collect()),
            Err(LandmarkError::WrongCount(67))
        ));
    }

    #[test]
    fn json_round_trip_and_implicit_order() {
        let idx: Vec<usize> = (0..68).map(|i| 1000 + 7 * i).collect();
        let s = LandmarkScheme::ibug68(idx).unwrap();
        let back = LandmarkScheme::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(back, s);

        // without "landmarks", order follows Region::ALL concatenation
        let text = r#"{"regions": {
            "contour": [0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16],
            "right_eyebrow": [17,18,19,20,21], "left_eyebrow": [22,23,24,25,26],
            "upper_nose": [27,28,29,30], "lower_nose": [31,32,33,34,35],
            "right_eye": [36,37,38,39,40,41], "left_eye": [42,43,44,45,46,47],
            "upper_lip": [48,49,50,51,52,53,54,55,56,57,58,59],
            "lower_lip": [60,61,62,63,64,65,66,67]}}"#;
        let s = LandmarkScheme::from_json_str(text).unwrap();
        assert_eq!(s.vertices(), (0..68).collect::<Vec<_>>().as_slice());
        assert_eq!(
            s.region_slots(Region::LowerLip),
            &[60, 61, 62, 63, 64, 65, 66, 67]
        );
    }

    #[test]
    fn unknown_region_name() {
        let err = LandmarkScheme::from_json_str(r#"{"regions": {"forehead": [1]}}"#).unwrap_err();
        assert!(matches!(err, LandmarkError::UnknownRegion(_)));
        assert!("jaw".parse::<Region>().is_err());
        assert_eq!("upper_lip".parse::<Region>().unwrap(), Region::UpperLip);
    }
}
