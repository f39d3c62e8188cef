//! Per-axis statistic images of a volume and the multi-channel projection set
//! built from them.
//!
//! Image layout per plane (rows are the slower remaining axis):
//!
//! | plane    | slices along | image rows | image cols |
//! |----------|--------------|------------|------------|
//! | coronal  | y            | z          | x          |
//! | axial    | z            | y          | x          |
//! | sagittal | x            | z          | y          |

mod eigen;
mod moments;
pub mod pjsn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use eigen::{eigen_slices, symmetric_eigen, EigenSlices};
pub use moments::{
    accumulate, accumulate_partitioned, project_mean_std, project_moments, MomentAccumulator,
    MomentImages,
};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Coronal,
    Axial,
    Sagittal,
}

impl Plane {
    /// Canonical channel order.
    pub const ALL: [Plane; 3] = [Plane::Coronal, Plane::Axial, Plane::Sagittal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Coronal => "coronal",
            Plane::Axial => "axial",
            Plane::Sagittal => "sagittal",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Plane::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Plane::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown plane `{s}`")))
    }
}

/// Statistic computed across slices. `Eigen(k)` is the k-th eigen slice, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Std,
    Skew,
    Kurt,
    Eigen(u16),
}

impl Statistic {
    fn code(self) -> (u8, u16) {
        match self {
            Statistic::Mean => (0, 0),
            Statistic::Std => (1, 0),
            Statistic::Skew => (2, 0),
            Statistic::Kurt => (3, 0),
            Statistic::Eigen(k) => (4, k),
        }
    }

    fn from_code(c: u8, k: u16) -> Option<Self> {
        Some(match c {
            0 => Statistic::Mean,
            1 => Statistic::Std,
            2 => Statistic::Skew,
            3 => Statistic::Kurt,
            4 if k >= 1 => Statistic::Eigen(k),
            _ => return None,
        })
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Mean => f.write_str("mean"),
            Statistic::Std => f.write_str("std"),
            Statistic::Skew => f.write_str("skew"),
            Statistic::Kurt => f.write_str("kurt"),
            Statistic::Eigen(k) => write!(f, "eigen{k}"),
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "std" => Ok(Statistic::Std),
            "skew" => Ok(Statistic::Skew),
            "kurt" => Ok(Statistic::Kurt),
            _ => s
                .strip_prefix("eigen")
                .and_then(|k| k.parse::<u16>().ok())
                .filter(|&k| k >= 1)
                .map(Statistic::Eigen)
                .ok_or_else(|| Error::Parameter(format!("unknown statistic `{s}`"))),
        }
    }
}

/// One (plane, statistic) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId {
    pub plane: Plane,
    pub statistic: Statistic,
}

impl ChannelId {
    pub const fn new(plane: Plane, statistic: Statistic) -> Self {
        Self { plane, statistic }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.plane, self.statistic)
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (p, st) = s
            .split_once('-')
            .ok_or_else(|| Error::Parameter(format!("channel `{s}` is not plane-statistic")))?;
        Ok(ChannelId::new(p.parse()?, st.parse()?))
    }
}

/// The six mean/std channels in canonical order.
pub const CANONICAL_SIX: [ChannelId; 6] = [
    ChannelId::new(Plane::Coronal, Statistic::Mean),
    ChannelId::new(Plane::Coronal, Statistic::Std),
    ChannelId::new(Plane::Axial, Statistic::Mean),
    ChannelId::new(Plane::Axial, Statistic::Std),
    ChannelId::new(Plane::Sagittal, Statistic::Mean),
    ChannelId::new(Plane::Sagittal, Statistic::Std),
];

/// A nonempty, sorted, duplicate-free set of channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSelection(Vec<ChannelId>);

impl ChannelSelection {
    pub fn new(mut channels: Vec<ChannelId>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Parameter("channel selection is empty".into()));
        }
        channels.sort();
        channels.dedup();
        Ok(Self(channels))
    }

    /// The given statistics for every plane.
    pub fn all_planes(stats: &[Statistic]) -> Result<Self> {
        Self::new(
            Plane::ALL
                .iter()
                .flat_map(|&p| stats.iter().map(move |&s| ChannelId::new(p, s)))
                .collect(),
        )
    }

    pub fn mean_std() -> Self {
        Self(CANONICAL_SIX.to_vec())
    }

    /// Parses a comma list. Bare statistics (`mean`, `std`, `eigen2`) expand
    /// to all planes; `plane-stat` entries select one channel. `eigenK` means
    /// eigen slices 1..=K.
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (planes, stat): (Vec<Plane>, &str) = match tok.split_once('-') {
                Some((p, st)) => (vec![p.parse()?], st),
                None => (Plane::ALL.to_vec(), tok),
            };
            let stats = match stat.parse()? {
                Statistic::Eigen(k) => (1..=k).map(Statistic::Eigen).collect(),
                other => vec![other],
            };
            for p in planes {
                out.extend(stats.iter().map(|&st| ChannelId::new(p, st)));
            }
        }
        Self::new(out)
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn per_plane_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for ch in &self.0 {
            c[ch.plane.index()] += 1;
        }
        c
    }
}

/// How one plane maps voxels to (slice, row, col).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneGeometry {
    pub plane: Plane,
    pub slices: usize,
    pub h: usize,
    pub w: usize,
}

impl PlaneGeometry {
    pub fn of(dims: [usize; 3], plane: Plane) -> Self {
        let [nx, ny, nz] = dims;
        let (slices, h, w) = match plane {
            Plane::Sagittal => (nx, nz, ny),
            Plane::Coronal => (ny, nz, nx),
            Plane::Axial => (nz, ny, nx),
        };
        Self { plane, slices, h, w }
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Voxel coordinates of (slice, row, col).
    pub fn voxel(&self, slice: usize, row: usize, col: usize) -> (usize, usize, usize) {
        match self.plane {
            Plane::Sagittal => (slice, col, row),
            Plane::Coronal => (col, slice, row),
            Plane::Axial => (col, row, slice),
        }
    }

    pub fn gather_slice(&self, vol: &Volume3D, slice: usize, out: &mut [f32]) {
        for r in 0..self.h {
            for c in 0..self.w {
                let (x, y, z) = self.voxel(slice, r, c);
                out[r * self.w + c] = vol.get(x, y, z);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!("{h}x{w} image with {} values", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                count: data.iter().filter(|v| !v.is_finite()).count(),
                first_index: i,
            });
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub id: ChannelId,
    pub image: Image2D,
}

/// All projection channels of one subject, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    pub subject_id: String,
    channels: Vec<Channel>,
}

impl ProjectionSet {
    pub fn new(subject_id: impl Into<String>, mut channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Parameter("projection set without channels".into()));
        }
        channels.sort_by_key(|c| c.id);
        for pair in channels.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Parameter(format!("duplicate channel {}", pair[0].id)));
            }
            if pair[0].id.plane == pair[1].id.plane && pair[0].image.dims() != pair[1].image.dims() {
                return Err(Error::Shape(format!(
                    "{} and {} differ in size",
                    pair[0].id, pair[1].id
                )));
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            channels,
        })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn ids(&self) -> Vec<ChannelId> {
        self.channels.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn get(&self, id: ChannelId) -> Option<&Image2D> {
        self.channels.iter().find(|c| c.id == id).map(|c| &c.image)
    }

    /// Min and max of each channel, in channel order.
    pub fn ranges(&self) -> Vec<(f32, f32)> {
        self.channels.iter().map(|c| c.image.min_max()).collect()
    }

    /// Keeps only the listed channels (order stays canonical). An empty
    /// list yields a channel-less set, the input of an intercept-only model.
    pub fn select(&self, keep: &[ChannelId]) -> Result<Self> {
        if keep.is_empty() {
            return Ok(Self {
                subject_id: self.subject_id.clone(),
                channels: Vec::new(),
            });
        }
        let mut out = Vec::with_capacity(keep.len());
        for id in keep {
            let img = self
                .get(*id)
                .ok_or_else(|| Error::Parameter(format!("channel {id} not in set")))?;
            out.push(Channel {
                id: *id,
                image: img.clone(),
            });
        }
        Self::new(self.subject_id.clone(), out)
    }
}

pub fn build_projection_set(
    subject_id: &str,
    vol: &Volume3D,
    selection: &ChannelSelection,
) -> Result<ProjectionSet> {
    let mut channels = Vec::with_capacity(selection.len());
    for plane in Plane::ALL {
        let wanted: Vec<Statistic> = selection
            .channels()
            .iter()
            .filter(|c| c.plane == plane)
            .map(|c| c.statistic)
            .collect();
        if wanted.is_empty() {
            continue;
        }
        let higher = wanted.iter().any(|s| matches!(s, Statistic::Skew | Statistic::Kurt));
        let basic = wanted.iter().any(|s| matches!(s, Statistic::Mean | Statistic::Std));
        let mut moments: Option<MomentImages> = None;
        if higher {
            moments = Some(project_moments(vol, plane)?);
        } else if basic {
            let (mean, std) = project_mean_std(vol, plane)?;
            let empty = Image2D::zeros(0, 0);
            moments = Some(MomentImages {
                mean,
                std,
                skew: empty.clone(),
                kurt: empty,
            });
        }
        let max_k = wanted
            .iter()
            .filter_map(|s| match s {
                Statistic::Eigen(k) => Some(*k as usize),
                _ => None,
            })
            .max();
        let eig = match max_k {
            Some(k) => Some(eigen_slices(vol, plane, k)?),
            None => None,
        };
        for st in wanted {
            let image = match (st, &moments, &eig) {
                (Statistic::Mean, Some(m), _) => m.mean.clone(),
                (Statistic::Std, Some(m), _) => m.std.clone(),
                (Statistic::Skew, Some(m), _) => m.skew.clone(),
                (Statistic::Kurt, Some(m), _) => m.kurt.clone(),
                (Statistic::Eigen(k), _, Some(e)) => e.images[k as usize - 1].clone(),
                _ => unreachable!("statistic {st} was not computed"),
            };
            channels.push(Channel {
                id: ChannelId::new(plane, st),
                image,
            });
        }
    }
    ProjectionSet::new(subject_id, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol() -> Volume3D {
        Volume3D::from_fn([6, 5, 4], |x, y, z| (x + 2 * y + 3 * z) as f32 * 0.1).unwrap()
    }

    #[test]
    fn six_channel_canonical_order() {
        let set = build_projection_set("s", &vol(), &ChannelSelection::mean_std()).unwrap();
        assert_eq!(set.ids(), CANONICAL_SIX.to_vec());
        let names: Vec<String> = set.ids().iter().map(|c| c.to_string()).collect();
        assert_eq!(
            names,
            [
                "coronal-mean",
                "coronal-std",
                "axial-mean",
                "axial-std",
                "sagittal-mean",
                "sagittal-std"
            ]
        );
    }

    #[test]
    fn singleton_and_twelve() {
        let one = ChannelSelection::parse("axial-std").unwrap();
        let set = build_projection_set("s", &vol(), &one).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.ids()[0], ChannelId::new(Plane::Axial, Statistic::Std));

        let twelve = ChannelSelection::parse("mean,std,skew,kurt").unwrap();
        let set = build_projection_set("s", &vol(), &twelve).unwrap();
        assert_eq!(set.len(), 12);
        assert_eq!(set.ids()[2].statistic, Statistic::Skew);
    }

    #[test]
    fn empty_selection_rejected() {
        assert!(matches!(ChannelSelection::parse(""), Err(Error::Parameter(_))));
        assert!(ChannelSelection::new(vec![]).is_err());
    }

    #[test]
    fn eigen_selection_expands() {
        let sel = ChannelSelection::parse("sagittal-eigen2,mean").unwrap();
        assert_eq!(sel.per_plane_counts(), [1, 1, 3]);
        let set = build_projection_set("s", &vol(), &sel).unwrap();
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn plane_dims() {
        let v = vol();
        let set = build_projection_set("s", &v, &ChannelSelection::mean_std()).unwrap();
        assert_eq!(set.channels()[0].image.dims(), (4, 6));
        assert_eq!(set.channels()[2].image.dims(), (5, 6));
        assert_eq!(set.channels()[4].image.dims(), (4, 5));
    }

    #[test]
    fn channel_id_round_trip_strings() {
        for id in CANONICAL_SIX {
            assert_eq!(id.to_string().parse::<ChannelId>().unwrap(), id);
        }
        let e = ChannelId::new(Plane::Axial, Statistic::Eigen(3));
        assert_eq!(e.to_string().parse::<ChannelId>().unwrap(), e);
    }
}
