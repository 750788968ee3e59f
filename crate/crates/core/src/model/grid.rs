//! Voxel lattice geometry and boundary conditions.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// One of the six exterior faces of the box-shaped medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMin,
        Face::XMax,
        Face::YMin,
        Face::YMax,
        Face::ZMin,
        Face::ZMax,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// What happens to a molecule that reaches an exterior face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaceBoundary {
    Reflecting,
    /// Molecules leave through the face at `escape_rate` per molecule.
    Absorbing { escape_rate: f64 },
}

/// Per-face boundary tags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub x_min: FaceBoundary,
    pub x_max: FaceBoundary,
    pub y_min: FaceBoundary,
    pub y_max: FaceBoundary,
    pub z_min: FaceBoundary,
    pub z_max: FaceBoundary,
}

impl Boundary {
    pub fn uniform(face: FaceBoundary) -> Self {
        Boundary {
            x_min: face,
            x_max: face,
            y_min: face,
            y_max: face,
            z_min: face,
            z_max: face,
        }
    }

    pub fn reflecting() -> Self {
        Self::uniform(FaceBoundary::Reflecting)
    }

    pub fn absorbing(escape_rate: f64) -> Self {
        Self::uniform(FaceBoundary::Absorbing { escape_rate })
    }

    pub fn face(&self, face: Face) -> FaceBoundary {
        match face {
            Face::XMin => self.x_min,
            Face::XMax => self.x_max,
            Face::YMin => self.y_min,
            Face::YMax => self.y_max,
            Face::ZMin => self.z_min,
            Face::ZMax => self.z_max,
        }
    }

    fn faces(&self) -> [FaceBoundary; 6] {
        let mut out = [FaceBoundary::Reflecting; 6];
        for f in Face::ALL {
            out[f.slot()] = self.face(f);
        }
        out
    }
}

impl Default for Boundary {
    fn default() -> Self {
        Self::reflecting()
    }
}

/// A voxel referred to by its 1-based single index ξ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Voxel(pub u32);

impl Voxel {
    /// 1-based index ξ.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// 0-based offset into per-voxel arrays.
    pub fn offset(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_offset(offset: usize) -> Self {
        Voxel(offset as u32 + 1)
    }
}

impl std::fmt::Display for Voxel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A voxel reference as written in configuration files: either the single
/// index or an `[x, y, z]` triple (all 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VoxelRef {
    Index(u32),
    Coords([u32; 3]),
}

impl VoxelRef {
    pub fn resolve(self, grid: &GridSpec) -> Result<Voxel, ModelError> {
        match self {
            VoxelRef::Index(i) => {
                if i == 0 || i as usize > grid.n_voxels() {
                    Err(ModelError::Range(format!(
                        "voxel index {i} outside [1, {}]",
                        grid.n_voxels()
                    )))
                } else {
                    Ok(Voxel(i))
                }
            }
            VoxelRef::Coords([x, y, z]) => voxel_index(x, y, z, grid),
        }
    }
}

/// Box-shaped medium of `nx × ny × nz` cubic voxels of side `voxel_width` (μm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: u32,
    pub ny: u32,
    pub nz: u32,
    /// Voxel side W in μm.
    pub voxel_width: f64,
    /// Diffusion coefficient D in μm²/s.
    pub diffusion_coefficient: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(nx: u32, ny: u32, nz: u32, voxel_width: f64, diffusion_coefficient: f64) -> Self {
        GridSpec {
            nx,
            ny,
            nz,
            voxel_width,
            diffusion_coefficient,
            boundary: Boundary::reflecting(),
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn n_voxels(&self) -> usize {
        self.nx as usize * self.ny as usize * self.nz as usize
    }

    /// Per-molecule hop rate to one neighbouring voxel, d = D / W².
    pub fn hop_rate(&self) -> f64 {
        self.diffusion_coefficient / (self.voxel_width * self.voxel_width)
    }

    /// Voxel volume W³ in μm³.
    pub fn voxel_volume(&self) -> f64 {
        self.voxel_width.powi(3)
    }

    pub fn validate(&self) -> Result<Vec<String>, ModelError> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(ModelError::Config(format!(
                "grid dimensions must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if !(self.voxel_width > 0.0) || !self.voxel_width.is_finite() {
            return Err(ModelError::Config(format!(
                "voxel width must be positive and finite, got {}",
                self.voxel_width
            )));
        }
        if !(self.diffusion_coefficient >= 0.0) || !self.diffusion_coefficient.is_finite() {
            return Err(ModelError::Config(format!(
                "diffusion coefficient must be nonnegative and finite, got {}",
                self.diffusion_coefficient
            )));
        }
        if !self.hop_rate().is_finite() {
            return Err(ModelError::Config("hop rate D/W^2 is not finite".into()));
        }
        for face in Face::ALL {
            if let FaceBoundary::Absorbing { escape_rate } = self.boundary.face(face) {
                if !(escape_rate >= 0.0) || !escape_rate.is_finite() {
                    return Err(ModelError::Config(format!(
                        "escape rate on {face:?} must be nonnegative and finite, got {escape_rate}"
                    )));
                }
            }
        }
        let mut warnings = Vec::new();
        if !(0.01..=10.0).contains(&self.voxel_width) {
            warnings.push(format!(
                "voxel width {} um is outside [0.01, 10] um; the voxel model may not be physically meaningful",
                self.voxel_width
            ));
        }
        Ok(warnings)
    }

    /// `(x, y, z)` triple of a voxel.
    pub fn coords(&self, voxel: Voxel) -> [u32; 3] {
        let o = voxel.offset() as u32;
        let x = o % self.nx;
        let y = (o / self.nx) % self.ny;
        let z = o / (self.nx * self.ny);
        [x + 1, y + 1, z + 1]
    }

    /// Neighbour across `face`, or `None` if `face` is an exterior face of this voxel.
    pub fn neighbour(&self, voxel: Voxel, face: Face) -> Option<Voxel> {
        let [x, y, z] = self.coords(voxel);
        let (x, y, z) = match face {
            Face::XMin if x > 1 => (x - 1, y, z),
            Face::XMax if x < self.nx => (x + 1, y, z),
            Face::YMin if y > 1 => (x, y - 1, z),
            Face::YMax if y < self.ny => (x, y + 1, z),
            Face::ZMin if z > 1 => (x, y, z - 1),
            Face::ZMax if z < self.nz => (x, y, z + 1),
            _ => return None,
        };
        Some(Voxel(x + self.nx * (y - 1) + self.nx * self.ny * (z - 1)))
    }

    /// Exterior faces of `voxel` that are absorbing, with their escape rates.
    pub fn escape_faces(&self, voxel: Voxel) -> impl Iterator<Item = (Face, f64)> + '_ {
        let faces = self.boundary.faces();
        Face::ALL.into_iter().filter_map(move |f| {
            if self.neighbour(voxel, f).is_some() {
                return None;
            }
            match faces[f.slot()] {
                FaceBoundary::Absorbing { escape_rate } => Some((f, escape_rate)),
                FaceBoundary::Reflecting => None,
            }
        })
    }

    pub fn voxels(&self) -> impl Iterator<Item = Voxel> {
        (1..=self.n_voxels() as u32).map(Voxel)
    }
}

/// Single voxel index ξ(x, y, z) = x + Nx (y − 1) + Nx Ny (z − 1), all 1-based.
pub fn voxel_index(x: u32, y: u32, z: u32, grid: &GridSpec) -> Result<Voxel, ModelError> {
    if x == 0 || y == 0 || z == 0 || x > grid.nx || y > grid.ny || z > grid.nz {
        return Err(ModelError::Range(format!(
            "voxel ({x},{y},{z}) outside grid {}x{}x{}",
            grid.nx, grid.ny, grid.nz
        )));
    }
    Ok(Voxel(x + grid.nx * (y - 1) + grid.nx * grid.ny * (z - 1)))
}
