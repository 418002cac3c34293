//! BrainWeb discrete anatomical volume: raw unsigned bytes, one label per
//! voxel, `181 x 217 x 181` with x varying fastest, then y, then z. Axial
//! slice `z` is therefore a `217 x 181` image (rows y, columns x).

use std::path::Path;

use super::{PhantomMaps, TissueTable};
use crate::error::{Error, Result};

/// `(nx, ny, nz)`.
pub const BRAINWEB_DIMS: (usize, usize, usize) = (181, 217, 181);
pub const BRAINWEB_SLICE: usize = 40;
pub const BRAINWEB_PADDED_SIDE: usize = 256;

/// Labels of one axial slice, zero padded and centred in a
/// `padded_side x padded_side` image. Labels above 6 become background.
pub fn brainweb_slice(volume: &[u8], slice: usize, table: &TissueTable, padded_side: usize) -> Result<PhantomMaps> {
    let (nx, ny, nz) = BRAINWEB_DIMS;
    if volume.len() != nx * ny * nz {
        return Err(Error::InvalidParameter(format!(
            "BrainWeb volume has {} bytes, expected {} ({nx}x{ny}x{nz})",
            volume.len(),
            nx * ny * nz
        )));
    }
    if slice >= nz {
        return Err(Error::IndexOutOfRange { index: slice, len: nz });
    }
    if padded_side < ny {
        return Err(Error::InvalidParameter(format!("cannot pad a {ny}x{nx} slice into {padded_side}")));
    }
    let top = (padded_side - ny) / 2;
    let left = (padded_side - nx) / 2;
    let mut labels = vec![0u8; padded_side * padded_side];
    let plane = &volume[slice * nx * ny..(slice + 1) * nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let lab = plane[y * nx + x];
            labels[(top + y) * padded_side + left + x] = if lab <= 6 { lab } else { 0 };
        }
    }
    PhantomMaps::from_labels(padded_side, labels, table)
}

pub fn load_brainweb(path: &Path, slice: usize, table: &TissueTable) -> Result<PhantomMaps> {
    let bytes = std::fs::read(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    brainweb_slice(&bytes, slice, table, BRAINWEB_PADDED_SIDE).map_err(|e| match e {
        Error::InvalidParameter(reason) => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}
