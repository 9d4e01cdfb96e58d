//! Pose files: the six parameters followed by the 4x4 matrix.

use crate::error::{Error, Result};
use crate::geometry::PoseParams;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use std::fmt::Write as _;
use std::path::Path;

pub fn format_pose(theta: &PoseParams) -> String {
    let mut s = String::from("# omega_x omega_y omega_z tau_x tau_y tau_z\n");
    let v = theta.to_vector();
    let _ = writeln!(s, "{}", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" "));
    s.push_str("# 4x4 camera-from-cloud matrix\n");
    let m = theta.matrix();
    for r in 0..4 {
        let _ = writeln!(
            s,
            "{}",
            (0..4).map(|c| format!("{:?}", m[(r, c)])).collect::<Vec<_>>().join(" ")
        );
    }
    s
}

/// Accepts 6 numbers (parameters), 16 (row-major matrix) or 22 (both, as
/// written by [`format_pose`], in which case the parameters are used).
pub fn parse_pose(text: &str) -> Result<PoseParams> {
    let mut nums = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.starts_with('#') {
            for tok in body.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(offset, format!("`{tok}` is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::parse(offset, "pose values must be finite"));
                }
                nums.push(v);
            }
        }
        offset += line.len();
    }
    match nums.len() {
        6 | 22 => Ok(PoseParams::from_vector(&Vector6::from_column_slice(&nums[..6]))),
        16 => {
            let m = Matrix4::from_row_slice(&nums);
            let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
            if (r.transpose() * r - Matrix3::identity()).amax() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
                return Err(Error::parse(0, "matrix rotation block is not a rotation"));
            }
            Ok(PoseParams::from_rotation_translation(
                &r,
                &Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
            ))
        }
        n => Err(Error::parse(0, format!("expected 6, 16 or 22 numbers, found {n}"))),
    }
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<PoseParams> {
    parse_pose(&std::fs::read_to_string(path)?)
}

pub fn save_pose(path: impl AsRef<Path>, theta: &PoseParams) -> Result<()> {
    std::fs::write(path, format_pose(theta))?;
    Ok(())
}
