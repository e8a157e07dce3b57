//! Robot model: sigmoid joint-limit squashing, classic Denavit-Hartenberg
//! forward kinematics, collision-sphere placement, and the geometric
//! Jacobians used by the objective's reverse pass.
//!
//! Joint transform convention (classic DH):
//! `F_i = Rot_z(theta_i + theta_offset_i) * Trans_z(d_i) * Trans_x(a_i) * Rot_x(alpha_i)`.
//! All joints are revolute with finite limits; the squash map keeps every
//! produced configuration strictly inside the limit box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DhJoint {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vel_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereAttachment {
    /// Index of the link frame the sphere rides on: frame `F_link` is the
    /// cumulative product of the first `link` DH transforms, with `F_0` the
    /// base frame. Valid range is `0..=dof`.
    pub link: usize,
    /// Offset in the link frame, meters.
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotSpec {
    pub joints: Vec<DhJoint>,
    pub spheres: Vec<SphereAttachment>,
}

/// World-frame pose of one link.
#[derive(Debug, Clone, Copy)]
pub struct Pose<S = f64> {
    pub position: [S; 3],
    pub rotation: [[S; 3]; 3],
}

impl<S: Real> Pose<S> {
    pub fn identity() -> Self {
        let z = S::zero();
        let o = S::one();
        Pose {
            position: [z, z, z],
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Map a point from this frame to the world frame.
    pub fn transform(&self, p: [S; 3]) -> [S; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.position[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.position[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.position[2],
        ]
    }

    /// Compose with a relative transform expressed in this frame.
    pub fn compose(&self, rot: [[S; 3]; 3], trans: [S; 3]) -> Pose<S> {
        let mut out = Pose::identity();
        out.position = self.transform(trans);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::zero();
                for k in 0..3 {
                    acc += self.rotation[i][k] * rot[k][j];
                }
                out.rotation[i][j] = acc;
            }
        }
        out
    }

    /// Third rotation column: the frame's z axis in world coordinates.
    pub fn z_axis(&self) -> [S; 3] {
        [self.rotation[0][2], self.rotation[1][2], self.rotation[2][2]]
    }
}

pub fn cross<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn logistic<S: Real>(x: S) -> S {
    // split on sign so the exp never overflows; clamp so the squash image
    // stays strictly inside the box even when the sigmoid saturates in f64
    let s = if x.val() >= 0.0 {
        let e = (-x).exp();
        S::one() / (S::one() + e)
    } else {
        let e = x.exp();
        e / (S::one() + e)
    };
    const TINY: f64 = 1e-12;
    if s.val() < TINY {
        S::from_f64(TINY)
    } else if s.val() > 1.0 - TINY {
        S::from_f64(1.0 - TINY)
    } else {
        s
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidSpec("robot needs at least one joint".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.min < j.max) {
                return Err(Error::InvalidSpec(format!(
                    "joint {i}: min {} must be below max {}",
                    j.min, j.max
                )));
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if s.link > self.joints.len() {
                return Err(Error::InvalidSpec(format!(
                    "sphere {i}: link {} out of range",
                    s.link
                )));
            }
            if !(s.radius > 0.0) {
                return Err(Error::InvalidSpec(format!("sphere {i}: radius must be positive")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: RobotSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Map an unconstrained joint vector into the limit box:
    /// `theta_i = min_i + (max_i - min_i) * logistic(slope * f_i)`.
    pub fn squash<S: Real>(&self, f: &[S], slope: f64) -> Vec<S> {
        debug_assert_eq!(f.len(), self.joints.len());
        let k = S::from_f64(slope);
        self.joints
            .iter()
            .zip(f.iter())
            .map(|(j, &fi)| {
                S::from_f64(j.min) + S::from_f64(j.max - j.min) * logistic(k * fi)
            })
            .collect()
    }

    /// Inverse of [`squash`](Self::squash); errors for values on or outside
    /// the limit boundary.
    pub fn unsquash(&self, theta: &[f64], slope: f64) -> Result<Vec<f64>> {
        debug_assert_eq!(theta.len(), self.joints.len());
        self.joints
            .iter()
            .zip(theta.iter())
            .enumerate()
            .map(|(i, (j, &t))| {
                let u = (t - j.min) / (j.max - j.min);
                if !(u > 0.0 && u < 1.0) {
                    return Err(Error::OutOfLimits {
                        joint: i,
                        value: t,
                        min: j.min,
                        max: j.max,
                    });
                }
                Ok((u / (1.0 - u)).ln() / slope)
            })
            .collect()
    }

    /// d theta / d t by the chain rule through the squash map:
    /// `(max - min) * slope * logistic(s f)(1 - logistic(s f)) * df/dt`.
    pub fn joint_velocity<S: Real>(&self, f: &[S], df_dt: &[S], slope: f64) -> Vec<S> {
        let k = S::from_f64(slope);
        self.joints
            .iter()
            .zip(f.iter().zip(df_dt.iter()))
            .map(|(j, (&fi, &dfi))| {
                let s = logistic(k * fi);
                S::from_f64(j.max - j.min) * k * s * (S::one() - s) * dfi
            })
            .collect()
    }

    /// First and second derivatives of the squash map per joint:
    /// `d theta/d f = (max-min) k s(1-s)` and
    /// `d2 theta/d f2 = (max-min) k^2 s(1-s)(1-2s)` with `s = logistic(k f)`.
    pub fn squash_derivatives(&self, f: &[f64], slope: f64) -> Vec<(f64, f64)> {
        self.joints
            .iter()
            .zip(f.iter())
            .map(|(j, &fi)| {
                let s = logistic(slope * fi);
                let range = j.max - j.min;
                let d1 = range * slope * s * (1.0 - s);
                let d2 = range * slope * slope * s * (1.0 - s) * (1.0 - 2.0 * s);
                (d1, d2)
            })
            .collect()
    }

    /// Per-link world poses (cumulative DH products), one per joint.
    pub fn forward_kinematics<S: Real>(&self, theta: &[S]) -> Vec<Pose<S>> {
        debug_assert_eq!(theta.len(), self.joints.len());
        let mut poses = Vec::with_capacity(self.joints.len());
        let mut cur = Pose::identity();
        for (j, &t) in self.joints.iter().zip(theta.iter()) {
            let th = t + S::from_f64(j.theta_offset);
            let (ct, st) = (th.cos(), th.sin());
            let (ca, sa) = (S::from_f64(j.alpha.cos()), S::from_f64(j.alpha.sin()));
            let a = S::from_f64(j.a);
            let d = S::from_f64(j.d);
            let rot = [
                [ct, -st * ca, st * sa],
                [st, ct * ca, -ct * sa],
                [S::zero(), sa, ca],
            ];
            let trans = [a * ct, a * st, d];
            cur = cur.compose(rot, trans);
            poses.push(cur);
        }
        poses
    }

    /// World positions and radii of the collision spheres.
    pub fn sphere_positions<S: Real>(&self, theta: &[S]) -> Vec<([S; 3], f64)> {
        let poses = self.forward_kinematics(theta);
        self.spheres
            .iter()
            .map(|s| {
                let off = [
                    S::from_f64(s.offset[0]),
                    S::from_f64(s.offset[1]),
                    S::from_f64(s.offset[2]),
                ];
                (frame_pose(&poses, s.link).transform(off), s.radius)
            })
            .collect()
    }

    /// Forward kinematics plus the joint axes/origins needed for geometric
    /// Jacobians (axis of joint i is the z axis of the preceding frame).
    pub fn fk_with_axes(&self, theta: &[f64]) -> FkResult {
        let d = self.dof();
        let mut poses = Vec::with_capacity(d);
        let mut axes = Vec::with_capacity(d);
        let mut origins = Vec::with_capacity(d);
        let mut cur: Pose = Pose::identity();
        for (j, &t) in self.joints.iter().zip(theta.iter()) {
            axes.push(cur.z_axis());
            origins.push(cur.position);
            let th = t + j.theta_offset;
            let (ct, st) = (th.cos(), th.sin());
            let (ca, sa) = (j.alpha.cos(), j.alpha.sin());
            let rot = [
                [ct, -st * ca, st * sa],
                [st, ct * ca, -ct * sa],
                [0.0, sa, ca],
            ];
            cur = cur.compose(rot, [j.a * ct, j.a * st, j.d]);
            poses.push(cur);
        }
        FkResult {
            poses,
            axes,
            origins,
        }
    }
}

/// Pose of frame `F_link` given the cumulative link poses (`F_0` = base).
pub fn frame_pose<S: Real>(poses: &[Pose<S>], link: usize) -> Pose<S> {
    if link == 0 {
        Pose::identity()
    } else {
        poses[link - 1]
    }
}

/// Kinematics products for one configuration, with enough geometry to form
/// position Jacobians of any attached point.
pub struct FkResult {
    pub poses: Vec<Pose>,
    /// World-frame rotation axis of each joint.
    pub axes: Vec<[f64; 3]>,
    /// A point on each joint's axis.
    pub origins: Vec<[f64; 3]>,
}

impl FkResult {
    /// d(point)/d(theta_i) for a world point rigidly attached to frame
    /// `F_link`; only joints with index below `link` move the point.
    pub fn point_jacobian_col(&self, link: usize, point: [f64; 3], joint: usize) -> [f64; 3] {
        if joint >= link {
            return [0.0; 3];
        }
        let rel = [
            point[0] - self.origins[joint][0],
            point[1] - self.origins[joint][1],
            point[2] - self.origins[joint][2],
        ];
        cross(self.axes[joint], rel)
    }

    /// d(R_end)/d(theta_i) = [axis_i]_x R_end.
    pub fn end_rotation_derivative(&self, joint: usize) -> [[f64; 3]; 3] {
        let r = &self.poses[self.poses.len() - 1].rotation;
        let w = self.axes[joint];
        let skew = [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += skew[i][k] * r[k][j];
                }
            }
        }
        out
    }
}
