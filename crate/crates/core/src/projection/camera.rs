use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::ObjectInstance;

/// Points must be at least this far in front of the camera (view depth,
/// world units) to project.
pub const NEAR_PLANE: f64 = 1e-4;

/// Pinhole camera with a look-at pose and square pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub up: Vector3<f64>,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub image_width: u32,
    pub image_height: u32,
}

/// Pixel coordinates (origin top-left) and view-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// View-space depth of the object center.
    pub depth: f64,
}

impl BBox2D {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u <= self.x1 && v >= self.y0 && v <= self.y1
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }
}

/// Orthonormal camera frame: right, up and forward in world coordinates.
#[derive(Debug, Clone, Copy)]
struct Frame {
    right: Vector3<f64>,
    up: Vector3<f64>,
    forward: Vector3<f64>,
}

impl CameraModel {
    /// Approximation of the CLEVR render camera at 480×320: the Blender
    /// camera position, aimed at the origin, 35 mm lens on a 32 mm sensor.
    pub fn clevr_default() -> Self {
        let sensor_half_height = 16.0 * 320.0 / 480.0;
        let vertical_fov = 2.0 * (sensor_half_height / 35.0f64).atan().to_degrees();
        Self {
            position: Vector3::new(7.358891, -6.925791, 4.958309),
            look_at: Vector3::zeros(),
            up: Vector3::z(),
            vertical_fov,
            image_width: 480,
            image_height: 320,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let view = self.look_at - self.position;
        if !(view.norm() > 0.0) {
            return Err(Error::InvalidCamera(
                "position coincides with look_at".into(),
            ));
        }
        if !(self.up.norm() > 0.0) || view.normalize().cross(&self.up.normalize()).norm() < 1e-9 {
            return Err(Error::InvalidCamera(
                "up vector is parallel to the view direction".into(),
            ));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(Error::InvalidCamera(format!(
                "vertical fov {} not in (0, 180)",
                self.vertical_fov
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidCamera("image has zero size".into()));
        }
        Ok(())
    }

    fn frame(&self) -> Frame {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        Frame { right, up, forward }
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        (self.image_height as f64 / 2.0) / (self.vertical_fov.to_radians() / 2.0).tan()
    }

    /// World point to view coordinates `(x right, y up, depth forward)`.
    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let f = self.frame();
        let d = p - self.position;
        Vector3::new(f.right.dot(&d), f.up.dot(&d), f.forward.dot(&d))
    }

    fn view_to_pixel(&self, view: &Vector3<f64>) -> (f64, f64) {
        let focal = self.focal_px();
        let u = self.image_width as f64 / 2.0 + focal * view.x / view.z;
        let v = self.image_height as f64 / 2.0 - focal * view.y / view.z;
        (u, v)
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Result<Projected> {
        let view = self.to_view(p);
        if !(view.z > NEAR_PLANE) {
            return Err(Error::BehindCamera { depth: view.z });
        }
        let (u, v) = self.view_to_pixel(&view);
        Ok(Projected {
            u,
            v,
            depth: view.z,
        })
    }

    /// Inverse of [`project_point`](Self::project_point) at a known depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let f = self.frame();
        let focal = self.focal_px();
        let x = (u - self.image_width as f64 / 2.0) * depth / focal;
        let y = (self.image_height as f64 / 2.0 - v) * depth / focal;
        self.position + f.right * x + f.up * y + f.forward * depth
    }

    /// Ground-plane unit directions `(front, right)` as seen from this
    /// camera: `front` points toward the camera, `right` along the image's
    /// horizontal axis.
    pub fn ground_directions(&self) -> (Vector3<f64>, Vector3<f64>) {
        let f = self.frame();
        let flat = |v: Vector3<f64>| Vector3::new(v.x, v.y, 0.0).normalize();
        (flat(-f.forward), flat(f.right))
    }

    /// 2-D box of the object's yawed cube, clipped to the near plane and the
    /// image. Fails if the object center is not in front of the camera.
    pub fn project_object_bbox(&self, o: &ObjectInstance) -> Result<BBox2D> {
        let center = self.to_view(&o.location);
        if !(center.z > NEAR_PLANE) {
            return Err(Error::BehindCamera { depth: center.z });
        }

        let corners = cube_corners(o).map(|c| self.to_view(&c));
        let mut xs = Vec::with_capacity(24);
        let mut ys = Vec::with_capacity(24);
        let mut push = |view: &Vector3<f64>| {
            let (u, v) = self.view_to_pixel(view);
            xs.push(u);
            ys.push(v);
        };
        for c in &corners {
            if c.z > NEAR_PLANE {
                push(c);
            }
        }
        for (a, b) in CUBE_EDGES {
            let (ca, cb) = (corners[a], corners[b]);
            if (ca.z > NEAR_PLANE) != (cb.z > NEAR_PLANE) {
                let t = (NEAR_PLANE - ca.z) / (cb.z - ca.z);
                push(&(ca + (cb - ca) * t));
            }
        }

        let w = self.image_width as f64;
        let h = self.image_height as f64;
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(BBox2D {
            x0: min(&xs).clamp(0.0, w),
            y0: min(&ys).clamp(0.0, h),
            x1: max(&xs).clamp(0.0, w),
            y1: max(&ys).clamp(0.0, h),
            depth: center.z,
        })
    }
}

const CUBE_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Corners of the object's cube; bit 0 of the index selects ±x, bit 1 ±y,
/// bit 2 ±z in the object frame, yawed by the object's rotation.
pub fn cube_corners(o: &ObjectInstance) -> [Vector3<f64>; 8] {
    let (s, c) = o.rotation.to_radians().sin_cos();
    let h = o.half_extent;
    std::array::from_fn(|i| {
        let lx = if i & 1 == 0 { -h } else { h };
        let ly = if i & 2 == 0 { -h } else { h };
        let lz = if i & 4 == 0 { -h } else { h };
        o.location + Vector3::new(c * lx - s * ly, s * lx + c * ly, lz)
    })
}
