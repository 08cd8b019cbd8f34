//! Pinhole cameras (world-to-camera rigid transform, CV convention: x right,
//! y down, z forward) and posed view records.

use crate::error::{Result, SplatError};
use crate::image::Image;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation (orthonormal, det +1).
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: x_cam = R x_world + t.
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if width < 16 || height < 16 {
            return Err(SplatError::invalid_input("camera dimensions must be at least 16"));
        }
        let rt_r = rotation.transpose() * rotation;
        if (rt_r - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(SplatError::invalid_input("camera rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(SplatError::invalid_input("camera rotation must have det +1"));
        }
        Ok(Camera { fx, fy, cx, cy, width, height, rotation, translation })
    }

    /// Camera looking from `eye` toward `target`, with `up_hint` fixing roll.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up_hint: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| SplatError::invalid_input("look_at: eye equals target"))?;
        let right = forward
            .cross(&up_hint.normalize())
            .try_normalize(1e-9)
            .ok_or_else(|| SplatError::invalid_input("look_at: forward parallel to up"))?;
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world
        // coordinates: x right, y down, z forward.
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -rotation * eye;
        Camera::new(fx, fy, cx, cy, width, height, rotation, translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (camera +z) expressed in world coordinates.
    pub fn forward_world(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0)
    }

    pub fn right_world(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::new(1.0, 0.0, 0.0)
    }

    /// Image "up" in world coordinates (negative camera y).
    pub fn up_world(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::new(0.0, -1.0, 0.0)
    }

    /// Projects a camera-space point (z > 0) to pixel coordinates.
    #[inline]
    pub fn project_cam(&self, p_cam: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Rebuilds a camera from an orientation quaternion and camera center,
    /// keeping this camera's intrinsics.
    pub fn with_pose(&self, orientation: UnitQuaternion<f64>, center: Vector3<f64>) -> Camera {
        let rotation = orientation.to_rotation_matrix().into_inner();
        Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation,
            translation: -rotation * center,
        }
    }

    /// Symmetric pinhole with the given horizontal field of view (radians).
    pub fn with_hfov(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up_hint: Vector3<f64>,
        hfov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let fx = width as f64 / (2.0 * (hfov / 2.0).tan());
        Camera::look_at(
            eye,
            target,
            up_hint,
            fx,
            fx,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewKind {
    Input,
    Generated,
}

/// A camera paired with an image of matching dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub camera: Camera,
    pub image: Image,
    pub kind: ViewKind,
}

impl ViewRecord {
    pub fn new(camera: Camera, image: Image, kind: ViewKind) -> Result<Self> {
        if image.width() != camera.width || image.height() != camera.height {
            return Err(SplatError::invalid_input(format!(
                "view image {}x{} does not match camera {}x{}",
                image.width(),
                image.height(),
                camera.width,
                camera.height
            )));
        }
        Ok(ViewRecord { camera, image, kind })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let cam = Camera::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(4.0, 2.0, 3.0),
            Vector3::new(0.0, 0.0, 1.0),
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
        )
        .unwrap();
        let p_cam = cam.world_to_camera(&Vector3::new(4.0, 2.0, 3.0));
        assert!(p_cam.z > 0.0);
        let px = cam.project_cam(&p_cam);
        assert_relative_eq!(px.x, 32.0, epsilon = 1e-9);
        assert_relative_eq!(px.y, 32.0, epsilon = 1e-9);
        // World up maps to decreasing pixel y.
        let above = cam.world_to_camera(&Vector3::new(4.0, 2.0, 3.5));
        assert!(cam.project_cam(&above).y < 32.0);
    }

    #[test]
    fn rejects_tiny_images_and_bad_rotations() {
        assert!(Camera::new(
            10.0,
            10.0,
            4.0,
            4.0,
            8,
            8,
            Matrix3::identity(),
            Vector3::zeros()
        )
        .is_err());
        let mut bad = Matrix3::identity();
        bad[(0, 0)] = 2.0;
        assert!(Camera::new(10.0, 10.0, 16.0, 16.0, 32, 32, bad, Vector3::zeros()).is_err());
    }

    #[test]
    fn view_record_checks_dimensions() {
        let cam = Camera::new(
            10.0,
            10.0,
            16.0,
            16.0,
            32,
            32,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap();
        let img = Image::zeros(16, 16, 3);
        assert!(ViewRecord::new(cam, img, ViewKind::Input).is_err());
    }
}
