//! Static scene: receiver sphere at the origin, point transmitter, uniform drift.
//!
//! Units are fixed throughout the crate: lengths in um, times in s,
//! diffusivity in um^2/s, speeds in um/s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Cosine of the angle between two non-zero vectors, clamped to [-1, 1].
pub fn cos_angle(a: Vec3, b: Vec3) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// A unit vector orthogonal to `a` (deterministic choice).
pub fn perpendicular(a: Vec3) -> Vec3 {
    let helper = if a[0].abs() <= a[1].abs() && a[0].abs() <= a[2].abs() {
        [1.0, 0.0, 0.0]
    } else if a[1].abs() <= a[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u = scale(a, 1.0 / norm(a));
    let p = sub(helper, scale(u, dot(helper, u)));
    scale(p, 1.0 / norm(p))
}

/// Receiver radius, transmitter position and diffusivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGeometry {
    /// Receiver radius (um).
    pub r: f64,
    /// Transmitter position (um); the receiver is centred at the origin.
    pub x0: Vec3,
    /// Diffusion coefficient (um^2/s).
    pub d: f64,
}

impl ChannelGeometry {
    pub fn new(r: f64, x0: Vec3, d: f64) -> Result<Self> {
        let g = Self { r, x0, d };
        g.validate()?;
        Ok(g)
    }

    /// Transmitter on the +z axis at distance `distance`.
    pub fn on_axis(r: f64, distance: f64, d: f64) -> Result<Self> {
        Self::new(r, [0.0, 0.0, distance], d)
    }

    /// D = 80 um^2/s, r = 10 um, |x0| = 20 um.
    pub fn reference() -> Self {
        Self {
            r: 10.0,
            x0: [0.0, 0.0, 20.0],
            d: 80.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Geometry(format!("receiver radius must be positive, got {}", self.r)));
        }
        if !(self.d > 0.0) || !self.d.is_finite() {
            return Err(Error::Geometry(format!("diffusivity must be positive, got {}", self.d)));
        }
        if self.x0.iter().any(|c| !c.is_finite()) {
            return Err(Error::Geometry("transmitter position must be finite".into()));
        }
        if !(self.distance() > self.r) {
            return Err(Error::Geometry(format!(
                "transmitter must lie outside the receiver: |x0| = {} <= r = {}",
                self.distance(),
                self.r
            )));
        }
        Ok(())
    }

    /// sigma^2 = 2D.
    pub fn sigma2(&self) -> f64 {
        2.0 * self.d
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2().sqrt()
    }

    /// |x0|.
    pub fn distance(&self) -> f64 {
        norm(self.x0)
    }

    /// |x0| / r.
    pub fn distance_ratio(&self) -> f64 {
        self.distance() / self.r
    }

    /// Same geometry with a different receiver radius.
    pub fn with_radius(&self, r: f64) -> Result<Self> {
        Self::new(r, self.x0, self.d)
    }
}

/// Uniform drift velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Drift vector (um/s).
    pub v: Vec3,
}

impl DriftSpec {
    pub fn new(v: Vec3) -> Result<Self> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("drift vector must be finite".into()));
        }
        Ok(Self { v })
    }

    pub fn zero() -> Self {
        Self { v: [0.0; 3] }
    }

    /// Drift of magnitude `speed` at angle `psi` (radians) from the
    /// transmitter axis, tilted towards a fixed perpendicular direction.
    pub fn from_speed_angle(geom: &ChannelGeometry, speed: f64, psi: f64) -> Result<Self> {
        if !(speed >= 0.0) || !speed.is_finite() {
            return Err(Error::Config(format!("drift speed must be non-negative, got {speed}")));
        }
        if !psi.is_finite() {
            return Err(Error::Config("drift angle must be finite".into()));
        }
        let axis = scale(geom.x0, 1.0 / geom.distance());
        let perp = perpendicular(axis);
        let (s, c) = psi.sin_cos();
        Self::new([
            speed * (c * axis[0] + s * perp[0]),
            speed * (c * axis[1] + s * perp[1]),
            speed * (c * axis[2] + s * perp[2]),
        ])
    }

    pub fn speed(&self) -> f64 {
        norm(self.v)
    }

    /// Angle between v and x0 in [0, pi]; 0 for zero drift.
    pub fn psi(&self, geom: &ChannelGeometry) -> f64 {
        if self.speed() == 0.0 {
            0.0
        } else {
            cos_angle(self.v, geom.x0).acos()
        }
    }

    pub fn cos_psi(&self, geom: &ChannelGeometry) -> f64 {
        if self.speed() == 0.0 {
            1.0
        } else {
            cos_angle(self.v, geom.x0)
        }
    }

    /// Pe = |v| r / D.
    pub fn peclet(&self, geom: &ChannelGeometry) -> f64 {
        self.speed() * geom.r / geom.d
    }
}

/// Point on the receiver surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub y: Vec3,
}

impl SurfacePoint {
    pub fn new(geom: &ChannelGeometry, y: Vec3) -> Result<Self> {
        if (norm(y) - geom.r).abs() > 1e-9 * geom.r {
            return Err(Error::Domain(format!(
                "surface point at radius {} is not on the sphere r = {}",
                norm(y),
                geom.r
            )));
        }
        Ok(Self { y })
    }

    /// Radial projection of a non-zero point onto the sphere.
    pub fn project(geom: &ChannelGeometry, p: Vec3) -> Self {
        Self {
            y: scale(p, geom.r / norm(p)),
        }
    }

    /// Point at polar angle `theta` from the transmitter axis, azimuth `phi`.
    pub fn from_angles(geom: &ChannelGeometry, theta: f64, phi: f64) -> Self {
        let e3 = scale(geom.x0, 1.0 / geom.distance());
        let e1 = perpendicular(e3);
        let e2 = [
            e3[1] * e1[2] - e3[2] * e1[1],
            e3[2] * e1[0] - e3[0] * e1[2],
            e3[0] * e1[1] - e3[1] * e1[0],
        ];
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let r = geom.r;
        Self {
            y: [
                r * (st * cp * e1[0] + st * sp * e2[0] + ct * e3[0]),
                r * (st * cp * e1[1] + st * sp * e2[1] + ct * e3[1]),
                r * (st * cp * e1[2] + st * sp * e2[2] + ct * e3[2]),
            ],
        }
    }

    /// cos of the angle between x0 and y.
    pub fn cos_to_source(&self, geom: &ChannelGeometry) -> f64 {
        cos_angle(geom.x0, self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn geometry_invariants() {
        assert!(ChannelGeometry::on_axis(10.0, 20.0, 80.0).is_ok());
        assert!(matches!(ChannelGeometry::on_axis(10.0, 10.0, 80.0), Err(Error::Geometry(_))));
        assert!(ChannelGeometry::on_axis(0.0, 20.0, 80.0).is_err());
        assert!(ChannelGeometry::on_axis(10.0, 20.0, -1.0).is_err());
        let g = ChannelGeometry::reference();
        assert_eq!(g.sigma2(), 160.0);
        assert_eq!(g.distance_ratio(), 2.0);
    }

    #[test]
    fn drift_angle_and_peclet() {
        let g = ChannelGeometry::reference();
        for deg in [0.0f64, 45.0, 90.0, 180.0] {
            let d = DriftSpec::from_speed_angle(&g, 10.0, deg.to_radians()).unwrap();
            assert!((d.speed() - 10.0).abs() < 1e-12);
            assert!((d.psi(&g).to_degrees() - deg).abs() < 1e-6);
            assert!((d.peclet(&g) - 1.25).abs() < 1e-12);
        }
        assert_eq!(DriftSpec::zero().psi(&g), 0.0);
        // 2 pi - psi lands on the same angle
        let d = DriftSpec::from_speed_angle(&g, 5.0, 2.0 * PI - 1.0).unwrap();
        assert!((d.psi(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn surface_points() {
        let g = ChannelGeometry::reference();
        assert!(SurfacePoint::new(&g, [0.0, 0.0, 10.0]).is_ok());
        assert!(SurfacePoint::new(&g, [0.0, 0.0, 10.1]).is_err());
        let p = SurfacePoint::from_angles(&g, 0.0, 1.0);
        assert!((p.y[2] - 10.0).abs() < 1e-12);
        let q = SurfacePoint::from_angles(&g, 2.0, 0.3);
        assert!((q.cos_to_source(&g) - 2.0f64.cos()).abs() < 1e-12);
        let pr = SurfacePoint::project(&g, [3.0, 4.0, 0.0]);
        assert!((norm(pr.y) - 10.0).abs() < 1e-12);
    }
}
