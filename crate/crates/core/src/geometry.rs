use serde::{Deserialize, Serialize};

/// Point or vector in the vertical plane: `x` horizontal, `z` up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.z)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.z + o.z)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.z * s)
    }
}

/// Workspace reachable by the effector, in meters.
pub const WORKSPACE_X: (f64, f64) = (-0.25, 0.25);
pub const WORKSPACE_Z: (f64, f64) = (0.0, 0.5);

pub fn in_workspace(p: Vec2) -> bool {
    p.is_finite()
        && p.x >= WORKSPACE_X.0
        && p.x <= WORKSPACE_X.1
        && p.z >= WORKSPACE_Z.0
        && p.z <= WORKSPACE_Z.1
}

pub fn clamp_to_workspace(p: Vec2) -> Vec2 {
    Vec2::new(
        p.x.clamp(WORKSPACE_X.0, WORKSPACE_X.1),
        p.z.clamp(WORKSPACE_Z.0, WORKSPACE_Z.1),
    )
}
