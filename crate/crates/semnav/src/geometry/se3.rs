//! Rigid transforms on SE(3) with quaternion rotation storage.
//!
//! Twist coordinates are ordered `[rotational; translational]` everywhere
//! (residual vectors, Jacobians, adjoints). The solver update convention is
//! right-multiplicative: `p <- p * exp(xi)`.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};

use super::GeometryError;

/// Rotation angle above which `log` refuses to evaluate.
const LOG_ANGLE_LIMIT: f64 = std::f64::consts::PI - 1e-6;
/// Below this angle the closed forms are replaced by their Taylor expansions.
const TAYLOR_EPS: f64 = 1e-6;

/// A rigid transform: rotation (unit quaternion) plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// Local coordinates for optimization updates: rotation in radians,
/// translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist6 {
    pub rotational: Vector3<f64>,
    pub translational: Vector3<f64>,
}

impl Twist6 {
    pub fn zero() -> Self {
        Twist6 {
            rotational: Vector3::zeros(),
            translational: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist6 {
            rotational: Vector3::new(v[0], v[1], v[2]),
            translational: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rotational[0],
            self.rotational[1],
            self.rotational[2],
            self.translational[0],
            self.translational[1],
            self.translational[2],
        )
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Pose3 {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose3 {
            rotation,
            translation,
        }
    }

    /// Rigid composition `self * other`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let rot_inv = self.rotation.inverse();
        Pose3 {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Apply the transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Exponential map from twist coordinates.
    ///
    /// The translation couples through the left Jacobian of SO(3):
    /// `t = J_l(omega) * v`.
    pub fn exp(xi: &Twist6) -> Pose3 {
        let omega = xi.rotational;
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        let translation = so3_left_jacobian(&omega) * xi.translational;
        Pose3 {
            rotation,
            translation,
        }
    }

    /// Logarithm map; inverse of [`Pose3::exp`] for rotation angles below pi.
    pub fn log(&self) -> Result<Twist6, GeometryError> {
        let omega = self.rotation.scaled_axis();
        let angle = omega.norm();
        if angle >= LOG_ANGLE_LIMIT {
            return Err(GeometryError::ParameterizationSingularity(angle));
        }
        let v = so3_left_jacobian_inv(&omega) * self.translation;
        Ok(Twist6 {
            rotational: omega,
            translational: v,
        })
    }

    /// Right-multiplicative update `self * exp(xi)`, with the quaternion
    /// renormalized afterwards.
    pub fn retract(&self, xi: &Twist6) -> Pose3 {
        let mut p = self.compose(&Pose3::exp(xi));
        p.rotation.renormalize();
        p
    }

    /// Relative transform `self^-1 * other`.
    pub fn between(&self, other: &Pose3) -> Pose3 {
        self.inverse().compose(other)
    }
}

/// Skew-symmetric (cross-product) matrix of a 3-vector.
pub fn so3_hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let hat = so3_hat(omega);
    let hat2 = hat * hat;
    if theta < TAYLOR_EPS {
        Matrix3::identity() + hat / 2.0 + hat2 / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity()
            + hat * ((1.0 - theta.cos()) / t2)
            + hat2 * ((theta - theta.sin()) / (t2 * theta))
    }
}

/// Inverse left Jacobian of SO(3).
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let hat = so3_hat(omega);
    let hat2 = hat * hat;
    if theta < TAYLOR_EPS {
        Matrix3::identity() - hat / 2.0 + hat2 / 12.0
    } else {
        let t2 = theta * theta;
        let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
        Matrix3::identity() - hat / 2.0 + hat2 * coeff
    }
}

/// Inverse right Jacobian of SO(3): `J_r^-1(omega) = J_l^-1(-omega)`.
pub fn so3_right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inv(&(-omega))
}

/// The translation-rotation coupling block of the SE(3) left Jacobian
/// (Barfoot's Q matrix), in `(v, omega)` arguments.
fn se3_q_matrix(v: &Vector3<f64>, omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let ph = so3_hat(omega);
    let vh = so3_hat(v);
    let ph2 = ph * ph;

    let (c1, c2, c3) = if theta < 1e-3 {
        // Taylor limits of the closed-form coefficients.
        (1.0 / 6.0, -1.0 / 24.0, -1.0 / 15.0)
    } else {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let c1 = (theta - theta.sin()) / (t2 * theta);
        let c2 = (1.0 - t2 / 2.0 - theta.cos()) / t4;
        let c3 = c2 - 3.0 * (theta - theta.sin() - t2 * theta / 6.0) / (t4 * theta);
        (c1, c2, c3)
    };

    vh / 2.0 + (ph * vh + vh * ph + ph * vh * ph) * c1
        - (ph2 * vh + vh * ph2 - ph * vh * ph * 3.0) * c2
        - (ph * vh * ph2 + ph2 * vh * ph) * (c3 / 2.0)
}

/// Inverse left Jacobian of SE(3) in `[rot; trans]` block ordering.
fn se3_left_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    let jl_inv = so3_left_jacobian_inv(&xi.rotational);
    let q = se3_q_matrix(&xi.translational, &xi.rotational);
    let coupling = -jl_inv * q * jl_inv;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl_inv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&coupling);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl_inv);
    out
}

/// Inverse right Jacobian of SE(3): `J_r^-1(xi) = J_l^-1(-xi)`.
///
/// For a pose residual `r = log(m^-1 * p)`, this is the Jacobian of `r` with
/// respect to a right-multiplicative perturbation of `p` evaluated at zero.
pub fn se3_right_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    se3_left_jacobian_inv(&Twist6 {
        rotational: -xi.rotational,
        translational: -xi.translational,
    })
}

/// Adjoint of a pose in `[rot; trans]` block ordering:
/// `Ad(p) * xi = log(p * exp(xi) * p^-1)`.
pub fn se3_adjoint(p: &Pose3) -> Matrix6<f64> {
    let r = p.rotation.to_rotation_matrix();
    let r = r.matrix();
    let tr = so3_hat(&p.translation) * r;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&tr);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut impl Rng, max_angle: f64) -> Twist6 {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.gen_range(0.0..max_angle);
        Twist6 {
            rotational: axis * angle,
            translational: Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ),
        }
    }

    pub(crate) fn random_pose(rng: &mut impl Rng) -> Pose3 {
        Pose3::exp(&random_twist(rng, 3.0))
    }

    fn to_homogeneous(p: &Pose3) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(p.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        let id = Pose3::identity();
        let q = id.compose(&p);
        assert_relative_eq!(q.translation, p.translation, epsilon = 1e-12);
        let r = p.compose(&p.inverse());
        assert!(r.translation.norm() < 1e-9);
        assert!(r.rotation.angle() < 1e-9);
    }

    #[test]
    fn compose_matches_homogeneous_matrix_oracle() {
        // Rz(90 deg) at t=(1,0,0) composed with identity-rotation at t=(1,0,0).
        let a = Pose3::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(
                0.0,
                0.0,
                std::f64::consts::FRAC_PI_2,
            )),
            Vector3::new(1.0, 0.0, 0.0),
        );
        let b = Pose3::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0));
        let c = a.compose(&b);
        assert_relative_eq!(c.translation, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = a.compose(&b);
            let m = to_homogeneous(&a) * to_homogeneous(&b);
            assert_relative_eq!(to_homogeneous(&c), m, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            assert_relative_eq!(lhs.translation, rhs.translation, epsilon = 1e-9);
            assert!(lhs.rotation.angle_to(&rhs.rotation) < 1e-9);
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = Pose3::exp(&Twist6::zero());
        assert_eq!(p.translation, Vector3::zeros());
        assert_eq!(p.rotation.angle(), 0.0);
    }

    #[test]
    fn exp_pure_rotation_axis() {
        let xi = Twist6 {
            rotational: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            translational: Vector3::zeros(),
        };
        let p = Pose3::exp(&xi);
        let expected =
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert!(p.rotation.angle_to(&expected) < 1e-12);
        assert!(p.translation.norm() < 1e-12);
    }

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 3.0);
            let back = Pose3::exp(&xi).log().unwrap();
            assert_relative_eq!(back.rotational, xi.rotational, epsilon = 1e-9);
            assert_relative_eq!(back.translational, xi.translational, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_near_pi_is_singular() {
        let xi = Twist6 {
            rotational: Vector3::new(std::f64::consts::PI, 0.0, 0.0),
            translational: Vector3::zeros(),
        };
        let p = Pose3::exp(&xi);
        assert!(matches!(
            p.log(),
            Err(GeometryError::ParameterizationSingularity(_))
        ));
    }

    #[test]
    fn right_jacobian_inv_matches_finite_differences() {
        // d/d(eps) log(exp(xi) * exp(eps * e_k)) at 0 should equal
        // se3_right_jacobian_inv(xi) column k.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..50 {
            let xi = random_twist(&mut rng, 2.5);
            let p = Pose3::exp(&xi);
            let jac = se3_right_jacobian_inv(&xi);
            for k in 0..6 {
                let mut dv = Vector6::zeros();
                dv[k] = h;
                let plus = p.retract(&Twist6::from_vector(&dv)).log().unwrap();
                dv[k] = -h;
                let minus = p.retract(&Twist6::from_vector(&dv)).log().unwrap();
                let fd = (plus.to_vector() - minus.to_vector()) / (2.0 * h);
                let col = jac.column(k);
                assert_relative_eq!(Vector6::from(col), fd, epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = random_pose(&mut rng);
            let xi = random_twist(&mut rng, 0.5);
            let lhs = p
                .compose(&Pose3::exp(&xi))
                .compose(&p.inverse())
                .log()
                .unwrap();
            let rhs = se3_adjoint(&p) * xi.to_vector();
            assert_relative_eq!(lhs.to_vector(), rhs, epsilon = 1e-8);
        }
    }
}
