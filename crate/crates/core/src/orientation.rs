//! Foot orientation from accelerometer and gyroscope.
//!
//! Gradient-descent orientation filter (IMU variant, no magnetometer). Each
//! step rotates the estimate by the measured angular rate and then moves it
//! against the normalized gradient of the gravity-alignment objective,
//! scaled by the gain `beta`.
//!
//! Two details differ from the textbook formulation:
//! - the gyro rate is integrated with the quaternion exponential, so a pure
//!   rotation at constant rate is reproduced exactly when `beta = 0`;
//! - the gradient is normalized by `max(|grad|, 4 * beta * dt)`. Far from
//!   alignment this is the usual unit-norm step; close to alignment the step
//!   becomes proportional to the gradient and the error decays without the
//!   fixed-step chatter around the optimum.

use crate::error::{Error, Result};
use crate::types::{ImuSample, INSOLE_PERIOD_S};

pub const DEFAULT_BETA: f64 = 0.1;

/// Samples discarded at the start of a stream while the filter settles.
pub const SETTLE_SECONDS: f64 = 2.0;

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion(pub [f64; 4]);

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion([1.0, 0.0, 0.0, 0.0]);

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        Quaternion(self.0.map(|v| v / n))
    }

    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        let [a1, b1, c1, d1] = self.0;
        let [a2, b2, c2, d2] = o.0;
        Quaternion([
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ])
    }

    pub fn conjugate(&self) -> Quaternion {
        let [w, x, y, z] = self.0;
        Quaternion([w, -x, -y, -z])
    }

    /// Rotation by `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quaternion {
        let (s, c) = (angle / 2.0).sin_cos();
        Quaternion([c, axis[0] * s, axis[1] * s, axis[2] * s])
    }

    /// Intrinsic Z-Y-X composition: yaw, then pitch, then roll.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Quaternion {
        let qz = Quaternion::from_axis_angle([0.0, 0.0, 1.0], yaw);
        let qy = Quaternion::from_axis_angle([0.0, 1.0, 0.0], pitch);
        let qx = Quaternion::from_axis_angle([1.0, 0.0, 0.0], roll);
        qz.mul(&qy).mul(&qx)
    }

    /// `(roll, pitch, yaw)`, intrinsic Z-Y-X, pitch in [-pi/2, pi/2].
    pub fn euler(&self) -> [f64; 3] {
        let [w, x, y, z] = self.0;
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        [roll, pitch, yaw]
    }

    /// Rotates a vector from the sensor frame into the earth frame.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion([0.0, v[0], v[1], v[2]]);
        let r = self.mul(&p).mul(&self.conjugate());
        [r.0[1], r.0[2], r.0[3]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationState {
    pub q: Quaternion,
    pub beta: f64,
    pub dt: f64,
}

impl OrientationState {
    pub fn new(beta: f64, dt: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("filter gain must be >= 0, got {beta}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be > 0, got {dt}")));
        }
        Ok(Self {
            q: Quaternion::IDENTITY,
            beta,
            dt,
        })
    }

    pub fn with_quaternion(mut self, q: Quaternion) -> Self {
        self.q = q.normalized();
        self
    }

    /// Advances the filter by one sample.
    pub fn update(&self, gyro: [f64; 3], accel: [f64; 3]) -> Result<OrientationState> {
        if gyro.iter().chain(accel.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("IMU sample"));
        }
        let q = self.q;

        // exact rotation over dt at constant rate
        let rate = (gyro[0] * gyro[0] + gyro[1] * gyro[1] + gyro[2] * gyro[2]).sqrt();
        let predicted = if rate > 0.0 {
            let axis = gyro.map(|g| g / rate);
            q.mul(&Quaternion::from_axis_angle(axis, rate * self.dt))
        } else {
            q
        };

        let a_norm = (accel[0] * accel[0] + accel[1] * accel[1] + accel[2] * accel[2]).sqrt();
        let corrected = if a_norm > 0.0 && self.beta > 0.0 {
            let grad = alignment_gradient(&q, accel.map(|a| a / a_norm));
            let g_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let floor = 4.0 * self.beta * self.dt;
            let scale = self.beta * self.dt / g_norm.max(floor);
            let mut out = predicted.0;
            for (o, g) in out.iter_mut().zip(grad) {
                *o -= scale * g;
            }
            Quaternion(out)
        } else {
            predicted
        };

        Ok(OrientationState {
            q: corrected.normalized(),
            ..*self
        })
    }

    pub fn angles(&self) -> [f64; 3] {
        self.q.euler()
    }

    /// Residual between measured gravity direction and the one predicted by
    /// the current orientation.
    pub fn alignment_error(&self, accel: [f64; 3]) -> f64 {
        let n = (accel[0] * accel[0] + accel[1] * accel[1] + accel[2] * accel[2]).sqrt();
        let f = alignment_residual(&self.q, accel.map(|a| a / n));
        (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt()
    }
}

fn alignment_residual(q: &Quaternion, a: [f64; 3]) -> [f64; 3] {
    let [q0, q1, q2, q3] = q.0;
    [
        2.0 * (q1 * q3 - q0 * q2) - a[0],
        2.0 * (q0 * q1 + q2 * q3) - a[1],
        2.0 * (0.5 - q1 * q1 - q2 * q2) - a[2],
    ]
}

/// `J^T f` of the gravity-alignment objective.
fn alignment_gradient(q: &Quaternion, a: [f64; 3]) -> [f64; 4] {
    let [q0, q1, q2, q3] = q.0;
    let f = alignment_residual(q, a);
    let j = [
        [-2.0 * q2, 2.0 * q3, -2.0 * q0, 2.0 * q1],
        [2.0 * q1, 2.0 * q0, 2.0 * q3, 2.0 * q2],
        [0.0, -4.0 * q1, -4.0 * q2, 0.0],
    ];
    let mut g = [0.0; 4];
    for (row, fi) in j.iter().zip(f) {
        for (gk, jk) in g.iter_mut().zip(row) {
            *gk += jk * fi;
        }
    }
    g
}

/// Runs the filter over a stream and returns a copy with `angle` filled in.
///
/// The step for sample `k > 0` is `t[k] - t[k-1]`; the first sample uses the
/// nominal insole period.
pub fn estimate_angles(samples: &[ImuSample], beta: f64) -> Result<Vec<ImuSample>> {
    let mut state = OrientationState::new(beta, INSOLE_PERIOD_S)?;
    let mut out = Vec::with_capacity(samples.len());
    let mut prev_t: Option<f64> = None;
    for s in samples {
        if let Some(p) = prev_t {
            let dt = s.t - p;
            if !(dt > 0.0) {
                return Err(Error::Config(format!("IMU timestamps not increasing at t = {}", s.t)));
            }
            state.dt = dt;
        }
        state = state.update(s.gyro, s.accel)?;
        prev_t = Some(s.t);
        out.push(ImuSample {
            angle: Some(state.angles()),
            ..*s
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: f64 = 9.81;

    #[test]
    fn aligned_identity_is_a_fixed_point() {
        let mut s = OrientationState::new(DEFAULT_BETA, 0.01).unwrap();
        for _ in 0..100 {
            s = s.update([0.0; 3], [0.0, 0.0, G]).unwrap();
        }
        assert_eq!(s.q, Quaternion::IDENTITY);
    }

    #[test]
    fn static_tilt_converges() {
        let roll = 10f64.to_radians();
        // gravity seen by a sensor rolled by +10 degrees about x
        let accel = [0.0, G * roll.sin(), G * roll.cos()];
        let dt = 0.01;
        let mut s = OrientationState::new(DEFAULT_BETA, dt).unwrap();
        for _ in 0..(5.0 / dt) as usize {
            s = s.update([0.0; 3], accel).unwrap();
        }
        let [r, p, _] = s.angles();
        assert!((r - roll).abs() < 0.5f64.to_radians(), "roll {}", r.to_degrees());
        assert!(p.abs() < 0.5f64.to_radians());
    }

    #[test]
    fn pure_integration_matches_closed_form() {
        let omega = 0.7;
        let dt = 0.01;
        let n = 400;
        let mut s = OrientationState::new(0.0, dt).unwrap();
        for _ in 0..n {
            s = s.update([0.0, 0.0, omega], [0.3, -0.2, G]).unwrap();
        }
        let yaw = s.angles()[2];
        assert!((yaw - n as f64 * omega * dt).abs() < 1e-6);
    }

    #[test]
    fn zero_accel_integrates_gyro_only() {
        let s = OrientationState::new(DEFAULT_BETA, 0.01).unwrap();
        let a = s.update([0.0, 0.0, 1.0], [0.0; 3]).unwrap();
        let b = OrientationState::new(0.0, 0.01).unwrap().update([0.0, 0.0, 1.0], [0.0; 3]).unwrap();
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn non_finite_rejected() {
        let s = OrientationState::new(DEFAULT_BETA, 0.01).unwrap();
        assert!(matches!(
            s.update([f64::NAN, 0.0, 0.0], [0.0, 0.0, G]),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn euler_axis_cases() {
        assert_eq!(Quaternion::IDENTITY.euler(), [0.0, 0.0, 0.0]);
        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let [r, p, y] = q.euler();
        assert!(r.abs() < 1e-12 && p.abs() < 1e-12);
        assert!((y - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = Quaternion([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ])
            .normalized();
            let [r, p, y] = q.euler();
            assert!(p.abs() <= std::f64::consts::FRAC_PI_2);
            let back = Quaternion::from_euler(r, p, y);
            let sign = if back.0[0] * q.0[0] + back.0[1] * q.0[1] + back.0[2] * q.0[2] + back.0[3] * q.0[3] < 0.0 {
                -1.0
            } else {
                1.0
            };
            let err = (0..4).map(|k| (sign * back.0[k] - q.0[k]).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "round-trip error {err}");
        }
    }

    #[test]
    fn norm_stays_unit_over_random_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = OrientationState::new(DEFAULT_BETA, 0.01).unwrap();
        for _ in 0..100_000 {
            let gyro = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let accel = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
            s = s.update(gyro, accel).unwrap();
            assert!((s.q.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn static_alignment_error_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let dir: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0)];
            let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
            let accel = dir.map(|d| G * d / n);
            let mut s = OrientationState::new(DEFAULT_BETA, 0.01).unwrap();
            let mut errors = Vec::new();
            for _ in 0..2000 {
                s = s.update([0.0; 3], accel).unwrap();
                errors.push(s.alignment_error(accel));
            }
            for w in errors[10..].windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
            assert!(*errors.last().unwrap() < 1e-6);
        }
    }

    #[test]
    fn stream_fills_angles() {
        let samples: Vec<ImuSample> = (0..50)
            .map(|k| ImuSample::new(k as f64 * 0.02, [0.0, 0.0, G], [0.0; 3]))
            .collect();
        let out = estimate_angles(&samples, DEFAULT_BETA).unwrap();
        assert!(out.iter().all(|s| s.angle == Some([0.0, 0.0, 0.0])));
    }
}
