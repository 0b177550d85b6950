//! Recovers a similarity transform from corresponding landmarks and reads
//! off the head angles.
//!
//! ```bash
//! cargo run --release -p ffd-face --example estimate_pose
//! ```

use ffd_face::landmarks::sample_landmarks;
use ffd_face::projection::{estimate_pose, euler_degrees};
use ffd_face::sample::generate_face;
use ffd_face::Pose;
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let face = generate_face(61)?;
    let reference = sample_landmarks(&face.mesh, &face.scheme)?.points;

    for (yaw, pitch, roll) in [(0.0, 0.0, 0.0), (25.0, -10.0, 3.0), (-70.0, 15.0, -8.0)] {
        let truth =
            Pose::from_euler_degrees(0.8, yaw, pitch, roll, Vector3::new(100.0, 120.0, 0.0))?;
        let observed = truth.apply_all(&reference);
        let est = estimate_pose(&reference, &observed)?;
        let angles = euler_degrees(&est)?;
        println!(
            "true yaw/pitch/roll {yaw:6.1} {pitch:6.1} {roll:6.1} -> {:6.1} {:6.1} {:6.1}, scale {:.4}",
            angles.yaw,
            angles.pitch,
            angles.roll,
            est.scale()
        );
    }
    Ok(())
}
