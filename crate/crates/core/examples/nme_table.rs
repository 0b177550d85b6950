//! Scores landmark predictions by yaw bin and prints the NME table.
//!
//! ```bash
//! cargo run --release -p ffd-face --example nme_table
//! ```
//!
//! The records are synthetic: predictions drift further from the ground truth
//! as the head turns away, so the table grows from left to right.

use ffd_face::evaluation::{balanced_sample, bin_and_tabulate, BoxSize, EvalRecord, NmeTable};
use ffd_face::evaluation::{REFERENCE_MEAN_BERNSTEIN, REFERENCE_MEAN_BSPLINE};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let records: Vec<EvalRecord> = (0..900)
        .map(|_| {
            let yaw: f64 = rng.random_range(-90.0..=90.0);
            let spread = 2.0 + 3.0 * yaw.abs() / 90.0;
            let gt: Vec<Point3<f64>> = (0..68)
                .map(|_| {
                    Point3::new(
                        rng.random_range(0.0..120.0),
                        rng.random_range(0.0..140.0),
                        0.0,
                    )
                })
                .collect();
            let pred = gt
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread..spread),
                        0.0,
                    )
                })
                .collect();
            EvalRecord {
                pred,
                gt,
                bbox: BoxSize {
                    width: 120.0,
                    height: 140.0,
                },
                yaw,
            }
        })
        .collect();

    let balanced = balanced_sample(&records, 232, 0)?;
    println!("{}", bin_and_tabulate(&balanced)?.render("synthetic"));

    let published = NmeTable::from_bin_means([Some(2.60), Some(3.44), Some(4.50)], [232; 3])?;
    println!("{}", published.render("published row"));
    println!("reference means: Bernstein {REFERENCE_MEAN_BERNSTEIN:.2}, B-spline {REFERENCE_MEAN_BSPLINE:.2}");
    Ok(())
}
