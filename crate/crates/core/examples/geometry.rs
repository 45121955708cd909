//! Disparity to depth and back on the default rig.
//!
//! ```text
//! cargo run --example geometry
//! ```

use stereopose::geometry::{project_right, uvd_to_xyz, xyz_to_uvd, JointSetUvd, StereoRig, Uvd};

fn main() -> stereopose::Result<()> {
    let rig = StereoRig::default();
    println!("{}", rig.to_text());

    // Three points at 30, 60 and 120 px of disparity.
    let uvd = JointSetUvd(vec![Uvd::new(160.0, 120.0, 30.0), Uvd::new(100.0, 80.0, 60.0), Uvd::new(250.0, 200.0, 120.0)]);
    let xyz = uvd_to_xyz(&rig, &uvd)?;
    let back = xyz_to_uvd(&rig, &xyz)?;
    let right = project_right(&uvd);
    println!("u v d -> x y z (mm) -> u v d, right view u");
    for (((p, x), q), r) in uvd.iter().zip(xyz.iter()).zip(back.iter()).zip(&right) {
        println!(
            "{:6.1} {:6.1} {:6.1} -> {:8.2} {:8.2} {:8.2} -> {:6.1} {:6.1} {:6.1}, {:6.1}",
            p.u, p.v, p.d, x.x, x.y, x.z, q.u, q.v, q.d, r.0
        );
    }

    // Zero disparity has no finite depth.
    let bad = JointSetUvd(vec![Uvd::new(10.0, 10.0, 0.0)]);
    match uvd_to_xyz(&rig, &bad) {
        Err(e) => println!("d = 0: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
