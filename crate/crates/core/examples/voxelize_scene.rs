// Voxelize a point cloud, index its coordinates and build a 3x3x3 neighbor map.

use lsk3d::voxel::{build_index, devoxelize, gather_neighbors, kernel_offsets, voxelize, Coord3};

pub fn run_example() -> lsk3d::Result<()> {
    // two points share a voxel, one sits alone
    let points = [[0.01, 0.02, 0.03], [0.04, 0.01, 0.02], [0.12, 0.0, 0.0]];
    let feats = [1.0, 3.0, 5.0];
    let (tensor, map) = voxelize(&points, &feats, 1, 0.05)?;
    println!("{} points -> {} voxels", points.len(), tensor.len());
    for (c, f) in tensor.coords().iter().zip(tensor.feats()) {
        println!("  voxel {:?} mean feature {f}", (c.x, c.y, c.z));
    }

    let index = build_index(&tensor)?;
    assert_eq!(index.lookup(Coord3::new(2, 0, 0)), Some(1));
    let offsets = kernel_offsets(3, 3, 3)?;
    let nmap = gather_neighbors(&index, tensor.coords(), &offsets);
    println!("3x3x3 neighbor pairs: {} (center slot {})", nmap.num_pairs(), offsets.center_slot());

    let back: Vec<f32> = devoxelize(&tensor, &map)?;
    println!("per-point features after devoxelization: {back:?}");
    assert_eq!(back, vec![2.0, 2.0, 5.0]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
