// Erdos-Renyi style mask initialization: the zero budget of each spatial group
// is scaled by a factor that favours larger layers.

use lsk3d::conv::partition_groups;
use lsk3d::sds::{er_init_mask, er_scale, er_zero_counts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lsk3d::Result<()> {
    let (d, s) = (64, 0.4);
    let partition = partition_groups([9; 3], [vec![3, 3, 3], vec![3, 3, 3], vec![3, 3, 3]])?;
    let scale = er_scale(d, d, [3, 3, 3]);
    println!("groups: {}, scale = {scale:.6}", partition.num_groups());
    let (zeros, warnings) = er_zero_counts(d, d, &partition, s);
    assert!(warnings.is_empty());
    let total = (partition.num_slots() * d * d) as f64;
    let target = s * scale * total;
    let realized: usize = zeros.iter().sum();
    println!("target zeros {target:.1}, realized {realized} ({:.4} of dense)", realized as f64 / total);
    assert!((realized as f64 - target).abs() <= 1.0);

    let (mask, _) = er_init_mask(d, d, &partition, s, &mut ChaCha8Rng::seed_from_u64(0));
    let nnz = mask.iter().filter(|&&m| m).count();
    println!("nonzero fraction {:.4} (1 - s*scale = {:.4})", nnz as f64 / total, 1.0 - s * scale);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
