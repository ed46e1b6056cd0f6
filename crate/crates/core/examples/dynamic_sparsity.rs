// Spatial-wise dynamic sparsity: repeated magnitude pruning and random
// regrowth inside each kernel group, keeping every group's budget fixed.

use lsk3d::conv::{partition_groups, GroupedSparseKernel};
use lsk3d::sds::{er_init_mask, sds_update};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lsk3d::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let partition = partition_groups([9; 3], [vec![3, 3, 3], vec![3, 3, 3], vec![3, 3, 3]])?;
    let d = 8;
    let (mask, _) = er_init_mask(d, d, &partition, 0.4, &mut rng);
    let weights = (0..partition.num_slots() * d * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let mut kernel = GroupedSparseKernel::with_mask(partition, d, d, weights, mask)?;
    let budget = kernel.group_active().to_vec();

    for round in 1..=5 {
        let delta = sds_update(&mut kernel, 0.3, &mut rng);
        // pretend training moved the regrown weights away from zero
        let (w, m) = kernel.weights_mut();
        for e in &delta.grown {
            debug_assert!(m[e.index]);
            w[e.index] = rng.gen_range(-0.1..0.1);
        }
        println!("round {round}: pruned {}, regrown {}, sparsity {:.4}", delta.eliminated.len(), delta.grown.len(), kernel.sparsity());
        assert_eq!(kernel.group_active(), &budget[..]);
        assert!(kernel.is_consistent());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> lsk3d::Result<()> {
    run_example()
}
