use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use warpnet::cli::verify::schedule_violation;
use warpnet::training::{batch_sizes, num_batches, MtlSchedule};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn epochs_respect_the_invariants(
        sizes in prop::collection::vec(1usize..400, 1..6),
        batch in 1usize..80,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(schedule_violation(&sizes, batch, &mut rng), None);
    }

    #[test]
    fn batch_sizes_are_balanced(n in 1usize..2000, batch in 1usize..100) {
        let sizes = batch_sizes(n, batch);
        prop_assert_eq!(sizes.len(), num_batches(n, batch));
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi <= batch && hi - lo <= 1);
    }
}

#[test]
fn iterations_follow_the_largest_task() {
    let s = MtlSchedule::new(&[120, 40], 40).unwrap();
    assert_eq!(s.n_iter, 3);
    assert_eq!(s.n_d, vec![3, 1]);
}

#[test]
fn task_order_is_uniform_over_permutations() {
    // three tasks of one batch each: every iteration is one permutation
    let mut s = MtlSchedule::new(&[40, 40, 40], 40).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut counts = [0usize; 6];
    let iterations = 10_000;
    for _ in 0..iterations {
        let plan = s.epoch(&mut rng);
        let order = [plan[0].task, plan[1].task, plan[2].task];
        counts[perms.iter().position(|p| *p == order).unwrap()] += 1;
    }
    let expected = iterations as f64 / 6.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(5.0).unwrap().cdf(stat);
    assert!(p > 0.01, "counts {counts:?}, chi2 {stat:.2}, p {p:.4}");
}
