use std::collections::HashSet;
use std::path::Path;

use metastress::tasks::*;
use proptest::prelude::*;

fn pool() -> ClassPool {
    make_synthetic_pool(&SyntheticPoolSpec::default(), 17).unwrap()
}

fn check_episode(pool: &ClassPool, split: &MetaSplit, part: SplitPart, e: &Episode) {
    let (n, k, q) = (e.n, e.k, e.q);
    assert_eq!(e.support_x.shape(), &[n * k, pool.dim()]);
    assert_eq!(e.query_x.shape(), &[n * q, pool.dim()]);
    assert_eq!(e.support_y.len(), n * k);
    assert_eq!(e.query_y.len(), n * q);

    let classes: HashSet<usize> = e.class_ids.iter().copied().collect();
    assert_eq!(classes.len(), n, "classes repeat");
    let allowed: HashSet<usize> = split.part(part).iter().copied().collect();
    assert!(classes.is_subset(&allowed), "class outside the split part");

    for label in 0..n {
        assert_eq!(e.support_y.iter().filter(|&&y| y == label).count(), k);
        assert_eq!(e.query_y.iter().filter(|&&y| y == label).count(), q);
    }
    let support: HashSet<(usize, usize)> = e.support_ids.iter().copied().collect();
    let query: HashSet<(usize, usize)> = e.query_ids.iter().copied().collect();
    assert_eq!(support.len(), n * k, "support repeats an instance");
    assert_eq!(query.len(), n * q, "query repeats an instance");
    assert!(support.is_disjoint(&query), "support and query overlap");

    let dim = pool.dim();
    for (row, (&(cid, inst), &y)) in e.support_ids.iter().zip(&e.support_y).enumerate() {
        assert_eq!(e.class_ids[y], cid);
        assert_eq!(&e.support_x.data()[row * dim..(row + 1) * dim], pool.class(cid).instance(dim, inst));
    }
    for (row, (&(cid, inst), &y)) in e.query_ids.iter().zip(&e.query_y).enumerate() {
        assert_eq!(e.class_ids[y], cid);
        assert_eq!(&e.query_x.data()[row * dim..(row + 1) * dim], pool.class(cid).instance(dim, inst));
    }
}

#[test]
fn thousand_episodes_respect_the_sampling_contract() {
    let pool = pool();
    let split = split_classes(pool.len(), &SplitSpec::default_for(pool.len()), 3).unwrap();
    let settings = [(5, 1, 15), (5, 5, 15), (20, 1, 5), (2, 3, 4), (10, 2, 8)];
    let parts = [SplitPart::Train, SplitPart::Val, SplitPart::Test];
    for i in 0..1000u64 {
        let (n, k, q) = settings[i as usize % settings.len()];
        let part = parts[i as usize % parts.len()];
        let seed = derive_seed(99, i);
        let e = sample_episode(&pool, &split, part, n, k, q, seed).unwrap();
        assert_eq!(e.task_id, seed);
        check_episode(&pool, &split, part, &e);
    }
}

#[test]
fn label_assignment_is_a_permutation() {
    // Over many seeds the same class set should appear under different labels.
    let pool = make_synthetic_pool(&SyntheticPoolSpec { num_classes: 10, ..Default::default() }, 1).unwrap();
    let split = MetaSplit { train: vec![0, 1], val: vec![], test: vec![] };
    let mut orders = HashSet::new();
    for s in 0..64 {
        orders.insert(sample_episode(&pool, &split, SplitPart::Train, 2, 1, 1, s).unwrap().class_ids);
    }
    assert_eq!(orders.len(), 2);
}

#[test]
fn episodes_are_reproducible_from_their_seed() {
    let pool = pool();
    let split = split_classes(pool.len(), &SplitSpec::default_for(pool.len()), 3).unwrap();
    for s in 0..50 {
        let a = sample_episode(&pool, &split, SplitPart::Test, 5, 1, 15, s).unwrap();
        let b = sample_episode(&pool, &split, SplitPart::Test, 5, 1, 15, s).unwrap();
        assert_eq!(a, b);
        assert_eq!(Episode::from_dump_json(&a.to_dump_json()).unwrap(), a);
    }
}

#[test]
fn omniglot_sized_pools_get_the_standard_split() {
    let split = split_classes(OMNIGLOT_CLASSES, &SplitSpec::default_for(OMNIGLOT_CLASSES), 0).unwrap();
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (980, 220, 423));
    let all: HashSet<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
    assert_eq!(all.len(), OMNIGLOT_CLASSES);
}

proptest! {
    #[test]
    fn splits_partition_the_pool(size in 3usize..400, train in 0.1f64..0.6, val in 0.05f64..0.3, seed in any::<u64>()) {
        let split = split_classes(size, &SplitSpec::Fractions { train, val }, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..size).collect::<Vec<_>>());
    }

    #[test]
    fn insufficient_classes_are_reported(n in 2usize..30) {
        let pool = make_synthetic_pool(&SyntheticPoolSpec { num_classes: 40, ..Default::default() }, 0).unwrap();
        let split = MetaSplit { train: (0..n - 1).collect(), val: vec![], test: vec![] };
        let err = sample_episode(&pool, &split, SplitPart::Train, n, 1, 1, 0).unwrap_err();
        let is_classes_error = matches!(err, metastress::Error::NotEnoughClasses { .. });
        prop_assert!(is_classes_error);
    }
}

fn write_png(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    image::GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)])).save(path).unwrap();
}

#[test]
fn image_directories_load_as_class_pools() {
    let dir = tempfile::tempdir().unwrap();
    for c in 0..4u32 {
        let class_dir = dir.path().join(format!("char_{c}"));
        std::fs::create_dir(&class_dir).unwrap();
        for i in 0..3u32 {
            write_png(&class_dir.join(format!("{i}.png")), 28, 28, |x, y| ((x * 9 + y * 3 + c * 40 + i) % 256) as u8);
        }
    }
    std::fs::write(dir.path().join("README.txt"), "not a class").unwrap();
    let pool = load_image_pool(dir.path()).unwrap();
    assert_eq!(pool.len(), 4);
    assert_eq!(pool.dim(), IMAGE_SIDE * IMAGE_SIDE);
    assert_eq!(pool.class(2).name, "char_2");
    assert_eq!(pool.class(2).num_instances(pool.dim()), 3);
    let px = pool.class(1).instance(pool.dim(), 2);
    assert_eq!(px[5 * 28 + 7], f64::from(((7 * 9 + 5 * 3 + 40 + 2) % 256) as u8) / 255.0);
    assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));

    let split = MetaSplit { train: vec![0, 1, 2], val: vec![], test: vec![3] };
    let e = sample_episode(&pool, &split, SplitPart::Train, 3, 1, 2, 4).unwrap();
    check_episode(&pool, &split, SplitPart::Train, &e);
    let err = sample_episode(&pool, &split, SplitPart::Train, 2, 2, 2, 4).unwrap_err();
    assert!(err.to_string().contains("char_"), "{err}");
}

#[test]
fn larger_images_are_resampled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.png");
    write_png(&path, 105, 105, |_, _| 255);
    let px = load_image(&path).unwrap();
    assert_eq!(px.len(), IMAGE_SIDE * IMAGE_SIDE);
    assert!(px.iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn broken_images_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let class_dir = dir.path().join("a");
    std::fs::create_dir(&class_dir).unwrap();
    std::fs::write(class_dir.join("bad.png"), b"not a png").unwrap();
    assert!(load_image_pool(dir.path()).is_err());
    assert!(load_image_pool(dir.path().join("missing")).is_err());
}
