use bkd_core::data::{
    gen_blobs, inject_noise, load_cifar10_binary, write_cifar10_binary, Dataset, NoiseKind,
    NoiseSpec, SplitTag,
};
use bkd_core::distillation::{agreement, detect_tipping_point, student_loss, MaxProbTrace};
use bkd_core::experiment::{classify_noisy, detection_metrics, ThresholdChoice};
use bkd_core::nn::{softmax, Matrix, ProbBatch};
use bkd_core::noise::{assign_buckets, bucket_of, otsu_split, AlphaSchedule};
use bkd_core::robust::sharpen;
use proptest::prelude::*;

fn logits_strategy(max_rows: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 2usize..=10).prop_flat_map(|(rows, cols)| {
        prop::collection::vec(-30.0f64..30.0, rows * cols)
            .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
    })
}

fn labelled_logits() -> impl Strategy<Value = (Matrix, Matrix, Vec<usize>)> {
    (1usize..=16, 2usize..=10).prop_flat_map(|(rows, cols)| {
        (
            prop::collection::vec(-10.0f64..10.0, rows * cols),
            prop::collection::vec(-10.0f64..10.0, rows * cols),
            prop::collection::vec(0..cols, rows),
        )
            .prop_map(move |(t, s, y)| {
                (
                    Matrix::from_vec(rows, cols, t).unwrap(),
                    Matrix::from_vec(rows, cols, s).unwrap(),
                    y,
                )
            })
    })
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter_map("all zero", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-6).then(|| w.iter().map(|x| x / total).collect())
    })
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_rows_are_distributions(logits in logits_strategy(16)) {
        let p = softmax(&logits);
        for row in p.iter_rows() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn softmax_ignores_constant_shift(logits in logits_strategy(8), shift in -50.0f64..50.0) {
        let mut shifted = logits.clone();
        shifted.as_mut_slice().iter_mut().for_each(|z| *z += shift);
        let (a, b) = (softmax(&logits), softmax(&shifted));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn student_loss_is_blind_to_the_label((t, s, y) in labelled_logits(), bump in -100.0f64..100.0) {
        let (loss, grad) = student_loss(&t, &s, &y).unwrap();
        for (i, &label) in y.iter().enumerate() {
            prop_assert_eq!(grad.get(i, label), 0.0);
        }
        let (mut t2, mut s2) = (t.clone(), s.clone());
        for (i, &label) in y.iter().enumerate() {
            t2.set(i, label, t.get(i, label) + bump);
            s2.set(i, label, s.get(i, label) - bump);
        }
        prop_assert_eq!(student_loss(&t2, &s, &y).unwrap().0, loss);
        prop_assert_eq!(student_loss(&t, &s2, &y).unwrap().0, loss);
    }

    #[test]
    fn agreement_with_uniform_student_is_the_teacher(logits in logits_strategy(8)) {
        let teacher = softmax(&logits);
        let cols = logits.cols();
        let uniform = ProbBatch::new(
            Matrix::from_vec(logits.rows(), cols, vec![1.0 / cols as f64; logits.rows() * cols]).unwrap(),
        ).unwrap();
        let pa = agreement(&teacher, &uniform).unwrap();
        for (a, t) in pa.as_slice().iter().zip(teacher.as_slice()) {
            prop_assert!((a - t).abs() <= 1e-12);
        }
    }

    #[test]
    fn agreement_is_symmetric_and_normalised(a in logits_strategy(8)) {
        let mut b = a.clone();
        b.as_mut_slice().iter_mut().for_each(|z| *z = -*z * 0.5);
        let (pt, ps) = (softmax(&a), softmax(&b));
        let ab = agreement(&pt, &ps).unwrap();
        let ba = agreement(&ps, &pt).unwrap();
        for row in ab.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        for (x, y) in ab.as_slice().iter().zip(ba.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn sharpening_concentrates(p in (2usize..=10).prop_flat_map(distribution), alpha in 0.0f64..=1.0) {
        let out = sharpen(&p, alpha).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(entropy(&out) <= entropy(&p) + 1e-12);
        let argmax = |v: &[f64]| {
            let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.iter().position(|&x| x == best).unwrap()
        };
        let top = argmax(&p);
        prop_assert!(out[top] >= out.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 1e-15);
        for (&x, &y) in p.iter().zip(&out) {
            prop_assert_eq!(x == 0.0, y == 0.0);
        }
    }

    #[test]
    fn sharpen_without_alpha_is_identity(p in (2usize..=10).prop_flat_map(distribution)) {
        let out = sharpen(&p, 0.0).unwrap();
        for (x, y) in p.iter().zip(&out) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_orders_class_means(values in prop::collection::vec(0.0f64..=1.0, 2..400)) {
        if let Ok(split) = otsu_split(&values, 0.001) {
            prop_assert!(split.mu1 <= split.s && split.s < split.mu2);
            prop_assert_eq!(split.n1 + split.n2, values.len());
            prop_assert_eq!(split.n1, values.iter().filter(|&&v| v <= split.s).count());
        }
    }

    #[test]
    fn buckets_are_monotone_in_agreement(values in prop::collection::vec(0.0f64..=1.0, 2..300)) {
        let Ok(split) = otsu_split(&values, 0.001) else { return Ok(()) };
        let schedule = AlphaSchedule::default();
        let assignment = assign_buckets(&values, &split, &schedule);
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        for pair in order.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            prop_assert!(assignment.buckets[lo] >= assignment.buckets[hi]);
            prop_assert!(assignment.alphas[lo] >= assignment.alphas[hi]);
        }
        prop_assert_eq!(bucket_of(split.mu2, &split), 1);
        prop_assert_eq!(bucket_of(split.s, &split), 2);
    }

    #[test]
    fn higher_thresholds_flag_supersets(values in prop::collection::vec(0.0f64..=1.0, 2..300)) {
        let Ok(split) = otsu_split(&values, 0.001) else { return Ok(()) };
        let mu1 = classify_noisy(&values, &split, ThresholdChoice::Mu1);
        let s = classify_noisy(&values, &split, ThresholdChoice::S);
        let mu2 = classify_noisy(&values, &split, ThresholdChoice::Mu2);
        prop_assert!(mu1.iter().all(|i| s.contains(i)));
        prop_assert!(s.iter().all(|i| mu2.contains(i)));
    }

    #[test]
    fn detection_metrics_are_bounded(
        predicted in prop::collection::btree_set(0usize..50, 0..50),
        truth in prop::collection::btree_set(0usize..50, 0..50),
    ) {
        let p: Vec<usize> = predicted.into_iter().collect();
        let t: Vec<usize> = truth.into_iter().collect();
        let m = detection_metrics(&p, &t, 50);
        for v in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
    }

    #[test]
    fn online_detector_matches_offline(
        values in prop::collection::vec(0.01f64..=1.0, 0..40),
        k in 1usize..5,
    ) {
        let mut trace = MaxProbTrace::new(k).unwrap();
        let mut first = None;
        for (i, &v) in values.iter().enumerate() {
            let online = trace.push(v).unwrap();
            if first.is_none() {
                first = online;
            }
            prop_assert_eq!(online, first);
            prop_assert_eq!(detect_tipping_point(&values[..=i], k).unwrap(), first);
        }
        if let Some(tp) = first {
            prop_assert_eq!(tp.detected_at, tp.epoch + k);
            let window = &values[tp.epoch - k..=tp.epoch + k];
            prop_assert!(window.iter().all(|&v| values[tp.epoch] >= v));
        }
    }

    #[test]
    fn symmetric_noise_flips_exact_count(
        n in 1usize..400,
        classes in 2usize..12,
        rate in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let spec = NoiseSpec { kind: NoiseKind::Symmetric { rate }, seed };
        let (noisy, mask) = inject_noise(&labels, classes, &spec).unwrap();
        let expected = (rate * n as f64).round() as usize;
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), expected);
        for i in 0..n {
            prop_assert_eq!(mask[i], noisy[i] != labels[i]);
        }
        prop_assert_eq!(inject_noise(&labels, classes, &spec).unwrap().0, noisy);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cifar_round_trip(pixels in prop::collection::vec(any::<u8>(), 3072 * 3), labels in prop::collection::vec(0usize..10, 3)) {
        let features: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
        let data = Dataset::new(
            Matrix::from_vec(3, 3072, features).unwrap(),
            labels.clone(),
            Some(labels.clone()),
            10,
            SplitTag::Train,
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        write_cifar10_binary(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        prop_assert_eq!(bytes.len(), 3 * 3073);
        let back = load_cifar10_binary(&[&path], SplitTag::Train).unwrap();
        prop_assert_eq!(back.noisy_labels(), &labels[..]);
        prop_assert_eq!(back.features().as_slice(), data.features().as_slice());
    }

    #[test]
    fn blobs_are_reproducible(seed in any::<u64>()) {
        let a = gen_blobs(3, 5, 4, 1.0, 0.5, seed).unwrap();
        let b = gen_blobs(3, 5, 4, 1.0, 0.5, seed).unwrap();
        prop_assert_eq!(a.features().as_slice(), b.features().as_slice());
        prop_assert_eq!(a.noisy_labels(), b.noisy_labels());
    }
}
