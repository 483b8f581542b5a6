use provfilter_demo::{Demo, HEIGHT, WIDTH};

#[test]
fn same_seed_same_gallery() {
    let a = Demo::new(6, 4, "hkmeans").unwrap();
    let b = Demo::new(6, 4, "hkmeans").unwrap();
    assert_eq!(a.stats().split(",\"build_seconds\"").next(), b.stats().split(",\"build_seconds\"").next());
    for i in 0..6 {
        assert_eq!(a.image_id(i), b.image_id(i));
        assert_eq!(a.image_rgba(i), b.image_rgba(i));
    }
    let c = Demo::new(6, 5, "hkmeans").unwrap();
    assert_ne!(a.image_rgba(0), c.image_rgba(0));
}

/// Mean absolute difference between `a` at (ax, ay) and `b` at (bx, by) over an n-square.
fn region_diff(a: &[u8], (ax, ay): (usize, usize), b: &[u8], (bx, by): (usize, usize), n: usize) -> f64 {
    let mut sum = 0u64;
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                let pa = a[((ay + y) * WIDTH + ax + x) * 4 + c];
                let pb = b[((by + y) * WIDTH + bx + x) * 4 + c];
                sum += pa.abs_diff(pb) as u64;
            }
        }
    }
    sum as f64 / (n * n * 3) as f64
}

#[test]
fn patch_lands_where_clicked() {
    let mut d = Demo::new(4, 9, "brute").unwrap();
    let (host, donor) = (d.image_rgba(0), d.image_rgba(1));
    let q = d.compose(0, 1, 20, 20, 24).unwrap();
    let donor_center = ((WIDTH - 24) / 2, (HEIGHT - 24) / 2);
    assert!(region_diff(&q, (8, 8), &donor, donor_center, 24) < 6.0);
    let far = (WIDTH - 40, HEIGHT - 40);
    assert!(region_diff(&q, far, &host, far, 32) < 6.0);
    assert!(region_diff(&q, (8, 8), &host, (8, 8), 24) > 6.0);
}
