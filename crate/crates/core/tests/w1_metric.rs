use chaosrl::diagnostics::{w1_empirical, w1_unsorted};
use chaosrl::RngStream;

fn sample(stream: &mut RngStream, n: usize) -> Vec<f64> {
    let shift = stream.uniform_in(-2.0, 2.0);
    let mut v: Vec<f64> = (0..n).map(|_| shift + stream.normal()).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn triangle_inequality_over_ten_thousand_triples() {
    let mut stream = RngStream::new(7);
    for _ in 0..10_000 {
        let n = 1 + stream.below(12);
        let (x, y, z) = (sample(&mut stream, n), sample(&mut stream, n), sample(&mut stream, n));
        let xz = w1_empirical(&x, &z).unwrap();
        let xy = w1_empirical(&x, &y).unwrap();
        let yz = w1_empirical(&y, &z).unwrap();
        assert!(xz <= xy + yz + 1e-12, "{xz} > {xy} + {yz}");
    }
}

#[test]
fn symmetric_exactly_and_zero_only_for_identical_samples() {
    let mut stream = RngStream::new(8);
    for _ in 0..2000 {
        let n = 1 + stream.below(20);
        let (x, y) = (sample(&mut stream, n), sample(&mut stream, n));
        assert_eq!(w1_empirical(&x, &y).unwrap(), w1_empirical(&y, &x).unwrap());
        assert_eq!(w1_empirical(&x, &x).unwrap(), 0.0);
        assert!(w1_empirical(&x, &y).unwrap() > 0.0);
        let mut shuffled = x.clone();
        stream.shuffle(&mut shuffled);
        assert_eq!(w1_unsorted(&shuffled, &x).unwrap(), 0.0);
    }
}
