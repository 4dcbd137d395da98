//! The enhancement coefficient on a hand-made (complexity, loss) history.
//! Steps that shrink complexity faster than the fitted trend get Φ > 0.

use egdarts::block_search::Enhancer;

fn main() {
    let steps = [
        (1000.0, 2.00),
        (990.0, 1.90),
        (985.0, 1.85),
        (960.0, 1.84),
        (958.0, 1.70),
        (930.0, 1.69),
        (931.0, 1.69),
    ];
    let mut e = Enhancer::new(5, 10.0, 2, true);
    println!("{:>4} {:>8} {:>6} {:>10} {:>10} {:>3} {:>7}", "k", "x", "y", "theta1", "grad", "s", "phi");
    for (k, &(x, y)) in steps.iter().enumerate() {
        let r = e.observe(x, y);
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "{k:>4} {x:>8.1} {y:>6.2} {:>10} {:>10} {:>3} {:>7.3}",
            show(r.theta1),
            show(r.grad_theta),
            r.sigma,
            r.phi
        );
    }
}
