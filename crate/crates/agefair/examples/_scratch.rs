use agefair::validate::{bianchi_collision_probability, measure_collision_probability};
fn main() {
    for n in [2u32, 5, 10] {
        let a = bianchi_collision_probability(n, 32, 3);
        let t = std::time::Instant::now();
        let m = measure_collision_probability(n, 32, 3, 1_000_000, 7);
        let p = m.collision_probability();
        println!("n={n}: analytic={a:.5} measured={p:.5} rel={:.4} slots={} attempts={} ({:?})",
            (p - a).abs() / a, m.micro_slots, m.attempts, t.elapsed());
    }
}
