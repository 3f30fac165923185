use selfjudge_core::corpus::ReferenceChain;

fn main() {
    let seed = std::env::args().nth(1).map(|s| s.parse::<u64>().unwrap());
    if seed.is_none() {
        let mut best = (0, 0.0);
        for seed in 0..2000u64 {
            let pi = ReferenceChain::with_seed(seed).stationary();
            let min = pi.iter().cloned().fold(1.0, f64::min);
            if min > best.1 {
                best = (seed, min);
            }
        }
        println!("best seed {} min pi {:.4}", best.0, best.1);
        return;
    }
    let chain = ReferenceChain::with_seed(seed.unwrap());
    let pi = chain.stationary();
    for (t, pt) in pi.iter().enumerate() {
        let row: Vec<String> = chain
            .row(t)
            .probs()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.01)
            .map(|(i, p)| format!("{i}:{p:.2}"))
            .collect();
        println!("{t:2} pi={pt:.4} -> {}", row.join(" "));
    }
    println!("entropy rate {:.4}", chain.entropy_rate());
}
