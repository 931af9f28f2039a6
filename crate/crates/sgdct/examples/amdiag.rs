// temporary diagnostic for american_train convergence (not shipped)
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sgdct::amopt::*;
use sgdct::approx::{Activation, ShallowNet};
use sgdct::core::LearningRateSchedule;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let alpha0: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let cap: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e3);
    let mode = args.get(4).map(|s| s.as_str()).unwrap_or("bs1");
    let hidden: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(50);

    let spec = match mode {
        "bach0" => OptionSpec {
            d: 1,
            dynamics: Dynamics::Bachelier,
            r: 0.0,
            dividend: 0.0,
            sigma: 0.0,
            rho: 0.0,
            strike: 1.0,
            maturity: 2.0,
            payoff: PayoffKind::ArithmeticBasketCall,
            x0: 1.5,
        },
        _ => OptionSpec {
            d: 1,
            dynamics: Dynamics::BlackScholes,
            r: 0.0,
            dividend: 0.02,
            sigma: 0.25,
            rho: 0.75,
            strike: 1.0,
            maturity: 2.0,
            payoff: PayoffKind::ArithmeticBasketCall,
            x0: 1.0,
        },
    };
    let oracle = binomial_american(
        spec.x0,
        spec.strike,
        spec.r,
        spec.dividend,
        spec.sigma,
        spec.maturity,
        5000,
        OptionKind::Call,
    );
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let q0 = QSurface::new(ShallowNet::init_uniform(
        1 + spec.d,
        50,
        1,
        Activation::Tanh,
        &mut rng,
    ))
    .unwrap();
    let sched = LearningRateSchedule::capped_inverse(alpha0, cap).unwrap();

    let mut q = q0;
    let chunk = n_iters / 10;
    for c in 0..10 {
        let out = american_train(&spec, q, chunk, &sched, &mut rng).unwrap();
        q = out.q;
        let price = q.eval(0.0, &vec![spec.x0; spec.d]);
        // probe the surface
        let qt = q.eval(spec.maturity, &vec![spec.x0; spec.d]);
        let q_itm = q.eval(spec.maturity, &vec![1.4; spec.d]);
        let mut r2 = ChaCha12Rng::seed_from_u64(99);
        let (am, se, eu, _) = evaluate_stopping(&q, &spec, 4000, &mut r2).unwrap();
        println!(
            "iter {:>7}: Q(0,x0)={:.5} oracle={:.5} | Q(T,x0)={:.4} g=0 | Q(T,1.4)={:.4} g=0.4 | MC stop am={:.5}±{:.5} eu={:.5}",
            (c + 1) * chunk,
            price,
            oracle,
            qt,
            q_itm,
            am,
            se,
            eu
        );
    }
}
