//! Small, fast comparisons of each stage against its brute-force oracle.

use anyhow::Result;
use rand::Rng;

use mixrec_core::assign::{assign_original_images, brute_force_root, dedupe_parallel_edges};
use mixrec_core::data::{generate_dataset, stream_rng, SplitSpec, Stream};
use mixrec_core::gram::{gram_extract, PrivateGram};
use mixrec_core::graph::SimpleGraph;
use mixrec_core::hardness::{completeness_campaign, reduce_maxcut, verify_soundness_rounding};
use mixrec_core::matrix::Matrix;
use mixrec_core::oracle::{exact_gram, exhaustive_public_support, naive_sign_solver};
use mixrec_core::publearn::{build_moment_matrix, learn_public_matrix, PowerIterationConfig, DEFAULT_CENTER};
use mixrec_core::signsolve::solve_pixel;

fn report(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

pub fn run(seed: u64) -> Result<bool> {
    let mut all = true;

    let split = SplitSpec::new(8, 4, 2, 2)?;
    let (x, w, y) = generate_dataset(&split, 20_000, 8, seed)?;
    let gram = gram_extract(&y)?;
    let exact = exact_gram(&w).rounded;
    all &= report("gram", gram.rounded == exact, format!("m = {}, exact = {}", w.m(), gram.rounded == exact));

    let x_pub = x.public(&split);
    let (w_pub, supports) = learn_public_matrix(&y, &x_pub, PowerIterationConfig::default(), seed)?;
    let mut agree = 0;
    for (i, s) in supports.iter().enumerate() {
        let moment = build_moment_matrix(y.y.row(i), &x_pub, DEFAULT_CENTER)?;
        if exhaustive_public_support(&moment, split.k_pub).map_or(false, |o| o == *s) {
            agree += 1;
        }
    }
    let truth = w.w_pub();
    all &= report(
        "public",
        agree == supports.len() && w_pub == truth,
        format!("{agree}/{} agree with exhaustive search", supports.len()),
    );

    let mut rng = stream_rng(seed, Stream::Trials);
    let mut assign_ok = 0;
    let cases = 20;
    for _ in 0..cases {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=8);
        let edges: Vec<(usize, usize)> = (0..m)
            .map(|_| {
                let a = rng.gen_range(0..n);
                let b = (a + rng.gen_range(1..n)) % n;
                (a, b)
            })
            .collect();
        let mut inc = Matrix::zeros(m, n);
        for (r, &(a, b)) in edges.iter().enumerate() {
            inc.set(r, a, 1.0);
            inc.set(r, b, 1.0);
        }
        let g = PrivateGram::from_incidence(&inc)?;
        let recovered = assign_original_images(&g, n)?;
        let (line, _) = dedupe_parallel_edges(&g)?;
        let roots = brute_force_root(&line, n)?;
        if PrivateGram::from_incidence(&recovered.w_priv)? == g && roots.contains(&recovered.graph.canonical()) {
            assign_ok += 1;
        }
    }
    all &= report("assign", assign_ok == cases, format!("{assign_ok}/{cases} consistent with brute force"));

    let mut solve_ok = 0;
    let cases = 50;
    for _ in 0..cases {
        let (m, n) = (rng.gen_range(2..=8), rng.gen_range(1..=4));
        let w = Matrix::from_fn(m, n, |_, _| rng.gen_range(0..2) as f64);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y_pub: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m)
            .map(|i| (w.row(i).iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + y_pub[i]).abs())
            .collect();
        let fast = solve_pixel(&w, &y_pub, &y, 1e-9)?;
        let slow = naive_sign_solver(&w, &y_pub, &y, 1e-9)?;
        let same = fast.solutions.len() == slow.len()
            && slow.iter().all(|s| {
                fast.solutions
                    .iter()
                    .any(|f| f.iter().zip(s).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + b.abs())))
            });
        solve_ok += same as usize;
    }
    all &= report("solve", solve_ok == cases, format!("{solve_ok}/{cases} solution sets match"));

    let k4 = SimpleGraph::complete(4);
    let complete = completeness_campaign(std::slice::from_ref(&k4), 10)?;
    let sound = verify_soundness_rounding(&reduce_maxcut(&k4, 100)?, &[0.0; 4])?;
    all &= report(
        "hardness",
        complete.failures == 0 && sound.holds,
        format!("K4: {} optimal cuts checked, zero-point gap {:.3} <= {:.3}", complete.cuts_checked, sound.gap, sound.bound),
    );
    Ok(all)
}
