// scratch probe, not part of the crate
use liftdual::analysis::*;
use liftdual::grid::*;
use liftdual::problem::*;
use liftdual::solver::*;
use std::sync::Arc;

fn ac_problem(n_x: usize, n_t: usize, len: f64, lambda: f64) -> Problem {
    let spec = GridSpec::new(&[n_x], n_t, len / n_x as f64, &[0.0], (0.0, 1.0)).unwrap();
    let grid = make_grid(spec, Shape::Rectangle).unwrap();
    Problem::with_constant_u0(Arc::new(AltCaffarelli::new(lambda)), grid, 1.0)
}

fn main() {
    let s2l = |l: f64| (2.0 * l).sqrt();
    for (lambda, n_t, iters) in [
        (4.0f64, 45usize, 16000usize),
        (4.0, 64, 16000),
        (2.0, 64, 16000),
        (2.0, 90, 16000),
        (1.0, 91, 8000),
    ] {
        let exact = (lambda * 2.0).min(2.0 * s2l(lambda));
        let p = ac_problem(256, n_t, 2.0, lambda);
        let mut cfg = SolverConfig::new(Algorithm::Proj, &p);
        cfg.max_iters = iters;
        cfg.tol = 0.0;
        let mut driver = Driver::new(&p, cfg).unwrap();
        let (state, rep) = driver.run(None).unwrap();
        let dual = rep.dual_history.last().unwrap();
        let (mid, _) = mid_value_stats(&p.grid, &state.v_bar);
        let prof = extract_level(&p.grid, &state.v, 0.5);
        let pe = primal_energy(&p, &prof);
        let fb = free_boundary_location(&p.grid, &prof);
        let mut l2 = 0.0;
        let mut l2ref = 0.0;
        for &s in &p.grid.inside_cells {
            let x = p.grid.spec.x_center(0, s);
            let ue = (1.0 - s2l(lambda) * x.min(2.0 - x)).max(0.0);
            l2 += (prof.u[s] - ue).powi(2);
            l2ref += ue * ue;
        }
        println!(
            "lam={lambda} n_t={n_t}: dual={dual:.5} err={:+.3}% gap={:+.4} mid={mid:.4} fb={:?} L2rel={:.4}",
            100.0 * (dual - exact) / exact, pe - dual,
            fb.map(|x| (x * 1000.0).round() / 1000.0),
            (l2 / l2ref.max(1e-30)).sqrt()
        );
    }
}
