use piezohomog::fem::{self, prepare, solve_prepared};
use piezohomog::{grid, materials};
use std::time::Instant;

#[test]
#[ignore]
fn bench_solvers() {
    let pzt = materials::from_transversely_isotropic(&materials::pzt5_params()).unwrap();
    let poly = materials::from_transversely_isotropic(&materials::polymer_params()).unwrap();

    for n in [16usize, 32] {
        let cell = grid::build_fiber_cell(n, 0.3125, pzt.clone(), poly.clone()).unwrap();
        let g = cell.grid();
        let (mats, slots) = cell.material_slots().unwrap();

        // Dirichlet path
        let skip_direct = n > 24;
        let t0 = Instant::now();
        let mut shape = grid::DofMap::all_free(g.node_count());
        for comp in 0..4 {
            for face in grid::Face::ALL {
                shape.set_face_dirichlet(&g, face, comp, 0.0).unwrap();
            }
        }
        let op = fem::AssembledOperator::new(g.clone(), &mats, slots.clone(), shape.clone())
            .unwrap();
        let t_asm = t0.elapsed();
        if !skip_direct {
        let t0 = Instant::now();
        let handle = prepare(&op).unwrap();
        let t_factor = t0.elapsed();
        // one representative backsolve with an affine boundary
        let mut vals = grid::DofMap::all_free(g.node_count());
        for comp in 0..4 {
            for face in grid::Face::ALL {
                vals.set_face_dirichlet(&g, face, comp, 0.5).unwrap();
            }
        }
        let t0 = Instant::now();
        let f = solve_prepared(&op, &handle, &vals, None, 1e-10).unwrap();
        let t_solve = t0.elapsed();
        println!(
            "n={n} dirichlet: asm {:?} factor {:?} solve {:?} (|f|={:.3e})",
            t_asm,
            t_factor,
            t_solve,
            f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        );
        }

        // periodic path
        let dofs = grid::periodic_pairs(&cell).unwrap();
        let t0 = Instant::now();
        let op = fem::AssembledOperator::new(g.clone(), &mats, slots.clone(), dofs.clone())
            .unwrap();
        let handle = prepare(&op).unwrap();
        let t_prep = t0.elapsed();
        // representative load: manufactured field at natural scales
        let npa = g.nodes_per_axis();
        let mut z = vec![0.0; 4 * g.node_count()];
        for k in 0..npa[2] {
            for j in 0..npa[1] {
                for i in 0..npa[0] {
                    let node = g.node_index(i, j, k);
                    let t = 2.0 * std::f64::consts::PI
                        * (i as f64 + 2.0 * j as f64 + 3.0 * k as f64)
                        / n as f64;
                    for c in 0..4 {
                        let amp = if c == 3 { 1.0e9 } else { 1.0 };
                        z[4 * node + c] = amp * (t + 0.7 * c as f64).sin();
                    }
                }
            }
        }
        let mut b = vec![0.0; z.len()];
        op.constrained_apply(&z, &mut b);
        let t0 = Instant::now();
        let f = solve_prepared(&op, &handle, &dofs, Some(&b), 1e-10).unwrap();
        let t_solve = t0.elapsed();
        println!(
            "n={n} periodic: prep {:?} solve {:?} (|f|={:.3e})",
            t_prep,
            t_solve,
            f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        );
    }
}

#[test]
#[ignore]
fn bench_apply() {
    let pzt = materials::from_transversely_isotropic(&materials::pzt5_params()).unwrap();
    let poly = materials::from_transversely_isotropic(&materials::polymer_params()).unwrap();
    let cell = grid::build_fiber_cell(32, 0.3125, pzt, poly).unwrap();
    let g = cell.grid();
    let (mats, slots) = cell.material_slots().unwrap();
    let dofs = grid::periodic_pairs(&cell).unwrap();
    let op = fem::AssembledOperator::new(g.clone(), &mats, slots, dofs).unwrap();
    let nd = op.dof_count();
    let x: Vec<f64> = (0..nd).map(|i| ((i * 37) % 1000) as f64 / 1000.0).collect();
    let mut y = vec![0.0; nd];
    // warm
    op.raw_apply(&x, &mut y);
    let mut best = f64::INFINITY;
    for _ in 0..10 {
        let t = Instant::now();
        op.raw_apply(&x, &mut y);
        best = best.min(t.elapsed().as_secs_f64());
    }
    println!("raw_apply 32^3: best {:.1} ms (|y|={:.3e})", best * 1e3,
        y.iter().fold(0.0f64, |a, v| a.max(v.abs())));
}
