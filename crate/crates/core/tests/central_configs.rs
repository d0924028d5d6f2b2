mod common;

use collision_spin::central::{
    cc_multiplier, cc_residual_full, classify, find_cc, multistart, MultistartOptions, NewtonOptions,
};
use collision_spin::geometry::to_chart;
use collision_spin::MassSystem;
use common::{equilateral, euler_value, normalized_potential};

#[test]
fn equal_mass_lagrange_restpoint() {
    let sys = MassSystem::equal(3).unwrap();
    let q = equilateral();
    // direct evaluation at the equilateral triangle
    let v_direct = normalized_potential(&[1.0; 3], &q);
    assert!((v_direct - 3.0).abs() < 1e-14);
    let guess = to_chart(&sys.from_positions(&q).unwrap()).unwrap().s;
    let perturbed: Vec<_> = guess.iter().map(|s| s * 1.1 + common::c(0.05, -0.02)).collect();
    let cc = find_cc(&sys, &perturbed, &NewtonOptions::default()).unwrap();
    assert!((cc.value - 3.0).abs() < 1e-10);
    assert!((cc.v0 + 6f64.sqrt()).abs() < 1e-10);
    for c in &cc.hessian_spectrum {
        assert!((c - 4.5).abs() < 1e-9);
    }
    let class = classify(&cc, 1e-8);
    assert!(class.nondegenerate && class.morse_index == 0);
    assert!(class.plus_unstable && class.nonreal_unstable);
}

#[test]
fn central_configurations_satisfy_the_unreduced_equation() {
    let sys = MassSystem::new(vec![1.0, 2.0, 3.0]).unwrap();
    let cat = multistart(
        &sys,
        &MultistartOptions {
            starts: 400,
            ..MultistartOptions::default()
        },
    );
    for cc in &cat {
        let u = collision_spin::geometry::from_chart(&collision_spin::geometry::ShapePoint {
            r: 1.0,
            theta: 0.0,
            s: cc.s0.clone(),
        });
        let q = sys.positions(&u);
        let lambda = cc_multiplier(&sys, &q).unwrap();
        let res = cc_residual_full(&sys, &q, lambda).unwrap();
        let norm: f64 = res.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "residual {norm:e}");
        assert!((normalized_potential(sys.masses(), &q) - cc.value).abs() < 1e-10);
    }
}

#[test]
fn euler_values_match_golden_section_oracle() {
    for masses in [vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0], vec![0.3, 1.0, 5.0]] {
        let sys = MassSystem::new(masses.clone()).unwrap();
        let cat = multistart(
            &sys,
            &MultistartOptions {
                starts: 400,
                ..MultistartOptions::default()
            },
        );
        let mut oracle: Vec<f64> = [[1, 0, 2], [0, 1, 2], [0, 2, 1]]
            .iter()
            .map(|o| euler_value(&masses, *o))
            .collect();
        oracle.sort_by(f64::total_cmp);
        // collinear CCs have Morse index 1 and sit on the real axis of the chart
        let mut found: Vec<f64> = cat.iter().filter(|cc| cc.morse_index() == 1).map(|cc| cc.value).collect();
        found.sort_by(f64::total_cmp);
        assert_eq!(found.len(), 3, "masses {masses:?}");
        for (a, b) in found.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // and exactly two Lagrange minima with the equilateral value
        let lagrange = normalized_potential(&masses, &equilateral());
        let minima: Vec<_> = cat.iter().filter(|cc| cc.morse_index() == 0).collect();
        assert_eq!(minima.len(), 2);
        assert!(minima.iter().all(|cc| (cc.value - lagrange).abs() < 1e-10));
    }
}

#[test]
fn equal_mass_euler_value() {
    let v = euler_value(&[1.0; 3], [1, 0, 2]);
    // middle body at the center, outer pair at +-1: U = 2.5, I = 2
    assert!((v - 2.5 * 2f64.sqrt()).abs() < 1e-12);
}
