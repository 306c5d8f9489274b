use proptest::prelude::*;
use tglab_core::quotient::weil_consistency;
use tglab_core::{Bump, ClosedSubgroup, Element, GroupDescriptor, Window};

fn shifted_bump(center: Element, radius: f64) -> impl Fn(&Element) -> f64 + Sync {
    let b = Bump::triangular(radius);
    move |g: &Element| b.value(&g.try_sub(&center).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weil_on_scaled_integers(c in 0.2f64..3.0, shift in -1.0f64..1.0, r in 0.3f64..1.5) {
        let h = ClosedSubgroup::scaled_integers(c);
        let f = shifted_bump(Element::from_real(vec![shift]), r);
        let w = Window::centered(GroupDescriptor::real(1), 2.6).unwrap();
        let res = weil_consistency(&h, f, &w, 1e-3).unwrap();
        prop_assert!(res.abs() <= 1e-3 * 2.0 * 2.6, "residual {res}");
    }

    #[test]
    fn weil_on_mixed_cyclic(c in 0.3f64..2.0, m in 1i64..3, shift in -0.5f64..0.5) {
        let d = GroupDescriptor::new(1, 1);
        let h = ClosedSubgroup::cyclic(Element::new(vec![c], vec![m])).unwrap();
        let f = shifted_bump(Element::new(vec![shift], vec![0]), 1.5);
        let w = Window::centered(d, 2.5).unwrap();
        let res = weil_consistency(&h, f, &w, 2e-3).unwrap();
        // vol counts the 5 lattice slices of the window
        prop_assert!(res.abs() <= 1e-3 * 5.0 * 5.0, "residual {res}");
    }
}
