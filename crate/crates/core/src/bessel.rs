//! Modified Bessel functions of the second kind for integer orders, enough to
//! evaluate integer-order Matérn correlations.
//!
//! K0 and K1 use the classical polynomial approximations (absolute error
//! below about 2e-7 after scaling); higher orders come from the upward recurrence.

fn bessel_i0(x: f64) -> f64 {
    let y = (x / 3.75).powi(2);
    1.0 + y
        * (3.5156229
            + y * (3.0899424 + y * (1.2067492 + y * (0.2659732 + y * (0.360768e-1 + y * 0.45813e-2)))))
}

fn bessel_i1(x: f64) -> f64 {
    let y = (x / 3.75).powi(2);
    x * (0.5
        + y * (0.87890594
            + y * (0.51498869
                + y * (0.15084934 + y * (0.2658733e-1 + y * (0.301532e-2 + y * 0.32411e-3))))))
}

/// K0(x) for x > 0.
pub(crate) fn bessel_k0(x: f64) -> f64 {
    if x <= 2.0 {
        let y = x * x / 4.0;
        -(x / 2.0).ln() * bessel_i0(x)
            + (-0.57721566
                + y * (0.42278420
                    + y * (0.23069756
                        + y * (0.3488590e-1 + y * (0.262698e-2 + y * (0.10750e-3 + y * 0.74e-5))))))
    } else {
        let y = 2.0 / x;
        (-x).exp() / x.sqrt()
            * (1.25331414
                + y * (-0.7832358e-1
                    + y * (0.2189568e-1
                        + y * (-0.1062446e-1
                            + y * (0.587872e-2 + y * (-0.251540e-2 + y * 0.53208e-3))))))
    }
}

/// x·K1(x) for x > 0; finite as x → 0.
pub(crate) fn scaled_bessel_k1(x: f64) -> f64 {
    if x <= 2.0 {
        let y = x * x / 4.0;
        x * (x / 2.0).ln() * bessel_i1(x)
            + (1.0
                + y * (0.15443144
                    + y * (-0.67278579
                        + y * (-0.18156897
                            + y * (-0.1919402e-1 + y * (-0.110404e-2 + y * (-0.4686e-4)))))))
    } else {
        let y = 2.0 / x;
        x * (-x).exp() / x.sqrt()
            * (1.25331414
                + y * (0.23498619
                    + y * (-0.3655620e-1
                        + y * (0.1504268e-1
                            + y * (-0.780353e-2 + y * (0.325614e-2 + y * (-0.68245e-3)))))))
    }
}

/// `r^order · K_order(r)` for `order >= 1` and `r > 0`, by the recurrence
/// `s_{m+1} = r² s_{m-1} + 2m s_m` with `s_m = r^m K_m(r)`.
pub(crate) fn scaled_bessel_k(order: u32, r: f64) -> f64 {
    let mut prev = bessel_k0(r);
    let mut cur = scaled_bessel_k1(r);
    if order == 0 {
        return prev;
    }
    for m in 1..order {
        let next = r * r * prev + 2.0 * m as f64 * cur;
        prev = cur;
        cur = next;
    }
    cur
}
