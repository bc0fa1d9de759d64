//! Quadrature rules on the reference triangle and the unit interval.

/// Barycentric coordinates and weights of the symmetric 6-point rule of
/// degree 4. Weights sum to one, so integrals are `area * sum(w * f)`.
pub const TRI_POINTS: [[f64; 3]; 6] = {
    const A1: f64 = 0.445_948_490_915_964_9;
    const A2: f64 = 0.091_576_213_509_770_74;
    [
        [A1, A1, 1.0 - 2.0 * A1],
        [A1, 1.0 - 2.0 * A1, A1],
        [1.0 - 2.0 * A1, A1, A1],
        [A2, A2, 1.0 - 2.0 * A2],
        [A2, 1.0 - 2.0 * A2, A2],
        [1.0 - 2.0 * A2, A2, A2],
    ]
};

pub const TRI_WEIGHTS: [f64; 6] = [
    0.223_381_589_678_011_47,
    0.223_381_589_678_011_47,
    0.223_381_589_678_011_47,
    0.109_951_743_655_321_87,
    0.109_951_743_655_321_87,
    0.109_951_743_655_321_87,
];

pub const NQ: usize = 6;

/// 3-point Gauss-Legendre rule on [0, 1].
pub const LINE_POINTS: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];

pub const LINE_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Values of the six P2 shape functions at barycentric point `l`.
/// Local order: vertices 0,1,2 then midpoints of edges (0,1), (1,2), (2,0).
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// Gradients of the P2 shape functions given the (constant) barycentric
/// gradients of the element.
pub fn p2_gradients(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        let f = 4.0 * l[i] - 1.0;
        g[i] = [f * gl[i][0], f * gl[i][1]];
    }
    let pairs = [(0, 1), (1, 2), (2, 0)];
    for (k, &(a, b)) in pairs.iter().enumerate() {
        g[3 + k] = [
            4.0 * (l[a] * gl[b][0] + l[b] * gl[a][0]),
            4.0 * (l[a] * gl[b][1] + l[b] * gl[a][1]),
        ];
    }
    g
}

/// 1D quadratic shape functions on [0, 1] in the order (start, mid, end).
pub fn p2_line_values(t: f64) -> [f64; 3] {
    [(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)]
}

/// Antiderivatives from 0 to `t` of [`p2_line_values`].
pub fn p2_line_integrals(t: f64) -> [f64; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        t - 1.5 * t2 + 2.0 * t3 / 3.0,
        2.0 * t2 - 4.0 * t3 / 3.0,
        -0.5 * t2 + 2.0 * t3 / 3.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_rule_integrates_degree_four() {
        // integral over the reference triangle of x^a y^b = a! b! / (a+b+2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let approx: f64 = TRI_POINTS
                    .iter()
                    .zip(TRI_WEIGHTS)
                    .map(|(p, w)| 0.5 * w * p[1].powi(a as i32) * p[2].powi(b as i32))
                    .sum();
                assert!((exact - approx).abs() < 1e-15, "x^{a} y^{b}");
            }
        }
    }

    #[test]
    fn line_rule_and_integrals() {
        let s: f64 = LINE_WEIGHTS.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        let full = p2_line_integrals(1.0);
        assert!((full[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((full[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((full[2] - 1.0 / 6.0).abs() < 1e-15);
        let v = p2_line_values(0.3);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
