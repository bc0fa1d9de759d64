use std::sync::Arc;

use kvtomo::fem::quadrature::NQ;
use kvtomo::fem::{build_disk_mesh, power_density, square_mesh, CemOperator, FemSpace};
use kvtomo::functionals::{
    combined_cost, eit_obs, eliminate_sigma, gwf_obs, iat_obs, kv_model, ls_model, quadratic_model_at, reduced_forward,
    CostFunctional, CostOptions, Formulation, ForwardSetup, IatVariant, ObservationData, Observations, Shape,
};
use kvtomo::{Bounds, CellField, ElectrodeLayout, Excitations, NodalField, State, VectorQuadField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(rings: usize, level: usize, ni: usize) -> Arc<ForwardSetup> {
    let layout = ElectrodeLayout::equidistant(8, 0.5, 0.1);
    let mesh = build_disk_mesh(rings, level, &layout).unwrap();
    let space = Arc::new(FemSpace::new(Arc::new(mesh)).unwrap());
    let cem = Arc::new(CemOperator::new(space, layout).unwrap());
    Arc::new(ForwardSetup::new(cem, Excitations::pattern(ni, 8).unwrap()).unwrap())
}

fn phantom(space: &FemSpace) -> CellField {
    space.cell_interpolate(|p| if (p[0] + 0.3).hypot(p[1] + 0.1) < 0.5 { 5.0 } else { 2.0 })
}

fn observations(f: Formulation, s: &ForwardSetup, sigma: &CellField) -> Observations {
    let fw = reduced_forward(s, sigma).unwrap();
    let data = match f.shape() {
        _ if f.tag().starts_with("iat") => {
            ObservationData::Iat(fw.phi.iter().map(|p| power_density(&s.space, sigma, p)).collect())
        }
        _ if f.tag().starts_with("eit") => ObservationData::Eit(fw.volt.clone()),
        _ => ObservationData::GwfFlux(fw.phi.iter().map(|p| s.space.gradient_field(p)).collect()),
    };
    Observations { data, delta: 0.0 }
}

fn random_sigma(rng: &mut ChaCha8Rng, n: usize) -> CellField {
    CellField { values: (0..n).map(|_| rng.random_range(1.5..5.5)).collect() }
}

fn perturb(rng: &mut ChaCha8Rng, x: &State, amp: f64) -> State {
    let mut h = random_direction(rng, x);
    h.scale(amp);
    if let Some(s) = &mut h.sigma {
        s.values.iter_mut().for_each(|v| *v *= 1.0 / amp * 0.5);
    }
    let mut y = x.clone();
    y.axpy(1.0, &h);
    y
}

fn random_direction(rng: &mut ChaCha8Rng, x: &State) -> State {
    let mut h = x.zeros_like();
    if let Some(s) = &mut h.sigma {
        s.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    for f in h.phi.iter_mut().chain(h.psi.iter_mut()) {
        f.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    h
}

/// Relative error between the Riesz gradient paired with `h` and a central difference.
fn fd_error(value: impl Fn(&State) -> f64, grad: &State, space: &FemSpace, x: &State, h: &State) -> f64 {
    let norm = space.inner_state(x, x).sqrt().max(1.0);
    let hn = space.inner_state(h, h).sqrt();
    let t = 1e-5 * norm / hn;
    let mut a = x.clone();
    a.axpy(t, h);
    let mut b = x.clone();
    b.axpy(-t, h);
    let fd = (value(&a) - value(&b)) / (2.0 * t);
    let an = space.inner_state(grad, h);
    (fd - an).abs() / an.abs().max(fd.abs()).max(1e-12)
}

fn cost_fd_error(c: &CostFunctional, x: &State, h: &State) -> f64 {
    let ev = c.evaluate(x).unwrap();
    let g = c.gradient(x, &ev).unwrap();
    fd_error(|y| c.value(y).unwrap(), &g, c.space(), x, h)
}

fn triple(s: &ForwardSetup, sigma: &CellField) -> State {
    let fw = reduced_forward(s, sigma).unwrap();
    State { sigma: Some(sigma.clone()), phi: fw.phi, psi: fw.psi }
}

#[test]
fn formulation_tags_round_trip() {
    for f in Formulation::ALL {
        assert_eq!(f.tag().parse::<Formulation>().unwrap(), f);
        assert_eq!(f.to_string(), f.tag());
    }
    let err = "iat-foo".parse::<Formulation>().unwrap_err().to_string();
    assert!(err.contains("iat-aao") && err.contains("gwf-reduced"), "{err}");
    assert!("obs3".parse::<IatVariant>().is_err());
}

#[test]
fn kv_model_vanishes_on_matching_linear_fields() {
    let space = FemSpace::new(Arc::new(square_mesh(3, 0.0, 0.0, 1.0 / 3.0).unwrap())).unwrap();
    let sigma = CellField::constant(space.num_elements(), 1.0);
    let phi = space.interpolate(|p| p[0]);
    let psi = space.interpolate(|p| -p[1]);
    let v = kv_model(&space, &sigma, &[phi], &[psi]).unwrap();
    assert!(v.value < 1e-28, "{}", v.value);
}

#[test]
fn kv_model_rejects_nonpositive_sigma() {
    let space = FemSpace::new(Arc::new(square_mesh(2, 0.0, 0.0, 0.5).unwrap())).unwrap();
    let mut sigma = CellField::constant(space.num_elements(), 1.0);
    sigma.values[3] = 0.0;
    let phi = space.interpolate(|p| p[0]);
    assert!(kv_model(&space, &sigma, &[phi.clone()], &[phi]).is_err());
}

#[test]
fn kv_model_is_small_at_cem_triples_and_decays() {
    let mut last = f64::INFINITY;
    for level in 0..2 {
        let s = setup(2, level, 2);
        let sigma = phantom(&s.space);
        let x = triple(&s, &sigma);
        let v = kv_model(&s.space, &sigma, &x.phi, &x.psi).unwrap().value;
        let scale: f64 = x.phi.iter().map(|p| s.space.inner_nodal(p, p)).sum();
        eprintln!("level {level}: kv {v:e} scale {scale:e}");
        assert!(v < 0.1 * scale);
        assert!(v < 0.5 * last);
        last = v;
    }
}

#[test]
fn standalone_gradients_match_differences() {
    let s = setup(2, 0, 2);
    let space = &s.space;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ne = space.num_elements();
    for _ in 0..5 {
        let sigma = random_sigma(&mut rng, ne);
        let base = triple(&s, &sigma);
        let x = perturb(&mut rng, &base, 0.05);
        let h = random_direction(&mut rng, &x);
        let sig = x.sigma.clone().unwrap();

        let kv = |y: &State| kv_model(space, y.sigma.as_ref().unwrap(), &y.phi, &y.psi).unwrap();
        let e = fd_error(|y| kv(y).value, &kv(&x).gradient, space, &x, &h);
        assert!(e < 1e-5, "kv {e:e}");
        let ls = |y: &State| ls_model(space, y.sigma.as_ref().unwrap(), &y.phi, &y.psi).unwrap();
        let e = fd_error(|y| ls(y).value, &ls(&x).gradient, space, &x, &h);
        assert!(e < 1e-5, "ls {e:e}");

        let hd: Vec<CellField> = base.phi.iter().map(|p| power_density(space, &sigma, p)).collect();
        let xs = State { sigma: Some(sig.clone()), phi: x.phi.clone(), psi: Vec::new() };
        let hs = State { sigma: h.sigma.clone(), phi: h.phi.clone(), psi: Vec::new() };
        let io = |y: &State| iat_obs(space, y.sigma.as_ref().unwrap(), &y.phi, None, &hd, IatVariant::Obs2).unwrap();
        let e = fd_error(|y| io(y).value, &io(&xs).gradient, space, &xs, &hs);
        assert!(e < 1e-5, "iat obs2 {e:e}");
        let i1 = |y: &State| {
            iat_obs(space, y.sigma.as_ref().unwrap(), &y.phi, Some(&y.psi), &hd, IatVariant::Obs1).unwrap()
        };
        let g1 = i1(&x).gradient;
        let e = fd_error(|y| i1(y).value, &g1, space, &x, &h);
        assert!(e < 1e-5, "iat obs1 {e:e}");
        assert!(g1.sigma.unwrap().values.iter().all(|v| v.abs() < 1e-14));

        let xp = State { sigma: None, phi: x.phi.clone(), psi: Vec::new() };
        let hp = State { sigma: None, phi: h.phi.clone(), psi: Vec::new() };
        let flux = ObservationData::GwfFlux(base.phi.iter().map(|p| space.gradient_field(p)).collect());
        let head = ObservationData::GwfHead { p: base.phi.clone(), h1: true };
        let head0 = ObservationData::GwfHead { p: base.phi.clone(), h1: false };
        for d in [&flux, &head, &head0] {
            let g = |y: &State| gwf_obs(space, &y.phi, d).unwrap();
            let e = fd_error(|y| g(y).value, &g(&xp).gradient, space, &xp, &hp);
            assert!(e < 1e-5, "gwf {e:e}");
        }

        let fw = reduced_forward(&s, &sigma).unwrap();
        let xe = State { sigma: None, phi: x.phi.clone(), psi: x.psi.clone() };
        let he = State { sigma: None, phi: h.phi.clone(), psi: h.psi.clone() };
        let eo = |y: &State| eit_obs(&s, &y.phi, &y.psi, &fw.volt).unwrap();
        let e = fd_error(|y| eo(y).value, &eo(&xe).gradient, space, &xe, &he);
        assert!(e < 1e-5, "eit {e:e}");
    }
}

#[test]
fn ls_model_is_quadratic_in_psi() {
    let s = setup(2, 0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma = random_sigma(&mut rng, s.space.num_elements());
    let x = triple(&s, &sigma);
    let h = random_direction(&mut rng, &x);
    let f = |t: f64| {
        let psi: Vec<NodalField> = x
            .psi
            .iter()
            .zip(&h.psi)
            .map(|(p, d)| NodalField { values: p.values.iter().zip(&d.values).map(|(a, b)| a + t * b).collect() })
            .collect();
        ls_model(&s.space, &sigma, &x.phi, &psi).unwrap().value
    };
    let second = |t: f64| f(t + 0.1) - 2.0 * f(t) + f(t - 0.1);
    let s0 = second(0.0);
    for t in [-1.0, 0.5, 2.0] {
        assert!((second(t) - s0).abs() <= 1e-10 * s0.abs().max(1.0), "{} vs {}", second(t), s0);
    }
}

#[test]
fn iat_obs_examples() {
    let s = setup(2, 0, 2);
    let sigma = phantom(&s.space);
    let x = triple(&s, &sigma);
    let hd: Vec<CellField> = x.phi.iter().map(|p| power_density(&s.space, &sigma, p)).collect();
    let v = iat_obs(&s.space, &sigma, &x.phi, None, &hd, IatVariant::Obs2).unwrap().value;
    assert!(v < 1e-24, "{v:e}");

    let sq = FemSpace::new(Arc::new(square_mesh(4, 0.0, 0.0, 0.25).unwrap())).unwrap();
    let two = CellField::constant(sq.num_elements(), 2.0);
    let phi = sq.interpolate(|p| p[0]);
    let zero = CellField::constant(sq.num_elements(), 0.0);
    let v = iat_obs(&sq, &two, &[phi.clone()], None, &[zero], IatVariant::Obs2).unwrap().value;
    assert!((v - 2.0).abs() < 1e-12, "{v}");
    let bad = CellField::constant(3, 0.0);
    assert!(iat_obs(&sq, &two, &[phi], None, &[bad], IatVariant::Obs2).is_err());
}

#[test]
fn gwf_obs_examples() {
    let s = setup(2, 0, 1);
    let space = &s.space;
    let p = space.interpolate(|x| x[0] * x[1] + x[0]);
    for h1 in [false, true] {
        let d = ObservationData::GwfHead { p: vec![p.clone()], h1 };
        assert!(gwf_obs(space, &[p.clone()], &d).unwrap().value < 1e-28);
    }
    // grad phi - g = (1, 0)
    let phi = space.interpolate(|x| x[0] + x[1]);
    let g = VectorQuadField { vectors: vec![[0.0, 1.0]; space.num_elements() * NQ] };
    let v = gwf_obs(space, &[phi], &ObservationData::GwfFlux(vec![g])).unwrap().value;
    assert!((v - space.domain_area()).abs() < 1e-12);
    assert!((v - std::f64::consts::PI).abs() < 0.1, "{v}");
}

#[test]
fn eit_obs_examples() {
    let s = setup(2, 0, 1);
    let nn = s.space.num_nodes();
    let z = 0.1;
    // phi = psi = 0 with j = e1 - e5 and zero voltages: gap 0 carries jbar = -1,
    // and electrode 1 sees the offset z * jbar_0
    let zero = NodalField::zeros(nn);
    let v = eit_obs(&s, &[zero.clone()], &[zero], &[vec![0.0; 8]]).unwrap().value;
    let mesh = &s.space.mesh;
    let gap0: f64 = mesh.boundary.iter().filter(|e| e.tag == kvtomo::fem::SegmentTag::Gap(0)).map(|e| e.length).sum();
    let el1 = s.cem.electrode_length(1);
    let cum = s.excitations.cumulative(0);
    let expected = 0.5 * gap0 * cum[0] * cum[0]
        + (1..4).map(|k| 0.5 * z * z * cum[k - 1] * cum[k - 1] * s.cem.electrode_length(k)).sum::<f64>()
        + (4..8).map(|k| 0.5 * gap0 * cum[k] * cum[k]).sum::<f64>()
        + (1..4).map(|k| 0.5 * gap0 * cum[k] * cum[k]).sum::<f64>()
        + (4..8).map(|k| 0.5 * z * z * cum[k - 1] * cum[k - 1] * s.cem.electrode_length(k)).sum::<f64>();
    assert!((cum[0] + 1.0).abs() < 1e-15);
    assert!(el1 > 0.0);
    assert!((v - expected).abs() < 1e-12 * expected, "{v} vs {expected}");
}

#[test]
fn eit_obs_is_small_at_consistent_cem_states() {
    let mut last = f64::INFINITY;
    for level in 0..2 {
        let s = setup(2, level, 2);
        let sigma = phantom(&s.space);
        let fw = reduced_forward(&s, &sigma).unwrap();
        let c = combined_cost(
            Formulation::EitAao,
            s.clone(),
            Observations { data: ObservationData::Eit(fw.volt.clone()), delta: 0.0 },
            CostOptions::default(),
        )
        .unwrap();
        let x = c.state_from_sigma(&sigma).unwrap();
        let v = eit_obs(&s, &x.phi, &x.psi, &fw.volt).unwrap().value;
        eprintln!("level {level}: eit obs {v:e}");
        assert!(v < 1e-6);
        assert!(v < last);
        last = v;
    }
}

fn brute_force(a: f64, b: f64, bounds: &Bounds, n: usize) -> f64 {
    let (l0, l1) = (bounds.lower.ln(), bounds.upper.ln());
    (0..n)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp())
        .min_by(|p, q| (p * a + b / p).total_cmp(&(q * a + b / q)))
        .unwrap()
}

#[test]
fn eliminate_sigma_examples_and_oracle() {
    let space = FemSpace::new(Arc::new(square_mesh(2, 0.0, 0.0, 0.5).unwrap())).unwrap();
    let bounds = Bounds::new(1.0, 6.0).unwrap();
    let phi = space.interpolate(|p| p[0]);
    let psi = space.interpolate(|p| 2.0 * p[1]);
    let s = eliminate_sigma(&space, &[phi.clone()], &[psi], &bounds).unwrap();
    assert!(s.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
    let psi = space.interpolate(|p| 10.0 * p[1]);
    let s = eliminate_sigma(&space, &[phi], &[psi.clone()], &bounds).unwrap();
    assert!(s.values.iter().all(|v| (v - 6.0).abs() < 1e-12));
    let s = eliminate_sigma(&space, &[NodalField::zeros(space.num_nodes())], &[psi], &bounds).unwrap();
    assert!(s.values.iter().all(|v| *v == 6.0));

    // 10-element mesh: a 5-triangle fan around each of two centres
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = square_mesh(3, 0.0, 0.0, 1.0).unwrap();
    let mesh = kvtomo::fem::Mesh::from_p1(
        mesh.nodes[..11].to_vec(),
        mesh.elements.iter().take(10).map(|e| [e[0], e[1], e[2]]).collect(),
        None,
    )
    .unwrap();
    let space = FemSpace::new(Arc::new(mesh)).unwrap();
    assert_eq!(space.num_elements(), 10);
    let bounds = Bounds::new(1.0, 8.0).unwrap();
    for _ in 0..3 {
        let f = |rng: &mut ChaCha8Rng| NodalField {
            values: (0..space.num_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let phi = vec![f(&mut rng), f(&mut rng)];
        let psi: Vec<NodalField> = (0..2)
            .map(|_| {
                let mut p = f(&mut rng);
                p.values.iter_mut().for_each(|v| *v *= 3.0);
                p
            })
            .collect();
        let s = eliminate_sigma(&space, &phi, &psi, &bounds).unwrap();
        for e in 0..10 {
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..2 {
                for q in 0..NQ {
                    let w = space.weight(e, q);
                    let ge = space.grad_at(e, q, &phi[i].values);
                    let gj = space.grad_at(e, q, &psi[i].values);
                    a += w * (ge[0] * ge[0] + ge[1] * ge[1]);
                    b += w * (gj[0] * gj[0] + gj[1] * gj[1]);
                }
            }
            let bf = brute_force(a, b, &bounds, 1_000_000);
            let step = bf * ((bounds.upper / bounds.lower).ln() / 999_999.0);
            assert!((bf - s.values[e]).abs() <= 2.0 * step, "element {e}: {} vs {bf}", s.values[e]);
        }
    }
}

#[test]
fn eliminated_model_bounds_all_at_once_model() {
    let s = setup(2, 0, 2);
    let space = &s.space;
    let bounds = Bounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = triple(&s, &phantom(space));
    for _ in 0..100 {
        let x = perturb(&mut rng, &base, 0.2);
        let se = eliminate_sigma(space, &x.phi, &x.psi, &bounds).unwrap();
        let other = CellField { values: (0..space.num_elements()).map(|_| rng.random_range(bounds.lower..bounds.upper)).collect() };
        let ve = kv_model(space, &se, &x.phi, &x.psi).unwrap().value;
        let vo = kv_model(space, &other, &x.phi, &x.psi).unwrap().value;
        assert!(ve <= vo * (1.0 + 1e-12), "{ve} > {vo}");
    }
}

#[test]
fn reduced_forward_examples() {
    let s = setup(2, 0, 1);
    let sigma = CellField::constant(s.space.num_elements(), 2.0);
    let fw = reduced_forward(&s, &sigma).unwrap();
    let v = &fw.volt[0];
    // drive between electrodes 0 and 4; the mirror through electrodes 2 and 6
    // swaps them and flips the sign of the drive
    for k in 0..8 {
        let m = (12 - k) % 8;
        assert!((v[k] + v[m]).abs() < 1e-8, "v{k} = {}, v{m} = {}", v[k], v[m]);
    }
    let kv = kv_model(&s.space, &sigma, &fw.phi, &fw.psi).unwrap().value;
    let scale: f64 = fw.phi.iter().map(|p| s.space.inner_nodal(p, p)).sum();
    assert!(kv < 0.1 * scale, "{kv:e}");
}

#[test]
fn reduced_forward_regression_on_fine_mesh() {
    let s = setup(4, 1, 1);
    let sigma = phantom(&s.space);
    let fw = reduced_forward(&s, &sigma).unwrap();
    let frozen = [
        0.7063823424453199,
        0.11127671284642959,
        -0.00797661977728692,
        -0.09971303178030888,
        -0.6210153988814058,
        -0.0988327582273556,
        -0.011478419931904793,
        0.10845317618028705,
    ];
    for (v, f) in fw.volt[0].iter().zip(frozen) {
        assert!((v - f).abs() < 1e-8, "{v} vs {f}");
    }
}

fn cost_for(f: Formulation, s: &Arc<ForwardSetup>, truth: &CellField) -> CostFunctional {
    combined_cost(f, s.clone(), observations(f, s, truth), CostOptions::default()).unwrap()
}

#[test]
fn every_formulation_gradient_matches_differences() {
    let s = setup(2, 0, 2);
    let truth = phantom(&s.space);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for f in Formulation::ALL {
        let c = cost_for(f, &s, &truth);
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let sigma = random_sigma(&mut rng, s.space.num_elements());
            let x0 = c.state_from_sigma(&sigma).unwrap();
            let x = if f.shape() == Shape::Reduced { x0 } else { perturb(&mut rng, &x0, 0.05) };
            let h = random_direction(&mut rng, &x);
            worst = worst.max(cost_fd_error(&c, &x, &h));
        }
        let tol = if f.shape() == Shape::Reduced { 1e-4 } else { 1e-5 };
        eprintln!("{f}: {worst:e}");
        assert!(worst < tol, "{f}: {worst:e}");
    }
}

#[test]
fn reduced_costs_vanish_at_generating_conductivity() {
    let s = setup(2, 0, 4);
    let truth = phantom(&s.space);
    for f in [Formulation::IatReduced, Formulation::EitReduced, Formulation::GwfReduced] {
        let c = cost_for(f, &s, &truth);
        let v = c.value(&c.state_from_sigma(&truth).unwrap()).unwrap();
        assert!(v < 1e-24, "{f}: {v:e}");
    }
}

#[test]
fn all_at_once_costs_are_small_at_truth_and_decay() {
    for f in [
        Formulation::IatAao,
        Formulation::IatElimSigma,
        Formulation::EitAao,
        Formulation::EitElimSigma,
        Formulation::GwfAaoLs,
        Formulation::GwfAaoKv,
    ] {
        let mut last = f64::INFINITY;
        for level in 0..2 {
            let s = setup(2, level, 2);
            let truth = phantom(&s.space);
            let c = cost_for(f, &s, &truth);
            let v = c.value(&c.state_from_sigma(&truth).unwrap()).unwrap();
            eprintln!("{f} level {level}: {v:e}");
            assert!(v < last, "{f}");
            last = v;
        }
    }
}

#[test]
fn gwf_ls_cost_is_sum_of_standalone_terms() {
    let s = setup(2, 0, 2);
    let truth = phantom(&s.space);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let obs = observations(Formulation::GwfAaoLs, &s, &truth);
    let beta = 0.7;
    let c = combined_cost(
        Formulation::GwfAaoLs,
        s.clone(),
        obs.clone(),
        CostOptions { beta, ..CostOptions::default() },
    )
    .unwrap();
    let x = perturb(&mut rng, &c.state_from_sigma(&truth).unwrap(), 0.1);
    let m = ls_model(&s.space, x.sigma.as_ref().unwrap(), &x.phi, &x.psi).unwrap().value;
    let o = gwf_obs(&s.space, &x.phi, &obs.data).unwrap().value;
    let v = c.value(&x).unwrap();
    assert!((v - (m + beta * o)).abs() < 1e-12 * v, "{v} vs {}", m + beta * o);
}

#[test]
fn elimination_recovers_truth_from_cem_potentials() {
    let s = setup(2, 1, 4);
    let truth = phantom(&s.space);
    let c = cost_for(Formulation::IatElimSigma, &s, &truth);
    let x = c.state_from_sigma(&truth).unwrap();
    let se = c.sigma_of(&x).unwrap();
    let rel = s.space.cell_l2_norm(&se.values.iter().zip(&truth.values).map(|(a, b)| a - b).collect::<Vec<_>>())
        / s.space.cell_l2_norm(&truth.values);
    eprintln!("relative elimination error {rel:e}");
    assert!(rel < 0.1, "{rel}");
    let ev = c.evaluate(&x).unwrap();
    assert_eq!(ev.sigma, se);
}

#[test]
fn quadratic_model_properties() {
    let s = setup(2, 0, 2);
    let truth = phantom(&s.space);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for f in Formulation::ALL {
        let c = cost_for(f, &s, &truth);
        let sigma = random_sigma(&mut rng, s.space.num_elements());
        let x0 = c.state_from_sigma(&sigma).unwrap();
        let x = if f.shape() == Shape::Reduced { x0 } else { perturb(&mut rng, &x0, 0.05) };
        let q = quadratic_model_at(&c, &x).unwrap();
        for _ in 0..100 {
            let h = random_direction(&mut rng, &x);
            assert!(q.second(&h, &h).unwrap() >= -1e-12 * h.dot(&h), "{f}");
        }
        // symmetry
        let h = random_direction(&mut rng, &x);
        let k = random_direction(&mut rng, &x);
        let (a, b) = (q.second(&h, &k).unwrap(), q.second(&k, &h).unwrap());
        assert!((a - b).abs() < 1e-10 * a.abs().max(b.abs()).max(1e-12), "{f}: {a} {b}");
        // Q matches J to first order
        let mut errs = Vec::new();
        for t in [1e-1, 1e-2, 1e-3, 1e-4] {
            let mut y = x.clone();
            y.axpy(t, &h);
            errs.push((c.value(&y).unwrap() - q.eval_at(&y).unwrap()).abs());
        }
        eprintln!("{f}: taylor {errs:?}");
        assert!(errs[3] < 1e-4 * errs[0].max(1e-300) + 1e-12 * q.value.max(1.0), "{f}: {errs:?}");
    }
}

#[test]
fn gwf_ls_quadratic_model_is_exact_in_psi() {
    let s = setup(2, 0, 2);
    let truth = phantom(&s.space);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let c = cost_for(Formulation::GwfAaoLs, &s, &truth);
    let x = perturb(&mut rng, &c.state_from_sigma(&truth).unwrap(), 0.1);
    let q = quadratic_model_at(&c, &x).unwrap();
    let mut h = random_direction(&mut rng, &x);
    h.sigma.as_mut().unwrap().values.iter_mut().for_each(|v| *v = 0.0);
    h.phi.iter_mut().for_each(|p| p.values.iter_mut().for_each(|v| *v = 0.0));
    for t in [1.0, 1e-1, 1e-2, 1e-3, 1e-4] {
        let mut y = x.clone();
        y.axpy(t, &h);
        let (j, m) = (c.value(&y).unwrap(), q.eval_at(&y).unwrap());
        assert!((j - m).abs() <= 1e-10 * j.max(1.0), "t={t}: {j} vs {m}");
    }
}

#[test]
fn full_hessian_is_indefinite_where_gauss_newton_is_not() {
    // at h = 0 the direction (-sigma, phi) has negative curvature for both
    // sigma |grad phi|^2 misfits and the Kohn-Vogelius term with psi = 0
    let s = setup(2, 0, 1);
    let space = &s.space;
    let sigma = CellField::constant(space.num_elements(), 2.0);
    let phi = space.interpolate(|p| p[0] + 0.3 * p[1]);
    let psi = NodalField::zeros(space.num_nodes());
    let zero = CellField::constant(space.num_elements(), 0.0);
    let x = State { sigma: Some(sigma.clone()), phi: vec![phi.clone()], psi: vec![psi.clone()] };
    let mut h = x.clone();
    h.sigma.as_mut().unwrap().values.iter_mut().for_each(|v| *v = -*v);
    h.psi[0].values.iter_mut().for_each(|v| *v = 0.0);
    let curv = |f: &dyn Fn(&State) -> f64| {
        let t = 1e-3;
        let mut a = x.clone();
        a.axpy(t, &h);
        let mut b = x.clone();
        b.axpy(-t, &h);
        (f(&a) - 2.0 * f(&x) + f(&b)) / (t * t)
    };
    let kv = curv(&|y: &State| kv_model(space, y.sigma.as_ref().unwrap(), &y.phi, &y.psi).unwrap().value);
    let io = curv(&|y: &State| {
        iat_obs(space, y.sigma.as_ref().unwrap(), &y.phi, None, &[zero.clone()], IatVariant::Obs2).unwrap().value
    });
    assert!(kv < 0.0 && io < 0.0, "{kv} {io}");

    let data = ObservationData::Iat(vec![zero.clone()]);
    let c = combined_cost(
        Formulation::IatAao,
        Arc::new(ForwardSetup::new(s.cem.clone(), s.excitations.clone()).unwrap()),
        Observations { data, delta: 0.0 },
        CostOptions::default(),
    )
    .unwrap();
    let q = quadratic_model_at(&c, &x).unwrap();
    assert!(q.second(&h, &h).unwrap() >= 0.0);
}
