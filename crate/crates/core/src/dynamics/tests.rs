use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{Activation, Mlp};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-s..s))
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

fn pressures(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(4, |_, _| rng.random_range(0.0..86.0))
}

fn koopman(a: DMatrix<f64>, exc: ExcitationNet) -> DynModel {
    let n = a.nrows() / 2;
    DynModel::Koopman(KoopmanModel {
        a,
        excitation: exc,
        z0: DVector::zeros(n),
        dt: DT,
    })
}

fn scalar_oscillator(m: f64, d: f64, k: f64, dt: f64) -> OscillatorModel {
    OscillatorModel::from_matrices(
        &DVector::from_element(1, m),
        DMatrix::from_element(1, 1, d),
        DMatrix::from_element(1, 1, k),
        DVector::zeros(1),
        ExcitationNet::zeros_linear(4, 1),
        dt,
        IntegrationMode::ImplicitDamping,
    )
}

/// Random model of every family/variant with nonzero, well-conditioned parameters.
pub(crate) fn random_model(rng: &mut ChaCha8Rng, family: FamilyKind, variant: usize) -> DynModel {
    let m = 1 + variant % 3;
    let spec = DynSpec {
        family,
        oscillators: m,
        excitation: if variant % 2 == 0 {
            ExcitationKind::Mlp
        } else {
            ExcitationKind::Linear
        },
        excitation_hidden: 8,
        mlp_hidden: 8,
        damping: if variant % 4 < 2 {
            DampingMode::Full
        } else {
            DampingMode::Rayleigh
        },
        integration: if variant % 3 == 2 {
            IntegrationMode::Explicit
        } else {
            IntegrationMode::ImplicitDamping
        },
        ..DynSpec::default()
    };
    let mut model = DynModel::init(&spec, rng);
    let mut p = model.params();
    for v in p.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    model.set_params(&p);
    *model.z0_mut() = rand_vec(rng, 2 * m, 0.5);
    if let DynModel::Oscillator(o) = &mut model {
        o.stiffness += rand_mat(rng, 2 * m, 2 * m, 0.2);
        if let Damping::Full(d) = &mut o.damping {
            *d += rand_mat(rng, 2 * m, 2 * m, 0.02);
        }
    }
    model
}

// ---------------------------------------------------------------- Koopman

#[test]
fn koopman_identity_with_zero_excitation_is_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = koopman(DMatrix::identity(4, 4), ExcitationNet::zeros_linear(4, 4));
    let s = LatentState::new(rand_vec(&mut rng, 2, 1.0), rand_vec(&mut rng, 2, 1.0));
    let next = model.step(&s, &pressures(&mut rng)).unwrap();
    assert_eq!(next, s);
}

#[test]
fn koopman_zero_dynamics_returns_padded_input() {
    let mut pad = DMatrix::zeros(6, 4);
    for i in 0..4 {
        pad[(i, i)] = 1.0;
    }
    let exc = ExcitationNet::from_map(ExcitationMap::Linear(pad)).unnormalized();
    let model = koopman(DMatrix::zeros(6, 6), exc);
    let s = LatentState::new(
        DVector::from_vec(vec![3.0, -1.0, 2.0]),
        DVector::from_vec(vec![9.0, 9.0, 9.0]),
    );
    let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
    let next = model.step(&s, &u).unwrap();
    assert_eq!(next.xi().as_slice(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
}

#[test]
fn koopman_three_steps_match_matrix_powers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_mat(&mut rng, 4, 4, 0.6);
    let bmat = rand_mat(&mut rng, 4, 4, 1.0);
    let model = koopman(
        a.clone(),
        ExcitationNet::from_map(ExcitationMap::Linear(bmat.clone())),
    );
    let xi0 = rand_vec(&mut rng, 4, 1.0);
    let u = pressures(&mut rng);
    let b = &bmat * u.map(|p| (p - PRESSURE_CENTER) / PRESSURE_SCALE);
    let expected = &a * &a * &a * &xi0 + &a * &a * &b + &a * &b + &b;
    let roll = model
        .rollout(&LatentState::from_xi(&xi0), &vec![u; 3])
        .unwrap();
    let got = roll.states[2].xi();
    assert!((got - expected).amax() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn koopman_rollout_matches_closed_form(seed in 0u64..10_000, horizon in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, 6, 6, 0.35);
        let bmat = rand_mat(&mut rng, 6, 4, 1.0);
        let model = koopman(a.clone(), ExcitationNet::from_map(ExcitationMap::Linear(bmat.clone())));
        let xi0 = rand_vec(&mut rng, 6, 1.0);
        let useq: Vec<_> = (0..horizon).map(|_| pressures(&mut rng)).collect();
        let roll = model.rollout(&LatentState::from_xi(&xi0), &useq).unwrap();
        // xi(T) = A^T xi0 + sum_i A^(T-1-i) b_i
        let mut expected = xi0.clone();
        let mut apow = DMatrix::identity(6, 6);
        for _ in 0..horizon { apow = &apow * &a; }
        expected = &apow * expected;
        for (i, u) in useq.iter().enumerate() {
            let b = &bmat * u.map(|p| (p - PRESSURE_CENTER) / PRESSURE_SCALE);
            let mut pw = DMatrix::identity(6, 6);
            for _ in 0..(horizon - 1 - i) { pw = &pw * &a; }
            expected += pw * b;
        }
        prop_assert!((roll.states[horizon - 1].xi() - expected).amax() < 1e-10);
    }
}

// ---------------------------------------------------------------- MLP

fn mlp_model(net: Mlp, exc: ExcitationNet) -> MlpDynModel {
    let n = net.output_dim();
    MlpDynModel {
        net,
        output_gain: 1.0,
        excitation: exc,
        z0: DVector::zeros(n),
        dt: DT,
    }
}

fn zero_mlp(n: usize, rng: &mut ChaCha8Rng) -> Mlp {
    let mut net = Mlp::new(&[2 * n, 5, n], Activation::Tanh, Activation::Identity, rng);
    net.layers[1].weight.fill(0.0);
    net
}

#[test]
fn mlp_with_zero_maps_rests() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = mlp_model(zero_mlp(2, &mut rng), ExcitationNet::zeros_linear(4, 2));
    let s = LatentState::new(rand_vec(&mut rng, 2, 1.0), rand_vec(&mut rng, 2, 1.0));
    let next = model.step(&s, &pressures(&mut rng));
    assert_eq!(next.zdot, DVector::zeros(2));
    assert_eq!(next.z, s.z);
}

#[test]
fn mlp_pure_forcing_moves_by_dt_times_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Constant excitation: bias-only map (zero weights, bias c).
    let mut bnet = Mlp::new(&[4, 3, 2], Activation::Tanh, Activation::Identity, &mut rng);
    bnet.layers[1].weight.fill(0.0);
    bnet.layers[1].bias = DVector::from_vec(vec![1.5, -2.0]);
    let model = mlp_model(
        zero_mlp(2, &mut rng),
        ExcitationNet::from_map(ExcitationMap::Mlp(bnet)),
    );
    let s = LatentState::new(
        DVector::from_vec(vec![0.3, 0.4]),
        DVector::from_vec(vec![7.0, 8.0]),
    );
    let next = model.step(&s, &pressures(&mut rng));
    assert_eq!(next.zdot.as_slice(), &[1.5, -2.0]);
    assert!((next.z[0] - (0.3 + 0.02 * 1.5)).abs() < 1e-15);
    assert!((next.z[1] - (0.4 - 0.02 * 2.0)).abs() < 1e-15);
}

#[test]
fn mlp_step_matches_independent_forward_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[6, 7, 3], Activation::Tanh, Activation::Identity, &mut rng);
    let bnet = Mlp::new(&[4, 5, 3], Activation::Tanh, Activation::Identity, &mut rng);
    let model = MlpDynModel {
        output_gain: 2.5,
        ..mlp_model(
            net.clone(),
            ExcitationNet::from_map(ExcitationMap::Mlp(bnet.clone())),
        )
    };
    let s = LatentState::new(rand_vec(&mut rng, 3, 1.0), rand_vec(&mut rng, 3, 1.0));
    let u = pressures(&mut rng);
    // Independent evaluation of each layer by hand.
    let layer = |w: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>, tanh: bool| {
        let a = w * x + b;
        if tanh {
            a.map(f64::tanh)
        } else {
            a
        }
    };
    let xi = s.xi();
    let h = layer(&net.layers[0].weight, &net.layers[0].bias, &xi, true);
    let f = layer(&net.layers[1].weight, &net.layers[1].bias, &h, false);
    let un = u.map(|p| (p - 43.0) / 43.0);
    let hb = layer(&bnet.layers[0].weight, &bnet.layers[0].bias, &un, true);
    let b = layer(&bnet.layers[1].weight, &bnet.layers[1].bias, &hb, false);
    let zdot = f * 2.5 + b;
    let z = &s.z + &zdot * 0.02;
    let next = model.step(&s, &u);
    assert!((next.zdot - zdot).amax() < 1e-14);
    assert!((next.z - z).amax() < 1e-14);
}

// ---------------------------------------------------------------- oscillator

#[test]
fn oscillator_equilibrium_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = 2 * rng.random_range(1..4);
        let model = OscillatorModel::from_matrices(
            &DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0)),
            rand_mat(&mut rng, n, n, 1.0),
            rand_mat(&mut rng, n, n, 2.0),
            rand_vec(&mut rng, n, 2.0),
            ExcitationNet::zeros_linear(4, n),
            DT,
            IntegrationMode::ImplicitDamping,
        );
        let rest = LatentState::at_rest(model.z0.clone());
        let next = model.step(&rest, &DVector::from_element(4, 43.0)).unwrap();
        assert_eq!(next, rest);
    }
}

#[test]
fn zero_damping_reduces_to_plain_symplectic_euler() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 4;
    let mass = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    let k = rand_mat(&mut rng, n, n, 1.0);
    let model = OscillatorModel::from_matrices(
        &mass,
        DMatrix::zeros(n, n),
        k.clone(),
        DVector::zeros(n),
        ExcitationNet::zeros_linear(4, n),
        0.05,
        IntegrationMode::ImplicitDamping,
    );
    assert_eq!(model.gamma().unwrap(), DVector::from_element(n, 1.0));
    let s = LatentState::new(rand_vec(&mut rng, n, 1.0), rand_vec(&mut rng, n, 1.0));
    let next = model.step(&s, &DVector::from_element(4, 43.0)).unwrap();
    let m = model.mass();
    let acc = -(&k * &s.z);
    let v = DVector::from_fn(n, |i, _| s.zdot[i] + 0.05 * acc[i] / m[i]);
    let z = &s.z + &v * 0.05;
    assert!((next.zdot - v).amax() < 1e-14);
    assert!((next.z - z).amax() < 1e-14);
}

#[test]
fn scalar_oscillator_hand_evaluation() {
    let model = scalar_oscillator(1.0, 1.0, 1.0, 0.1);
    let s = LatentState::new(DVector::from_element(1, 1.0), DVector::zeros(1));
    let next = model.step(&s, &DVector::from_element(4, 43.0)).unwrap();
    assert!((next.zdot[0] - (-1.0 / 11.0)).abs() < 1e-12);
    assert!((next.z[0] - 109.0 / 110.0).abs() < 1e-12);
}

#[test]
fn explicit_mode_applies_full_damping_force() {
    let mut model = scalar_oscillator(1.0, 1.0, 1.0, 0.1);
    model.integration = IntegrationMode::Explicit;
    let s = LatentState::new(DVector::from_element(1, 1.0), DVector::from_element(1, 2.0));
    let next = model.step(&s, &DVector::from_element(4, 43.0)).unwrap();
    // zdot' = 2 + 0.1 * (-1 - 2) = 1.7
    assert!((next.zdot[0] - 1.7).abs() < 1e-14);
    assert!((next.z[0] - 1.17).abs() < 1e-14);
}

#[test]
fn singular_gamma_names_the_entry() {
    let n = 3;
    let mut d = DMatrix::identity(n, n);
    // Gamma_2 = 1 + dt * D_22 / M_2 = 0 with M = 1, dt = 0.02.
    d[(2, 2)] = -50.0;
    let model = OscillatorModel::from_matrices(
        &DVector::from_element(n, 1.0),
        d,
        DMatrix::identity(n, n),
        DVector::zeros(n),
        ExcitationNet::zeros_linear(4, n),
        DT,
        IntegrationMode::ImplicitDamping,
    );
    let s = LatentState::at_rest(DVector::zeros(n));
    match model.step(&s, &DVector::zeros(4)) {
        Err(Error::SingularDamping { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected singular damping, got {other:?}"),
    }
}

#[test]
fn linearized_matrix_free_drift_and_scalar_case() {
    let n = 2;
    let model = OscillatorModel::from_matrices(
        &DVector::from_element(n, 1.3),
        DMatrix::zeros(n, n),
        DMatrix::zeros(n, n),
        DVector::zeros(n),
        ExcitationNet::zeros_linear(4, n),
        DT,
        IntegrationMode::ImplicitDamping,
    );
    let a = model.linearized_update_matrix().unwrap();
    let mut expected = DMatrix::identity(4, 4);
    expected[(0, 2)] = DT;
    expected[(1, 3)] = DT;
    assert_eq!(a, expected);

    let a = scalar_oscillator(1.0, 1.0, 1.0, 0.1)
        .linearized_update_matrix()
        .unwrap();
    let expected =
        DMatrix::from_row_slice(2, 2, &[1.0 - 0.01 / 1.1, 0.1 / 1.1, -0.1 / 1.1, 1.0 / 1.1]);
    assert!((a - expected).amax() < 1e-15);
}

#[test]
fn linearized_matrix_reproduces_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for mode in [IntegrationMode::ImplicitDamping, IntegrationMode::Explicit] {
        let n = 4;
        let mut model = OscillatorModel::from_matrices(
            &DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)),
            rand_mat(&mut rng, n, n, 0.5),
            rand_mat(&mut rng, n, n, 2.0),
            rand_vec(&mut rng, n, 1.0),
            ExcitationNet::zeros_linear(4, n),
            DT,
            mode,
        );
        model.integration = mode;
        let s = LatentState::new(rand_vec(&mut rng, n, 1.0), rand_vec(&mut rng, n, 1.0));
        let next = model.step(&s, &DVector::zeros(4)).unwrap();
        let dev = LatentState::new(&s.z - &model.z0, s.zdot.clone()).xi();
        let pred = model.linearized_update_matrix().unwrap() * dev;
        let got = LatentState::new(&next.z - &model.z0, next.zdot).xi();
        assert!((pred - got).amax() < 1e-13);
    }
}

/// Symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub(crate) fn spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = rand_mat(rng, n, n, 1.0).qr().q();
    let lam = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    &q * DMatrix::from_diagonal(&lam) * q.transpose()
}

#[test]
fn stable_parameters_have_spectral_radius_at_most_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let n = 2 * rng.random_range(1..4);
        let model = OscillatorModel::from_matrices(
            &DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)),
            spd(&mut rng, n, 0.0, 3.0),
            spd(&mut rng, n, 0.1, 20.0),
            DVector::zeros(n),
            ExcitationNet::zeros_linear(4, n),
            DT,
            IntegrationMode::ImplicitDamping,
        );
        let rho = model
            .linearized_update_matrix()
            .unwrap()
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!(rho <= 1.0 + 1e-9, "spectral radius {rho}");
    }
}

// ---------------------------------------------------------------- rollouts

#[test]
fn rollout_of_one_step_equals_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for family in [FamilyKind::Koopman, FamilyKind::Mlp, FamilyKind::Oscillator] {
        let model = random_model(&mut rng, family, 0);
        let n = model.latent_dim();
        let s = LatentState::new(rand_vec(&mut rng, n, 1.0), rand_vec(&mut rng, n, 1.0));
        let u = pressures(&mut rng);
        let roll = model.rollout(&s, std::slice::from_ref(&u)).unwrap();
        assert_eq!(roll.states, vec![model.step(&s, &u).unwrap()]);
    }
}

#[test]
fn rollout_matches_sequential_steps_and_replays_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for family in [FamilyKind::Koopman, FamilyKind::Mlp, FamilyKind::Oscillator] {
        for variant in 0..4 {
            let model = random_model(&mut rng, family, variant);
            let n = model.latent_dim();
            let s0 = LatentState::new(rand_vec(&mut rng, n, 1.0), rand_vec(&mut rng, n, 1.0));
            let useq: Vec<_> = (0..5).map(|_| pressures(&mut rng)).collect();
            let roll = model.rollout(&s0, &useq).unwrap();
            let mut s = s0.clone();
            for (i, u) in useq.iter().enumerate() {
                s = model.step(&s, u).unwrap();
                assert_eq!(s, roll.states[i]);
            }
            assert_eq!(roll.tape.replay(&model).unwrap(), roll.states);
            assert_eq!(roll.tape.horizon(), 5);
        }
    }
}

#[test]
fn koopman_identity_rollout_is_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = koopman(DMatrix::identity(6, 6), ExcitationNet::zeros_linear(4, 6));
    let s = LatentState::new(rand_vec(&mut rng, 3, 1.0), rand_vec(&mut rng, 3, 1.0));
    let roll = model.rollout(&s, &vec![pressures(&mut rng); 7]).unwrap();
    assert!(roll.states.iter().all(|x| *x == s));
}

#[test]
fn rollout_reports_first_divergent_step() {
    let a = DMatrix::identity(2, 2) * 1e200;
    let model = koopman(a, ExcitationNet::zeros_linear(4, 2));
    let s = LatentState::new(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0));
    match model.rollout(&s, &vec![DVector::zeros(4); 5]) {
        Err(Error::Divergence { step }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let model = koopman(DMatrix::identity(4, 4), ExcitationNet::zeros_linear(4, 4));
    let s = LatentState::at_rest(DVector::zeros(3));
    assert!(matches!(
        model.step(&s, &DVector::zeros(4)),
        Err(Error::DimensionMismatch { .. })
    ));
    let s = LatentState::at_rest(DVector::zeros(2));
    assert!(matches!(
        model.step(&s, &DVector::zeros(3)),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn linear_adjoint_matches_analytic_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = rand_mat(&mut rng, 4, 4, 0.5);
    let bmat = rand_mat(&mut rng, 4, 4, 1.0);
    let model = koopman(
        a.clone(),
        ExcitationNet::from_map(ExcitationMap::Linear(bmat.clone())),
    );
    let s = LatentState::from_xi(&rand_vec(&mut rng, 4, 1.0));
    let t = 6;
    let useq: Vec<_> = (0..t).map(|_| pressures(&mut rng)).collect();
    let roll = model.rollout(&s, &useq).unwrap();
    // J = |xi(T)|^2
    let xt = roll.states[t - 1].xi();
    let mut cot = vec![DVector::zeros(4); t];
    cot[t - 1] = &xt * 2.0;
    let grad = model.rollout_vjp(&roll.tape, &cot).unwrap();
    // dJ/dxi0 = 2 (A^T)^T xi(T);  dJ/du_i = B^T (A^T)^(T-1-i) 2 xi(T) / 43.
    let mut lam = &xt * 2.0;
    for i in (0..t).rev() {
        let du = bmat.tr_mul(&lam) / PRESSURE_SCALE;
        assert!((&grad.du[i] - du).amax() < 1e-12);
        lam = a.tr_mul(&lam);
    }
    assert!((grad.dxi0 - lam).amax() < 1e-12);
}

#[test]
fn constant_objective_has_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let model = random_model(&mut rng, FamilyKind::Oscillator, 0);
    let n = model.latent_dim();
    let s = LatentState::at_rest(rand_vec(&mut rng, n, 1.0));
    let useq: Vec<_> = (0..4).map(|_| pressures(&mut rng)).collect();
    let roll = model.rollout(&s, &useq).unwrap();
    let grad = model
        .rollout_vjp(&roll.tape, &vec![DVector::zeros(2 * n); 4])
        .unwrap();
    assert!(grad.dparams.iter().all(|g| *g == 0.0));
    assert!(grad.du.iter().all(|g| g.iter().all(|v| *v == 0.0)));
}

#[test]
fn vjp_rejects_horizon_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let model = random_model(&mut rng, FamilyKind::Koopman, 0);
    let s = LatentState::at_rest(DVector::zeros(model.latent_dim()));
    let roll = model.rollout(&s, &vec![pressures(&mut rng); 3]).unwrap();
    assert!(model
        .rollout_vjp(&roll.tape, &vec![DVector::zeros(12); 2])
        .is_err());
}

/// Weighted-sum objective used by the finite-difference checks.
pub(crate) fn weighted_objective(
    model: &DynModel,
    s0: &LatentState,
    useq: &[DVector<f64>],
    weights: &[DVector<f64>],
) -> f64 {
    let roll = model.rollout(s0, useq).unwrap();
    roll.states
        .iter()
        .zip(weights)
        .map(|(s, w)| {
            let xi = s.xi();
            // Quadratic plus linear terms exercise nonuniform cotangents.
            xi.dot(w) + 0.5 * xi.component_mul(&xi).dot(&w.abs())
        })
        .sum()
}

pub(crate) fn objective_cotangents(
    states: &[LatentState],
    weights: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    states
        .iter()
        .zip(weights)
        .map(|(s, w)| {
            let xi = s.xi();
            w + xi.component_mul(&w.abs())
        })
        .collect()
}

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn rollout_vjp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for family in [FamilyKind::Koopman, FamilyKind::Mlp, FamilyKind::Oscillator] {
        for variant in 0..6 {
            let model = random_model(&mut rng, family, variant);
            let n = model.latent_dim();
            let t = rng.random_range(1..12);
            let s0 = LatentState::new(rand_vec(&mut rng, n, 0.5), rand_vec(&mut rng, n, 0.5));
            let useq: Vec<_> = (0..t).map(|_| pressures(&mut rng)).collect();
            let weights: Vec<_> = (0..t).map(|_| rand_vec(&mut rng, 2 * n, 1.0)).collect();
            let roll = model.rollout(&s0, &useq).unwrap();
            let grad = model
                .rollout_vjp(&roll.tape, &objective_cotangents(&roll.states, &weights))
                .unwrap();
            let h = 1e-5;
            let p = model.params();
            for k in 0..p.len() {
                let mut mp = model.clone();
                let mut q = p.clone();
                q[k] += h;
                mp.set_params(&q);
                let fp = weighted_objective(&mp, &s0, &useq, &weights);
                q[k] -= 2.0 * h;
                mp.set_params(&q);
                let fm = weighted_objective(&mp, &s0, &useq, &weights);
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    rel_err(fd, grad.dparams[k]) < 1e-5,
                    "{family:?}/{variant} param {k}: fd {fd} vs {}",
                    grad.dparams[k]
                );
            }
            for i in 0..t {
                for c in 0..4 {
                    let mut up = useq.clone();
                    up[i][c] += h;
                    let mut um = useq.clone();
                    um[i][c] -= h;
                    let fd = (weighted_objective(&model, &s0, &up, &weights)
                        - weighted_objective(&model, &s0, &um, &weights))
                        / (2.0 * h);
                    assert!(rel_err(fd, grad.du[i][c]) < 1e-5, "{family:?} du[{i}][{c}]");
                }
            }
            let xi0 = s0.xi();
            for k in 0..2 * n {
                let mut xp = xi0.clone();
                xp[k] += h;
                let mut xm = xi0.clone();
                xm[k] -= h;
                let fd = (weighted_objective(&model, &LatentState::from_xi(&xp), &useq, &weights)
                    - weighted_objective(&model, &LatentState::from_xi(&xm), &useq, &weights))
                    / (2.0 * h);
                assert!(rel_err(fd, grad.dxi0[k]) < 1e-5, "{family:?} dxi0[{k}]");
            }
        }
    }
}

#[test]
fn tensors_round_trip_through_named_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for family in [FamilyKind::Koopman, FamilyKind::Mlp, FamilyKind::Oscillator] {
        for variant in 0..4 {
            let model = random_model(&mut rng, family, variant);
            let mut map = crate::tensor::TensorMap::new();
            model.tensors("dyn", &mut map);
            let mut other = random_model(&mut rng, family, variant);
            other.load_tensors("dyn", &map).unwrap();
            assert_eq!(model, other);
        }
    }
}
