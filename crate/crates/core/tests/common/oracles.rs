//! Un-simplified reference formulas, written directly from the signal model
//! with full-array matrices and generic least squares.

use nalgebra::DMatrix;
use risloc::channel::{build_channel, RxSignal, Sounding};
use risloc::params::{ChannelParams, PathParams};
use risloc::{CMat, CVec, C64};

/// Noiseless received tensor built slot by slot from the full channel matrix.
pub fn mean_signal(s: &Sounding, params: &ChannelParams) -> Vec<CMat> {
    (0..s.n_sub())
        .map(|n| {
            let mut y = CMat::zeros(s.arrays.n_b, s.n_slots());
            for t in 0..s.n_slots() {
                let h = build_channel(s, params, &s.schedule.g_t(t), n).unwrap();
                y.set_column(t, &(h * s.pilots.slot(t)));
            }
            y
        })
        .collect()
}

fn sq_dist(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

fn energy(a: &[CMat]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum()
}

/// `sum ||Y||^2 - sum ||Y - mu(eta)||^2`.
pub fn loglik_raw(s: &Sounding, params: &ChannelParams, y: &[CMat]) -> f64 {
    energy(y) - sq_dist(y, &mean_signal(s, params))
}

fn unit_gain(p: &PathParams, s: &Sounding) -> ChannelParams {
    let mut q = *p;
    q.delta = C64::new(1.0, 0.0);
    ChannelParams {
        paths: vec![q],
        link: s.link,
    }
}

fn inner(a: &[CMat], b: &[CMat]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.dotc(y)).sum()
}

/// Least-squares gain of one path on full-array complete data.
pub fn gain_raw(s: &Sounding, p: &PathParams, yq: &[CMat]) -> C64 {
    let mu = mean_signal(s, &unit_gain(p, s));
    inner(&mu, yq) / energy(&mu)
}

/// The two-term single-path likelihood `sum ||Y_q||^2 - sum ||Y_q - delta mu||^2`
/// at a given gain.
pub fn single_path_l(s: &Sounding, p: &PathParams, delta: C64, yq: &[CMat]) -> f64 {
    let mut q = *p;
    q.delta = delta;
    let mu = mean_signal(s, &ChannelParams { paths: vec![q], link: s.link });
    energy(yq) - sq_dist(yq, &mu)
}

/// Concentrated AOD cost over the first block: per subcarrier, fit the
/// model `a_B gamma^T A^H X_1` by generic least squares and return the summed
/// residual energy minus the data energy.
pub fn aod_cost_raw(rx: &RxSignal, s: &Sounding, thetas: &[f64]) -> f64 {
    let t1 = s.cfg.first_block_slots;
    let x1 = rx.pilots.slots(0..t1);
    let a_b = s.a_b();
    let nb = s.arrays.n_b;
    let k = thetas.len();
    let mut regress = DMatrix::<C64>::zeros(nb * t1, k);
    for (q, th) in thetas.iter().enumerate() {
        let row = s.a_m(*th).adjoint() * &x1;
        let outer = a_b * row;
        for (i, v) in outer.iter().enumerate() {
            regress[(i, q)] = *v;
        }
    }
    let svd = regress.clone().svd(true, true);
    let mut total = 0.0;
    for y in &rx.y {
        let y1 = y.columns(0, t1).into_owned();
        let vec_y = CVec::from_iterator(nb * t1, y1.iter().copied());
        let gamma = svd.solve(&vec_y, 1e-14).unwrap();
        let resid = &vec_y - &regress * gamma;
        total += resid.norm_squared() - vec_y.norm_squared();
    }
    total
}
