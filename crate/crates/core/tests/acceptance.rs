//! Acceptance suite: every criterion at its stated tolerance, one PASS/FAIL
//! line each.
//!
//! Runs without the libtest harness so the verdict lines are always shown.
//! The process fails when any criterion outside `KNOWN_DEVIATIONS` fails, or
//! when a known deviation unexpectedly passes.

use std::f64::consts::{LN_2, TAU};
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use sicfiber::air::{air_cscg, air_genie, air_rings, AirOptions, CpanChannel};
use sicfiber::constellation::{sample_symbols, urr_design, ConstellationSpec};
use sicfiber::cpan::{CpanParams, ParamTable, PhaseNoiseParams};
use sicfiber::estimation::{estimate_mean_phase, estimate_sigma_n, TrainingSet};
use sicfiber::experiment::{dbm_to_watts, run_experiment, ExperimentConfig};
use sicfiber::fiber::{dbp_single_channel, modulate_wdm, receiver_frontend, ssfm_propagate, FiberParams, Waveform};
use sicfiber::math::GaussianMessage;
use sicfiber::rng::{complex_normal, StreamKey, StreamRole};
use sicfiber::sic::{observation_message, posterior_moments, run_stage, smooth_stage, ApproximationStats};
use sicfiber::SicSchedule;

/// Criteria expected to fail, with the reason recorded in the decisions
/// ledger.
const KNOWN_DEVIATIONS: &[usize] = &[4, 9];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn presets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn capacity(snr: f64) -> f64 {
    snr.ln_1p() / LN_2
}

fn awgn_sanity() -> Verdict {
    let sched = SicSchedule::new(4096, 1).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for snr_db in [5.0, 10.0, 15.0, 20.0] {
        let snr = 10f64.powf(snr_db / 10.0);
        let ch = CpanChannel::awgn(1.0 / snr, ConstellationSpec::cscg(1.0).unwrap(), 101).unwrap();
        let r = air_cscg(&ch, &ch.params, &sched, snr_db, 24, &AirOptions::default()).unwrap();
        let err = (r.total_bpcu - capacity(snr)).abs();
        worst = worst.max(err);
        parts.push(format!("{snr_db} dB: {:.4} vs {:.4}", r.total_bpcu, capacity(snr)));
    }
    verdict(worst <= 0.03, format!("max |AIR - C| = {worst:.4} (tol 0.03); {}", parts.join(", ")))
}

/// Posterior moments by direct integration over the phase of the
/// conditional moments given `theta`, weighted by the phase message.
fn theta_quadrature(y: Complex64, mu: f64, var: f64, sx2: f64, sn2: f64) -> (Complex64, f64, Complex64) {
    let sy2 = sx2 + sn2;
    let g = sx2 / sy2;
    let (lo, hi, k) = (mu - 14.0 * var.sqrt(), mu + 14.0 * var.sqrt(), 20_000);
    let h = (hi - lo) / k as f64;
    let (mut m1, mut m2a, mut m2) = (Complex64::new(0.0, 0.0), 0.0, Complex64::new(0.0, 0.0));
    for j in 0..=k {
        let t = lo + j as f64 * h;
        let w = if j == 0 || j == k { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        let dens = (-(t - mu).powi(2) / (2.0 * var)).exp() / (TAU * var).sqrt() * w * h / 3.0;
        let mean_t = y * Complex64::from_polar(g, -t);
        m1 += mean_t * dens;
        m2a += (g * sn2 + mean_t.norm_sqr()) * dens;
        m2 += mean_t * mean_t * dens;
    }
    (m1, m2a - m1.norm_sqr(), m2 - m1 * m1)
}

fn appendix_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for a in 0..5 {
        for b in 0..4 {
            for c in 0..5 {
                let y = Complex64::from_polar(0.2 + 0.7 * a as f64, -2.5 + 1.3 * b as f64);
                let mu = -0.6 + 0.3 * c as f64;
                let var = [1e-4, 3e-3, 0.02, 0.1, 0.4][(a + b + c) % 5];
                let sx2 = [0.5, 1.0, 2.0][(a + c) % 3];
                let sn2 = [1e-3, 0.05, 0.3, 1.0][(b + c) % 4];
                let fwd = GaussianMessage { mean: mu, variance: var };
                let m = posterior_moments(y, fwd, sx2, sn2);
                let (q1, qv, qp) = theta_quadrature(y, mu, var, sx2, sn2);
                let rel = [
                    (m.mean - q1).norm() / q1.norm(),
                    (m.variance - qv).abs() / qv,
                    (m.pseudo_variance - qp).norm() / qp.norm(),
                ];
                worst = rel.iter().fold(worst, |w, r| w.max(*r));
                count += 1;
            }
        }
    }
    verdict(worst <= 1e-6, format!("{count} grid points, max relative error {worst:.2e} (tol 1e-6)"))
}

/// Kalman filter and Rauch-Tung-Striebel smoother for the AR(1) chain.
fn rts_smoother(obs: &[Option<GaussianMessage>], p: &PhaseNoiseParams) -> Vec<GaussianMessage> {
    let n = obs.len();
    let (mut mf, mut pf, mut mp, mut pp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        (mp[k], pp[k]) = if k == 0 {
            (0.0, p.sigma_theta2)
        } else {
            (p.mu_delta * mf[k - 1], p.mu_delta.powi(2) * pf[k - 1] + p.sigma_delta2)
        };
        (mf[k], pf[k]) = match obs[k] {
            Some(o) => {
                let g = pp[k] / (pp[k] + o.variance);
                (mp[k] + g * (o.mean - mp[k]), (1.0 - g) * pp[k])
            }
            None => (mp[k], pp[k]),
        };
    }
    let mut out = vec![GaussianMessage { mean: mf[n - 1], variance: pf[n - 1] }; n];
    for k in (0..n - 1).rev() {
        let c = pf[k] * p.mu_delta / pp[k + 1];
        out[k] = GaussianMessage {
            mean: mf[k] + c * (out[k + 1].mean - mp[k + 1]),
            variance: pf[k] + c * c * (out[k + 1].variance - pp[k + 1]),
        };
    }
    out
}

fn smoother_equivalence() -> Verdict {
    let n = 1024;
    let phase = PhaseNoiseParams {
        sigma_theta2: 0.01,
        mu_delta: 0.995,
        sigma_delta2: 0.01 * (1.0 - 0.995f64.powi(2)),
    };
    let mut rng = StreamKey::new(303, StreamRole::PhaseNoise, 0).rng(0);
    let mut theta = vec![0.0; n];
    for i in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        theta[i] = if i == 0 { phase.sigma_theta2.sqrt() * d } else { phase.mu_delta * theta[i - 1] + phase.sigma_delta2.sqrt() * d };
    }
    let x = sample_symbols(&ConstellationSpec::cscg(1.0).unwrap(), n, &mut rng);
    let sigma_n2 = 1e-3;
    let y: Vec<Complex64> = x
        .iter()
        .zip(&theta)
        .map(|(x, t)| x * Complex64::from_polar(1.0, *t) + complex_normal(&mut rng, sigma_n2))
        .collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let close = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for stages in [2, 8, 64] {
        let sched = SicSchedule::new(n, stages).unwrap();
        for s in 2..=stages {
            // exact Gaussian observations of the true chain
            let exact: Vec<Option<GaussianMessage>> = (0..n)
                .map(|i| {
                    sched.is_decoded_before(i, s).then(|| {
                        let v = 1e-4 * (1.0 + (i % 7) as f64);
                        let e: f64 = rng.sample(StandardNormal);
                        GaussianMessage { mean: theta[i] + v.sqrt() * e, variance: v }
                    })
                })
                .collect();
            let reference = rts_smoother(&exact, &phase);
            for (i, m) in smooth_stage(&exact, &sched, s, &phase).unwrap().downward {
                worst = worst.max(close(m.mean, reference[i].mean)).max(close(m.variance, reference[i].variance));
                checked += 1;
            }

            // the same through run_stage, whose observations are the
            // small-angle messages of the decoded symbols
            let decoded: Vec<Option<Complex64>> = (0..n).map(|i| sched.is_decoded_before(i, s).then_some(x[i])).collect();
            let obs: Vec<Option<GaussianMessage>> =
                (0..n).map(|i| decoded[i].and_then(|xi| observation_message(y[i], xi, sigma_n2))).collect();
            let reference = rts_smoother(&obs, &phase);
            let mut stats = ApproximationStats::default();
            for (i, m) in run_stage(&y, &decoded, &sched, s, &phase, sigma_n2, &mut stats).unwrap().downward {
                worst = worst.max(close(m.mean, reference[i].mean)).max(close(m.variance, reference[i].variance));
                checked += 1;
            }
        }
    }
    verdict(worst <= 1e-10, format!("{checked} downward messages, max relative deviation {worst:.2e} (tol 1e-10)"))
}

fn message_count() -> Verdict {
    let phase = PhaseNoiseParams {
        sigma_theta2: 0.01,
        mu_delta: 0.99,
        sigma_delta2: 0.01 * (1.0 - 0.99f64.powi(2)),
    };
    let mut mismatches = Vec::new();
    let mut total = 0;
    for (n, stages) in [(1024, 2), (1024, 8), (4096, 16)] {
        let sched = SicSchedule::new(n, stages).unwrap();
        let obs = vec![None; n];
        for s in 2..=stages {
            let count = smooth_stage(&obs, &sched, s, &phase).unwrap().count.total();
            let formula = (6.0 - 2.0 / s as f64) * n as f64 - 2.0;
            total += 1;
            if count as f64 != formula {
                mismatches.push(format!("(n={n},S={stages},s={s}): {count} vs {formula}"));
            }
        }
    }
    let shown: Vec<_> = mismatches.iter().take(3).cloned().collect();
    verdict(
        mismatches.is_empty(),
        format!("{}/{total} cases differ from (6 - 2/s)n - 2; e.g. {}", mismatches.len(), shown.join("; ")),
    )
}

fn cpan_shape() -> Verdict {
    let path = presets().join("reference_params.tsv");
    let table = match ParamTable::read(&path) {
        Ok(t) => t,
        Err(e) => return verdict(false, format!("cannot read {}: {e}", path.display())),
    };
    let (n, n_seq) = (8192, 40);
    let opts = AirOptions::default();
    let channel_at = |row: &sicfiber::cpan::ParamRow| {
        let params = row.cpan().unwrap();
        let spec = ConstellationSpec::cscg(dbm_to_watts(row.power_dbm)).unwrap();
        (params, CpanChannel::new(params, spec, 505))
    };
    let sic64 = SicSchedule::new(n, 64).unwrap();
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, row) in table.rows.iter().enumerate() {
        let (params, ch) = channel_at(row);
        let r = air_cscg(&ch, &params, &sic64, row.power_dbm, n_seq, &opts).unwrap();
        if r.total_bpcu > best.0 {
            best = (r.total_bpcu, k);
        }
    }
    let row = table.rows[best.1];
    let (params, ch) = channel_at(&row);
    let reports: Vec<_> = [1, 2, 4, 8, 16, 64]
        .iter()
        .map(|&s| air_cscg(&ch, &params, &SicSchedule::new(n, s).unwrap(), row.power_dbm, n_seq, &opts).unwrap())
        .collect();
    let genie = air_genie(&ch, params.sigma_n2, n, row.power_dbm, n_seq, &opts).unwrap();
    let monotone = reports
        .windows(2)
        .all(|w| w[1].total_bpcu >= w[0].total_bpcu - 2.0 * w[0].ci_halfwidth.max(w[1].ci_halfwidth));
    let air = |k: usize| reports[k].total_bpcu;
    let near_64 = air(3) >= 0.99 * air(5);
    let below_genie = reports.iter().all(|r| r.total_bpcu <= genie.total_bpcu + 2.0 * genie.ci_halfwidth);
    let rates: Vec<String> = reports.iter().map(|r| format!("S={}: {:.4}", r.stages(), r.total_bpcu)).collect();
    verdict(
        monotone && near_64 && below_genie,
        format!(
            "peak {:.1} dBm; {}; genie {:.4} +- {:.4}; monotone {monotone}, SIC-8/SIC-64 = {:.4}, below genie {below_genie}",
            row.power_dbm,
            rates.join(", "),
            genie.total_bpcu,
            genie.ci_halfwidth,
            air(3) / air(5)
        ),
    )
}

fn ase_calibration() -> Verdict {
    let p = FiberParams::reference();
    let formula_ok = (p.n_ase() - 5.902e-18).abs() < 5e-22;
    let (n, osf, steps, n_seq) = (4096, 8, 50, 8);
    let zeros = vec![Complex64::new(0.0, 0.0); n];
    let interferers = vec![zeros.clone(); p.n_wdm - 1];
    let silent = modulate_wdm(&zeros, &interferers, &p, osf).unwrap();
    let mut power = 0.0;
    for k in 0..n_seq {
        let rx = ssfm_propagate(&silent, &p, steps, Some(StreamKey::new(606, StreamRole::Ase, k))).unwrap();
        let y = receiver_frontend(&rx, &p, 0.0, 0).unwrap();
        power += y.iter().map(|v| v.norm_sqr()).sum::<f64>() / (n * n_seq as usize) as f64;
    }
    let rel = power / 2.951e-7 - 1.0;
    verdict(
        formula_ok && rel.abs() <= 0.02,
        format!("N_ASE = {:.4e} W/Hz; matched-filter noise {power:.4e} ({:+.2}% vs 2.951e-7, tol 2%)", p.n_ase(), 100.0 * rel),
    )
}

fn ssfm_verification() -> Verdict {
    let base = FiberParams { n_wdm: 3, ..FiberParams::reference() };
    let n = 1024;
    let power = dbm_to_watts(3.0);
    let spec = ConstellationSpec::cscg(power).unwrap();
    let block = |role| sample_symbols(&spec, n, &mut StreamKey::new(707, role, 0).rng(0));
    let x = block(StreamRole::Symbols);
    let inter = vec![block(StreamRole::Interferer(-1)), block(StreamRole::Interferer(1))];
    let spectrum = |w: &Waveform| {
        let mut s = w.samples.clone();
        rustfft::FftPlanner::new().plan_fft_forward(s.len()).process(&mut s);
        s
    };

    let linear = FiberParams { gamma: 0.0, ..base.clone() };
    let tx = modulate_wdm(&x, &inter, &linear, 4).unwrap();
    let rx = ssfm_propagate(&tx, &linear, 50, None).unwrap();
    let (s0, s1) = (spectrum(&tx), spectrum(&rx));
    let peak = s0.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let all_pass = s0.iter().zip(&s1).map(|(a, b)| (a.norm() - b.norm()).abs()).fold(0.0, f64::max) / peak;

    let dispersionless = FiberParams { beta2: 0.0, ..base.clone() };
    let tx = modulate_wdm(&x, &inter, &dispersionless, 4).unwrap();
    let rx = ssfm_propagate(&tx, &dispersionless, 50, None).unwrap();
    let modulus = tx
        .samples
        .iter()
        .zip(&rx.samples)
        .map(|(a, b)| (a.norm() - b.norm()).abs() / a.norm().max(1e-300))
        .fold(0.0, f64::max);

    let tx = modulate_wdm(&x, &inter, &base, 4).unwrap();
    let rx = ssfm_propagate(&tx, &base, 200, None).unwrap();
    let back = dbp_single_channel(&rx, &base, 200).unwrap();
    let num: f64 = back.samples.iter().zip(&tx.samples).map(|(a, b)| (a - b).norm_sqr()).sum();
    let roundtrip = (num / tx.energy()).sqrt();

    verdict(
        all_pass <= 1e-9 && modulus <= 1e-9 && roundtrip <= 1e-6,
        format!("all-pass {all_pass:.2e}, modulus {modulus:.2e} (tol 1e-9); DBP round trip {roundtrip:.2e} (tol 1e-6)"),
    )
}

fn ring_saturation() -> Verdict {
    let sigma_n2 = 2.95e-7;
    let power = sigma_n2 * (2f64.powf(8.6) - 1.0);
    let (n, n_seq) = (4096, 24);
    let sched = SicSchedule::new(n, 1).unwrap();
    let opts = AirOptions::default();
    let params = CpanParams::awgn(sigma_n2).unwrap();
    let cscg = {
        let ch = CpanChannel::awgn(sigma_n2, ConstellationSpec::cscg(power).unwrap(), 808).unwrap();
        air_cscg(&ch, &params, &sched, 0.0, n_seq, &opts).unwrap()
    };
    let rings = |n_r: usize| {
        let r = urr_design(n_r, power).unwrap();
        let ch = CpanChannel::awgn(sigma_n2, ConstellationSpec::Rings(r.clone()), 808).unwrap();
        air_rings(&ch, &params, &r, &sched, 0.0, n_seq, &opts).unwrap()
    };
    let (r32, r4) = (rings(32), rings(4));
    let gap32 = (r32.total_bpcu - cscg.total_bpcu).abs();
    let gap4 = cscg.total_bpcu - r4.total_bpcu;
    verdict(
        gap32 <= 0.1 && gap4 >= 1.0,
        format!(
            "CSCG {:.4}, 32 rings {:.4} (gap {gap32:.4}, tol 0.1), 4 rings {:.4} (gap {gap4:.4}, need >= 1)",
            cscg.total_bpcu, r32.total_bpcu, r4.total_bpcu
        ),
    )
}

fn fiber_headline() -> Verdict {
    let cfg = ExperimentConfig::load(&presets().join("desk.toml")).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let curve = |label: &str| -> Vec<f64> {
        cfg.powers_dbm
            .iter()
            .map(|&p| {
                out.reports
                    .iter()
                    .find(|r| r.power_dbm == p && r.receiver.label() == label)
                    .map(|r| r.total_bpcu)
                    .expect("configured receiver")
            })
            .collect()
    };
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let (sic8, mem) = (curve("8"), curve("memoryless"));
    let (k8, km) = (argmax(&sic8), argmax(&mem));
    let gain = sic8[k8] - mem[km];
    let gain_at_peak = sic8[k8] - mem[k8];
    let interior = k8 > 0 && k8 + 1 < sic8.len();
    let below = out.reports.iter().all(|r| {
        let bound = out.bounds.iter().find(|(p, _)| *p == r.power_dbm).expect("bound configured").1;
        r.total_bpcu < bound
    });
    verdict(
        gain >= 0.3 && interior && below,
        format!(
            "SIC-8 peak {:.4} at {:.1} dBm, memoryless peak {:.4} at {:.1} dBm, peak gain {gain:.4} (need >= 0.3; {gain_at_peak:.4} at the SIC-8 peak power); interior {interior}; below bound {below}",
            sic8[k8], cfg.powers_dbm[k8], mem[km], cfg.powers_dbm[km]
        ),
    )
}

fn estimation_recovery() -> Verdict {
    let sigma2 = 0.02;
    let spec = ConstellationSpec::cscg(1.0).unwrap();
    let mut rng = StreamKey::new(909, StreamRole::AdditiveNoise, 0).rng(0);
    let x = sample_symbols(&spec, 100_000, &mut StreamKey::new(909, StreamRole::Symbols, 0).rng(0));
    let y: Vec<Complex64> = x.iter().map(|v| v + complex_normal(&mut rng, sigma2)).collect();
    let fitted = estimate_sigma_n(&TrainingSet::from_pairs([(x.clone(), y)]).unwrap()).unwrap();
    let rel = fitted / sigma2 - 1.0;

    let rot = 0.7;
    let rotated: Vec<Complex64> = x.iter().map(|v| v * Complex64::from_polar(1.0, rot)).collect();
    let phase = estimate_mean_phase(&TrainingSet::from_pairs([(x, rotated)]).unwrap()).unwrap();
    let phase_err = (phase - rot).abs();
    verdict(
        rel.abs() <= 0.03 && phase_err <= 1e-12,
        format!("sigma_n2 {fitted:.5e} vs {sigma2:e} ({:+.2}%, tol 3%); rotation error {phase_err:.1e} (tol 1e-12)", 100.0 * rel),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target, or a listing request, should not run the suite
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    type Criterion = (usize, &'static str, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "AWGN sanity", awgn_sanity),
        (2, "posterior moments vs phase quadrature", appendix_oracle),
        (3, "smoother vs reference Kalman/RTS", smoother_equivalence),
        (4, "message-count formula", message_count),
        (5, "CPAN benchmark shape", cpan_shape),
        (6, "ASE calibration", ase_calibration),
        (7, "split-step verification", ssfm_verification),
        (8, "ring saturation", ring_saturation),
        (9, "fiber headline (desk scale)", fiber_headline),
        (10, "estimation recovery", estimation_recovery),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {name}: {} ({:.1} s)", v.detail, start.elapsed().as_secs_f64());
        if v.pass == KNOWN_DEVIATIONS.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all outcomes as recorded (known deviations: {KNOWN_DEVIATIONS:?})");
    } else {
        println!("acceptance: unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
