//! Deterministic surrogate generators for the two real-world tables the
//! experiments expect.
//!
//! The sandbox has no network access, so when the genuine CSV files are
//! absent the `prep` command writes these stand-ins instead: same file
//! names, same column layout and row counts, same qualitative structure
//! (a latent severity/time driver behind the informative columns, plus
//! genuinely uninformative random columns). Every report generated from a
//! surrogate is labelled as such. Placing the real files in the data
//! directory makes the pipeline use them unchanged.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const PARKINSONS_ROWS: usize = 5875;
pub const PARKINSONS_SUBJECTS: usize = 42;
pub const ENERGY_ROWS: usize = 19735;

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Telemonitoring-style voice table: 42 subjects tracked over ~6 months,
/// 22 columns, 5875 rows. A per-subject latent severity `z` (baseline +
/// progression + demographics) drives the UPDRS targets and, with
/// independent measurement noise, every voice feature; `subject#` and
/// `test_time` are bookkeeping columns the experiment drops.
pub fn parkinsons_csv(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha8Rng, sd: f64| sd * n01.sample(rng);

    let mut out = String::with_capacity(PARKINSONS_ROWS * 180);
    out.push_str(
        "subject#,age,sex,test_time,motor_UPDRS,total_UPDRS,Jitter(%),Jitter(Abs),\
         Jitter:RAP,Jitter:PPQ5,Jitter:DDP,Shimmer,Shimmer(dB),Shimmer:APQ3,\
         Shimmer:APQ5,Shimmer:APQ11,Shimmer:DDA,NHR,HNR,RPDE,DFA,PPE\n",
    );
    for subject in 0..PARKINSONS_SUBJECTS {
        let age: i64 = rng.gen_range(36..=85);
        let sex: i64 = if rng.gen_bool(0.68) { 0 } else { 1 };
        let base = draw(&mut rng, 1.0);
        let rate = 0.5 + draw(&mut rng, 0.3);
        let age_norm = (age as f64 - 60.0) / 15.0;
        // Five subjects carry one fewer recording: 42·140 − 5 = 5875.
        let recordings = if subject < 5 { 139 } else { 140 };
        for r in 0..recordings {
            let test_time =
                180.0 * (r as f64 + 0.5) / recordings as f64 + draw(&mut rng, 1.5);
            let z = base
                + rate * (test_time / 180.0)
                + 0.3 * age_norm
                + 0.2 * sex as f64
                + draw(&mut rng, 0.15);

            let total = clamp(21.0 + 8.0 * z + draw(&mut rng, 1.5), 0.0, 60.0);
            let motor = clamp(0.75 * total - 2.0 + draw(&mut rng, 1.0), 0.0, 40.0);

            let jitter_pct =
                clamp(0.006 * (0.35 * z + draw(&mut rng, 0.25)).exp(), 1e-4, 0.1);
            let jitter_abs =
                clamp(4.4e-5 * (0.35 * z + draw(&mut rng, 0.25)).exp(), 1e-6, 5e-4);
            let rap = clamp(0.003 * (0.4 * z + draw(&mut rng, 0.3)).exp(), 5e-5, 0.06);
            let ppq5 = clamp(0.0033 * (0.4 * z + draw(&mut rng, 0.3)).exp(), 5e-5, 0.06);
            let ddp = clamp(3.0 * rap * (1.0 + draw(&mut rng, 0.01)), 1.5e-4, 0.2);
            let shimmer =
                clamp(0.034 * (0.3 * z + draw(&mut rng, 0.25)).exp(), 1e-3, 0.3);
            let shimmer_db =
                clamp(0.31 * (0.3 * z + draw(&mut rng, 0.25)).exp(), 0.01, 2.5);
            let apq3 = clamp(0.017 * (0.3 * z + draw(&mut rng, 0.28)).exp(), 5e-4, 0.15);
            let apq5 = clamp(0.02 * (0.3 * z + draw(&mut rng, 0.28)).exp(), 5e-4, 0.17);
            let apq11 =
                clamp(0.028 * (0.28 * z + draw(&mut rng, 0.28)).exp(), 5e-4, 0.25);
            let dda = clamp(3.0 * apq3 * (1.0 + draw(&mut rng, 0.01)), 1.5e-3, 0.45);
            let nhr = clamp(0.032 * (0.5 * z + draw(&mut rng, 0.4)).exp(), 1e-4, 0.75);
            let hnr = clamp(21.7 - 2.2 * z + draw(&mut rng, 1.5), 1.0, 40.0);
            let rpde = clamp(0.54 + 0.04 * z + draw(&mut rng, 0.03), 0.1, 0.97);
            let dfa = clamp(0.65 + 0.02 * z + draw(&mut rng, 0.04), 0.4, 0.9);
            let ppe = clamp(0.22 + 0.05 * z + draw(&mut rng, 0.03), 0.02, 0.75);

            out.push_str(&format!(
                "{},{},{},{:.4},{:.5},{:.5},{:.6},{:.8},{:.6},{:.6},{:.6},{:.6},\
                 {:.5},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.5},{:.5},{:.5}\n",
                subject + 1,
                age,
                sex,
                test_time,
                motor,
                total,
                jitter_pct,
                jitter_abs,
                rap,
                ppq5,
                ddp,
                shimmer,
                shimmer_db,
                apq3,
                apq5,
                apq11,
                dda,
                nhr,
                hnr,
                rpde,
                dfa,
                ppe
            ));
        }
    }
    out
}

/// Renders `2016-01-11 17:00:00 + minutes` as `YYYY-MM-DD HH:MM:SS`.
/// 2016 is a leap year; the range used stays within it.
fn energy_timestamp(minutes: u64) -> String {
    const MONTH_DAYS: [u64; 12] = [31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let total = 17 * 60 + minutes; // minutes since 2016-01-11 00:00
    let mut day_index = 10 + total / 1440; // zero-based day of year
    let minute_of_day = total % 1440;
    let mut month = 0usize;
    while day_index >= MONTH_DAYS[month] {
        day_index -= MONTH_DAYS[month];
        month += 1;
    }
    format!(
        "2016-{:02}-{:02} {:02}:{:02}:00",
        month + 1,
        day_index + 1,
        minute_of_day / 60,
        minute_of_day % 60
    )
}

/// Household energy table: 19735 rows at ten-minute cadence over ~4.5
/// months, 29 columns. Appliance load follows morning/evening habit peaks
/// plus weather couplings; room temperatures and humidities carry daily
/// cycles (so clock time is recoverable from them even though the `date`
/// column is dropped); `rv1`/`rv2` are independent uniform noise with no
/// bearing on the target.
pub fn energy_csv(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha8Rng, sd: f64| sd * n01.sample(rng);

    const T_BASE: [f64; 9] = [20.5, 19.8, 21.2, 20.1, 19.2, 18.6, 20.8, 21.4, 19.5];
    const T_AMP: [f64; 9] = [0.9, 0.7, 1.1, 0.6, 0.8, 1.2, 0.5, 0.7, 1.0];
    const RH_BASE: [f64; 9] = [39.0, 40.0, 38.0, 41.0, 44.0, 43.0, 36.0, 42.0, 41.0];
    const RH_AMP: [f64; 9] = [2.5, 3.0, 2.0, 2.5, 3.5, 4.0, 2.0, 3.0, 2.5];

    let mut out = String::with_capacity(ENERGY_ROWS * 260);
    out.push_str(
        "date,Appliances,lights,T1,RH_1,T2,RH_2,T3,RH_3,T4,RH_4,T5,RH_5,T6,RH_6,\
         T7,RH_7,T8,RH_8,T9,RH_9,T_out,Press_mm_hg,RH_out,Windspeed,Visibility,\
         Tdewpoint,rv1,rv2\n",
    );
    let tau = std::f64::consts::TAU;
    for i in 0..ENERGY_ROWS {
        let minutes = 10 * i as u64;
        let minute_of_day = ((17 * 60 + minutes) % 1440) as f64;
        let hour = minute_of_day / 60.0;
        let day = (17.0 * 60.0 + minutes as f64) / 1440.0;

        let t_out = 3.0 + 9.0 * (day / 137.0)
            + 5.0 * (tau * (minute_of_day - 870.0) / 1440.0).cos()
            + draw(&mut rng, 1.2);
        let rh_out = clamp(85.0 - 2.2 * (t_out - 5.0) + draw(&mut rng, 4.0), 20.0, 100.0);

        let mut temps = [0.0f64; 9];
        let mut hums = [0.0f64; 9];
        for room in 0..9 {
            let t = T_BASE[room]
                + 0.25 * (t_out - 7.0)
                + T_AMP[room] * (tau * (minute_of_day - 950.0) / 1440.0).cos()
                + draw(&mut rng, 0.35);
            let rh = clamp(
                RH_BASE[room] - 0.8 * (t - 20.0)
                    + RH_AMP[room] * (tau * (minute_of_day - 300.0) / 1440.0).cos()
                    + draw(&mut rng, 2.0),
                20.0,
                65.0,
            );
            temps[room] = t;
            hums[room] = rh;
        }

        let press = clamp(755.0 + 6.0 * (tau * day / 9.0).sin() + draw(&mut rng, 1.5), 720.0, 780.0);
        let wind = clamp(2.0 + 3.0 * (tau * day / 5.3).sin() + draw(&mut rng, 1.8), 0.0, 14.0);
        let visibility = clamp(40.0 + draw(&mut rng, 8.0), 1.0, 66.0);
        let tdew = t_out - (100.0 - rh_out) / 5.0 + draw(&mut rng, 0.8);

        let evening = (-(hour - 20.0) * (hour - 20.0) / 8.0).exp();
        let lights_raw = clamp(evening * (1.5 + draw(&mut rng, 1.2)), 0.0, 7.0);
        let lights = 10 * lights_raw.round() as i64;

        let morning = (-(hour - 7.5) * (hour - 7.5) / 2.0).exp();
        let evening_load = (-(hour - 19.0) * (hour - 19.0) / 4.5).exp();
        let appliances_raw = 45.0
            + 55.0 * morning
            + 140.0 * evening_load
            + 1.2 * (22.0 - t_out).max(0.0)
            + 0.8 * (hums[0] - 40.0)
            + draw(&mut rng, 25.0);
        let appliances = 10 * ((appliances_raw / 10.0).round() as i64).max(1);

        let rv1: f64 = rng.gen_range(0.0..50.0);
        let rv2: f64 = rng.gen_range(0.0..50.0);

        out.push_str(&format!("{},{},{}", energy_timestamp(minutes), appliances, lights));
        for room in 0..9 {
            out.push_str(&format!(",{:.6},{:.6}", temps[room], hums[room]));
        }
        out.push_str(&format!(
            ",{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            t_out, press, rh_out, wind, visibility, tdew, rv1, rv2
        ));
    }
    out
}
