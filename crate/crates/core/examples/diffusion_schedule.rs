//! The linear noise schedule, forward noising and one reverse step.
//!
//! cargo run --example diffusion_schedule

use diffdepth::diffusion::{denoise_step_mean, q_sample_f64, ScheduleConfig};
use diffdepth::rng::derive_rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> diffdepth::Result<()> {
    let sched = ScheduleConfig::default().build()?;
    println!("{} steps", sched.steps());
    for t in [0, 50, 100, 150, 500, 999] {
        let (a, b) = sched.mixing(t);
        println!("t={t:>3}  beta={:.5}  alpha_bar={:.5}  signal={a:.4}  noise={b:.4}", sched.beta(t), sched.alpha_bar(t));
    }

    let mut rng = derive_rng(0, &[]);
    let x0 = [0.8, -0.2, 0.5, -0.9];
    let eps: Vec<f64> = x0.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    let t = 150;
    let xt = q_sample_f64(&x0, t, &eps, &sched)?;
    // With the true noise in hand the clean signal comes straight back.
    let (a, b) = sched.mixing(t);
    let back: Vec<f64> = xt.iter().zip(&eps).map(|(x, e)| (x - b * e) / a).collect();
    println!("x0      {x0:?}\nx_{t}   {xt:.4?}\nrecover {back:.4?}");
    println!("reverse mean at t={t}: {:.4?}", denoise_step_mean(&xt, t, &eps, &sched)?);
    Ok(())
}
