use speechdiff::checks::{gradient_check, gradient_check_batch};
use speechdiff::rng::seeded;
use speechdiff::score::{dsm_loss, ModelConfig, ScoreNet};
use speechdiff::sde::SdeSchedule;

#[test]
fn backprop_matches_central_differences() {
    let net = ScoreNet::init(ModelConfig::default(), &mut seeded(11)).unwrap();
    let batch = gradient_check_batch(12).unwrap();
    let r = gradient_check(&net, &batch, &SdeSchedule::default(), 1e-4, 1e-4).unwrap();
    println!("{r:?}");
    assert_eq!(r.checked, net.num_params());
    assert_eq!(r.failures, 0, "{r:?}");
}

#[test]
fn loss_is_non_negative_and_zero_at_exact_noise() {
    let mut net = ScoreNet::init(ModelConfig::default(), &mut seeded(1)).unwrap();
    let batch = gradient_check_batch(2).unwrap();
    let sched = SdeSchedule::default();
    let (loss, _) = dsm_loss(&net, &batch, &sched).unwrap();
    assert!(loss > 0.0);

    // Zero every weight except the output biases: the gain is then the
    // bias `G` and the log-variance `u_v`. With u_v -> -inf the score is
    // -(x_t - a G y - b y) / sigma^2, and choosing x0 = G y makes it -z/sigma.
    for p in net.params_mut() {
        *p = 0.0;
    }
    net.slice_mut("head.out_b").unwrap().copy_from_slice(&[0.7, 0.2, -800.0]);
    let mut b = batch.clone();
    let item = &mut b.items[0];
    let g = rustfft::num_complex::Complex64::new(0.7, 0.2);
    let x0: Vec<_> = item.source.source_spec().data().iter().map(|y| g * y).collect();
    item.target = std::sync::Arc::new(
        speechdiff::dsp::ComplexSpectrogram::from_data(x0, 2, item.source.source_spec().config()).unwrap(),
    );
    let (loss, _) = dsm_loss(&net, &b, &sched).unwrap();
    assert!(loss < 1e-20, "{loss}");
}
