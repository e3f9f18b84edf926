use autobid::learner::Mlp;
use ndarray::Array2;

fn loss(net: &Mlp<f64>, x: &Array2<f64>, actions: &[usize], targets: &[f64]) -> f64 {
    net.td_loss_and_grad(x.view(), actions, targets).unwrap().0
}

/// Relative error `|a - n| / (|a| + |n|)` over the flattened gradient.
pub fn gradient_error(net: &Mlp<f64>, x: &Array2<f64>, actions: &[usize], targets: &[f64]) -> f64 {
    let (_, grads) = net.td_loss_and_grad(x.view(), actions, targets).unwrap();
    let h = 1e-5;
    let mut probe = net.clone();
    let (mut diff, mut scale) = (0.0, 0.0);
    for l in 0..net.layers().len() {
        let shape = net.layers()[l].weights.dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let w = net.layers()[l].weights[[i, j]];
                probe.layers_mut()[l].weights[[i, j]] = w + h;
                let up = loss(&probe, x, actions, targets);
                probe.layers_mut()[l].weights[[i, j]] = w - h;
                let down = loss(&probe, x, actions, targets);
                probe.layers_mut()[l].weights[[i, j]] = w;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.layers()[l].weights[[i, j]];
                diff += (analytic - numeric).powi(2);
                scale += analytic.powi(2) + numeric.powi(2);
            }
        }
        for j in 0..net.layers()[l].bias.len() {
            let b = net.layers()[l].bias[j];
            probe.layers_mut()[l].bias[j] = b + h;
            let up = loss(&probe, x, actions, targets);
            probe.layers_mut()[l].bias[j] = b - h;
            let down = loss(&probe, x, actions, targets);
            probe.layers_mut()[l].bias[j] = b;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.layers()[l].bias[j];
            diff += (analytic - numeric).powi(2);
            scale += analytic.powi(2) + numeric.powi(2);
        }
    }
    diff.sqrt() / scale.sqrt().max(1e-12)
}
