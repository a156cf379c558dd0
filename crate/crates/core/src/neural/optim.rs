//! Adam with bias correction.

use super::network::{ForwardPass, Network};
use super::tape::Tape;
use super::tensor::{Element, Tensor};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Adam { lr, beta1, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Apply one update to `net` from the gradients accumulated on `tape`
    /// for the parameter nodes of `pass`. Parameters without a gradient
    /// (unreached by the loss) are left untouched but still advance the
    /// moment buffers' clock.
    pub fn step<E: Element>(&mut self, net: &mut Network<E>, tape: &Tape<E>, pass: &ForwardPass) {
        if self.m.len() != net.params.len() {
            self.m = net.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = net.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        for (pi, param) in net.params.iter_mut().enumerate() {
            let Some(grad) = tape.grad(pass.param_nodes[pi]) else { continue };
            update(&mut param.value, grad, &mut self.m[pi], &mut self.v[pi], lr, b1, b2, eps, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<E: Element>(
    value: &mut Tensor<E>,
    grad: &Tensor<E>,
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..value.data.len() {
        let g = Element::to_f64(grad.data[i]);
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        let step = lr * mhat / (vhat.sqrt() + eps);
        value.data[i] = E::from_f64(Element::to_f64(value.data[i]) - step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::spec::{Act, InputRef, LayerKind, LayerSpec, ModelSpec};

    /// On the first step, Adam moves every coordinate by about lr in the
    /// direction opposite the gradient, regardless of gradient magnitude.
    #[test]
    fn first_step_is_signed_lr() {
        let spec = ModelSpec {
            layers: vec![LayerSpec {
                kind: LayerKind::Linear { out: 2, act: Act::None },
                input: InputRef::Input(0),
            }],
            outputs: vec![("out".into(), 0)],
        };
        let mut net: Network<f64> = Network::new(spec, &[vec![1, 3]], 7).unwrap();
        let before: Vec<f64> = net.params[0].value.data.clone();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]));
        let target = tape.leaf(Tensor::zeros(&[1, 2]));
        let pass = net.forward(&mut tape, &[x], true, 0).unwrap();
        let loss = tape.mse_loss(pass.output("out"), target).unwrap();
        tape.backward(loss).unwrap();
        let mut opt = Adam::new(1e-3, 0.9);
        opt.step(&mut net, &tape, &pass);
        for (i, (&b, &a)) in before.iter().zip(&net.params[0].value.data).enumerate() {
            let g = tape.grad(pass.param_nodes[0]).unwrap().data[i];
            if g.abs() > 1e-12 {
                let moved = b - a;
                assert!((moved.abs() - 1e-3).abs() < 1e-5, "step size {moved}");
                assert_eq!(moved.signum(), g.signum());
            }
        }
    }
}
