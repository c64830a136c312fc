//! Builds a small expression on the tape, backpropagates, and compares the
//! result with central finite differences.

use ego_interact::tensor::{grad_check, Tape, Tensor};

fn main() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.7, -0.3]).unwrap());
    let w = tape.param(Tensor::new([3, 1], vec![0.2, -0.4, 0.9]).unwrap());
    let h = tape.matmul(x, w).unwrap();
    let y = tape.tanh(h);
    let loss = tape.mean(y);
    tape.backward(loss).unwrap();
    println!("loss = {:.6}", tape.item(loss));
    println!("dL/dx = {:?}", tape.grad(x).unwrap());
    println!("dL/dw = {:?}", tape.grad(w).unwrap());

    let point = Tensor::new([2, 2, 4, 4], (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let err = grad_check(
        |t, v| {
            let pooled = t.avg_pool2d(v, 2, 2)?;
            let s = t.softplus(pooled);
            Ok(t.sum(s))
        },
        &point,
        1e-5,
    );
    println!("avg_pool2d + softplus relative error {err:.2e}");
}
