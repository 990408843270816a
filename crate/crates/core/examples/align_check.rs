use fdikit::model::{spacecraft_model, SpacecraftParams};
use fdikit::observer::*;
use nalgebra::{DMatrix, DVector};

fn main() {
    let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
    let x_op = DVector::zeros(6);
    let u_op = DVector::zeros(4);
    let lambda = 3.0;
    // replicate the design pipeline pieces
    let a = model.drift_jacobian(&x_op);
    let c = model.output_jacobian(&x_op);
    let design = design_metric_and_gain(&model, &x_op, &u_op, lambda,
        &default_verification_cloud(&x_op, 0.4)).unwrap();
    let a_l = &a - &design.gain_l * &c;
    println!("L =\n{:.4}", design.gain_l);
    println!("M =\n{:.4}", design.metric);
    let g = model.input_matrix(&x_op);
    let chain = g.transpose() * &design.metric * &design.gain_l * &c;
    let lu = a_l.clone().lu();
    for i in 0..4 {
        let gf = model.actuator_fault_field(i, &x_op);
        let resp = lu.solve(&gf).unwrap();
        let coeff = (chain.row(i) * &resp)[(0,0)];
        println!("chi_{} = {:.6e}", i, coeff);
    }
}
