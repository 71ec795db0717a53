//! The small dense kernels everything else is built on.
//!
//! ```text
//! cargo run --example numerics
//! ```

use fedfit::numerics::{invert_spd, mat_vec, normal_sf, solve_spd, Matrix, Vector};

fn main() {
    let a = Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]]).unwrap();
    let b = Vector::new(vec![1.0, 2.0, 3.0]).unwrap();
    let x = solve_spd(&a, &b).unwrap();
    let residual = mat_vec(&a, &x).unwrap().sub(&b).unwrap().max_abs();
    println!("x = {:?}, residual {residual:.1e}", x.as_slice());
    println!("inverse diagonal = {:?}", (0..3).map(|i| invert_spd(&a).unwrap().get(i, i)).collect::<Vec<_>>());
    for z in [0.0, 1.959964, 3.4501, 8.0] {
        println!("P(Z > {z}) = {:.6e}", normal_sf(z));
    }
}
