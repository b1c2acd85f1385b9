//! Finite-difference checks of every layer and of the whole network.

use codelnet::tensor::gradcheck::{check_op_cases, Op};

fn main() {
    for op in Op::ALL {
        println!("{}", check_op_cases(op, 10, op.default_tolerance()));
    }
}
