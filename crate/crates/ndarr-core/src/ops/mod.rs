pub(crate) mod conv;
pub mod elementwise;
pub(crate) mod linear;
pub mod reduce;
pub(crate) mod shape;
pub(crate) mod softmax;
