pub mod admm;
pub mod epipolar;
pub mod imaging;
pub mod io;
pub mod linearize;
pub mod segmentation;
pub mod synthlab;
pub mod tracker;
