pub mod gradcheck;
pub mod oracles;
