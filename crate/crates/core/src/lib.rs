pub mod canonical;
pub mod cli;
pub mod compdef;
pub mod cox;
pub mod master;
pub mod numerics;
pub mod protocol;
pub mod sim;
pub mod site;
pub mod svd;
pub mod synth;
