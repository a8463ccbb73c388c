pub mod hubsim;
pub mod latbench;
pub mod netplan;
pub mod published;
pub mod simnet;
pub mod statkit;
