pub mod cli;
pub mod cof;
pub mod corpus;
pub mod judge;
pub mod labeler;
pub mod meta;
pub mod pipeline;
pub mod policy;
pub mod prm;
pub mod rank;
