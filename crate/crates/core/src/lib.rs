pub mod grpo;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod roundtrip;
pub mod synthdata;
pub mod tensor;
