//! Criterion benchmarks for the network kernels, the simulator and one PPO
//! iteration; see `benches/`.
