#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bilinasa/oracle.hpp"

namespace bilinasa {

// Per-iteration record of a run.
struct TraceRecord {
  int k = 0;
  double prox_gap_sq = 0.0;  // ||z_k - x_k||^2
  double d_norm_sq = 0.0;    // ||d_k||^2
  // ||z_k - x_k||^2 + ||d_k - grad Phi(x_k)||^2, when ground truth exists.
  std::optional<double> v_true;
  // ||y_k^{(0)} - y*(x_k)||^2, when ground truth exists.
  std::optional<double> y_gap_sq;
  // ||u_k^{(i)} - f_i(u_k^{(i+1)})||^2 per level.
  std::vector<double> chain_err_sq;
  double objective = 0.0;  // Psi(x_k, y_k)
};

struct RunTrace {
  std::string instance;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  std::vector<Vector> xs;  // x_k per record
  std::vector<Vector> ys;  // y_k^{(N)} per record
  bool diverged = false;
  int output_index = 0;  // randomized index R
  Vector x_final;
  Vector x_output;  // x at the randomized index
  double wall_seconds = 0.0;
  Oracle::CallCounts oracle_calls;
  // Number of prox-inequality violations observed (must stay zero).
  int prox_bound_violations = 0;

  const TraceRecord& final_record() const { return records.back(); }
};

}  // namespace bilinasa
