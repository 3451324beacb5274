#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dgcvc/signal.hpp"

namespace dgcvc::eval {

// Monotonic unit-step alignment: starts at (0,0), ends at (T1-1, T2-1), each
// step advances i, j, or both by one.
struct AlignmentPath {
  std::vector<std::pair<int, int>> steps;
};

// Minimum-total-cost alignment under the symmetric unit-step pattern. Local
// cost is the Euclidean distance over c1..c_{order-1}; c0 (energy) is
// excluded. Ties break diagonal first, then the i-step.
AlignmentPath dtw_align(const signal::McepSequence& a, const signal::McepSequence& b);

// mean over aligned pairs of (10/ln10) * sqrt(2 * sum_d (c_d - c'_d)^2)
double dtw_mcd(const signal::McepSequence& a, const signal::McepSequence& b);

// mean |f0_a(i) - f0_b(j)| over path pairs where both frames are voiced;
// empty optional when no mutually voiced pair exists (never silently zero)
std::optional<double> f0_mae(const signal::F0Track& a, const signal::F0Track& b, const AlignmentPath& path);

// -- embedding similarity ----------------------------------------------------

struct EmbeddingRow {
  std::string id;
  std::string group;  // conversion group = target speaker
  bool converted = false;
  std::vector<double> vec;
};

struct ScatterRow {
  std::string id;
  std::string group;
  bool converted = false;
  double x = 0.0;
  double y = 0.0;
};

// 2-D projection of the embedding table. "pca" is deterministic (Jacobi
// eigensolver, sign-fixed); "tsne" runs the exact quadratic algorithm with a
// fixed seed. Requires >= 3 rows; identical inputs land on identical points.
std::vector<ScatterRow> project_2d(const std::vector<EmbeddingRow>& rows, const std::string& method,
                                   uint64_t seed = 0, double perplexity = 10.0);

struct GroupStats {
  std::string group;
  double intra = 0.0;                // mean distance of converted rows to their own target centroid
  std::optional<double> inter;       // mean distance to the nearest other-target centroid
  int n_converted = 0;
};

// Per conversion group: converted embeddings against ground-truth target
// centroids. With a single group the inter distance is reported as absent.
std::vector<GroupStats> similarity_stats(const std::vector<EmbeddingRow>& rows);

// -- report ------------------------------------------------------------------

struct PairResult {
  std::string source_path;
  std::string target_speaker;
  std::string reference_path;
  std::string gender_tag;  // F2F / M2M / F2M / M2F, empty when untagged
  double mcd = 0.0;
  std::optional<double> f0_mae_hz;
};

struct EvalReport {
  std::string variant;
  uint64_t config_hash = 0;
  uint64_t checkpoint_hash = 0;
  std::vector<PairResult> pairs;

  double avg_mcd() const;
  std::optional<double> avg_f0_mae() const;
  // inter = F2M + M2F rows, intra = F2F + M2M rows; absent without tags
  std::optional<double> inter_mcd() const;
  std::optional<double> intra_mcd() const;
  std::optional<double> inter_f0_mae() const;
  std::optional<double> intra_f0_mae() const;

  std::string to_json() const;
  std::string to_csv() const;
  static EvalReport from_json(const std::string& text);
};

}  // namespace dgcvc::eval
