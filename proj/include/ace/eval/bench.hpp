#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ace/data/matrix.hpp"
#include "json.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

struct ScoredItem {
  int item_id;
  float score;
};

/// Exact top-k by dot product: partial selection, then sort (score
/// descending, lower id first on ties).
std::vector<ScoredItem> dual_tower_baseline(std::span<const float> query, const Matrix& candidates, std::size_t k);

struct BenchRow {
  std::size_t n_candidates = 0;
  std::string engine;
  std::string device;
  std::size_t concurrency = 0;
  std::size_t workers = 0;
  std::size_t completed = 0;
  double duration_s = 0.0;
  double throughput = 0.0;  // completed queries per second
  double p50_ms = 0.0;
  double p95_ms = 0.0;
};

struct BenchOptions {
  std::size_t concurrency = 100;
  std::size_t workers = 0;  // 0: min(concurrency, ACE_THREADS or hardware threads)
  double warmup_s = 0.5;
  double duration_s = 2.0;
};

/// Worker count used for `options`, honouring ACE_THREADS.
std::size_t bench_workers(const BenchOptions& options);

/// Runs query(client, sequence) from `concurrency` closed-loop clients
/// spread round-robin over the worker threads. Each client issues its next
/// query as soon as the previous one completes, so latency includes the time
/// a client waits for its worker.
BenchRow closed_loop(const std::function<void(std::size_t client, std::uint64_t sequence)>& query,
                     const BenchOptions& options);

/// Description of the host CPU used in report rows.
std::string device_description();

nlohmann::ordered_json to_json(const BenchRow& row);
std::string bench_table(const std::vector<BenchRow>& rows);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace eval
ACE_NAMESPACE_END
