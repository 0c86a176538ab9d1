#include "ace/eval/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <thread>

ACE_NAMESPACE_BEGIN
namespace eval {

std::vector<ScoredItem> dual_tower_baseline(std::span<const float> query, const Matrix& candidates, std::size_t k) {
  if (query.size() != candidates.cols) {
    throw std::invalid_argument("dual_tower_baseline: query dim " + std::to_string(query.size()) +
                                " does not match candidate dim " + std::to_string(candidates.cols));
  }
  std::vector<ScoredItem> scored(candidates.rows);
  const std::size_t dim = candidates.cols;
  for (std::size_t i = 0; i < candidates.rows; ++i) {
    const float* row = candidates.values.data() + i * dim;
    float s = 0.0f;
    for (std::size_t d = 0; d < dim; ++d) s += row[d] * query[d];
    scored[i] = {static_cast<int>(i), s};
  }
  auto better = [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  };
  k = std::min(k, scored.size());
  std::nth_element(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
  scored.resize(k);
  std::sort(scored.begin(), scored.end(), better);
  return scored;
}

std::size_t bench_workers(const BenchOptions& options) {
  if (options.workers > 0) return std::min(options.workers, options.concurrency);
  std::size_t cap = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ACE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) cap = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(cap, options.concurrency));
}

BenchRow closed_loop(const std::function<void(std::size_t, std::uint64_t)>& query, const BenchOptions& options) {
  if (options.concurrency == 0) throw std::invalid_argument("closed_loop: concurrency must be positive");
  if (!(options.duration_s > 0)) throw std::invalid_argument("closed_loop: duration must be positive");
  using Clock = std::chrono::steady_clock;
  const std::size_t workers = bench_workers(options);
  std::atomic<int> phase{0};  // 0 warmup, 1 measure, 2 stop
  std::vector<std::vector<double>> latencies(workers);
  std::vector<std::size_t> completed(workers, 0);

  auto worker = [&](std::size_t w) {
    std::vector<std::size_t> clients;
    for (std::size_t c = w; c < options.concurrency; c += workers) clients.push_back(c);
    std::vector<Clock::time_point> issued(clients.size(), Clock::now());
    std::vector<std::uint64_t> sequence(clients.size(), 0);
    for (std::size_t next = 0;; next = (next + 1) % clients.size()) {
      const int p = phase.load(std::memory_order_acquire);
      if (p == 2) break;
      query(clients[next], sequence[next]++);
      const auto done = Clock::now();
      if (p == 1 && phase.load(std::memory_order_acquire) == 1) {
        latencies[w].push_back(std::chrono::duration<double, std::milli>(done - issued[next]).count());
        ++completed[w];
      }
      issued[next] = done;
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker, w);
  std::this_thread::sleep_for(std::chrono::duration<double>(options.warmup_s));
  const auto start = Clock::now();
  phase.store(1, std::memory_order_release);
  std::this_thread::sleep_for(std::chrono::duration<double>(options.duration_s));
  phase.store(2, std::memory_order_release);
  const auto stop = Clock::now();
  for (auto& t : threads) t.join();

  BenchRow row;
  row.concurrency = options.concurrency;
  row.workers = workers;
  row.duration_s = std::chrono::duration<double>(stop - start).count();
  std::vector<double> all;
  for (std::size_t w = 0; w < workers; ++w) {
    row.completed += completed[w];
    all.insert(all.end(), latencies[w].begin(), latencies[w].end());
  }
  row.throughput = static_cast<double>(row.completed) / row.duration_s;
  if (!all.empty()) {
    std::sort(all.begin(), all.end());
    auto pct = [&](double q) { return all[std::min(all.size() - 1, static_cast<std::size_t>(q * static_cast<double>(all.size())))]; };
    row.p50_ms = pct(0.50);
    row.p95_ms = pct(0.95);
  }
  row.device = device_description();
  return row;
}

std::string device_description() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " hardware threads";
}

nlohmann::ordered_json to_json(const BenchRow& r) {
  nlohmann::ordered_json j;
  j["n_candidates"] = r.n_candidates;
  j["engine"] = r.engine;
  j["device"] = r.device;
  j["concurrency"] = r.concurrency;
  j["workers"] = r.workers;
  j["completed"] = r.completed;
  j["duration_s"] = r.duration_s;
  j["throughput_qps"] = r.throughput;
  j["latency_p50_ms"] = r.p50_ms;
  j["latency_p95_ms"] = r.p95_ms;
  j["methodology"] = "closed-loop clients, wall clock after warmup, latency includes queueing on the worker";
  return j;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-11s %12s %11s %8s %10s %12s %10s %10s\n", "engine", "candidates", "concurrency",
                "workers", "completed", "qps", "p50_ms", "p95_ms");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-11s %12zu %11zu %8zu %10zu %12.2f %10.3f %10.3f\n", r.engine.c_str(),
                  r.n_candidates, r.concurrency, r.workers, r.completed, r.throughput, r.p50_ms, r.p95_ms);
    out += line;
  }
  return out;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "engine,n_candidates,concurrency,workers,completed,duration_s,throughput_qps,p50_ms,p95_ms,device\n";
  char line[512];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%zu,%zu,%zu,%zu,%.4f,%.4f,%.4f,%.4f,\"%s\"\n", r.engine.c_str(),
                  r.n_candidates, r.concurrency, r.workers, r.completed, r.duration_s, r.throughput, r.p50_ms, r.p95_ms,
                  r.device.c_str());
    out += line;
  }
  return out;
}

}  // namespace eval
ACE_NAMESPACE_END
