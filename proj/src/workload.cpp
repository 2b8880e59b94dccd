/* Copyright 2026 The moesim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "moesim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace moesim {

namespace {

// Uniform double in [0, 1) from the top 53 bits; keeps traces reproducible
// across standard library implementations.
double next_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Fisher-Yates with an explicit bounded draw, for the same reason.
std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng() % static_cast<uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

void normalize(std::vector<double>& p) {
  double sum = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) {
    v /= sum;
  }
}

[[noreturn]] void parse_error(const std::string& path, int line,
                              const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

int64_t TokenDemand::total() const {
  return std::accumulate(demand.begin(), demand.end(), int64_t{0});
}

int64_t expert_load(const TokenDemand& d, ExpertId e) {
  if (e < 0 || e >= d.num_experts) {
    throw std::out_of_range("expert_load: expert id out of range");
  }
  int64_t sum = 0;
  for (GpuId g = 0; g < d.num_gpus; ++g) {
    sum += d.at(e, g);
  }
  return sum;
}

std::vector<int64_t> largest_remainder_round(std::span<const double> exact,
                                             int64_t total) {
  const size_t n = exact.size();
  std::vector<int64_t> out(n, 0);
  std::vector<double> frac(n, 0.0);
  int64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    double floor_v = std::floor(exact[i]);
    out[i] = static_cast<int64_t>(floor_v);
    frac[i] = exact[i] - floor_v;
    assigned += out[i];
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return frac[a] > frac[b]; });
  // Floating-point drift can leave the floor sum off by more than the
  // fractional carry; correct in remainder order either way.
  size_t idx = 0;
  while (assigned < total) {
    out[order[idx % n]] += 1;
    ++assigned;
    ++idx;
  }
  idx = n;
  while (assigned > total) {
    --idx;
    size_t i = order[idx % n];
    if (out[i] > 0) {
      out[i] -= 1;
      --assigned;
    }
    if (idx == 0) {
      idx = n;
    }
  }
  return out;
}

std::vector<TokenDemand> generate_trace(const TraceGeneratorConfig& cfg) {
  if (cfg.num_experts < 1 || cfg.num_gpus < 1 || cfg.num_steps < 1) {
    throw std::invalid_argument("generate_trace: dimensions must be positive");
  }
  if (cfg.tokens_per_step <= 0 || cfg.tokens_per_step % cfg.num_gpus != 0) {
    throw std::invalid_argument(
        "generate_trace: tokens_per_step must be a positive multiple of num_gpus");
  }
  if (cfg.zipf_exponent < 0 || cfg.drift_rate < 0 || cfg.drift_rate > 1) {
    throw std::invalid_argument("generate_trace: invalid zipf_exponent or drift_rate");
  }
  if (cfg.tokens_per_step < static_cast<int64_t>(cfg.num_experts) * cfg.num_gpus) {
    std::fprintf(stderr,
                 "warning: tokens_per_step (%lld) below num_experts*num_gpus (%lld); "
                 "expect very sparse demand\n",
                 static_cast<long long>(cfg.tokens_per_step),
                 static_cast<long long>(cfg.num_experts) * cfg.num_gpus);
  }

  std::mt19937_64 rng(cfg.seed);
  const int n = cfg.num_experts;
  std::vector<int> perm = random_permutation(n, rng);

  // perm[i] receives popularity rank i+1.
  std::vector<double> popularity(n, 0.0);
  for (int i = 0; i < n; ++i) {
    popularity[perm[i]] = std::pow(static_cast<double>(i + 1), -cfg.zipf_exponent);
  }
  normalize(popularity);

  const int64_t per_gpu = cfg.tokens_per_step / cfg.num_gpus;
  std::vector<TokenDemand> trace;
  trace.reserve(cfg.num_steps);
  std::vector<double> exact(n, 0.0);
  for (int step = 0; step < cfg.num_steps; ++step) {
    for (int e = 0; e < n; ++e) {
      exact[e] = popularity[e] * static_cast<double>(per_gpu);
    }
    // Source GPUs are interchangeable: every column gets the same split.
    std::vector<int64_t> column = largest_remainder_round(exact, per_gpu);
    TokenDemand d(step, n, cfg.num_gpus);
    for (int e = 0; e < n; ++e) {
      for (int g = 0; g < cfg.num_gpus; ++g) {
        d.at(e, g) = column[e];
      }
    }
    trace.push_back(std::move(d));

    if (cfg.drift_rate > 0) {
      for (int e = 0; e < n; ++e) {
        double u = (next_double(rng) * 2.0 - 1.0) * cfg.drift_rate;
        popularity[e] *= std::exp(u);
      }
      normalize(popularity);
    }
  }
  return trace;
}

void save_trace(std::span<const TokenDemand> trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open trace file for writing: " + path);
  }
  out << "step,expert,gpu,tokens\n";
  for (const TokenDemand& d : trace) {
    for (ExpertId e = 0; e < d.num_experts; ++e) {
      for (GpuId g = 0; g < d.num_gpus; ++g) {
        if (d.at(e, g) != 0) {
          out << d.step << ',' << e << ',' << g << ',' << d.at(e, g) << '\n';
        }
      }
    }
  }
  if (!out) {
    throw std::runtime_error("failed writing trace file: " + path);
  }
}

namespace {

struct TraceRecord {
  int step;
  int expert;
  int gpu;
  int64_t tokens;
};

std::vector<TraceRecord> parse_trace_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open trace file: " + path);
  }
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) {
    parse_error(path, 1, "empty trace file");
  }
  ++line_no;
  if (line == "step,expert,gpu,tokens\r") {
    line.pop_back();
  }
  if (line != "step,expert,gpu,tokens") {
    parse_error(path, line_no, "bad header, expected 'step,expert,gpu,tokens'");
  }

  std::vector<TraceRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    TraceRecord rec{};
    long long fields[4];
    size_t pos = 0;
    for (int f = 0; f < 4; ++f) {
      size_t next = line.find(',', pos);
      if (f < 3 && next == std::string::npos) {
        parse_error(path, line_no, "malformed record, expected 4 fields");
      }
      if (f == 3 && next != std::string::npos) {
        parse_error(path, line_no, "malformed record, expected 4 fields");
      }
      std::string field = line.substr(pos, next == std::string::npos
                                               ? std::string::npos
                                               : next - pos);
      try {
        size_t consumed = 0;
        fields[f] = std::stoll(field, &consumed);
        if (consumed != field.size() || field.empty()) {
          throw std::invalid_argument(field);
        }
      } catch (const std::exception&) {
        parse_error(path, line_no, "malformed record, bad integer '" + field + "'");
      }
      pos = (next == std::string::npos) ? line.size() : next + 1;
    }
    if (fields[3] < 0) {
      parse_error(path, line_no, "negative token count");
    }
    if (fields[0] < 0 || fields[1] < 0 || fields[2] < 0) {
      parse_error(path, line_no, "negative id");
    }
    rec.step = static_cast<int>(fields[0]);
    rec.expert = static_cast<int>(fields[1]);
    rec.gpu = static_cast<int>(fields[2]);
    rec.tokens = fields[3];
    if (!records.empty()) {
      const TraceRecord& prev = records.back();
      auto key = [](const TraceRecord& r) {
        return std::make_tuple(r.step, r.expert, r.gpu);
      };
      if (key(rec) <= key(prev)) {
        parse_error(path, line_no, "records not sorted by (step, expert, gpu)");
      }
    }
    records.push_back(rec);
  }
  if (records.empty()) {
    parse_error(path, line_no, "trace contains no records");
  }
  return records;
}

std::vector<TokenDemand> records_to_trace(const std::string& path,
                                          const std::vector<TraceRecord>& records,
                                          int num_experts, int num_gpus) {
  const int num_steps = records.back().step + 1;
  if (records.front().step != 0) {
    throw std::runtime_error(path + ": first step must be 0");
  }
  std::vector<TokenDemand> trace;
  trace.reserve(num_steps);
  for (int s = 0; s < num_steps; ++s) {
    trace.emplace_back(s, num_experts, num_gpus);
  }
  for (const TraceRecord& rec : records) {
    if (rec.expert >= num_experts) {
      throw std::runtime_error(path + ": expert id " + std::to_string(rec.expert) +
                               " out of range");
    }
    if (rec.gpu >= num_gpus) {
      throw std::runtime_error(path + ": gpu id " + std::to_string(rec.gpu) +
                               " out of range");
    }
    trace[rec.step].at(rec.expert, rec.gpu) = rec.tokens;
  }
  const int64_t tokens_per_step = trace[0].total();
  if (tokens_per_step <= 0) {
    throw std::runtime_error(path + ": step 0 carries no tokens");
  }
  for (const TokenDemand& d : trace) {
    if (d.total() != tokens_per_step) {
      throw std::runtime_error(path + ": step " + std::to_string(d.step) +
                               " total " + std::to_string(d.total()) +
                               " does not match step 0 total " +
                               std::to_string(tokens_per_step));
    }
  }
  return trace;
}

}  // namespace

std::vector<TokenDemand> load_trace(const std::string& path) {
  std::vector<TraceRecord> records = parse_trace_records(path);
  int num_experts = 0;
  int num_gpus = 0;
  for (const TraceRecord& rec : records) {
    num_experts = std::max(num_experts, rec.expert + 1);
    num_gpus = std::max(num_gpus, rec.gpu + 1);
  }
  return records_to_trace(path, records, num_experts, num_gpus);
}

std::vector<TokenDemand> load_trace(const std::string& path, int num_experts,
                                    int num_gpus) {
  if (num_experts < 1 || num_gpus < 1) {
    throw std::invalid_argument("load_trace: dimensions must be positive");
  }
  std::vector<TraceRecord> records = parse_trace_records(path);
  return records_to_trace(path, records, num_experts, num_gpus);
}

}  // namespace moesim
