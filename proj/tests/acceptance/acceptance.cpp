// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance <configs dir> [criterion-substring]

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "../oracles/loss_oracle.hpp"
#include "eihi/bench.hpp"
#include "eihi/checkpoint.hpp"
#include "eihi/gradcheck.hpp"
#include "eihi/losses.hpp"
#include "eihi/pruning.hpp"
#include "eihi/rng.hpp"

using namespace eihi;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_mat(std::size_t n, std::size_t d, CounterRng& rng) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

oracle::Mat rows(const Tensor& t) {
  oracle::Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  CounterRng rng(20260);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    LossConfig cfg;
    cfg.temperature = inst % 2 ? 1.0 : 0.01;
    std::vector<Tensor> params;
    for (int k = 0; k < 5; ++k) params.push_back(random_mat(4, 8, rng));  // ori, pos, 3 negs
    const auto r = finite_diff_check(
        [&cfg](Tape&, std::span<const Var> p) { return total_loss(p[0], p[1], p.subspan(2), cfg); },
        params, 1e-5, 160, static_cast<std::uint64_t>(inst));
    worst = std::max(worst, r.max_rel_error);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("max rel err %.3g over 20 instances (tol 1e-4), %.1fs (limit 60s)", worst, secs)};
}

Outcome loss_oracles() {
  // Uniform case, M = 9
  const Tensor same({2, 3}, std::vector<double>{1, 2, 3, -1, 0, 4});
  const std::vector<Tensor> negs9(9, same);
  const double nce = info_nce(same, same, negs9, 0.01);
  const double e1 = std::abs(nce - 2.30258509299404568);
  // Hand-computed covariance example
  const double cov = cov_penalty(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  const double e2 = std::abs(cov - 0.25);
  // Straight-line recomputation
  CounterRng rng(77);
  double e3 = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.below(5), d = 1 + rng.below(8), m = 1 + rng.below(5);
    LossConfig cfg;
    cfg.temperature = inst % 3 == 0 ? 0.01 : rng.uniform(0.05, 2.0);
    cfg.lambda = rng.uniform(0.0, 2.0);
    const Tensor a = random_mat(n, d, rng), b = random_mat(n, d, rng);
    std::vector<Tensor> negs;
    std::vector<oracle::Mat> on;
    for (std::size_t k = 0; k < m; ++k) {
      negs.push_back(random_mat(n, d, rng));
      on.push_back(rows(negs.back()));
    }
    const double want = oracle::total_loss(rows(a), rows(b), on, cfg.temperature, cfg.lambda);
    e3 = std::max(e3, std::abs(total_loss(a, b, negs, cfg) - want) / std::max(1.0, std::abs(want)));
  }
  return {e1 <= 1e-9 && e2 <= 1e-12 && e3 <= 1e-10,
          fmt("|nce - ln10| = %.2g (tol 1e-9), |cov - 0.25| = %.2g (tol 1e-12), "
              "straight-line max err %.2g over 100 (tol 1e-10)",
              e1, e2, e3)};
}

std::size_t brute_force_min_size(const std::vector<double>& p) {
  const std::size_t d = p.size();
  double total = 0.0;
  for (double v : p) total += v;
  std::size_t best = d + 1;
  for (std::uint32_t s = 0; s < (1u << d); ++s) {
    const auto size = static_cast<std::size_t>(std::popcount(s));
    if (size >= best) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      if (s >> j & 1u) sum += p[j];
    if (sum >= 0.9 * total) best = size;
  }
  return best;
}

Outcome pruning_oracles() {
  CounterRng rng(4242);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(16);
    std::vector<double> p(d);
    for (auto& v : p) v = rng.uniform() < 0.15 ? 0.0 : rng.uniform(0.0, 100.0);
    const auto keep = sensitivity_indicator(p, d);
    double total = 0, marked = 0, smallest = 1e300, largest_kept = 0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < d; ++j) {
      total += p[j];
      if (!keep[j]) {
        ++count;
        marked += p[j];
        smallest = std::min(smallest, p[j]);
      } else {
        largest_kept = std::max(largest_kept, p[j]);
      }
    }
    const bool ok = total == 0.0 ? count == 0
                                 : count == brute_force_min_size(p) &&
                                       marked >= 0.9 * total * (1 - 1e-12) &&
                                       (count == d || largest_kept <= smallest);
    mismatches += !ok;
  }

  // Vote biconditional: every indicator set where K*d <= 24; beyond that every
  // column pattern at every position against 2^20 random fillings.
  std::size_t sets = 0, violations = 0;
  auto check_set = [&](const std::vector<PruneIndicator>& ind, std::size_t d) {
    const auto keep = keep_from_vote(guidance_vote(ind));
    for (std::size_t j = 0; j < d; ++j) {
      bool zero = true;
      for (const auto& row : ind) zero &= row[j] == 0;
      violations += (keep[j] == 0) != zero;
    }
    ++sets;
  };
  CounterRng vr(99);
  for (std::size_t K = 1; K <= 4; ++K)
    for (std::size_t d = 1; d <= 8; ++d) {
      std::vector<PruneIndicator> ind(K, PruneIndicator(d));
      if (K * d <= 24) {
        for (std::uint64_t bits = 0; bits < (1ull << (K * d)); ++bits) {
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < d; ++j) ind[k][j] = (bits >> (k * d + j)) & 1u;
          check_set(ind, d);
        }
      } else {
        for (std::uint64_t s = 0; s < (1ull << 20); ++s) {
          const std::uint64_t bits = vr.next_u64();
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < d; ++j) ind[k][j] = (bits >> (k * d + j)) & 1u;
          const std::size_t pos = s % d;
          const std::uint32_t col = static_cast<std::uint32_t>(s / d) % (1u << K);
          for (std::size_t k = 0; k < K; ++k) ind[k][pos] = (col >> k) & 1u;
          check_set(ind, d);
        }
      }
    }
  return {mismatches == 0 && violations == 0,
          fmt("indicator vs brute force: %zu/1000 mismatches; vote biconditional: %zu violations "
              "over %zu indicator sets",
              mismatches, violations, sets)};
}

// ---------------------------------------------------------------------------

class Experiments {
 public:
  explicit Experiments(const fs::path& grid_file) {
    const auto j = nlohmann::json::parse(read_file_bytes(grid_file));
    for (auto& e : grid_from_json(j)) configs_[key(e.shift_name, to_string(e.method))] = e;
  }

  const ExperimentConfig& config(const std::string& shift, const std::string& method) const {
    return configs_.at(key(shift, method));
  }

  const ExperimentReport& report(const std::string& shift, const std::string& method) {
    const auto k = key(shift, method);
    auto it = reports_.find(k);
    if (it != reports_.end()) return it->second;
    const auto t0 = Clock::now();
    auto r = run_experiment(configs_.at(k));
    seconds_[k] = seconds_since(t0);
    std::printf("  .. %s %s: ", shift.c_str(), method.c_str());
    for (const auto& s : r.seeds) {
      if (s.accuracy) std::printf("%.4f ", *s.accuracy);
      else std::printf("[%s] ", s.error->c_str());
    }
    std::printf("mean %.4f (%.0fs)\n", r.mean.value_or(NAN), seconds_[k]);
    std::fflush(stdout);
    return reports_.emplace(k, std::move(r)).first->second;
  }

  double seconds(const std::string& shift, const std::string& method) const {
    return seconds_.at(key(shift, method));
  }

 private:
  static std::string key(const std::string& s, const std::string& m) { return s + "|" + m; }
  std::map<std::string, ExperimentConfig> configs_;
  std::map<std::string, ExperimentReport> reports_;
  std::map<std::string, double> seconds_;
};

std::string means(const ExperimentReport& a, const ExperimentReport& b) {
  return fmt("%s %.2f%% vs %s %.2f%% over %zu/%zu seeds", a.method.c_str(),
             100 * a.mean.value_or(NAN), b.method.c_str(), 100 * b.mean.value_or(NAN),
             a.accuracies().size(), a.seeds.size());
}

bool complete(const ExperimentReport& r) { return !r.partial && r.mean.has_value(); }

Outcome diversity_shift_direction(Experiments& ex) {
  const auto& mixed = ex.report("mixed", "erm");
  const auto& shifted = ex.report("8:2", "erm");
  const double secs = ex.seconds("mixed", "erm") + ex.seconds("8:2", "erm");
  const double gap = 100 * (mixed.mean.value_or(0) - shifted.mean.value_or(0));
  return {complete(mixed) && complete(shifted) && gap >= 5.0 && secs < 600.0,
          fmt("ERM mixed %.2f%% - shifted %.2f%% = %.2f points (need >= 5), %.0fs (limit 600s)",
              100 * mixed.mean.value_or(NAN), 100 * shifted.mean.value_or(NAN), gap, secs)};
}

Outcome stage_one_benefit(Experiments& ex) {
  const auto& s1 = ex.report("8:2", "eihi_stage_one");
  const auto& erm = ex.report("8:2", "erm");
  const double gap = 100 * (s1.mean.value_or(0) - erm.mean.value_or(0));
  return {complete(s1) && complete(erm) && gap >= 3.0,
          means(s1, erm) + fmt(", difference %.2f points (need >= 3)", gap)};
}

Outcome covariance_ablation(Experiments& ex) {
  const auto& s1 = ex.report("8:2", "eihi_stage_one");
  const auto& nc = ex.report("8:2", "eihi_no_cov");
  return {complete(s1) && complete(nc) && *s1.mean >= *nc.mean, means(s1, nc)};
}

Outcome pruning_benefit(Experiments& ex) {
  const auto& full = ex.report("5:1", "eihi_full");
  const auto& s1 = ex.report("5:1", "eihi_stage_one");
  std::string elim;
  for (const auto& s : full.seeds) elim += s.eliminated_count ? std::to_string(*s.eliminated_count) + " " : "- ";
  return {complete(full) && complete(s1) && *full.mean >= *s1.mean,
          means(full, s1) + "; eliminated per seed: " + elim};
}

Outcome pruning_alignment(Experiments& ex) {
  const auto& full = ex.report("5:1", "eihi_full");
  std::size_t wins = 0;
  std::string per;
  for (const auto& s : full.seeds) {
    if (!s.alignment) {
      per += "n/a ";
      continue;
    }
    const bool win = s.alignment->eliminated_count > 0 && s.alignment->eliminated > s.alignment->retained;
    wins += win;
    per += fmt("%.3f/%.3f%s ", s.alignment->eliminated, s.alignment->retained, win ? "+" : "-");
  }
  return {wins >= 4, fmt("eliminated > retained in %zu/5 seeds (need >= 4): ", wins) + per};
}

Outcome determinism(Experiments& ex) {
  std::size_t checked = 0, differ = 0;
  for (const auto& [shift, method] : {std::pair<std::string, std::string>{"8:2", "erm"},
                                      {"5:1", "eihi_full"}}) {
    const auto& first = ex.report(shift, method);
    const auto& cfg = ex.config(shift, method);
    const auto again = run_seed(cfg, cfg.seeds.front());
    const auto& a = first.seeds.front();
    ++checked;
    const bool same = a.accuracy == again.accuracy && a.pre_prune_accuracy == again.pre_prune_accuracy &&
                      a.eliminated == again.eliminated && a.train_trace.loss == again.train_trace.loss;
    differ += !same;
  }
  // Checkpoint bytes
  const fs::path dir = fs::temp_directory_path() / "eihi_acceptance_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto params = init_backbone(BackboneSpec::standard(16, 16, 64), 5);
  save_backbone(dir / "a.ckpt", params);
  const auto back = load_backbone(dir / "a.ckpt");
  save_backbone(dir / "b.ckpt", back);
  const bool ckpt = back.tensors == params.tensors && back.spec == params.spec &&
                    read_file_bytes(dir / "a.ckpt") == read_file_bytes(dir / "b.ckpt");
  const auto disc = init_discriminator(64, 8, std::vector<std::size_t>{128}, 3);
  disc.save(dir / "d.ckpt");
  const auto dback = Discriminator::load(dir / "d.ckpt");
  dback.save(dir / "e.ckpt");
  const bool dckpt = dback.params == disc.params &&
                     read_file_bytes(dir / "d.ckpt") == read_file_bytes(dir / "e.ckpt");
  fs::remove_all(dir);
  return {differ == 0 && ckpt && dckpt,
          fmt("%zu/%zu re-runs bit-identical; backbone checkpoint %s, discriminator checkpoint %s",
              checked - differ, checked, ckpt ? "bit-exact" : "DIFFERS", dckpt ? "bit-exact" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <configs dir> [filter]\n", argv[0]);
    return 2;
  }
  const fs::path configs = argv[1];
  const std::string filter = argc > 2 ? argv[2] : "";
  Experiments ex(configs / "acceptance.json");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-correctness", gradient_correctness},
      {"loss-oracles", loss_oracles},
      {"pruning-oracles", pruning_oracles},
      {"diversity-shift-direction", [&] { return diversity_shift_direction(ex); }},
      {"stage-one-benefit", [&] { return stage_one_benefit(ex); }},
      {"covariance-ablation", [&] { return covariance_ablation(ex); }},
      {"pruning-benefit-correlation-shift", [&] { return pruning_benefit(ex); }},
      {"pruning-background-alignment", [&] { return pruning_alignment(ex); }},
      {"determinism", [&] { return determinism(ex); }},
  };
  std::size_t failed = 0, run = 0;
  for (const auto& [name, fn] : criteria) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    ++run;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", run - failed, run);
  return failed == 0 ? 0 : 1;
}
