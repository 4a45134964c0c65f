// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "eihi/bench.hpp"

namespace eihi {

struct ServiceConfig {
  ExperimentConfig experiment;  // data, split and stage-two settings
  std::uint64_t seed = 1;       // which run the checkpoint belongs to
  std::filesystem::path backbone;  // stage-one checkpoint
  std::optional<std::filesystem::path> discriminator;  // trained afresh when absent
  std::filesystem::path work_dir = "eihi_service";     // guidance files land here
  std::size_t candidates = 0;  // GET /samples default count; 0 = two per class

  nlohmann::json to_json() const;
  static ServiceConfig from_json(const nlohmann::json& j);
};

// HTTP/JSON backend for interactive guidance. Construction loads the data and
// checkpoint and scores the unpruned discriminator; nothing listens until
// start() or run().
class Service {
 public:
  explicit Service(const ServiceConfig& config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

  // While held, an accepted retrain job stays queued (and the service busy).
  void hold_jobs(bool held);
  // Blocks until no retrain job is queued or running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace eihi
