// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/service.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include "httplib.h"

#include "eihi/base64.hpp"
#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"
#include "eihi/image_io.hpp"
#include "eihi/rng.hpp"

namespace eihi {

using json = nlohmann::json;
namespace fs = std::filesystem;

json ServiceConfig::to_json() const {
  json j{{"experiment", experiment.to_json()},
         {"seed", seed},
         {"backbone", backbone.string()},
         {"work_dir", work_dir.string()},
         {"candidates", candidates}};
  if (discriminator) j["discriminator"] = discriminator->string();
  return j;
}

ServiceConfig ServiceConfig::from_json(const json& j) {
  ServiceConfig c;
  try {
    // The served run is never eihi_full itself; guidance arrives over HTTP.
    json e = j.at("experiment");
    e["method"] = "eihi_stage_one";
    e.erase("guidance");
    e.erase("force_keep_all");
    c.experiment = ExperimentConfig::from_json(e);
    c.seed = j.value("seed", c.experiment.seeds.front());
    c.backbone = j.at("backbone").get<std::string>();
    if (j.contains("discriminator") && !j.at("discriminator").is_null())
      c.discriminator = j.at("discriminator").get<std::string>();
    c.work_dir = j.value("work_dir", c.work_dir.string());
    c.candidates = j.value("candidates", c.candidates);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("service config: ") + ex.what());
  }
  return c;
}

namespace {

struct FieldError {
  std::string field;
  std::string message;
};

enum class JobStatus { Queued, Running, Done, Failed };

const char* status_name(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

struct Job {
  std::size_t id = 0;
  JobStatus status = JobStatus::Queued;
  PruneIndicator keep;
  std::optional<double> post_accuracy;
  std::optional<std::string> error;
  double seconds = 0.0;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message,
                 const std::string& field = "") {
  json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  reply(res, status, body);
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  PreparedRun run;
  BackboneParams backbone;
  Discriminator baseline;
  double baseline_accuracy = 0.0;
  std::map<std::size_t, SamplePtr> train_by_id;
  std::vector<SamplePtr> candidates;
  EmbeddingCache cache;

  // Mutable state; mutations hold the unique lock.
  mutable std::shared_mutex state_mutex;
  std::vector<GuidancePair> pairs;
  std::optional<GuidanceReport> guidance;
  std::map<std::size_t, Job> jobs;
  std::optional<Discriminator> pruned;
  std::optional<PruneIndicator> pruned_keep;
  std::size_t next_job = 1;
  bool busy = false;
  bool held = false;
  std::condition_variable_any idle_cv;
  std::thread worker;

  httplib::Server server;
  std::thread listener;

  explicit Impl(const ServiceConfig& c) : config(c) {
    run = prepare_run(config.experiment, config.seed);
    backbone = load_backbone(config.backbone);
    if (backbone.spec.height != run.backbone.height || backbone.spec.width != run.backbone.width ||
        backbone.spec.channels != run.backbone.channels)
      throw ShapeError("checkpoint input shape does not match the dataset rasters");
    if (config.discriminator) {
      baseline = Discriminator::load(*config.discriminator);
      if (baseline.input_dim != backbone.embedding_dim())
        throw ShapeError("discriminator input width differs from the backbone embedding");
    } else {
      baseline = train_discriminator(backbone, run.split.train, run.split.validation, nullptr,
                                     run.num_classes, config.experiment.train.discriminator,
                                     discriminator_seed(config.seed), &cache)
                     .discriminator;
    }
    baseline_accuracy = evaluate(backbone, baseline, nullptr, run.split.test, &cache).accuracy;

    for (const auto& s : run.split.train) train_by_id[s->id] = s;
    // Candidate order: per-class seeded shuffles, interleaved round-robin.
    std::map<int, SampleSet> by_class;
    for (const auto& s : run.split.train) by_class[s->class_label].push_back(s);
    for (auto& [cls, v] : by_class)
      std::sort(v.begin(), v.end(), [&](const SamplePtr& a, const SamplePtr& b) {
        return CounterRng::derive(config.seed, a->id) < CounterRng::derive(config.seed, b->id);
      });
    for (std::size_t round = 0;; ++round) {
      bool any = false;
      for (auto& [cls, v] : by_class)
        if (round < v.size()) {
          candidates.push_back(v[round]);
          any = true;
        }
      if (!any) break;
    }
    routes();
  }

  ~Impl() {
    server.stop();
    if (listener.joinable()) listener.join();
    {
      std::unique_lock lock(state_mutex);
      held = false;
      idle_cv.notify_all();
    }
    if (worker.joinable()) worker.join();
  }

  fs::path guidance_dir() const { return config.work_dir / "guidance"; }

  json sample_json(const SamplePtr& s) const {
    return {{"id", s->id},
            {"class", s->class_label},
            {"domain", s->domain_label},
            {"height", s->image.dim(1)},
            {"width", s->image.dim(2)},
            {"ppm", base64_encode(encode_ppm(tensor_to_raster(s->image)))}};
  }

  json job_json(const Job& j) const {
    json out{{"id", j.id},
             {"status", status_name(j.status)},
             {"pre_prune_accuracy", baseline_accuracy},
             {"post_prune_accuracy", j.post_accuracy ? json(*j.post_accuracy) : json(nullptr)},
             {"eliminated_count", j.keep.size() - kept_dimensions(j.keep).size()},
             {"seconds", j.seconds}};
    if (j.error) out["error"] = *j.error;
    return out;
  }

  // Parses one uploaded pair; throws FieldError.
  GuidancePair parse_pair(const json& e, std::size_t index) const {
    const std::string at = "pairs[" + std::to_string(index) + "]";
    if (!e.is_object()) throw FieldError{at, "must be an object"};
    if (!e.contains("sample_id") || !e.at("sample_id").is_number_unsigned())
      throw FieldError{at + ".sample_id", "must be a non-negative integer"};
    const auto id = e.at("sample_id").get<std::size_t>();
    const auto it = train_by_id.find(id);
    if (it == train_by_id.end())
      throw FieldError{at + ".sample_id", "sample " + std::to_string(id) +
                                              " is not in the training pool"};
    const SamplePtr& s = it->second;
    double fill = 0.0;
    if (e.contains("fill")) {
      if (!e.at("fill").is_number()) throw FieldError{at + ".fill", "must be a number"};
      fill = e.at("fill").get<double>();
      if (!(fill >= 0.0 && fill <= 1.0)) throw FieldError{at + ".fill", "must lie in [0, 1]"};
    }
    if (!e.contains("mask") || !e.at("mask").is_string())
      throw FieldError{at + ".mask", "must be a base64 string holding a P5 PGM"};
    const auto bytes = base64_decode(e.at("mask").get<std::string>());
    if (!bytes) throw FieldError{at + ".mask", "is not valid base64"};
    Raster8 raster;
    std::vector<std::uint8_t> mask;
    try {
      raster = parse_pgm(*bytes, at + ".mask");
      mask = raster_to_mask(raster, at + ".mask");
    } catch (const Error& ex) {
      throw FieldError{at + ".mask", ex.what()};
    }
    const std::size_t h = s->image.dim(1), w = s->image.dim(2);
    if (raster.height != h || raster.width != w)
      throw FieldError{at + ".mask", "size " + std::to_string(raster.width) + "x" +
                                         std::to_string(raster.height) + " differs from sample " +
                                         std::to_string(w) + "x" + std::to_string(h)};
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }))
      throw FieldError{at + ".mask", "marks no object pixels"};
    const std::vector<std::vector<std::uint8_t>> masks{mask};
    auto built = build_guidance_pairs(std::span<const SamplePtr>(&s, 1), masks, fill);
    built[0].id = index;
    return built[0];
  }

  void post_guidance(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return reply_error(res, 400, "request body is not valid JSON", "body");
    }
    if (!body.is_object() || !body.contains("pairs") || !body.at("pairs").is_array())
      return reply_error(res, 400, "expected an array of pairs", "pairs");
    if (body.at("pairs").empty()) return reply_error(res, 400, "no pairs given", "pairs");
    std::vector<GuidancePair> parsed;
    try {
      for (std::size_t i = 0; i < body.at("pairs").size(); ++i)
        parsed.push_back(parse_pair(body.at("pairs")[i], i));
    } catch (const FieldError& fe) {
      return reply_error(res, 400, fe.field + " " + fe.message, fe.field);
    }
    std::unique_lock lock(state_mutex);
    fs::remove_all(guidance_dir());
    write_guidance_file(guidance_dir(), parsed);
    pairs = std::move(parsed);
    guidance.reset();
    json previews = json::array();
    for (const auto& p : pairs)
      previews.push_back({{"id", p.id},
                          {"sample_id", p.sel->id},
                          {"obj", base64_encode(encode_ppm(tensor_to_raster(p.obj)))}});
    reply(res, 201, {{"pairs", pairs.size()},
                     {"file", (guidance_dir() / "guidance.json").string()},
                     {"previews", previews}});
  }

  void get_guidance(httplib::Response& res) const {
    std::shared_lock lock(state_mutex);
    if (pairs.empty()) return reply_error(res, 404, "no guidance pairs stored");
    json list = json::array();
    for (const auto& p : pairs)
      list.push_back({{"id", p.id}, {"sample_id", p.sel->id}, {"class", p.sel->class_label},
                      {"fill", p.fill}});
    reply(res, 200, {{"file", (guidance_dir() / "guidance.json").string()}, {"pairs", list}});
  }

  void get_pair(std::size_t id, httplib::Response& res) const {
    std::shared_lock lock(state_mutex);
    if (id >= pairs.size()) return reply_error(res, 404, "no pair " + std::to_string(id));
    // Serve the stored files, not a re-encoding.
    const json doc = json::parse(read_file_bytes(guidance_dir() / "guidance.json"));
    const json& e = doc.at("pairs").at(id);
    const auto& p = pairs[id];
    reply(res, 200,
          {{"id", id},
           {"sample_id", p.sel->id},
           {"fill", p.fill},
           {"sel", base64_encode(read_file_bytes(guidance_dir() / e.at("sel").get<std::string>()))},
           {"mask",
            base64_encode(read_file_bytes(guidance_dir() / e.at("mask").get<std::string>()))},
           {"obj", base64_encode(encode_ppm(tensor_to_raster(p.obj)))}});
  }

  void post_prune(const httplib::Request& req, httplib::Response& res) {
    SensitivityRule rule = SensitivityRule::CumulativeMass;
    if (!req.body.empty()) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        return reply_error(res, 400, "request body is not valid JSON", "body");
      }
      if (body.contains("rule")) {
        try {
          rule = sensitivity_rule_from_string(body.at("rule").get<std::string>());
        } catch (const std::exception& ex) {
          return reply_error(res, 400, ex.what(), "rule");
        }
      }
    }
    std::unique_lock lock(state_mutex);
    if (pairs.empty()) return reply_error(res, 409, "upload guidance pairs first");
    guidance = compute_guidance(backbone, pairs, rule);
    json out = guidance->to_json();
    out["k"] = pairs.size();
    out["d"] = backbone.embedding_dim();
    out["rule"] = to_string(rule);
    reply(res, 200, out);
  }

  void post_retrain(httplib::Response& res) {
    std::unique_lock lock(state_mutex);
    if (busy) return reply_error(res, 409, "a retrain job is already running");
    if (!guidance) return reply_error(res, 409, "run /prune before /retrain");
    if (kept_dimensions(guidance->keep).empty())
      return reply_error(res, 409, "the indicator eliminates every dimension");
    if (worker.joinable()) worker.join();
    Job job;
    job.id = next_job++;
    job.keep = guidance->keep;
    jobs[job.id] = job;
    busy = true;
    worker = std::thread([this, id = job.id, keep = job.keep] { run_job(id, keep); });
    reply(res, 202, {{"job_id", job.id}, {"status", "queued"}});
  }

  void run_job(std::size_t id, PruneIndicator keep) {
    {
      std::unique_lock lock(state_mutex);
      idle_cv.wait(lock, [this] { return !held; });
      jobs[id].status = JobStatus::Running;
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Discriminator> disc;
    std::optional<double> acc;
    std::optional<std::string> err;
    try {
      disc = train_discriminator(backbone, run.split.train, run.split.validation, &keep,
                                 run.num_classes, config.experiment.train.discriminator,
                                 discriminator_seed(config.seed), &cache)
                 .discriminator;
      acc = evaluate(backbone, *disc, &keep, run.split.test, &cache).accuracy;
    } catch (const std::exception& ex) {
      err = ex.what();
    }
    std::unique_lock lock(state_mutex);
    Job& j = jobs[id];
    j.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (err) {
      j.status = JobStatus::Failed;
      j.error = err;
    } else {
      j.status = JobStatus::Done;
      j.post_accuracy = acc;
      pruned = std::move(disc);
      pruned_keep = keep;
    }
    busy = false;
    idle_cv.notify_all();
  }

  void get_saliency(std::size_t sample_id, const httplib::Request& req,
                    httplib::Response& res) const {
    const SamplePtr* sample = nullptr;
    for (const auto& s : run.data)
      if (s->id == sample_id) sample = &s;
    if (!sample) return reply_error(res, 404, "unknown sample " + std::to_string(sample_id));
    const std::string model = req.has_param("model") ? req.get_param_value("model") : "baseline";
    if (model != "baseline" && model != "pruned")
      return reply_error(res, 400, "model must be 'baseline' or 'pruned'", "model");
    Discriminator disc;
    std::optional<PruneIndicator> keep;
    {
      std::shared_lock lock(state_mutex);
      if (model == "pruned") {
        if (!pruned) return reply_error(res, 409, "no finished retrain job yet");
        disc = *pruned;
        keep = pruned_keep;
      } else {
        disc = baseline;
      }
    }
    const Tensor map = saliency_map(backbone, disc, keep ? &*keep : nullptr, (*sample)->image);
    Raster8 r{map.dim(1), map.dim(0), 1, {}};
    for (double v : map.values())
      r.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    reply(res, 200, {{"sample_id", sample_id},
                     {"model", model},
                     {"height", map.dim(0)},
                     {"width", map.dim(1)},
                     {"values", std::vector<double>(map.values().begin(), map.values().end())},
                     {"pgm", base64_encode(encode_pgm(r))}});
  }

  void routes() {
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                                    std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& ex) {
        reply_error(res, 500, ex.what());
      } catch (...) {
        reply_error(res, 500, "unknown error");
      }
    });
    server.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
      std::shared_lock lock(state_mutex);
      reply(res, 200, {{"embedding_dim", backbone.embedding_dim()},
                       {"num_classes", run.num_classes},
                       {"train", run.split.train.size()},
                       {"test", run.split.test.size()},
                       {"baseline_accuracy", baseline_accuracy},
                       {"pairs", pairs.size()},
                       {"busy", busy}});
    });
    server.Get("/samples", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t count = config.candidates ? config.candidates : 2 * run.num_classes;
      if (req.has_param("count")) {
        try {
          count = std::stoul(req.get_param_value("count"));
        } catch (const std::exception&) {
          return reply_error(res, 400, "count must be a non-negative integer", "count");
        }
      }
      json list = json::array();
      for (std::size_t i = 0; i < std::min(count, candidates.size()); ++i)
        list.push_back(sample_json(candidates[i]));
      reply(res, 200, {{"samples", list}, {"total", candidates.size()}});
    });
    server.Post("/guidance", [this](const httplib::Request& req, httplib::Response& res) {
      post_guidance(req, res);
    });
    server.Get("/guidance", [this](const httplib::Request&, httplib::Response& res) {
      get_guidance(res);
    });
    server.Get(R"(/guidance/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      get_pair(std::stoul(req.matches[1]), res);
    });
    server.Post("/prune", [this](const httplib::Request& req, httplib::Response& res) {
      post_prune(req, res);
    });
    server.Post("/retrain", [this](const httplib::Request&, httplib::Response& res) {
      post_retrain(res);
    });
    server.Get(R"(/jobs/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lock(state_mutex);
      const auto it = jobs.find(std::stoul(req.matches[1]));
      if (it == jobs.end()) return reply_error(res, 404, "unknown job");
      reply(res, 200, job_json(it->second));
    });
    server.Get(R"(/saliency/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      get_saliency(std::stoul(req.matches[1]), req, res);
    });
  }
};

Service::Service(const ServiceConfig& config) : impl_(std::make_unique<Impl>(config)) {}
Service::~Service() = default;

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port))
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::hold_jobs(bool held) {
  std::unique_lock lock(impl_->state_mutex);
  impl_->held = held;
  impl_->idle_cv.notify_all();
}

void Service::wait_idle() {
  std::unique_lock lock(impl_->state_mutex);
  impl_->idle_cv.wait(lock, [this] { return !impl_->busy; });
}

}  // namespace eihi
