// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <filesystem>
#include <string>

#include "httplib.h"

#include "eihi/base64.hpp"
#include "eihi/bench.hpp"
#include "eihi/error.hpp"
#include "eihi/image_io.hpp"
#include "eihi/service.hpp"

using namespace eihi;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig served_experiment(const fs::path& out) {
  ExperimentConfig c;
  DatasetSpec ds;
  ds.num_classes = 3;
  ds.num_domains = 4;
  ds.samples_per_cell = 8;
  ds.height = 16;
  ds.width = 16;
  c.dataset = ds;
  c.shift = correlation_shift(3, 4, 1, Ratio{1, 2});
  c.method = Method::EihiStageOne;
  c.embedding_dim = 16;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.train.negatives = 3;
  c.train.probe_every = 1;
  c.train.probe.epochs = 5;
  c.train.discriminator.epochs = 600;
  c.train.discriminator.batch_size = 4;
  c.train.discriminator.hidden = {64};
  c.seeds = {11};
  c.out_dir = out;
  return c;
}

// Canonical P5 bytes, assembled by hand.
std::string pgm_bytes(std::size_t w, std::size_t h, const std::vector<std::uint8_t>& px) {
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  s.append(px.begin(), px.end());
  return s;
}

struct Fixture {
  fs::path dir = fs::temp_directory_path() / "eihi_service_test";
  ExperimentReport report;
  std::unique_ptr<Service> service;
  std::unique_ptr<httplib::Client> client;

  Fixture() {
    fs::remove_all(dir);
    const auto exp = served_experiment(dir / "run");
    report = run_experiment(exp);
    REQUIRE(!report.seeds[0].error);
    ServiceConfig sc;
    sc.experiment = exp;
    sc.experiment.out_dir.reset();
    sc.seed = 11;
    sc.backbone = dir / "run" / "seed_11" / "backbone.ckpt";
    sc.work_dir = dir / "work";
    service = std::make_unique<Service>(sc);
    const int port = service->start("127.0.0.1", 0);
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(60, 0);
  }
  ~Fixture() {
    service->stop();
    service.reset();
    fs::remove_all(dir);
  }

  json get(const std::string& path, int expect = 200) {
    auto r = client->Get(path);
    REQUIRE(r);
    CHECK(r->status == expect);
    CHECK(r->get_header_value("Content-Type") == "application/json");
    return json::parse(r->body);
  }
  json post(const std::string& path, const std::string& body, int expect) {
    auto r = client->Post(path, body, "application/json");
    REQUIRE(r);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
};

}  // namespace

TEST_CASE("base64 round trip and strictness") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("foob") == "Zm9vYg==");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  std::string all;
  for (int i = 0; i < 256; ++i) all += static_cast<char>(i);
  CHECK(*base64_decode(base64_encode(all)) == all);
  CHECK(*base64_decode("Zm9vYg==") == "foob");
  CHECK(!base64_decode("Zm9vYg="));
  CHECK(!base64_decode("Zm9v Yg="));
  CHECK(!base64_decode("Zm9*"));
}

TEST_CASE("service endpoints") {
  Fixture f;
  const json status = f.get("/status");
  const std::size_t d = status.at("embedding_dim");
  CHECK(d == 16);

  // Candidates
  const json samples = f.get("/samples?count=3");
  REQUIRE(samples.at("samples").size() == 3);
  std::set<int> classes;
  for (const auto& s : samples.at("samples")) {
    classes.insert(s.at("class").get<int>());
    const auto raster = parse_ppm(*base64_decode(s.at("ppm").get<std::string>()));
    CHECK(raster.width == 16);
    CHECK(raster.height == 16);
  }
  CHECK(classes.size() == 3);
  f.get("/samples?count=x", 400);

  // Prune and retrain need guidance first.
  f.post("/prune", "", 409);
  f.post("/retrain", "", 409);

  // Field-level mask validation
  const std::size_t id0 = samples["samples"][0]["id"];
  std::vector<std::uint8_t> px(16 * 16, 0);
  for (std::size_t y = 4; y < 12; ++y)
    for (std::size_t x = 4; x < 12; ++x) px[y * 16 + x] = 255;
  const std::string good = pgm_bytes(16, 16, px);
  auto upload = [&](const json& mask, std::size_t sid, double fill = 0.25) {
    return json{{"pairs", {{{"sample_id", sid}, {"mask", mask}, {"fill", fill}}}}}.dump();
  };
  json e = f.post("/guidance", upload("@@@@", id0), 400);
  CHECK(e.at("field") == "pairs[0].mask");
  e = f.post("/guidance", upload(base64_encode(pgm_bytes(8, 8, std::vector<std::uint8_t>(64, 255))), id0), 400);
  CHECK(e.at("field") == "pairs[0].mask");
  auto grey = px;
  grey[0] = 128;
  e = f.post("/guidance", upload(base64_encode(pgm_bytes(16, 16, grey)), id0), 400);
  CHECK(e.at("field") == "pairs[0].mask");
  e = f.post("/guidance", upload(base64_encode(pgm_bytes(16, 16, std::vector<std::uint8_t>(256, 0))), id0), 400);
  CHECK(e.at("field") == "pairs[0].mask");
  e = f.post("/guidance", upload(42, id0), 400);
  CHECK(e.at("field") == "pairs[0].mask");
  e = f.post("/guidance", upload(base64_encode(good), 999999), 400);
  CHECK(e.at("field") == "pairs[0].sample_id");
  e = f.post("/guidance", upload(base64_encode(good), id0, 2.0), 400);
  CHECK(e.at("field") == "pairs[0].fill");
  e = f.post("/guidance", "{not json", 400);
  CHECK(e.at("field") == "body");
  e = f.post("/guidance", R"({"pairs": []})", 400);
  CHECK(e.at("field") == "pairs");

  // Store three pairs, one per candidate.
  json pairs = json::array();
  for (const auto& s : samples.at("samples"))
    pairs.push_back({{"sample_id", s.at("id")}, {"mask", base64_encode(good)}, {"fill", 0.25}});
  const json stored = f.post("/guidance", json{{"pairs", pairs}}.dump(), 201);
  CHECK(stored.at("pairs") == 3);
  CHECK(fs::exists(stored.at("file").get<std::string>()));

  // Stored mask is bit-identical; obj background equals the fill.
  const json pair0 = f.get("/guidance/0");
  CHECK(*base64_decode(pair0.at("mask").get<std::string>()) == good);
  const auto obj = parse_ppm(*base64_decode(pair0.at("obj").get<std::string>()));
  const auto sel = parse_ppm(*base64_decode(pair0.at("sel").get<std::string>()));
  for (std::size_t i = 0; i < 256; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      if (px[i] == 0) CHECK(obj.pixels[i * 3 + c] == 64);  // round(0.25 * 255)
      else CHECK(obj.pixels[i * 3 + c] == sel.pixels[i * 3 + c]);
    }
  f.get("/guidance/7", 404);
  CHECK(f.get("/guidance").at("pairs").size() == 3);

  // Prune
  f.post("/prune", R"({"rule": "bogus"})", 400);
  const json pr = f.post("/prune", "{}", 200);
  REQUIRE(pr.at("i_guid").size() == d);
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t v = pr["i_guid"][j];
    CHECK(v <= 3);
    zeros += v == 0;
    CHECK((pr["keep"][j] == 0) == (v == 0));
  }
  CHECK(pr.at("eliminated").size() == zeros);

  // Retrain: one job at a time.
  f.service->hold_jobs(true);
  const json job = f.post("/retrain", "", 202);
  const std::size_t job_id = job.at("job_id");
  CHECK(f.get("/jobs/" + std::to_string(job_id)).at("status") == "queued");
  f.post("/retrain", "", 409);
  f.service->hold_jobs(false);
  f.service->wait_idle();
  const json done = f.get("/jobs/" + std::to_string(job_id));
  CHECK(done.at("status") == "done");
  // Pre-prune accuracy is the same stage-two run the bench reports.
  CHECK(done.at("pre_prune_accuracy").get<double>() == *f.report.seeds[0].accuracy);
  CHECK(done.at("post_prune_accuracy").is_number());
  CHECK(done.at("eliminated_count") == zeros);
  f.get("/jobs/99", 404);

  // Saliency
  for (const char* model : {"baseline", "pruned"}) {
    const json sal = f.get("/saliency/" + std::to_string(id0) + "?model=" + model);
    REQUIRE(sal.at("values").size() == 256);
    double mx = 0.0;
    for (double v : sal.at("values")) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mx = std::max(mx, v);
    }
    CHECK(mx == 1.0);
    CHECK(parse_pgm(*base64_decode(sal.at("pgm").get<std::string>())).width == 16);
  }
  f.get("/saliency/" + std::to_string(id0) + "?model=other", 400);
  f.get("/saliency/123456", 404);
}
