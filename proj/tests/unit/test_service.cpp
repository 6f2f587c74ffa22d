#include <gtest/gtest.h>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <future>
#include <thread>
#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"

#include "lyra/service.hpp"

using namespace lyra;
using nlohmann::json;

namespace {

VaeCheckpoint tiny_checkpoint(ConditioningMode mode) {
  std::vector<Line> lines{make_line("we walk along the river road", 0),
                          make_line("lights are burning in the town", 1)};
  VaeCheckpoint ck;
  ck.vocab = build_vocabulary(lines, 1);
  ck.artists = {{0, "Art One", "electronic", "one"}, {1, "Art Two", "rock", "two"}};
  VaeConfig c;
  c.vocab_size = ck.vocab.size();
  c.num_artists = 2;
  c.word_emb_dim = 5;
  c.encoder_hidden = 4;
  c.latent_dim = 3;
  c.decoder_hidden = 6;
  c.artist_emb_dim = mode == ConditioningMode::OneHot ? 2 : 4;
  c.max_decode_len = 8;
  c.mode = mode;
  Rng rng(5);
  ArtistEmbeddingMatrix m = mode == ConditioningMode::OneHot ? ArtistEmbeddingMatrix::one_hot(2)
                                                             : ArtistEmbeddingMatrix::random(2, 4, rng);
  if (required_source(mode) == EmbeddingSource::Audio) m.source = EmbeddingSource::Audio;
  ck.model = VaeModel(c, m, rng);
  ck.model.round_to_float();
  ck.seed = 1;
  ck.config_hash = std::string(40, '0');
  return ck;
}

const GenerationService& service() {
  static const GenerationService s(
      {ServedModel{"randT/seed-1", tiny_checkpoint(ConditioningMode::RandomTrainable)},
       ServedModel{"onehot/seed-1", tiny_checkpoint(ConditioningMode::OneHot)}},
      99);
  return s;
}

HttpResponse post(const json& body) { return service().handle("POST", "/api/generate", body.dump()); }

void expect_field_error(const json& body, int status, const std::string& field) {
  const auto r = post(body);
  EXPECT_EQ(r.status, status) << body.dump();
  EXPECT_TRUE(r.body.contains("error")) << body.dump();
  EXPECT_EQ(r.body.value("field", ""), field) << body.dump();
}

}  // namespace

TEST(ServiceHandler, HealthArtistsModels) {
  auto r = service().handle("GET", "/api/health", "");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["status"], "ok");

  r = service().handle("GET", "/api/artists", "");
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body.size(), 2u);
  EXPECT_EQ(r.body[1]["id"], 1);
  EXPECT_EQ(r.body[1]["name"], "Art Two");
  EXPECT_EQ(r.body[1]["genre"], "rock");

  r = service().handle("GET", "/api/models", "");
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body.size(), 2u);
  EXPECT_EQ(r.body[0]["mode"], "onehot");
  EXPECT_EQ(r.body[0]["checkpoint_id"], "onehot/seed-1");
  EXPECT_EQ(r.body[1]["mode"], "randT");
}

TEST(ServiceHandler, GenerateDefaultsAndSeedEcho) {
  const auto r = post({{"artist_id", 0}, {"mode", "randT"}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["lines"].size(), 5u);
  EXPECT_TRUE(r.body["seed_used"].is_number_unsigned());
  EXPECT_LE(r.body["seed_used"].get<std::uint64_t>(), kMaxServiceSeed);

  const auto again = post({{"artist_id", 0}, {"mode", "randT"}, {"seed", r.body["seed_used"]}});
  EXPECT_EQ(again.body["lines"], r.body["lines"]);
}

TEST(ServiceHandler, ExplicitSeedIsDeterministic) {
  const json req{{"artist_id", 1}, {"mode", "onehot"}, {"count", 12}, {"temperature", 1.3}, {"seed", 44}};
  const auto a = post(req), b = post(req);
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.body["lines"].size(), 12u);
  EXPECT_EQ(a.body, b.body);
  EXPECT_EQ(a.body["seed_used"], 44);
}

TEST(ServiceHandler, ValidationErrors) {
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"count", 0}}, 400, "count");
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"count", 101}}, 400, "count");
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"count", "3"}}, 400, "count");
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"temperature", -0.1}}, 400, "temperature");
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"temperature", 2.5}}, 400, "temperature");
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"temperature", "hot"}}, 400, "temperature");
  expect_field_error({{"artist_id", 0}, {"mode", "randT"}, {"seed", -4}}, 400, "seed");
  expect_field_error({{"artist_id", "0"}, {"mode", "randT"}}, 400, "artist_id");
  expect_field_error({{"mode", "randT"}}, 400, "artist_id");
  expect_field_error({{"artist_id", 0}}, 400, "mode");
  expect_field_error({{"artist_id", 0}, {"mode", 3}}, 400, "mode");
  expect_field_error({{"artist_id", 2}, {"mode", "randT"}}, 404, "artist_id");
  expect_field_error({{"artist_id", -1}, {"mode", "randT"}}, 404, "artist_id");
  expect_field_error({{"artist_id", 0}, {"mode", "audioNT"}}, 404, "mode");

  EXPECT_EQ(service().handle("POST", "/api/generate", "{not json").status, 400);
  EXPECT_EQ(service().handle("POST", "/api/generate", "[1]").status, 400);
  EXPECT_EQ(post({{"artist_id", 0}, {"mode", "randT"}, {"count", 100}, {"temperature", 0}}).status, 200);
}

TEST(ServiceHandler, MethodsAndPaths) {
  EXPECT_EQ(service().handle("GET", "/api/generate", "").status, 405);
  EXPECT_EQ(service().handle("POST", "/api/artists", "{}").status, 405);
  EXPECT_EQ(service().handle("DELETE", "/api/health", "").status, 405);
  EXPECT_EQ(service().handle("GET", "/api/nothing", "").status, 404);
}

TEST(ServiceHandler, ConcurrentRequestsMatchSerialOnes) {
  std::vector<json> requests;
  for (int i = 0; i < 16; ++i)
    requests.push_back({{"artist_id", i % 2}, {"mode", i % 3 ? "randT" : "onehot"}, {"count", 6}, {"seed", i}});
  std::vector<json> serial;
  for (const auto& r : requests) serial.push_back(post(r).body);
  std::vector<std::future<json>> futures;
  for (const auto& r : requests) futures.push_back(std::async(std::launch::async, [&r] { return post(r).body; }));
  for (std::size_t i = 0; i < requests.size(); ++i) EXPECT_EQ(futures[i].get(), serial[i]);

  std::vector<std::future<std::uint64_t>> unseeded;
  for (int i = 0; i < 8; ++i)
    unseeded.push_back(std::async(std::launch::async, [] {
      return post({{"artist_id", 0}, {"mode", "randT"}, {"count", 1}}).body["seed_used"].get<std::uint64_t>();
    }));
  for (auto& f : unseeded) EXPECT_LE(f.get(), kMaxServiceSeed);
}

TEST(ServiceHandler, RejectsInconsistentModels) {
  auto other = tiny_checkpoint(ConditioningMode::OneHot);
  other.artists[1].name = "Someone Else";
  EXPECT_THROW(GenerationService({ServedModel{"a", tiny_checkpoint(ConditioningMode::RandomTrainable)},
                                  ServedModel{"b", other}},
                                 1),
               std::invalid_argument);
  EXPECT_THROW(GenerationService({ServedModel{"a", tiny_checkpoint(ConditioningMode::OneHot)},
                                  ServedModel{"b", tiny_checkpoint(ConditioningMode::OneHot)}},
                                 1),
               std::invalid_argument);
  EXPECT_THROW(GenerationService({}, 1), std::invalid_argument);
}

TEST(ServiceHttp, ServesOverTheNetwork) {
  const auto dir = std::filesystem::temp_directory_path() / "lyra_service_http";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "onehot");
  std::filesystem::create_directories(dir / "randT");
  save_checkpoint(tiny_checkpoint(ConditioningMode::OneHot), dir / "onehot" / "seed-1.ckpt");
  save_checkpoint(tiny_checkpoint(ConditioningMode::RandomTrainable), dir / "randT" / "seed-1.ckpt");
  save_checkpoint(tiny_checkpoint(ConditioningMode::RandomTrainable), dir / "randT" / "seed-2.ckpt");

  const int port = 20000 + static_cast<int>(::getpid() % 20000);
  const pid_t child = ::fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    const std::string port_arg = std::to_string(port);
    ::execl(LYRA_CLI, LYRA_CLI, "serve", dir.c_str(), "--host", "127.0.0.1", "--port", port_arg.c_str(),
            static_cast<char*>(nullptr));
    ::_exit(127);
  }

  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(1);
  bool up = false;
  for (int i = 0; i < 100 && !up; ++i) {
    if (auto res = client.Get("/api/health"); res && res->status == 200) up = true;
    else std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  if (up) {
    auto models = client.Get("/api/models");
    ASSERT_TRUE(models);
    const auto listed = json::parse(models->body);
    ASSERT_EQ(listed.size(), 2u);
    EXPECT_EQ(listed[1]["checkpoint_id"], "randT/seed-1");

    const std::string body = json{{"artist_id", 1}, {"mode", "randT"}, {"count", 3}, {"seed", 8}}.dump();
    auto a = client.Post("/api/generate", body, "application/json");
    auto b = client.Post("/api/generate", body, "application/json");
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->status, 200);
    EXPECT_EQ(a->get_header_value("Access-Control-Allow-Origin"), "*");
    EXPECT_EQ(json::parse(a->body)["lines"].size(), 3u);
    EXPECT_EQ(a->body, b->body);

    auto bad = client.Post("/api/generate", R"({"artist_id": 0, "mode": "randT", "count": 0})", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(json::parse(bad->body)["field"], "count");
    auto missing = client.Get("/api/unknown");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
  }
  ::kill(child, SIGTERM);
  ::waitpid(child, nullptr, 0);
  EXPECT_TRUE(up) << "server did not come up on port " << port;
}

TEST(ServiceHttp, EmptyDirectoryIsAnError) {
  const auto dir = std::filesystem::temp_directory_path() / "lyra_service_empty";
  std::filesystem::create_directories(dir);
  EXPECT_THROW(GenerationService::from_directory(dir, 1), std::runtime_error);
  EXPECT_THROW(GenerationService::from_directory(dir / "absent", 1), std::runtime_error);
}
