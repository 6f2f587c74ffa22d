#include "lyra/service.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "httplib.h"

namespace lyra {

namespace {

HttpResponse error(int status, const std::string& message, const std::string& field = "") {
  nlohmann::json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, body};
}

bool same_artists(const std::vector<ArtistId>& a, const std::vector<ArtistId>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].index != b[i].index || a[i].name != b[i].name || a[i].genre != b[i].genre)
      return false;
  return true;
}

}  // namespace

GenerationService::GenerationService(std::vector<ServedModel> models,
                                     std::uint64_t seed_source_seed)
    : models_(std::move(models)), seed_source_(seed_source_seed) {
  if (models_.empty()) throw std::invalid_argument("no models to serve");
  artists_ = models_.front().checkpoint.artists;
  std::sort(models_.begin(), models_.end(), [](const ServedModel& a, const ServedModel& b) {
    return mode_name(a.checkpoint.model.config().mode) <
           mode_name(b.checkpoint.model.config().mode);
  });
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (!same_artists(models_[i].checkpoint.artists, artists_)) {
      throw std::invalid_argument("checkpoint " + models_[i].checkpoint_id +
                                  " has a different artist manifest");
    }
    if (i > 0 && models_[i].checkpoint.model.config().mode ==
                     models_[i - 1].checkpoint.model.config().mode) {
      throw std::invalid_argument("two checkpoints for mode " +
                                  mode_name(models_[i].checkpoint.model.config().mode));
    }
  }
}

GenerationService GenerationService::from_directory(const std::filesystem::path& dir,
                                                    std::uint64_t seed_source_seed) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("checkpoint directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt")
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());

  std::map<ConditioningMode, ServedModel> chosen;
  for (const auto& path : paths) {
    const CheckpointFile file = read_checkpoint_file(path);
    if (file.metadata.value("kind", "") != "vae") continue;
    VaeCheckpoint ck = vae_from_checkpoint_file(file);
    const auto mode = ck.model.config().mode;
    if (chosen.count(mode)) continue;
    auto id = std::filesystem::relative(path, dir);
    id.replace_extension();
    chosen.emplace(mode, ServedModel{id.generic_string(), std::move(ck)});
  }
  if (chosen.empty()) throw std::runtime_error("no VAE checkpoints under " + dir.string());
  std::vector<ServedModel> models;
  for (auto& [mode, m] : chosen) models.push_back(std::move(m));
  return GenerationService(std::move(models), seed_source_seed);
}

std::uint64_t GenerationService::next_seed() const {
  std::lock_guard<std::mutex> lock(seed_mutex_);
  return seed_source_() & kMaxServiceSeed;
}

HttpResponse GenerationService::handle(const std::string& method, const std::string& path,
                                       const std::string& body) const {
  const bool get = method == "GET", post = method == "POST";
  if (path == "/api/health") {
    return get ? HttpResponse{200, {{"status", "ok"}}} : error(405, "method not allowed");
  }
  if (path == "/api/artists") {
    if (!get) return error(405, "method not allowed");
    nlohmann::json out = nlohmann::json::array();
    for (const auto& a : artists_)
      out.push_back({{"id", a.index}, {"name", a.name}, {"genre", a.genre}});
    return {200, out};
  }
  if (path == "/api/models") {
    if (!get) return error(405, "method not allowed");
    nlohmann::json out = nlohmann::json::array();
    for (const auto& m : models_) {
      out.push_back({{"mode", mode_name(m.checkpoint.model.config().mode)},
                     {"checkpoint_id", m.checkpoint_id}});
    }
    return {200, out};
  }
  if (path == "/api/generate") {
    return post ? generate(body) : error(405, "method not allowed");
  }
  return error(404, "not found: " + path);
}

HttpResponse GenerationService::generate(const std::string& body) const {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    return error(400, "request body is not valid JSON");
  }
  if (!req.is_object()) return error(400, "request body must be a JSON object");

  if (!req.contains("artist_id")) return error(400, "artist_id is required", "artist_id");
  const auto& artist_field = req["artist_id"];
  if (!artist_field.is_number_integer()) {
    return error(400, "artist_id must be an integer", "artist_id");
  }
  const auto artist = artist_field.get<std::int64_t>();
  if (artist < 0 || artist >= static_cast<std::int64_t>(artists_.size())) {
    return error(404, "unknown artist " + std::to_string(artist), "artist_id");
  }

  if (!req.contains("mode")) return error(400, "mode is required", "mode");
  if (!req["mode"].is_string()) return error(400, "mode must be a string", "mode");
  const auto mode = req["mode"].get<std::string>();
  const ServedModel* model = nullptr;
  for (const auto& m : models_)
    if (mode_name(m.checkpoint.model.config().mode) == mode) model = &m;
  if (!model) return error(404, "no model for mode " + mode, "mode");

  std::int64_t count = 5;
  if (req.contains("count")) {
    if (!req["count"].is_number_integer()) return error(400, "count must be an integer", "count");
    count = req["count"].get<std::int64_t>();
    if (count < 1 || count > 100) return error(400, "count must be in [1, 100]", "count");
  }
  double temperature = 1.0;
  if (req.contains("temperature")) {
    if (!req["temperature"].is_number()) {
      return error(400, "temperature must be a number", "temperature");
    }
    temperature = req["temperature"].get<double>();
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
      return error(400, "temperature must be in [0, 2]", "temperature");
    }
  }
  std::uint64_t seed = 0;
  if (req.contains("seed") && !req["seed"].is_null()) {
    if (!req["seed"].is_number_unsigned()) {
      return error(400, "seed must be a non-negative integer", "seed");
    }
    seed = req["seed"].get<std::uint64_t>();
  } else {
    seed = next_seed();
  }

  GenerateOptions options;
  options.count = static_cast<std::size_t>(count);
  options.temperature = temperature;
  options.max_len = model->checkpoint.model.config().max_decode_len;
  options.seed = seed;
  const auto lines = lyra::generate(model->checkpoint.model, model->checkpoint.vocab,
                                    static_cast<int>(artist), options);
  return {200, {{"lines", lines}, {"seed_used", seed}, {"artist_id", artist}, {"mode", mode}}};
}

void serve(const GenerationService& service, const std::string& host, int port) {
  httplib::Server server;
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse out = service.handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(".*", forward);
  server.Post(".*", forward);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (!server.listen(host, port)) {
    throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace lyra
