#pragma once

// JSON-over-HTTP generation service.
//
//   GET  /api/health    {"status": "ok"}
//   GET  /api/artists   [{"id", "name", "genre"}]
//   GET  /api/models    [{"mode", "checkpoint_id"}]
//   POST /api/generate  {"artist_id", "mode", "count" 1..100 (default 5),
//                        "temperature" 0..2 (default 1), "seed" (optional)}
//                       → {"lines": [...], "seed_used": n}
//
// Validation failures return 400 with {"error", "field"}; unknown artists or
// modes return 404.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "lyra/checkpoint.hpp"

namespace lyra {

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServedModel {
  std::string checkpoint_id;
  VaeCheckpoint checkpoint;
};

class GenerationService {
 public:
  // Models must share one artist manifest; at most one per mode.
  GenerationService(std::vector<ServedModel> models, std::uint64_t seed_source_seed);

  // Loads every VAE checkpoint under `dir`; for each mode the
  // lexicographically first checkpoint path is served.
  static GenerationService from_directory(const std::filesystem::path& dir,
                                          std::uint64_t seed_source_seed);

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::string& body) const;

  const std::vector<ArtistId>& artists() const { return artists_; }
  const std::vector<ServedModel>& models() const { return models_; }

 private:
  HttpResponse generate(const std::string& body) const;
  std::uint64_t next_seed() const;

  std::vector<ServedModel> models_;
  std::vector<ArtistId> artists_;
  mutable std::mutex seed_mutex_;
  mutable std::mt19937_64 seed_source_;
};

// Largest seed the service hands out, so that JavaScript clients can echo it
// back exactly.
inline constexpr std::uint64_t kMaxServiceSeed = (std::uint64_t(1) << 53) - 1;

// Blocks serving `service` until the process is stopped.
void serve(const GenerationService& service, const std::string& host, int port);

}  // namespace lyra
