#include <cstdint>
#include <exception>
#include <iostream>
#include <random>
#include <string>

#include "CLI11.hpp"

#include "lyra/fixtures.hpp"
#include "lyra/pipeline.hpp"
#include "lyra/service.hpp"

namespace {

lyra::ConditioningMode mode_or(const lyra::RunConfig& config, const std::string& flag) {
  return flag.empty() ? config.mode : lyra::parse_mode(flag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lyra: artist-conditioned lyric line generation"};
  app.require_subcommand(1);

  std::string config_path, mode, checkpoint, artist, dir, host = "127.0.0.1";
  std::size_t count = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int port = 8080;

  auto* fixture = app.add_subcommand("make-fixture", "write a synthetic two-artist data set and config");
  fixture->add_option("dir", dir, "output directory")->required();

  auto* prep = app.add_subcommand("prep-audio", "decode, clip and cache mel spectrograms");
  prep->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* spectro = app.add_subcommand("train-spectro", "train the spectrogram classifier and export artist embeddings");
  spectro->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* vae = app.add_subcommand("train-vae", "train one VAE checkpoint per seed");
  vae->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  vae->add_option("--mode", mode, "onehot|randT|randNT|audioT|audioNT (default: config)");

  auto* gen = app.add_subcommand("generate", "sample lines from a checkpoint");
  gen->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  gen->add_option("--artist", artist, "artist name")->required();
  gen->add_option("--n", count, "number of lines")->check(CLI::PositiveNumber);
  gen->add_option("--temperature", temperature, "0 decodes greedily")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed);

  auto* eval = app.add_subcommand("evaluate", "score generated lines and aggregate over seeds");
  eval->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", mode, "onehot|randT|randNT|audioT|audioNT (default: config)");

  auto* srv = app.add_subcommand("serve", "start the HTTP generation service");
  srv->add_option("dir", dir, "checkpoint directory")->required();
  srv->add_option("--port", port)->check(CLI::Range(1, 65535));
  srv->add_option("--host", host);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fixture) {
      std::cout << lyra::write_fixture(dir).string() << '\n';
    } else if (*prep) {
      const auto config = lyra::load_run_config(config_path);
      std::cout << "clips: " << lyra::prep_audio(config) << '\n';
    } else if (*spectro) {
      const auto config = lyra::load_run_config(config_path);
      const auto result = lyra::train_spectro(config);
      std::cout << "test accuracy: " << result.test_accuracy << '\n';
    } else if (*vae) {
      const auto config = lyra::load_run_config(config_path);
      for (const auto& path : lyra::train_vae_stage(config, mode_or(config, mode)))
        std::cout << path.string() << '\n';
    } else if (*gen) {
      const auto ck = lyra::load_checkpoint(checkpoint);
      const lyra::Corpus manifest{ck.artists, {}};
      lyra::GenerateOptions options;
      options.count = count;
      options.temperature = temperature;
      options.max_len = ck.model.config().max_decode_len;
      options.seed = seed;
      for (const auto& line : lyra::generate(ck.model, ck.vocab,
                                             manifest.artist_by_name(artist).index, options))
        std::cout << line << '\n';
    } else if (*eval) {
      const auto config = lyra::load_run_config(config_path);
      const auto result = lyra::evaluate_stage(config, mode_or(config, mode));
      std::cout << lyra::to_json(result.aggregate).dump(2) << '\n';
      std::cout << lyra::nll_matrix_tsv(result.aggregate.nll, result.aggregate.artists);
    } else if (*srv) {
      const auto service =
          lyra::GenerationService::from_directory(dir, std::random_device{}());
      std::cerr << "serving " << service.models().size() << " model(s) on " << host << ':'
                << port << '\n';
      lyra::serve(service, host, port);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
