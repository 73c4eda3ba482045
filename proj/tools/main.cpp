#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "commands.hpp"
#include "spectral_codec/kernels.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Spectral barcode pipeline: synthetic scenes, projector design and fitting, "
               "encoding, decoding, classification and evaluation."};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(cli::exit_code_table() +
             "\nThreads: --threads N, else config 'threads', else SPECTRAL_CODEC_THREADS, else "
             "the OpenMP default.\nEvery command that writes files leaves run.json in its output "
             "directory with the resolved config and its hash.");

  std::string config_path, out;
  std::optional<std::int64_t> seed;
  std::optional<int> threads;
  app.add_option("--config", config_path, "JSON config; keys override the built-in defaults")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for every random stage (overrides config)");
  app.add_option("--threads", threads, "Worker threads for parallel kernels (overrides config)");
  app.add_option("--out", out, "Output directory");

  std::string bank, in, decoder, models, pred, truth;
  auto* synth = app.add_subcommand("synth", "Write synthetic scenes (.hxc cubes, .hxm masks)");
  auto* design = app.add_subcommand("design", "PCA projector bank from a directory of cubes");
  design->add_option("--in", in, "Directory of .hxc cubes")->required();
  auto* fit = app.add_subcommand("fit", "Fit resonator models to every curve of a bank");
  fit->add_option("--bank", bank, "Target bank (.hxp, physical)")->required();
  auto* encode = app.add_subcommand("encode", "Barcodes (.hxb) of every cube, through the camera model");
  encode->add_option("--bank", bank, "Projector bank (.hxp)")->required();
  encode->add_option("--in", in, "Directory of .hxc cubes")->required();
  auto* decode = app.add_subcommand("decode", "Reconstruct cubes from barcodes");
  decode->add_option("--bank", bank, "Projector bank used to encode")->required();
  decode->add_option("--in", in, "Directory of .hxb barcodes")->required();
  decode->add_option("--decoder", decoder, "Trained decoder (.mlp); least squares if omitted");
  auto* train = app.add_subcommand("train-decoder", "Train a reconstruction or classification network");
  train->add_option("--bank", bank, "Projector bank (.hxp)")->required();
  train->add_option("--in", in, "Directory of .hxc cubes (and .hxm masks)")->required();
  train->add_option("--models", models, "Directory of .cmt models, for joint training");
  auto* classify = app.add_subcommand("classify", "Per-pixel labels (.hxm) from barcodes");
  classify->add_option("--decoder", decoder, "Trained classifier (.mlp)")->required();
  classify->add_option("--in", in, "Directory of .hxb barcodes")->required();
  auto* eval = app.add_subcommand("eval", "RMSE (cubes) or segmentation scores (masks)");
  eval->add_option("--pred", pred, "Directory of predictions")->required();
  eval->add_option("--truth", truth, "Directory of ground truth with matching names")->required();
  auto* bench = app.add_subcommand("bench", "Encode and decode throughput on a random cube");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigExit;
  }

  auto* cmd = app.get_subcommands().front();
  const bool needs_out = cmd != eval && cmd != bench;
  try {
    if (needs_out && out.empty()) throw cli::ConfigError(cmd->get_name() + " needs --out");
    nlohmann::json overrides = nlohmann::json::object();
    if (seed) overrides["seed"] = *seed;
    if (threads) overrides["threads"] = *threads;
    const cli::Settings s = cli::make_settings(cli::resolve_config(config_path, overrides));
    const int t = s.resolved.at("threads").get<int>();
    if (t > 0) spectral_codec::kernels::set_threads(t);

    if (cmd == synth) cli::cmd_synth(s, out);
    else if (cmd == design) cli::cmd_design(s, in, out);
    else if (cmd == fit) cli::cmd_fit(s, bank, out);
    else if (cmd == encode) cli::cmd_encode(s, bank, in, out);
    else if (cmd == decode) cli::cmd_decode(s, bank, in, decoder, out);
    else if (cmd == train) cli::cmd_train_decoder(s, bank, in, models, out);
    else if (cmd == classify) cli::cmd_classify(s, decoder, in, out);
    else if (cmd == eval) cli::cmd_eval(s, pred, truth, out);
    else if (cmd == bench) cli::cmd_bench(s, out);
  } catch (const cli::ConfigError& e) {
    std::cerr << "error [config]: " << e.what() << '\n';
    return cli::kConfigExit;
  } catch (const spectral_codec::Error& e) {
    std::cerr << "error [" << spectral_codec::to_string(e.kind()) << "]: " << e.what() << '\n';
    return cli::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << '\n';
    return cli::kUnexpectedExit;
  }
  return 0;
}
