#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "spectral_codec/kernels.hpp"
#include "spectral_codec/metrics.hpp"

namespace cli {

using nlohmann::json;
using namespace spectral_codec;

namespace {

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<fs::path> require_files(const fs::path& dir, const std::string& ext) {
  auto files = list_files(dir, ext);
  if (files.empty()) throw Error(ErrorKind::Io, dir.string() + ": no " + ext + " files");
  return files;
}

fs::path sibling(const fs::path& file, const std::string& ext) {
  fs::path p = file;
  return p.replace_extension(ext);
}

std::string name(const char* pattern, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, i);
  return buf;
}

// Encoder output as the rest of the pipeline sees it: quantized by the
// simulated camera when readout is enabled, always in barcode units.
struct Sensor {
  bool enabled = false;
  ReadoutConfig cfg;

  Sensor(const Settings& s, const ProjectorBank& bank) : enabled(s.readout_enabled()), cfg(s.readout()) {
    if (enabled) cfg.fixed_gains = white_reference_gains(bank, s.headroom());
  }
  Barcode capture(const HsiCube& cube, const ProjectorBank& bank, std::size_t index) const {
    Barcode b = encode(cube, bank);
    if (!enabled) return b;
    ReadoutConfig c = cfg;
    c.seed = cfg.seed + index;
    return dequantize(read_sensor(b, c), c.fixed_gains, c);
  }
  json describe() const {
    if (!enabled) return {{"enabled", false}};
    return {{"enabled", true}, {"gains", cfg.fixed_gains}};
  }
};

std::vector<CmtModel> load_models(const fs::path& dir) {
  std::vector<CmtModel> out;
  for (const auto& f : require_files(dir, ".cmt")) out.push_back(load_model(f));
  return out;
}

struct DecoderInfo {
  Task task = Task::Reconstruction;
  std::vector<std::string> classes;
  double feature_scale = 1.0;
  std::size_t k = 0;
};

DecoderInfo load_decoder_info(const fs::path& mlp) {
  const fs::path meta = sibling(mlp, ".json");
  std::ifstream in(meta);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + meta.string());
  DecoderInfo d;
  try {
    const json j = json::parse(in);
    d.task = j.at("task").get<std::string>() == "classification" ? Task::Classification
                                                                  : Task::Reconstruction;
    d.classes = j.at("classes").get<std::vector<std::string>>();
    d.feature_scale = j.at("feature_scale").get<double>();
    d.k = j.at("k").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, meta.string() + ": " + e.what());
  }
  return d;
}

Task task_of(const Settings& s) {
  const auto t = s.section("train").at("task").get<std::string>();
  if (t == "reconstruction") return Task::Reconstruction;
  if (t == "classification") return Task::Classification;
  throw ConfigError("train.task must be 'reconstruction' or 'classification'");
}

}  // namespace

void cmd_synth(const Settings& s, const fs::path& out) {
  const auto& c = s.section("synth");
  SceneSpec spec = default_scene_spec();
  spec.grid = s.grid();
  spec.height = c.at("height").get<std::size_t>();
  spec.width = c.at("width").get<std::size_t>();
  if (!c.at("metamer").get<bool>()) spec.metamer.reset();
  const auto count = c.at("count").get<std::size_t>();
  make_dir(out);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < count; ++i) {
    const Scene scene = synth_scene(spec, s.seed + i);
    written.push_back(out / name("scene_%03zu.hxc", i));
    save_cube(scene.cube, written.back());
    written.push_back(out / name("scene_%03zu.hxm", i));
    save_mask(scene.mask, written.back());
  }
  write_sidecar(out, "synth", s, written);
  std::cout << "wrote " << count << " scenes to " << out.string() << '\n';
}

void cmd_design(const Settings& s, const fs::path& cubes_dir, const fs::path& out) {
  const auto& d = s.section("design");
  std::vector<HsiCube> cubes;
  for (const auto& f : require_files(cubes_dir, ".hxc")) cubes.push_back(load_cube(f));
  const auto px = collect_pixels(cubes);
  PcaOptions opt;
  opt.centered = d.at("centered").get<bool>();
  ProjectorBank bank = design_pca(px.spectra, cubes.front().grid(), d.at("k").get<std::size_t>(), opt);
  if (d.at("physical").get<bool>()) bank = remap_physical(bank);
  make_dir(out);
  save_bank(bank, out / "bank.hxp");
  json extra{{"gram_condition", gram_condition(bank)}};
  write_sidecar(out, "design", s, {out / "bank.hxp"}, extra);
  std::cout << "bank k=" << bank.k() << " gram condition " << gram_condition(bank) << '\n';
}

void cmd_fit(const Settings& s, const fs::path& bank_path, const fs::path& out) {
  const ProjectorBank targets = load_bank(bank_path);
  const BankFit fit = fit_bank(targets, s.fit());
  make_dir(out / "models");
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < fit.models.size(); ++i) {
    written.push_back(out / "models" / name("curve_%02zu.cmt", i));
    save_model(fit.models[i], written.back());
  }
  save_bank(fit.realized, out / "realized.hxp");
  save_fit_report(fit, out / "fit_report.json");
  written.push_back(out / "realized.hxp");
  written.push_back(out / "fit_report.json");
  write_sidecar(out, "fit", s, written, {{"mean_mse", fit.mean_mse()}});
  for (const auto& f : fit.failures)
    std::cerr << "warning: curve " << f.index << " replaced by a flat filter: " << f.message << '\n';
  std::cout << "mean curve MSE " << fit.mean_mse() << ", realized gram condition "
            << gram_condition(fit.realized) << '\n';
}

void cmd_encode(const Settings& s, const fs::path& bank_path, const fs::path& cubes_dir,
                const fs::path& out) {
  const ProjectorBank bank = load_bank(bank_path);
  const Sensor sensor(s, bank);
  const auto files = require_files(cubes_dir, ".hxc");
  make_dir(out);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < files.size(); ++i) {
    written.push_back(out / sibling(files[i].filename(), ".hxb"));
    save_barcode(sensor.capture(load_cube(files[i]), bank, i), written.back());
  }
  write_sidecar(out, "encode", s, written, {{"readout", sensor.describe()}});
  std::cout << "encoded " << files.size() << " cubes\n";
}

void cmd_decode(const Settings& s, const fs::path& bank_path, const fs::path& barcodes,
                const fs::path& decoder, const fs::path& out) {
  const ProjectorBank bank = load_bank(bank_path);
  const auto files = require_files(barcodes, ".hxb");
  std::optional<LinearDecoder> linear;
  std::optional<nn::Mlp> net;
  DecoderInfo info;
  if (decoder.empty()) {
    linear.emplace(bank);
  } else {
    net = nn::load_mlp(decoder);
    info = load_decoder_info(decoder);
    require(info.task == Task::Reconstruction, ErrorKind::InvalidArgument,
            decoder.string() + " is a classifier, not a reconstruction decoder");
  }
  make_dir(out);
  std::vector<fs::path> written;
  for (const auto& f : files) {
    const Barcode b = load_barcode(f);
    HsiCube cube = linear ? linear->decode(b)
                          : deflatten(nn::forward(*net, nn::barcode_features(b, info.feature_scale), false),
                                      bank.grid, b.height, b.width);
    written.push_back(out / sibling(f.filename(), ".hxc"));
    save_cube(cube, written.back());
  }
  write_sidecar(out, "decode", s, written, {{"decoder", decoder.empty() ? "linear" : "mlp"}});
  std::cout << "decoded " << files.size() << " barcodes\n";
}

void cmd_train_decoder(const Settings& s, const fs::path& bank_path, const fs::path& cubes_dir,
                       const fs::path& models_dir, const fs::path& out) {
  const auto& t = s.section("train");
  const Task task = task_of(s);
  const bool joint = t.at("joint").get<bool>();
  if (joint && models_dir.empty()) throw ConfigError("train.joint needs --models");
  const ProjectorBank bank = load_bank(bank_path);
  const auto files = require_files(cubes_dir, ".hxc");
  std::vector<HsiCube> cubes;
  std::vector<LabelMask> masks;
  for (const auto& f : files) {
    cubes.push_back(load_cube(f));
    if (task == Task::Classification) masks.push_back(load_mask(sibling(f, ".hxm")));
  }
  const SpectralGrid& grid = cubes.front().grid();
  const std::vector<std::string> classes =
      task == Task::Classification ? masks.front().classes : std::vector<std::string>{};

  std::vector<int> sizes{static_cast<int>(bank.k())};
  for (int h : t.at("hidden").get<std::vector<int>>()) sizes.push_back(h);
  sizes.push_back(task == Task::Classification ? static_cast<int>(classes.size())
                                               : static_cast<int>(grid.size()));
  nn::Mlp net = nn::Mlp::sequential(sizes, nn::Activation::Relu,
                                    task == Task::Classification ? nn::Activation::Softmax
                                                                 : nn::Activation::Identity,
                                    s.seed);
  nn::TrainConfig tc;
  tc.loss = task == Task::Classification ? nn::Loss::CrossEntropy : nn::Loss::Mse;
  tc.epochs = t.at("epochs").get<int>();
  tc.batch_size = t.at("batch_size").get<int>();
  tc.seed = s.seed;
  nn::AdamConfig ac;
  ac.lr = t.at("lr").get<double>();
  ac.step_size = t.at("step_size").get<int>();
  ac.gamma = t.at("gamma").get<double>();
  const double scale = feature_scale(grid);

  make_dir(out);
  std::vector<fs::path> written;
  std::vector<double> history;
  if (joint) {
    EndToEndConfig ec;
    ec.task = task;
    ec.train = tc;
    ec.decoder_adam = ac;
    ec.cmt_adam.lr = t.at("cmt_lr").get<double>();
    auto models = load_models(models_dir);
    require(models.size() == bank.k(), ErrorKind::InvalidArgument,
            "model count does not match bank size");
    auto r = end_to_end_train(cubes, masks, std::move(models), std::move(net), ec);
    net = std::move(r.decoder);
    history = r.report.loss_history;
    make_dir(out / "models");
    for (std::size_t i = 0; i < r.models.size(); ++i) {
      written.push_back(out / "models" / name("curve_%02zu.cmt", i));
      save_model(r.models[i], written.back());
    }
    written.push_back(out / "realized.hxp");
    save_bank(realize_bank(r.models, grid), written.back());
  } else {
    const Sensor sensor(s, bank);
    const auto px = collect_pixels(cubes, masks);
    nn::Dataset ds;
    ds.x.resize(static_cast<Eigen::Index>(bank.k()), px.spectra.cols());
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < cubes.size(); ++i) {
      const auto n = static_cast<Eigen::Index>(cubes[i].pixels());
      ds.x.middleCols(col, n) = nn::barcode_features(sensor.capture(cubes[i], bank, i), scale);
      col += n;
    }
    if (task == Task::Classification)
      ds.labels = px.labels;
    else
      ds.y = px.spectra;
    nn::AdamState adam(net.n_params(), ac);
    history = nn::train(net, ds, tc, adam).loss_history;
  }
  written.push_back(out / "decoder.mlp");
  nn::save_mlp(net, written.back());
  const json meta{{"task", task == Task::Classification ? "classification" : "reconstruction"},
                  {"classes", classes},
                  {"feature_scale", scale},
                  {"k", bank.k()}};
  written.push_back(out / "decoder.json");
  std::ofstream(written.back()) << meta.dump(2) << '\n';
  write_sidecar(out, "train-decoder", s, written, {{"loss_history", history}});
  std::cout << "final training loss " << history.back() << '\n';
}

void cmd_classify(const Settings& s, const fs::path& decoder, const fs::path& barcodes,
                  const fs::path& out) {
  const nn::Mlp net = nn::load_mlp(decoder);
  const DecoderInfo info = load_decoder_info(decoder);
  require(info.task == Task::Classification, ErrorKind::InvalidArgument,
          decoder.string() + " is not a classifier");
  const auto files = require_files(barcodes, ".hxb");
  make_dir(out);
  std::vector<fs::path> written;
  for (const auto& f : files) {
    const auto pc = nn::classify_pixels(net, load_barcode(f), info.classes, info.feature_scale);
    written.push_back(out / sibling(f.filename(), ".hxm"));
    save_mask(pc.mask, written.back());
  }
  write_sidecar(out, "classify", s, written);
  std::cout << "classified " << files.size() << " barcodes\n";
}

void cmd_eval(const Settings& s, const fs::path& pred, const fs::path& truth, const fs::path& out) {
  auto cubes = list_files(pred, ".hxc");
  std::string text;
  json report;
  if (!cubes.empty()) {
    std::vector<HsiCube> p, t;
    for (const auto& f : cubes) {
      p.push_back(load_cube(f));
      t.push_back(load_cube(truth / f.filename()));
    }
    const auto r = dataset_rmse(p, t);
    text = format_rmse_report(r);
    report = json::parse(rmse_report_json(r));
  } else {
    const auto masks = require_files(pred, ".hxm");
    // Every image pooled into one confusion matrix.
    std::optional<LabelMask> pp, tt;
    for (const auto& f : masks) {
      const LabelMask a = load_mask(f), b = load_mask(truth / f.filename());
      if (!pp) {
        pp.emplace(1, 0, a.classes);
        tt.emplace(1, 0, b.classes);
      }
      pp->labels.insert(pp->labels.end(), a.labels.begin(), a.labels.end());
      tt->labels.insert(tt->labels.end(), b.labels.begin(), b.labels.end());
      require(a.labels.size() == b.labels.size(), ErrorKind::InvalidArgument,
              f.filename().string() + ": prediction and truth sizes differ");
    }
    pp->width = pp->labels.size();
    tt->width = tt->labels.size();
    const auto r = segmentation_stats(*pp, *tt);
    text = format_seg_report(r);
    report = json::parse(seg_report_json(r));
  }
  std::cout << text;
  if (!out.empty()) {
    make_dir(out);
    std::ofstream(out / "eval.json") << report.dump(2) << '\n';
    write_sidecar(out, "eval", s, {out / "eval.json"});
  }
}

void cmd_bench(const Settings& s, const fs::path& out) {
  const auto& b = s.section("bench");
  const auto h = b.at("height").get<std::size_t>(), w = b.at("width").get<std::size_t>();
  const auto k = b.at("k").get<std::size_t>();
  const int reps = b.at("repetitions").get<int>();
  if (h == 0 || w == 0 || k == 0 || reps <= 0) throw ConfigError("bench dimensions must be positive");
  const SpectralGrid grid = s.grid();
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  HsiCube cube(grid, h, w);
  for (double& v : cube.data()) v = u(rng);
  Eigen::MatrixXd curves(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(grid.size()));
  for (double& v : curves.reshaped()) v = u(rng);
  const ProjectorBank bank(grid, curves);
  const LinearDecoder dec(bank);

  auto median_seconds = [&](auto&& fn) {
    fn();
    std::vector<double> t;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::ranges::sort(t);
    return t[t.size() / 2];
  };
  Barcode code = encode(cube, bank);
  const double te = median_seconds([&] { code = encode(cube, bank); });
  const double td = median_seconds([&] { (void)dec.decode(code); });
  const double px = static_cast<double>(h * w);
  const json report{{"height", h},          {"width", w},
                    {"bands", grid.size()}, {"k", k},
                    {"threads", kernels::threads()},
                    {"encode_fps", 1.0 / te},  {"encode_pixels_per_s", px / te},
                    {"decode_fps", 1.0 / td},  {"decode_pixels_per_s", px / td}};
  std::printf("%zux%zux%zu k=%zu, %d thread(s), median of %d\n", h, w, grid.size(), k,
              kernels::threads(), reps);
  std::printf("  encode  %9.2f FPS  %.3g pixels/s\n", 1.0 / te, px / te);
  std::printf("  decode  %9.2f FPS  %.3g pixels/s\n", 1.0 / td, px / td);
  if (!out.empty()) {
    make_dir(out);
    std::ofstream(out / "bench.json") << report.dump(2) << '\n';
    write_sidecar(out, "bench", s, {out / "bench.json"});
  }
}

}  // namespace cli
