#include "config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace cli {

using nlohmann::json;
using spectral_codec::ErrorKind;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return 3;
    case ErrorKind::Format: return 4;
    case ErrorKind::Truncated: return 5;
    case ErrorKind::InvalidGrid: return 6;
    case ErrorKind::Io: return 7;
    case ErrorKind::Singular: return 8;
    case ErrorKind::IllConditioned: return 9;
    case ErrorKind::Divergence: return 10;
    case ErrorKind::Degenerate: return 11;
    case ErrorKind::Infeasible: return 12;
    case ErrorKind::FitFailure: return 13;
  }
  return kUnexpectedExit;
}

std::string exit_code_table() {
  return "Exit codes:\n"
         "  0  success\n"
         "  1  unexpected internal error\n"
         "  2  command line or config error\n"
         "  3  invalid argument        4  malformed file\n"
         "  5  truncated file          6  invalid spectral grid\n"
         "  7  file I/O failure        8  singular linear system\n"
         "  9  ill-conditioned bank   10  optimizer diverged\n"
         " 11  degenerate input       12  infeasible request\n"
         " 13  every fit restart failed\n";
}

json default_config() {
  return json::parse(R"({
    "seed": 0,
    "threads": 0,
    "grid": {"start_nm": 400.0, "stop_nm": 700.0, "step_nm": 10.0},
    "synth": {"count": 8, "height": 64, "width": 64, "metamer": true},
    "design": {"k": 9, "centered": false, "physical": true},
    "fit": {"n_modes": 8, "lr": 0.01, "epochs": 150, "steps_per_epoch": 20, "step_size": 50,
            "gamma": 0.1, "restarts": 5, "tol": 1e-10, "coupling_lo": 0.05, "coupling_hi": 0.5},
    "readout": {"enabled": true, "bit_depth": 8, "noise_sigma": 0.0, "headroom": 1.05},
    "train": {"task": "reconstruction", "hidden": [128, 128], "epochs": 5, "batch_size": 256,
              "lr": 0.001, "step_size": 3, "gamma": 0.1, "joint": false, "cmt_lr": 0.001},
    "bench": {"height": 512, "width": 512, "k": 9, "repetitions": 10}
  })");
}

namespace {

void check_keys(const json& user, const json& defaults, const std::string& where) {
  if (!user.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key))
      throw ConfigError("unknown config key '" + where + key + "'");
    if (defaults[key].is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + where + key + "' must be an object");
      check_keys(value, defaults[key], where + key + ".");
    } else if (value.is_null() || value.is_object() ||
               (defaults[key].is_number() != value.is_number()) ||
               (defaults[key].is_boolean() != value.is_boolean()) ||
               (defaults[key].is_string() != value.is_string()) ||
               (defaults[key].is_array() != value.is_array())) {
      throw ConfigError("config key '" + where + key + "' has the wrong type");
    }
  }
}

}  // namespace

json resolve_config(const std::filesystem::path& user_file, const json& overrides) {
  json cfg = default_config();
  if (!user_file.empty()) {
    std::ifstream in(user_file);
    if (!in) throw ConfigError("cannot open config file " + user_file.string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + user_file.string() + ": " + e.what());
    }
    if (!user.is_object()) throw ConfigError("config file must hold a JSON object");
    check_keys(user, cfg, "");
    cfg.merge_patch(user);
  }
  check_keys(overrides, cfg, "");
  cfg.merge_patch(overrides);
  return cfg;
}

std::string config_hash(const json& resolved) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Settings make_settings(json resolved) {
  Settings s;
  s.resolved = std::move(resolved);
  try {
    const auto seed = s.resolved.at("seed").get<std::int64_t>();
    if (seed < 0) throw ConfigError("seed must be non-negative");
    s.seed = static_cast<std::uint64_t>(seed);
    // Touch every accessor once so type errors surface before any work.
    (void)s.fit();
    (void)s.readout();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return s;
}

spectral_codec::SpectralGrid Settings::grid() const {
  const auto& g = section("grid");
  return spectral_codec::SpectralGrid::uniform(g.at("start_nm").get<double>(),
                                               g.at("stop_nm").get<double>(),
                                               g.at("step_nm").get<double>());
}

spectral_codec::FitConfig Settings::fit() const {
  const auto& f = section("fit");
  spectral_codec::FitConfig c;
  c.n_modes = f.at("n_modes").get<int>();
  c.lr = f.at("lr").get<double>();
  c.epochs = f.at("epochs").get<int>();
  c.steps_per_epoch = f.at("steps_per_epoch").get<int>();
  c.step_size = f.at("step_size").get<int>();
  c.gamma = f.at("gamma").get<double>();
  c.restarts = f.at("restarts").get<int>();
  c.tol = f.at("tol").get<double>();
  c.coupling_lo = f.at("coupling_lo").get<double>();
  c.coupling_hi = f.at("coupling_hi").get<double>();
  c.seed = seed;
  return c;
}

spectral_codec::ReadoutConfig Settings::readout() const {
  const auto& r = section("readout");
  spectral_codec::ReadoutConfig c;
  c.bit_depth = r.at("bit_depth").get<int>();
  c.noise_sigma = r.at("noise_sigma").get<double>();
  c.gain = spectral_codec::GainMode::Fixed;
  c.seed = seed;
  return c;
}

double Settings::headroom() const { return section("readout").at("headroom").get<double>(); }
bool Settings::readout_enabled() const { return section("readout").at("enabled").get<bool>(); }

void write_sidecar(const std::filesystem::path& dir, const std::string& command, const Settings& s,
                   const std::vector<std::filesystem::path>& outputs, const json& extra) {
  json j;
  j["command"] = command;
  j["config"] = s.resolved;
  j["config_hash"] = config_hash(s.resolved);
  j["outputs"] = json::array();
  for (const auto& p : outputs) j["outputs"].push_back(p.filename().string());
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(dir / "run.json");
  if (!out) throw spectral_codec::Error(ErrorKind::Io, "cannot write " + (dir / "run.json").string());
  out << j.dump(2) << '\n';
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& ext) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw spectral_codec::Error(ErrorKind::Io, dir.string() + ": not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::ranges::sort(out);
  return out;
}

}  // namespace cli
