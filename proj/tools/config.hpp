#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral_codec/error.hpp"
#include "spectral_codec/fitting.hpp"
#include "spectral_codec/readout.hpp"
#include "spectral_codec/spectra.hpp"

namespace cli {

// Bad config file or flag combination; exits with kConfigExit.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigExit = 2;
inline constexpr int kUnexpectedExit = 1;
int exit_code(spectral_codec::ErrorKind kind);
std::string exit_code_table();

// Every tunable with its default. User files are merge-patched on top and may
// only use keys that exist here.
nlohmann::json default_config();
nlohmann::json resolve_config(const std::filesystem::path& user_file, const nlohmann::json& overrides);

// FNV-1a over the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& resolved);

struct Settings {
  nlohmann::json resolved;
  std::uint64_t seed = 0;

  spectral_codec::SpectralGrid grid() const;
  spectral_codec::FitConfig fit() const;
  spectral_codec::ReadoutConfig readout() const;
  double headroom() const;
  bool readout_enabled() const;
  const nlohmann::json& section(const char* name) const { return resolved.at(name); }
};

Settings make_settings(nlohmann::json resolved);

// Writes <dir>/run.json: command, resolved config, its hash and the list of
// files the command produced.
void write_sidecar(const std::filesystem::path& dir, const std::string& command,
                   const Settings& s, const std::vector<std::filesystem::path>& outputs,
                   const nlohmann::json& extra = nlohmann::json::object());

// Regular files in `dir` with extension `ext`, sorted by name.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& ext);

}  // namespace cli
