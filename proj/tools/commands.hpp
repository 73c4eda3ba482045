#pragma once

#include <filesystem>
#include <string>

#include "config.hpp"

namespace cli {

namespace fs = std::filesystem;

void cmd_synth(const Settings& s, const fs::path& out);
void cmd_design(const Settings& s, const fs::path& cubes, const fs::path& out);
void cmd_fit(const Settings& s, const fs::path& bank, const fs::path& out);
void cmd_encode(const Settings& s, const fs::path& bank, const fs::path& cubes, const fs::path& out);
// `decoder` empty: least-squares decoding with the bank.
void cmd_decode(const Settings& s, const fs::path& bank, const fs::path& barcodes,
                const fs::path& decoder, const fs::path& out);
// `models` non-empty with train.joint: the CMT bank is trained along with the decoder.
void cmd_train_decoder(const Settings& s, const fs::path& bank, const fs::path& cubes,
                       const fs::path& models, const fs::path& out);
void cmd_classify(const Settings& s, const fs::path& decoder, const fs::path& barcodes,
                  const fs::path& out);
// Cubes (.hxc) give an RMSE report, masks (.hxm) a segmentation report.
// `out` may be empty (stdout only).
void cmd_eval(const Settings& s, const fs::path& pred, const fs::path& truth, const fs::path& out);
void cmd_bench(const Settings& s, const fs::path& out);

}  // namespace cli
