#include "binary_io.hpp"

#include <iterator>

namespace spectral_codec {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::InvalidGrid: return "invalid-grid";
    case ErrorKind::Io: return "io";
    case ErrorKind::Singular: return "singular";
    case ErrorKind::IllConditioned: return "ill-conditioned";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::FitFailure: return "fit-failure";
  }
  return "unknown";
}

namespace detail {

void Writer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Reader Reader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  return Reader(std::move(data), path.string());
}

void Reader::need(std::size_t n) const {
  if (remaining() < n)
    fail(ErrorKind::Truncated, name_ + ": truncated payload (need " +
                                   std::to_string(n) + " bytes, have " +
                                   std::to_string(remaining()) + ")");
}

void Reader::expect_magic(std::string_view m) {
  if (remaining() < m.size() ||
      std::string_view(data_.data() + pos_, m.size()) != m)
    fail(ErrorKind::Format, name_ + ": bad magic, expected " + std::string(m));
  pos_ += m.size();
}

std::string Reader::str() {
  const auto n = u32();
  need(n);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

}  // namespace detail
}  // namespace spectral_codec
