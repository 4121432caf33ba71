#include "binary_io.hpp"

#include <fstream>
#include <iterator>

namespace hcp {

const char* to_string(IoErrorCode code) {
  switch (code) {
    case IoErrorCode::kOpenFailed: return "open_failed";
    case IoErrorCode::kBadMagic: return "bad_magic";
    case IoErrorCode::kVersionMismatch: return "version_mismatch";
    case IoErrorCode::kTruncated: return "truncated";
    case IoErrorCode::kTrailingBytes: return "trailing_bytes";
    case IoErrorCode::kMalformed: return "malformed";
    case IoErrorCode::kSchemaMismatch: return "schema_mismatch";
    case IoErrorCode::kIndexOutOfRange: return "index_out_of_range";
    case IoErrorCode::kInvalidValue: return "invalid_value";
  }
  return "unknown";
}

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(IoErrorCode::kOpenFailed, "read failed for " + path);
  return data;
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot create " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + path);
}

}  // namespace detail
}  // namespace hcp
