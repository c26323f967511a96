#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace rpdetect::cli {

/// Exit codes: 0 success, 1 internal, 2 usage, then one per ErrorCategory.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kShape = 3,
  kConfig = 4,
  kIo = 5,
  kFormat = 6,
  kValidation = 7,
  kState = 8,
};

/// Runs one command. Normal output goes to `out`; failures print a single
/// `error[<category>]: <message>` line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// git-style object id: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::vector<std::uint8_t>& content);
std::string git_blob_sha1_file(const std::string& path);

}  // namespace rpdetect::cli
