#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rpdetect::cli {

struct HashedFile {
  std::string role;
  std::string path;
  std::string sha1;
};

/// Provenance record written next to every artifact a command produces.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  std::optional<std::string> config;
  std::vector<HashedFile> inputs;
  std::vector<HashedFile> outputs;
  std::string started_at;
  std::string finished_at;

  void add_input(const std::string& role, const std::string& path);
  void add_output(const std::string& role, const std::string& path);
  std::string to_json() const;
  /// Stamps finished_at and writes the JSON to `path`.
  void write(const std::string& path);
};

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace rpdetect::cli
