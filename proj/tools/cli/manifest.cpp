#include "manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <memory>

#include "cli.hpp"
#include "json.hpp"
#include "rpdetect/error.hpp"

namespace rpdetect::cli {

std::string git_blob_sha1(const std::vector<std::uint8_t>& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw StateError("sha1: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

std::string git_blob_sha1_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return git_blob_sha1(bytes);
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::string& role, const std::string& path) {
  inputs.push_back({role, path, git_blob_sha1_file(path)});
}

void RunManifest::add_output(const std::string& role, const std::string& path) {
  outputs.push_back({role, path, git_blob_sha1_file(path)});
}

std::string RunManifest::to_json() const {
  using nlohmann::ordered_json;
  auto files = [](const std::vector<HashedFile>& list) {
    ordered_json a = ordered_json::array();
    for (const HashedFile& f : list) a.push_back({{"role", f.role}, {"path", f.path}, {"sha1", f.sha1}});
    return a;
  };
  ordered_json j;
  j["command"] = command;
  j["args"] = args;
  j["seed"] = seed;
  j["config"] = config ? ordered_json(*config) : ordered_json(nullptr);
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& path) {
  finished_at = utc_timestamp();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json();
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace rpdetect::cli
