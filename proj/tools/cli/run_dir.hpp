#pragma once

#include <filesystem>
#include <string>

#include "config.hpp"

namespace adaptlm::cli {

/// Output directory of one subcommand run. Holds a lock file for its lifetime
/// and records the resolved settings and environment on creation.
class RunDir {
 public:
  RunDir(const std::filesystem::path& path, const Config& config, const std::string& subcommand);
  ~RunDir();
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
  std::filesystem::path lock_;
};

}  // namespace adaptlm::cli
