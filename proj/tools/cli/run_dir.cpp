#include "run_dir.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>

#include "adaptlm/binary_io.hpp"
#include "adaptlm/error.hpp"

namespace adaptlm::cli {

RunDir::RunDir(const std::filesystem::path& path, const Config& config, const std::string& subcommand)
    : path_(path), lock_(path / ".lock") {
  std::error_code ec;
  std::filesystem::create_directories(path_, ec);
  if (ec) throw Error(ErrorCode::io, fmt::format("cannot create run directory {}: {}", path_.string(), ec.message()));
  const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::io, fmt::format("run directory {} is locked by another process ({} exists)", path_.string(),
                                           lock_.string()));
  }
  const auto pid = fmt::format("{}\n", ::getpid());
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);

  write_text_file(path_ / "config.toml", config.to_text());
  write_text_file(path_ / "env.txt", fmt::format("version = {}\nsubcommand = {}\nseed = {}\nworkers = {}\n", ADAPTLM_VERSION,
                                                  subcommand, config.str("seed"), config.str("workers")));
}

RunDir::~RunDir() {
  std::error_code ec;
  std::filesystem::remove(lock_, ec);
}

}  // namespace adaptlm::cli
