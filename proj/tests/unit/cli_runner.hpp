#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "helpers.hpp"

namespace test_util {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the mmkd binary with `args` inside `dir`, capturing both streams.
inline CliResult run_cli(const std::filesystem::path& dir, const std::string& args) {
  const auto out = dir / "cli.stdout";
  const auto err = dir / "cli.stderr";
  const std::string cmd = "cd '" + dir.string() + "' && '" MMKD_CLI_PATH "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace test_util
