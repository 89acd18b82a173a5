#pragma once

// Runs the command-line binary through the shell and collects its exit code
// and output. Shared by the CLI tests and the acceptance runner.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>
#include <sys/wait.h>

#include <json.hpp>

namespace clitest {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

// Drops every "wall_time..." key, recursively.
inline nlohmann::json without_wall_time(nlohmann::json j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end();) {
      if (it.key().rfind("wall_time", 0) == 0) {
        it = j.erase(it);
      } else {
        *it = without_wall_time(*it);
        ++it;
      }
    }
  } else if (j.is_array()) {
    for (auto& e : j) e = without_wall_time(e);
  }
  return j;
}

// Drops the named column from a CSV body.
inline std::string drop_column(const std::string& csv, const std::string& name) {
  std::istringstream in(csv);
  std::string line, out;
  std::getline(in, line);
  std::vector<std::string> head;
  std::stringstream hs(line);
  for (std::string f; std::getline(hs, f, ',');) head.push_back(f);
  const auto col = std::find(head.begin(), head.end(), name) - head.begin();
  auto strip = [&](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ls(l);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (static_cast<std::size_t>(col) < f.size()) f.erase(f.begin() + col);
    std::string joined;
    for (std::size_t i = 0; i < f.size(); ++i) joined += (i ? "," : "") + f[i];
    return joined + "\n";
  };
  out += strip(line);
  while (std::getline(in, line)) out += strip(line);
  return out;
}

class Runner {
 public:
  Runner(std::string binary, std::filesystem::path work)
      : binary_(std::move(binary)), work_(std::move(work)) {
    std::filesystem::create_directories(work_);
  }

  const std::filesystem::path& work() const { return work_; }
  std::string path(const std::string& name) const { return (work_ / name).string(); }

  RunResult run(const std::string& args) const {
    const auto out = work_ / ".stdout", err = work_ / ".stderr";
    const std::string cmd = quote(binary_) + " " + args + " >" + quote(out.string()) + " 2>" +
                            quote(err.string());
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
  }

 private:
  std::string binary_;
  std::filesystem::path work_;
};

}  // namespace clitest
