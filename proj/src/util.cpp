#include "fine_imitate/util.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <stdexcept>

namespace fi {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return hex64(fnv1a64(bytes));
}

namespace {
bool quiet() {
  const char* v = std::getenv("FINE_IMITATE_QUIET");
  return v && *v && std::string(v) != "0";
}
}  // namespace

void log_warn(const std::string& msg) {
  if (!quiet()) std::clog << "[warn] " << msg << '\n';
}

void log_info(const std::string& msg) {
  if (!quiet()) std::clog << "[info] " << msg << '\n';
}

}  // namespace fi
