#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "tbgc/error.hpp"
#include "tbgc/param_store.hpp"

namespace tbgc {

// Textual checkpoint: version header, then per parameter one metadata line
// (name, role, shape) and one line of %.17g values. %.17g round-trips doubles
// exactly and the formatting is locale-independent, so identical parameters
// always serialize to identical bytes.

inline std::string checkpoint_to_string(const ParamStore& store) {
  std::ostringstream os;
  os << "tbgc-checkpoint v1\n";
  os << "params " << store.size() << "\n";
  char buf[40];
  for (const std::string& name : store.names()) {
    const Tensor& v = store.value(name);
    os << "param " << name << " " << store.role(name).str() << " " << v.rank();
    for (std::size_t e : v.shape()) os << " " << e;
    os << "\n";
    for (std::size_t i = 0; i < v.numel(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v[i]);
      os << (i ? " " : "") << buf;
    }
    os << "\n";
  }
  return os.str();
}

inline ParamStore checkpoint_from_string(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "tbgc-checkpoint v1") {
    throw IoError("bad checkpoint header: '" + line + "'");
  }
  std::size_t count = 0;
  {
    std::string tag;
    if (!(is >> tag >> count) || tag != "params") throw IoError("bad checkpoint params line");
  }
  ParamStore store;
  for (std::size_t p = 0; p < count; ++p) {
    std::string tag, name, role_s;
    std::size_t rank = 0;
    if (!(is >> tag >> name >> role_s >> rank) || tag != "param") {
      throw IoError("bad checkpoint param line " + std::to_string(p));
    }
    std::vector<std::size_t> shape(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      if (!(is >> shape[d])) throw IoError("bad shape for '" + name + "'");
    }
    Tensor v(shape);
    for (std::size_t i = 0; i < v.numel(); ++i) {
      if (!(is >> v[i])) throw IoError("truncated values for '" + name + "'");
    }
    store.add(name, Role::parse(role_s), std::move(v));
  }
  return store;
}

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << checkpoint_to_string(store);
  if (!out) throw IoError("short write to '" + path + "'");
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

} // namespace tbgc
