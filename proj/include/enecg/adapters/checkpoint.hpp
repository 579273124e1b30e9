#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "enecg/error.hpp"
#include "enecg/numerics/tensor.hpp"
#include "enecg/signal/record_io.hpp"

// Checkpoint layout (text):
//   ENECG_CKPT <version>
//   meta <key> <value>                      (any number)
//   tensor <name> <rank> <d0> ... <dn-1>    followed by one line of values
namespace enecg::adapters {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  void put(const std::string& name, const Tensor& t) { tensors.insert_or_assign(name, t); }
  void put_meta(const std::string& key, const std::string& value) {
    if (key.find_first_of(" \t\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw UsageError("checkpoint meta key/value contains whitespace: '" + key + "'");
    }
    meta.insert_or_assign(key, value);
  }

  const Tensor& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint has no tensor '" + name + "'");
    return it->second;
  }
  const std::string& meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw ParseError("checkpoint has no meta key '" + key + "'");
    return it->second;
  }

  void write(std::ostream& os) const {
    os << "ENECG_CKPT " << kCheckpointVersion << '\n';
    for (const auto& [k, v] : meta) os << "meta " << k << ' ' << v << '\n';
    for (const auto& [name, t] : tensors) {
      os << "tensor " << name << ' ' << t.rank();
      for (std::size_t d : t.shape()) os << ' ' << d;
      os << '\n';
      std::string line;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (i) line.push_back(',');
        line += signal::format_double(t[i]);
      }
      os << line << '\n';
    }
  }

  static Checkpoint read(std::istream& is) {
    using signal::detail::parse_fail;
    using signal::detail::parse_number;
    signal::detail::LineReader reader(is);
    std::string line;
    if (!reader.next(line)) throw ParseError("line 1: empty checkpoint");
    {
      const auto head = signal::detail::split_ws(line);
      int version = 0;
      if (head.size() != 2 || head[0] != "ENECG_CKPT" || !parse_number(head[1], version)) {
        parse_fail(1, "malformed checkpoint header");
      }
      if (version != kCheckpointVersion) {
        parse_fail(1, "unsupported checkpoint version " + std::to_string(version));
      }
    }
    Checkpoint ck;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto f = signal::detail::split_ws(line);
      if (f[0] == "meta") {
        if (f.size() < 2) parse_fail(reader.number(), "malformed meta line");
        const auto at = static_cast<std::size_t>(f[1].data() - line.data()) + f[1].size();
        ck.meta[std::string(f[1])] = at < line.size() ? line.substr(at + 1) : std::string{};
      } else if (f[0] == "tensor") {
        std::size_t rank = 0;
        if (f.size() < 3 || !parse_number(f[2], rank) || rank == 0 || f.size() != 3 + rank) {
          parse_fail(reader.number(), "malformed tensor line");
        }
        Shape shape(rank);
        for (std::size_t i = 0; i < rank; ++i) {
          if (!parse_number(f[3 + i], shape[i]) || shape[i] == 0)
            parse_fail(reader.number(), "bad tensor extent");
        }
        const std::string name(f[1]);
        if (!reader.next(line)) parse_fail(reader.number(), "missing values for '" + name + "'");
        const auto vals = signal::detail::split(line, ',');
        if (vals.size() != numerics::shape_size(shape)) {
          parse_fail(reader.number(), "tensor '" + name + "' expects " +
                                          std::to_string(numerics::shape_size(shape)) +
                                          " values, got " + std::to_string(vals.size()));
        }
        Tensor t(shape);
        for (std::size_t i = 0; i < vals.size(); ++i) {
          if (!parse_number(vals[i], t[i])) parse_fail(reader.number(), "unreadable value");
        }
        ck.tensors.insert_or_assign(name, std::move(t));
      } else {
        parse_fail(reader.number(), "unknown checkpoint entry '" + std::string(f[0]) + "'");
      }
    }
    return ck;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    write(os);
    if (!os) throw IoError("write failed for '" + path.string() + "'");
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
    try {
      return read(is);
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
};

}  // namespace enecg::adapters
