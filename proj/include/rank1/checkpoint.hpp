#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "rank1/network.hpp"

namespace rank1 {

/// Checkpoint container, version 1.
///
///   "RANK1CKPT 1\n"
///   record*   u32 name length | name | u64 payload length | payload
///
/// Integers and doubles are little-endian. Records, in order: "spec" (text
/// form of the NetworkSpec), "mode", "seed" (decimal text), one
/// "param:<name>" per state tensor (u32 rank, u64 extents, f64 values) and a
/// final empty "end" record that marks a complete file.
inline constexpr int kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

  std::string bytes;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::size_t pos, std::size_t end) : bytes_(bytes), pos_(pos), end_(end) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw ParseError("checkpoint: truncated record");
  }

  const std::string& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

inline void put_record(ByteWriter& w, const std::string& name, const std::string& payload) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name);
  w.u64(payload.size());
  w.raw(payload);
}

inline std::string encode_tensor(const Tensor& t) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u64(e);
  for (double v : t.data()) w.f64(v);
  return w.bytes;
}

inline Tensor decode_tensor(const std::string& payload, const std::string& name) {
  ByteReader r(payload, 0, payload.size());
  const std::size_t rank = r.uint(4);
  if (rank == 0 || rank > 8) throw ParseError("checkpoint: bad rank in record " + name);
  Shape shape(rank);
  for (auto& e : shape) e = r.uint(8);
  Tensor t(shape);
  for (double& v : t.data()) v = r.f64();
  if (!r.done()) throw ParseError("checkpoint: trailing bytes in record " + name);
  return t;
}

}  // namespace detail

inline std::string encode_checkpoint(Network& net) {
  if (net.size() == 0) throw ValueError("checkpoint: refusing to save an empty network");
  detail::ByteWriter w;
  w.raw("RANK1CKPT " + std::to_string(kCheckpointVersion) + "\n");
  detail::put_record(w, "spec", format_network_spec(net.spec()));
  detail::put_record(w, "mode", std::string(to_string(net.mode())));
  detail::put_record(w, "seed", std::to_string(net.seed()));
  for (const auto& p : net.state()) detail::put_record(w, "param:" + p.name, detail::encode_tensor(*p.value));
  detail::put_record(w, "end", "");
  return w.bytes;
}

inline Network decode_checkpoint(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos || bytes.compare(0, 10, "RANK1CKPT ") != 0) {
    throw ParseError("checkpoint: missing header");
  }
  int version = 0;
  try {
    version = std::stoi(bytes.substr(10, newline - 10));
  } catch (const std::exception&) {
    throw ParseError("checkpoint: unreadable version");
  }
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                     std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, std::string> records;
  detail::ByteReader r(bytes, newline + 1, bytes.size());
  bool ended = false;
  while (!r.done()) {
    const std::string name = r.raw(r.uint(4));
    const std::string payload = r.raw(r.uint(8));
    if (name == "end") {
      ended = true;
      break;
    }
    records[name] = payload;
  }
  if (!ended) throw ParseError("checkpoint: truncated (no end record)");
  for (const char* key : {"spec", "mode", "seed"}) {
    if (!records.count(key)) throw ParseError(std::string("checkpoint: missing record ") + key);
  }
  const auto mode = parse_conv_mode(records["mode"]);
  if (!mode) throw ParseError("checkpoint: unknown mode " + records["mode"]);
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(records["seed"]);
  } catch (const std::exception&) {
    throw ParseError("checkpoint: bad seed record");
  }
  Network net(parse_network_spec(records["spec"]), *mode, seed);
  for (auto& p : net.state()) {
    const auto it = records.find("param:" + p.name);
    if (it == records.end()) throw ParseError("checkpoint: missing parameter " + p.name);
    Tensor t = detail::decode_tensor(it->second, p.name);
    if (t.shape() != p.value->shape()) {
      throw ParseError("checkpoint: parameter " + p.name + " has shape " + to_string(t.shape()) + ", expected " +
                       to_string(p.value->shape()));
    }
    *p.value = std::move(t);
  }
  return net;
}

inline void save_checkpoint(Network& net, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace rank1
