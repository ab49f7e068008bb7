#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fgs/half.hpp"
#include "fgs/model.hpp"

// Checkpoint blob, all integers little-endian:
//   "FGS1" | version u32 | entry count u32
//   per entry: name length u32 | UTF-8 name | dtype u8 (0 = f64, 1 = f16)
//              | ndim u32 | ndim x u64 dims | payload
// Parameter entries are "fcN.weight", "fcN.bias", "fcN.lora_a", "fcN.lora_b".
// An adapter blob also carries "lora.alpha", a one-element f64 entry.
namespace fgs {

enum class Dtype : std::uint8_t { f64 = 0, f16 = 1 };

inline constexpr std::uint32_t kBlobVersion = 1;

struct BlobEntry {
  std::string name;
  Tensor value;
};

namespace detail {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint blob truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_blob(const std::vector<BlobEntry>& entries, Dtype dtype) {
  std::vector<std::uint8_t> out{'F', 'G', 'S', '1'};
  detail::put_le<std::uint32_t>(out, kBlobVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    // Metadata entries stay f64 so alpha survives a half-precision blob.
    const Dtype dt = e.name.starts_with("lora.") ? Dtype::f64 : dtype;
    detail::put_u8(out, static_cast<std::uint8_t>(dt));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : e.value.data()) {
      if (dt == Dtype::f64) {
        detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      } else {
        detail::put_le<std::uint16_t>(out, to_half_bits(v));
      }
    }
  }
  return out;
}

inline std::vector<BlobEntry> decode_blob(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != "FGS1") throw IoError("bad checkpoint magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kBlobVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  std::vector<BlobEntry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    BlobEntry e;
    e.name = r.str(r.le<std::uint32_t>());
    const auto dt = r.le<std::uint8_t>();
    if (dt > 1) throw IoError("unknown dtype tag " + std::to_string(dt) + " in entry " + e.name);
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    std::vector<double> data(numel(shape));
    for (auto& v : data) {
      v = dt == 0 ? std::bit_cast<double>(r.le<std::uint64_t>()) : from_half_bits(r.le<std::uint16_t>());
    }
    e.value = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint entries");
  return entries;
}

inline std::vector<BlobEntry> to_entries(const ModelParams& p) {
  std::vector<BlobEntry> out;
  for (const auto& l : p.layers) {
    out.push_back({l.name() + ".weight", l.weight});
    out.push_back({l.name() + ".bias", l.bias});
  }
  return out;
}

inline std::vector<BlobEntry> to_entries(const LoraAdapter& a) {
  std::vector<BlobEntry> out;
  out.push_back({"lora.alpha", Tensor::scalar(a.alpha)});
  for (const auto& [idx, f] : a.targets) {
    out.push_back({layer_name(idx) + ".lora_a", f.a});
    out.push_back({layer_name(idx) + ".lora_b", f.b});
  }
  return out;
}

namespace detail {

inline std::size_t parse_layer_index(const std::string& name, std::string& field) {
  const auto dot = name.find('.');
  if (!name.starts_with("fc") || dot == std::string::npos || dot == 2) throw IoError("unexpected entry name " + name);
  field = name.substr(dot + 1);
  return static_cast<std::size_t>(std::stoull(name.substr(2, dot - 2)));
}

}  // namespace detail

/// Rebuilds ModelParams; activations follow the MLP convention (final layer linear).
inline ModelParams params_from_entries(const std::vector<BlobEntry>& entries) {
  std::map<std::size_t, Layer> layers;
  for (const auto& e : entries) {
    std::string field;
    const std::size_t idx = detail::parse_layer_index(e.name, field);
    Layer& l = layers[idx];
    l.index = idx;
    if (field == "weight") {
      l.weight = e.value;
    } else if (field == "bias") {
      l.bias = e.value;
    } else {
      throw IoError("unexpected entry name " + e.name);
    }
  }
  ModelParams p;
  for (auto& [idx, l] : layers) {
    if (l.weight.size() == 0 || l.bias.size() == 0) throw IoError("incomplete layer " + layer_name(idx));
    p.layers.push_back(std::move(l));
  }
  for (auto& l : p.layers) l.activation = Activation::tanh;
  if (!p.layers.empty()) p.layers.back().activation = Activation::none;
  return p;
}

inline LoraAdapter adapter_from_entries(const std::vector<BlobEntry>& entries) {
  LoraAdapter a;
  bool have_alpha = false;
  for (const auto& e : entries) {
    if (e.name == "lora.alpha") {
      a.alpha = e.value.item();
      have_alpha = true;
      continue;
    }
    std::string field;
    const std::size_t idx = detail::parse_layer_index(e.name, field);
    auto& f = a.targets[idx];
    if (field == "lora_a") {
      f.a = e.value;
    } else if (field == "lora_b") {
      f.b = e.value;
    } else {
      throw IoError("unexpected entry name " + e.name);
    }
  }
  if (!have_alpha) throw IoError("adapter blob lacks lora.alpha");
  for (const auto& [idx, f] : a.targets) {
    if (f.a.size() == 0 || f.b.size() == 0) throw IoError("incomplete adapter target " + layer_name(idx));
    a.rank = f.a.rows();
  }
  return a;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace fgs
