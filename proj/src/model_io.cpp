// SPDX-License-Identifier: Apache-2.0
#include "crop/model_io.hpp"

#include "crop/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace crop {

namespace {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw UsageError("model file truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

bool operator==(const ModelFile& a, const ModelFile& b) {
  return a.model == b.model && a.metric == b.metric && a.mask == b.mask && a.metadata == b.metadata;
}

std::vector<std::uint8_t> encode_model(const ModelFile& file) {
  if (file.mask && !file.mask->congruent(file.model)) throw StructuralError("mask does not match model");
  Writer w;
  w.bytes(ModelFile::kMagic, 7);
  w.u32(ModelFile::kVersion);
  const auto dims = file.model.layer_dims();
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.u64(d);
  w.u8(static_cast<std::uint8_t>(file.metric));
  for (const auto& l : file.model.layers()) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.f64(l.weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.f64(l.bias(r));
  }
  w.u8(file.mask ? 1 : 0);
  if (file.mask) {
    const auto bits = file.mask->bits();
    w.u64(bits.size());
    for (std::size_t i = 0; i < bits.size(); i += 8) {
      std::uint8_t byte = 0;
      for (std::size_t b = 0; b < 8 && i + b < bits.size(); ++b) byte |= static_cast<std::uint8_t>(bits[i + b]) << b;
      w.u8(byte);
    }
  }
  w.u64(file.metadata.size());
  w.bytes(file.metadata.data(), file.metadata.size());
  return w.take();
}

ModelFile decode_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(7) != std::string(ModelFile::kMagic, 7)) throw UsageError("not a CROPMDL model file");
  const auto version = r.u32();
  if (version != ModelFile::kVersion) throw UsageError("unsupported model file version " + std::to_string(version));
  const auto n = r.u32();
  if (n < 2 || n > 1024) throw UsageError("implausible layer count in model file");
  std::vector<std::size_t> dims(n);
  for (auto& d : dims) {
    d = r.u64();
    if (d == 0 || d > (1u << 24)) throw UsageError("implausible layer width in model file");
  }
  ModelFile file;
  const auto metric = r.u8();
  if (metric > static_cast<std::uint8_t>(MetricKind::f1_binary)) throw UsageError("unknown metric tag");
  file.metric = static_cast<MetricKind>(metric);

  ModelParams model = ModelParams::zeros(dims);
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    auto& l = model.layer(li);
    r.need(static_cast<std::size_t>(l.weights.size() + l.bias.size()) * 8);
    for (Eigen::Index row = 0; row < l.weights.rows(); ++row) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(row, c) = r.f64();
    }
    for (Eigen::Index row = 0; row < l.bias.size(); ++row) l.bias(row) = r.f64();
  }
  if (!model.all_finite()) throw NumericError("model file contains NaN or Inf");

  const auto has_mask = r.u8();
  if (has_mask > 1) throw UsageError("bad mask flag");
  if (has_mask) {
    const auto count = r.u64();
    if (count != model.weight_count()) throw StructuralError("mask size does not match model");
    std::vector<bool> bits(count);
    for (std::size_t i = 0; i < count; i += 8) {
      const auto byte = r.u8();
      for (std::size_t b = 0; b < 8 && i + b < count; ++b) bits[i + b] = (byte >> b) & 1u;
    }
    file.mask = Mask::from_bits(model, bits);
  }
  const auto len = r.u64();
  file.metadata = r.str(static_cast<std::size_t>(len));
  if (!r.done()) throw UsageError("trailing bytes after model file");
  file.model = std::move(model);
  return file;
}

void save_model(const ModelFile& file, const std::filesystem::path& path) {
  const auto bytes = encode_model(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace crop
