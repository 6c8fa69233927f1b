#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace codex {

// Versioned named-tensor container: a textual header (meta lines plus one
// line per tensor with name, scalar width and shape) followed by raw
// little-endian values in declaration order. save(load(f)) is bit-identical.
//
//   CDXT 1
//   meta config_hash 0123456789abcdef
//   tensor layers.0.weight f32 2 96 330
//   data
//   <raw bytes>

struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

class TensorFile {
 public:
  void set_meta(const std::string& key, const std::string& value);
  bool has_meta(const std::string& key) const;
  const std::string& meta(const std::string& key) const;  // throws IoError if absent
  const std::vector<std::pair<std::string, std::string>>& meta_entries() const { return meta_; }

  void add(Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // throws IoError if absent
  const std::vector<Tensor>& tensors() const { return tensors_; }

  void save(const std::string& path) const;
  static TensorFile load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<Tensor> tensors_;
};

}  // namespace codex
