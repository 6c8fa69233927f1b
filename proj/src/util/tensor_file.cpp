#include "util/tensor_file.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "util/errors.hpp"
#include "util/text.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace codex {

void TensorFile::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  meta_.emplace_back(key, value);
}

bool TensorFile::has_meta(const std::string& key) const {
  for (const auto& [k, v] : meta_)
    if (k == key) return true;
  return false;
}

const std::string& TensorFile::meta(const std::string& key) const {
  for (const auto& [k, v] : meta_)
    if (k == key) return v;
  throw Error(Err::IoError, "missing meta key '" + key + "'");
}

void TensorFile::add(Tensor t) {
  if (t.numel() != static_cast<std::int64_t>(t.data.size()))
    throw Error(Err::ShapeMismatch, "tensor '" + t.name + "' shape does not match data size");
  tensors_.push_back(std::move(t));
}

bool TensorFile::has(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const Tensor& TensorFile::get(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw Error(Err::IoError, "missing tensor '" + name + "'");
}

void TensorFile::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Err::IoError, "cannot open '" + path + "' for writing");
  out << "CDXT 1\n";
  for (const auto& [k, v] : meta_) out << "meta " << k << " " << v << "\n";
  for (const auto& t : tensors_) {
    out << "tensor " << t.name << " f32 " << t.shape.size();
    for (auto d : t.shape) out << " " << d;
    out << "\n";
  }
  out << "data\n";
  for (const auto& t : tensors_) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw Error(Err::IoError, "write failed for '" + path + "'");
}

TensorFile TensorFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "CDXT 1")
    throw Error(Err::IoError, "bad magic in '" + path + "'");
  TensorFile tf;
  std::vector<Tensor> pending;
  while (std::getline(in, line)) {
    std::string t(trim(line));
    if (t == "data") break;
    std::istringstream ls(t);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string rest;
      std::getline(ls, rest);
      tf.meta_.emplace_back(key, std::string(trim(rest)));
    } else if (kind == "tensor") {
      Tensor tensor;
      std::string dtype;
      std::size_t rank = 0;
      ls >> tensor.name >> dtype >> rank;
      if (dtype != "f32") throw Error(Err::IoError, "unsupported dtype '" + dtype + "'");
      tensor.shape.resize(rank);
      for (auto& d : tensor.shape) ls >> d;
      if (!ls) throw Error(Err::IoError, "bad tensor line in '" + path + "'");
      pending.push_back(std::move(tensor));
    } else {
      throw Error(Err::IoError, "unexpected header line '" + t + "' in '" + path + "'");
    }
  }
  for (auto& t : pending) {
    t.data.resize(static_cast<std::size_t>(t.numel()));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw Error(Err::IoError, "truncated tensor data in '" + path + "'");
    tf.tensors_.push_back(std::move(t));
  }
  return tf;
}

}  // namespace codex
