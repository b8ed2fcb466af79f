// SPDX-License-Identifier: Apache-2.0
#include "kgattack/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace kgattack {

std::string ParameterSet::full_name(const std::string& name) const {
  return prefix_.empty() ? name : prefix_ + "." + name;
}

Parameter& ParameterSet::add(const std::string& name, Matrix value) {
  const std::string full = full_name(name);
  if (contains(full)) throw std::invalid_argument("duplicate parameter name: " + full);
  auto p = std::make_unique<Parameter>();
  p->name = full;
  p->grad = Matrix(value.rows(), value.cols());
  p->first_moment = Matrix(value.rows(), value.cols());
  p->second_moment = Matrix(value.rows(), value.cols());
  p->value = std::move(value);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::add_glorot(const std::string& name, std::size_t rows, std::size_t cols,
                                    Rng& rng) {
  Matrix m(rows, cols);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return add(name, std::move(m));
}

Parameter& ParameterSet::add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return add(name, Matrix(rows, cols));
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name || p->name == full_name(name)) return true;
  return false;
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name || p->name == full_name(name)) return *p;
  throw std::out_of_range("unknown parameter: " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParameterSet::adam_step(const AdamConfig& cfg) {
  bool any = false;
  for (const auto& p : params_) any = any || p->grad_populated;
  if (!any) throw NumericError("adam_step: no gradient populated in parameter set '" + prefix_ + "'");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params_) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad_populated ? p->grad[i] : 0.0;
      double& m = p->first_moment[i];
      double& v = p->second_moment[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / c1;
      const double vhat = v / c2;
      p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p->zero_grad();
  }
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("copy_values_from: parameter sets differ in size");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i]->value.same_shape(other.params_[i]->value)) {
      throw std::invalid_argument("copy_values_from: shape mismatch for " + params_[i]->name);
    }
    params_[i]->value = other.params_[i]->value;
  }
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'G', 'A', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

const Matrix& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("checkpoint has no tensor named " + name);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = nlohmann::json::parse(ckpt.meta_json);
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"offset", offset}});
    offset += t.value.size();
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors)
    for (double v : t.value.values()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error("checkpoint: truncated header");
  }
  const auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.meta_json = header.at("meta").dump();
  std::uint64_t expected_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<std::size_t>();
    const auto cols = entry.at("cols").get<std::size_t>();
    if (entry.at("offset").get<std::uint64_t>() != expected_offset) {
      throw std::runtime_error("checkpoint: non-contiguous tensor " + t.name);
    }
    t.value = Matrix(rows, cols);
    for (double& v : t.value.values()) v = std::bit_cast<double>(read_u64(is));
    expected_offset += t.value.size();
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

Checkpoint checkpoint_of(std::initializer_list<const ParameterSet*> sets, std::string meta_json) {
  Checkpoint ckpt;
  ckpt.meta_json = std::move(meta_json);
  for (const ParameterSet* s : sets)
    for (const auto& p : *s) ckpt.tensors.push_back({p->name, p->value});
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, std::initializer_list<ParameterSet*> sets) {
  for (ParameterSet* s : sets) {
    for (auto& p : *s) {
      const Matrix& src = ckpt.find(p->name);
      if (!src.same_shape(p->value)) {
        throw std::runtime_error("checkpoint shape mismatch for " + p->name);
      }
      p->value = src;
    }
  }
}

}  // namespace kgattack
