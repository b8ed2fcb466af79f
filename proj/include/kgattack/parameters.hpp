// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "kgattack/random.hpp"
#include "kgattack/tensor.hpp"

namespace kgattack {

/// A trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
  /// Set when backward() reached this parameter since the last step.
  bool grad_populated = false;

  void zero_grad() {
    grad.fill(0.0);
    grad_populated = false;
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named, address-stable collection of parameters plus the shared Adam
/// step counter.
class ParameterSet {
 public:
  explicit ParameterSet(std::string prefix = {}) : prefix_(std::move(prefix)) {}
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  /// Glorot-uniform initialized parameter: U(-a, a), a = sqrt(6 / (fan_in + fan_out)),
  /// with fan_in = cols and fan_out = rows.
  Parameter& add_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
  Parameter& add_zeros(const std::string& name, std::size_t rows, std::size_t cols);
  Parameter& add(const std::string& name, Matrix value);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  const std::string& prefix() const { return prefix_; }
  std::int64_t step_count() const { return steps_; }

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Adam update with bias correction; clears gradients afterwards.
  /// Parameters that received no gradient are treated as having a zero
  /// gradient. Throws NumericError when no parameter in the set has one.
  void adam_step(const AdamConfig& cfg);

  /// Copies values (not moments) from another set with identical names/shapes.
  void copy_values_from(const ParameterSet& other);

 private:
  std::string full_name(const std::string& name) const;

  std::string prefix_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::int64_t steps_ = 0;
};

// ---- checkpoints ----------------------------------------------------------
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "KGACKPT1"
//   bytes 8..15  uint64 header length H
//   next H bytes UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "rows",
//                "cols", "offset"}, ...]}; offset counts doubles from the
//                start of the payload
//   payload      IEEE-754 binary64 values, little-endian, row-major

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::string meta_json = "{}";
  std::vector<NamedTensor> tensors;

  const Matrix& find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Convenience: snapshot of parameter values from several sets.
Checkpoint checkpoint_of(std::initializer_list<const ParameterSet*> sets,
                         std::string meta_json = "{}");
/// Restores values into sets by name; throws when a name is missing or a
/// shape differs.
void restore_checkpoint(const Checkpoint& ckpt, std::initializer_list<ParameterSet*> sets);

}  // namespace kgattack
