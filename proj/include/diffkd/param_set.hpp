#pragma once

#include "diffkd/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>

namespace diffkd {

/// Named trainable tensors plus their Adam moment buffers.
///
/// Iteration order is the lexicographic order of paths, which fixes the
/// on-disk layout and the optimizer's visiting order.
class ParamSet {
 public:
  struct Entry {
    Tensor value;
    Vector m;
    Vector v;
  };

  /// Registers a parameter; the tensor is marked requires_grad.
  const Tensor& add(const std::string& path, Tensor init);

  bool contains(const std::string& path) const { return entries_.count(path) > 0; }
  const Tensor& at(const std::string& path) const;
  const Tensor& operator[](const std::string& path) const { return at(path); }

  std::size_t size() const { return entries_.size(); }
  std::int64_t total_elements() const;
  std::int64_t step_count() const { return step_; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

  /// Overwrites values of every path present in both sets (shapes must match).
  /// Returns the number of parameters copied.
  std::size_t copy_values_from(const ParamSet& other, const std::string& prefix = "");

  /// Deep copy with fresh tensors and reset optimizer state.
  ParamSet clone() const;

  /// FNV-1a over paths, shapes and payload bytes.
  std::uint64_t content_hash() const;

 private:
  friend void adam_step(ParamSet&, double, double, double, double);
  std::map<std::string, Entry> entries_;
  std::int64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then clears grads.
/// Throws PreconditionError naming the first parameter without a gradient.
void adam_step(ParamSet& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
inline void adam_step(ParamSet& params, const AdamOptions& o) { adam_step(params, o.lr, o.beta1, o.beta2, o.eps); }

/// Kaiming-normal initialized conv kernel of shape out x in x k x k.
Tensor kaiming_kernel(std::int64_t out, std::int64_t in, std::int64_t k, std::mt19937_64& rng, double gain = 1.0);

// Serialization: magic "DKD1", then per parameter u32 path length, UTF-8
// path, u32 rank, u64 extents, little-endian float64 payload.
void write_params(std::ostream& os, const ParamSet& params);
ParamSet read_params(std::istream& is);
void save_params(const std::filesystem::path& file, const ParamSet& params);
ParamSet load_params(const std::filesystem::path& file);

}  // namespace diffkd
