#include "diffkd/param_set.hpp"

#include "diffkd/binary_io.hpp"

#include <cmath>
#include <fstream>

namespace diffkd {

const Tensor& ParamSet::add(const std::string& path, Tensor init) {
  if (path.empty()) throw InvalidArgument("parameter path must be nonempty");
  if (entries_.count(path)) throw InvalidArgument("duplicate parameter path '" + path + "'");
  Tensor t = init.detach();
  t.set_requires_grad(true);
  const auto n = t.numel();
  auto [it, ok] = entries_.emplace(path, Entry{std::move(t), Vector::Zero(n), Vector::Zero(n)});
  return it->second.value;
}

const Tensor& ParamSet::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw InvalidArgument("unknown parameter path '" + path + "'");
  return it->second.value;
}

std::int64_t ParamSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, e] : entries_) e.value.zero_grad();
}

std::size_t ParamSet::copy_values_from(const ParamSet& other, const std::string& prefix) {
  std::size_t copied = 0;
  for (auto& [path, e] : entries_) {
    if (path.compare(0, prefix.size(), prefix) != 0 || !other.contains(path)) continue;
    const auto& src = other.at(path);
    if (src.shape() != e.value.shape()) {
      throw InvalidArgument("copy_values_from: shape mismatch at '" + path + "': " + shape_str(src.shape()) +
                            " vs " + shape_str(e.value.shape()));
    }
    e.value.mutable_values() = src.values();
    ++copied;
  }
  return copied;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [path, e] : entries_) out.add(path, e.value.detach());
  return out;
}

std::uint64_t ParamSet::content_hash() const {
  io::Fnv1a h;
  for (const auto& [path, e] : entries_) {
    h.update(path);
    for (auto d : e.value.shape()) h.update(&d, sizeof(d));
    h.update(e.value.values().data(), sizeof(double) * static_cast<std::size_t>(e.value.numel()));
  }
  return h.digest();
}

void adam_step(ParamSet& params, double lr, double beta1, double beta2, double eps) {
  for (const auto& [path, e] : params.entries_) {
    if (!e.value.has_grad()) throw PreconditionError("adam_step: parameter '" + path + "' has no gradient");
  }
  ++params.step_;
  const double t = static_cast<double>(params.step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& [path, e] : params.entries_) {
    const Vector g = e.value.grad();
    e.m = beta1 * e.m + (1.0 - beta1) * g;
    e.v = beta2 * e.v + (1.0 - beta2) * g.cwiseAbs2();
    auto& w = e.value.mutable_values();
    w.array() -= lr * (e.m.array() / c1) / ((e.v.array() / c2).sqrt() + eps);
    e.value.zero_grad();
  }
}

Tensor kaiming_kernel(std::int64_t out, std::int64_t in, std::int64_t k, std::mt19937_64& rng, double gain) {
  const double fan_in = static_cast<double>(in * k * k);
  return Tensor::randn(Shape{out, in, k, k}, rng, gain * std::sqrt(2.0 / fan_in));
}

void write_params(std::ostream& os, const ParamSet& params) {
  io::write_magic(os, "DKD1");
  for (const auto& [path, e] : params) {
    io::write_u32(os, static_cast<std::uint32_t>(path.size()));
    os.write(path.data(), static_cast<std::streamsize>(path.size()));
    io::write_u32(os, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) io::write_u64(os, static_cast<std::uint64_t>(d));
    for (double v : e.value.values()) io::write_f64(os, v);
  }
}

ParamSet read_params(std::istream& is) {
  io::expect_magic(is, "DKD1");
  ParamSet out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = io::read_u32(is);
    std::string path(len, '\0');
    if (!is.read(path.data(), len)) throw io::FormatError("truncated parameter path");
    const auto rank = io::read_u32(is);
    if (rank > 8) throw io::FormatError("implausible rank " + std::to_string(rank) + " for '" + path + "'");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(io::read_u64(is));
    Vector v(shape_numel(shape));
    for (auto& x : v) x = io::read_f64(is);
    out.add(path, Tensor(std::move(shape), std::move(v)));
  }
  return out;
}

void save_params(const std::filesystem::path& file, const ParamSet& params) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + file.string() + "' for writing");
  write_params(os, params);
  if (!os) throw std::runtime_error("write to '" + file.string() + "' failed");
}

ParamSet load_params(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + file.string() + "'");
  return read_params(is);
}

}  // namespace diffkd
