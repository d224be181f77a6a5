#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "common/rng.hpp"
#include "tensor/tensor.hpp"

namespace fds {

struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

/// Named parameter storage. Values live in leaf tensors; graphs never hold
/// these leaves directly but bind fresh aliases per forward pass (see
/// ParamBinding), so concurrent per-sample graphs keep separate gradients.
class ParameterSet {
 public:
  ParamId add(std::string name, Shape shape, std::vector<Real> values);
  /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
  ParamId add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng);
  ParamId add_constant(std::string name, Shape shape, Real value);

  std::size_t size() const { return tensors_.size(); }
  std::size_t total_values() const;
  const std::string& name(ParamId id) const { return names_.at(id.index); }
  const Shape& shape(ParamId id) const { return tensors_.at(id.index).shape(); }
  std::span<const Real> values(ParamId id) const { return tensors_.at(id.index).values(); }
  std::span<Real> mutable_values(ParamId id) { return tensors_.at(id.index).mutable_values(); }
  const Tensor& tensor(ParamId id) const { return tensors_.at(id.index); }
  std::optional<ParamId> find(const std::string& name) const;
  std::vector<ParamId> ids() const;
  std::vector<ParamId> with_prefix(const std::string& prefix) const;

  /// Rounds every value to float32 precision (the checkpoint payload type).
  void round_to_float();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-forward leaves aliasing a ParameterSet's values.
class ParamBinding {
 public:
  explicit ParamBinding(const ParameterSet& params, bool requires_grad = true);
  const Tensor& operator[](ParamId id) const { return leaves_.at(id.index); }
  std::size_t size() const { return leaves_.size(); }
  /// Gradient of parameter id, or zeros when it received none.
  std::vector<Real> grad(ParamId id) const;

 private:
  std::vector<Tensor> leaves_;
};

/// Binary checkpoint: "FDSW", u32 version, u32 record count, then per
/// parameter: u32 name length, UTF-8 name, u32 rank, u64 extents, float32
/// little-endian payload.
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
/// Loads values into an existing set; names and shapes must match exactly.
void load_checkpoint(ParameterSet& params, const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace fds
